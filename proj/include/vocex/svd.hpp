#pragma once

#include <cstdint>
#include <vector>

#include "vocex/matrix.hpp"

namespace vocex {

// Thin SVD: A = U * diag(sigma) * Vᵀ with U (m×r), sigma (r, descending),
// V (n×r), r = min(m, n).
struct SvdResult {
  Matrix u;
  std::vector<double> sigma;
  Matrix v;
};

// Rank-D' factorization E ≈ F·P. F carries the singular values (F = UΣ) so P
// stays row-orthonormal and shared.
struct Factorization {
  Matrix f;                   // |V|×rank coordinates
  Matrix p;                   // rank×D primitives, orthonormal rows
  std::size_t rank = 0;
  std::vector<double> sigma;  // descending
};

struct TruncatedSvdOptions {
  std::size_t oversampling = 8;
  std::size_t power_iterations = 4;
  // At or below this edge length the exact dense path is used instead of
  // randomized range finding.
  std::size_t exact_limit = 64;
  std::size_t max_sweeps = 60;
};

// One-sided (Hestenes) Jacobi SVD. Exact to machine precision; cost O(m·n²)
// per sweep. This is the dense kernel behind truncated_svd.
SvdResult hestenes_svd(const Matrix& a, std::size_t max_sweeps = 60);

// Best rank-k approximation of E. Exact Jacobi for small inputs, randomized
// subspace iteration above exact_limit. Deterministic for a fixed seed.
// Each row of P has its largest-magnitude entry non-negative.
Factorization truncated_svd(const Matrix& e, std::size_t rank, std::uint64_t seed = 0,
                            const TruncatedSvdOptions& opts = {});

Matrix reconstruct(const Factorization& f);

// Test oracle: exhaustive two-sided (Kogbetliantz) Jacobi SVD, capped at
// 64×64. Kept independent of the hestenes_svd path on purpose.
SvdResult oracle_svd_small(const Matrix& a, std::size_t max_sweeps = 60);

// sqrt(sum of squared singular values from index k on): the Eckart-Young
// optimal rank-k residual.
double best_rank_k_error(const std::vector<double>& sigma, std::size_t k);

}  // namespace vocex
