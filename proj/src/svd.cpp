#include "vocex/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "vocex/rng.hpp"

namespace vocex {

namespace {

// Sorts singular values descending and permutes the columns of U and V to
// match. Ties keep their original order.
void sort_by_sigma(Matrix& u, std::vector<double>& sigma, Matrix& v) {
  std::vector<std::size_t> order(sigma.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return sigma[a] > sigma[b]; });
  Matrix u2(u.rows, u.cols), v2(v.rows, v.cols);
  std::vector<double> s2(sigma.size());
  for (std::size_t j = 0; j < order.size(); ++j) {
    s2[j] = sigma[order[j]];
    for (std::size_t i = 0; i < u.rows; ++i) u2(i, j) = u(i, order[j]);
    for (std::size_t i = 0; i < v.rows; ++i) v2(i, j) = v(i, order[j]);
  }
  u = std::move(u2);
  v = std::move(v2);
  sigma = std::move(s2);
}

// Two-pass modified Gram-Schmidt on the columns of a. Columns that collapse
// numerically are zeroed.
Matrix orthonormalize_columns(const Matrix& a) {
  Matrix q = a;
  const std::size_t m = q.rows, n = q.cols;
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t k = 0; k < j; ++k) {
        double proj = 0.0;
        for (std::size_t i = 0; i < m; ++i) proj += q(i, k) * q(i, j);
        for (std::size_t i = 0; i < m; ++i) q(i, j) -= proj * q(i, k);
      }
      double norm = 0.0;
      for (std::size_t i = 0; i < m; ++i) norm += q(i, j) * q(i, j);
      norm = std::sqrt(norm);
      if (norm < 1e-300) {
        for (std::size_t i = 0; i < m; ++i) q(i, j) = 0.0;
      } else {
        for (std::size_t i = 0; i < m; ++i) q(i, j) /= norm;
      }
    }
  }
  return q;
}

}  // namespace

SvdResult hestenes_svd(const Matrix& a, std::size_t max_sweeps) {
  if (a.cols > a.rows) {
    SvdResult t = hestenes_svd(transpose(a), max_sweeps);
    return SvdResult{std::move(t.v), std::move(t.sigma), std::move(t.u)};
  }
  const std::size_t m = a.rows, n = a.cols;
  Matrix w = a;
  Matrix v(n, n);
  for (std::size_t i = 0; i < n; ++i) v(i, i) = 1.0;

  const double tol = 1e-15;
  bool converged = (n <= 1);
  for (std::size_t sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += w(i, p) * w(i, p);
          beta += w(i, q) * w(i, q);
          gamma += w(i, p) * w(i, q);
        }
        if (std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
  }
  if (!converged) throw std::runtime_error("hestenes_svd: no convergence within sweep cap");

  SvdResult res;
  res.u = Matrix(m, n);
  res.sigma.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    double norm = 0.0;
    for (std::size_t i = 0; i < m; ++i) norm += w(i, j) * w(i, j);
    norm = std::sqrt(norm);
    res.sigma[j] = norm;
    if (norm > 1e-300)
      for (std::size_t i = 0; i < m; ++i) res.u(i, j) = w(i, j) / norm;
  }
  res.v = std::move(v);
  sort_by_sigma(res.u, res.sigma, res.v);
  return res;
}

Factorization truncated_svd(const Matrix& e, std::size_t rank, std::uint64_t seed,
                            const TruncatedSvdOptions& opts) {
  const std::size_t m = e.rows, n = e.cols;
  if (m == 0 || n == 0) throw std::invalid_argument("truncated_svd: empty matrix");
  if (rank < 1 || rank > std::min(m, n))
    throw std::invalid_argument("truncated_svd: rank " + std::to_string(rank) +
                                " out of range [1, " + std::to_string(std::min(m, n)) + "]");
  if (!e.all_finite()) throw std::invalid_argument("truncated_svd: non-finite input");

  SvdResult full;
  if (m <= opts.exact_limit && n <= opts.exact_limit) {
    full = hestenes_svd(e, opts.max_sweeps);
  } else {
    const std::size_t l = std::min(rank + opts.oversampling, std::min(m, n));
    Rng rng(seed);
    Matrix omega(n, l);
    for (double& x : omega.data) x = rng.next_gaussian();
    Matrix q = orthonormalize_columns(matmul(e, omega));
    for (std::size_t it = 0; it < opts.power_iterations; ++it) {
      Matrix z = orthonormalize_columns(matmul_at_b(e, q));  // Eᵀ·Q, n×l
      q = orthonormalize_columns(matmul(e, z));
    }
    Matrix b = matmul_at_b(q, e);  // l×n
    SvdResult inner = hestenes_svd(b, opts.max_sweeps);
    full.u = matmul(q, inner.u);
    full.sigma = std::move(inner.sigma);
    full.v = std::move(inner.v);
  }

  Factorization fac;
  fac.rank = rank;
  fac.sigma.assign(full.sigma.begin(), full.sigma.begin() + static_cast<std::ptrdiff_t>(rank));
  fac.f = Matrix(m, rank);
  fac.p = Matrix(rank, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < rank; ++j) fac.f(i, j) = full.u(i, j) * full.sigma[j];
  for (std::size_t j = 0; j < rank; ++j)
    for (std::size_t d = 0; d < n; ++d) fac.p(j, d) = full.v(d, j);

  // Resolve the SVD sign ambiguity: largest-magnitude entry of each P row
  // is made non-negative, with the matching F column flipped.
  for (std::size_t j = 0; j < rank; ++j) {
    std::size_t arg = 0;
    double best = 0.0;
    for (std::size_t d = 0; d < n; ++d) {
      if (std::abs(fac.p(j, d)) > best) {
        best = std::abs(fac.p(j, d));
        arg = d;
      }
    }
    if (fac.p(j, arg) < 0.0) {
      for (std::size_t d = 0; d < n; ++d) fac.p(j, d) = -fac.p(j, d);
      for (std::size_t i = 0; i < m; ++i) fac.f(i, j) = -fac.f(i, j);
    }
  }
  return fac;
}

Matrix reconstruct(const Factorization& f) {
  if (f.f.cols != f.p.rows) throw std::invalid_argument("reconstruct: rank mismatch");
  return matmul(f.f, f.p);
}

SvdResult oracle_svd_small(const Matrix& a, std::size_t max_sweeps) {
  const std::size_t m = a.rows, n = a.cols;
  if (m == 0 || n == 0) throw std::invalid_argument("oracle_svd_small: empty matrix");
  if (m > 64 || n > 64) throw std::invalid_argument("oracle_svd_small: size cap is 64x64");

  // Kogbetliantz on the zero-padded square matrix.
  const std::size_t s = std::max(m, n);
  Matrix g(s, s), u(s, s), v(s, s);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) g(i, j) = a(i, j);
  for (std::size_t i = 0; i < s; ++i) u(i, i) = v(i, i) = 1.0;

  const double fnorm = std::max(frobenius_norm(g), 1e-300);
  const double tol = 1e-15 * fnorm;
  bool converged = false;
  for (std::size_t sweep = 0; sweep < max_sweeps && !converged; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j)
        if (i != j) off += g(i, j) * g(i, j);
    if (std::sqrt(off) <= tol) {
      converged = true;
      break;
    }
    for (std::size_t p = 0; p + 1 < s; ++p) {
      for (std::size_t q = p + 1; q < s; ++q) {
        const double app = g(p, p), apq = g(p, q), aqp = g(q, p), aqq = g(q, q);
        if (std::abs(apq) <= tol * 1e-2 && std::abs(aqp) <= tol * 1e-2) continue;
        // Left rotation by phi symmetrizes the 2x2 block, then a symmetric
        // Jacobi rotation by psi diagonalizes it.
        const double phi = std::atan2(aqp - apq, app + aqq);
        const double cphi = std::cos(phi), sphi = std::sin(phi);
        const double sa = cphi * app + sphi * aqp;
        const double sb = cphi * apq + sphi * aqq;
        const double sd = -sphi * apq + cphi * aqq;
        const double psi = 0.5 * std::atan2(2.0 * sb, sa - sd);
        const double tl = phi + psi, tr = psi;
        const double cl = std::cos(tl), sl = std::sin(tl);
        const double cr = std::cos(tr), sr = std::sin(tr);
        for (std::size_t j = 0; j < s; ++j) {  // rows p,q from the left
          const double gp = g(p, j), gq = g(q, j);
          g(p, j) = cl * gp + sl * gq;
          g(q, j) = -sl * gp + cl * gq;
        }
        for (std::size_t i = 0; i < s; ++i) {  // columns p,q from the right
          const double gp = g(i, p), gq = g(i, q);
          g(i, p) = cr * gp + sr * gq;
          g(i, q) = -sr * gp + cr * gq;
          const double up = u(i, p), uq = u(i, q);
          u(i, p) = cl * up + sl * uq;
          u(i, q) = -sl * up + cl * uq;
          const double vp = v(i, p), vq = v(i, q);
          v(i, p) = cr * vp + sr * vq;
          v(i, q) = -sr * vp + cr * vq;
        }
      }
    }
  }
  if (!converged) {
    double off = 0.0;
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = 0; j < s; ++j)
        if (i != j) off += g(i, j) * g(i, j);
    if (std::sqrt(off) > tol) throw std::runtime_error("oracle_svd_small: no convergence");
  }

  std::vector<double> sigma(s);
  for (std::size_t j = 0; j < s; ++j) {
    sigma[j] = g(j, j);
    if (sigma[j] < 0.0) {
      sigma[j] = -sigma[j];
      for (std::size_t i = 0; i < s; ++i) u(i, j) = -u(i, j);
    }
  }
  sort_by_sigma(u, sigma, v);

  const std::size_t r = std::min(m, n);
  SvdResult res;
  res.u = Matrix(m, r);
  res.v = Matrix(n, r);
  res.sigma.assign(sigma.begin(), sigma.begin() + static_cast<std::ptrdiff_t>(r));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < r; ++j) res.u(i, j) = u(i, j);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < r; ++j) res.v(i, j) = v(i, j);
  return res;
}

double best_rank_k_error(const std::vector<double>& sigma, std::size_t k) {
  double s = 0.0;
  for (std::size_t i = k; i < sigma.size(); ++i) s += sigma[i] * sigma[i];
  return std::sqrt(s);
}

}  // namespace vocex
