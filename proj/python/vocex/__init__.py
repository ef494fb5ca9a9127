"""Embedding initialization toolkit for expanded vocabularies.

Thin wrapper over the compiled extension; everything public lives in
``vocex._vocex``.
"""

from ._vocex import *  # noqa: F401,F403
from ._vocex import __doc__  # noqa: F401
