"""Dense matrix helpers: symmetry handling, extremal eigenvalues, annihilators.

Everything in here is plain numpy/scipy; no solver is involved. These are the
primitives the certificate modules lean on, so the tolerance conventions are
centralized here:

* symmetry is checked entrywise, relative to the largest entry magnitude;
* rank decisions are relative to the largest singular value;
* sign-definiteness verdicts use extremal eigenvalues of the symmetrized
  matrix with a tolerance relative to ``max(1, sigma_max)``.
"""

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NotSymmetric, RankDeficient

__all__ = [
    "SYM_TOL",
    "RANK_TOL",
    "DEF_TOL",
    "as_matrix",
    "symmetrize",
    "sigma_max",
    "lambda_extremes",
    "is_psd",
    "is_nsd",
    "orth_complement",
    "blkdiag",
]

# Relative tolerance for accepting a matrix as symmetric.
SYM_TOL = 1e-8
# sigma_max multiplier below which singular values count as zero.
RANK_TOL = 1e-10
# Default slack for sign-definiteness verdicts.
DEF_TOL = 1e-9


def as_matrix(value, rows=None, cols=None):
    """Coerce to a float 2-D array, optionally checking the shape.

    Parameters
    ----------
    value : array_like
        Anything numpy can turn into a 2-D float array.  An empty list is
        accepted when one of the requested dimensions is zero.
    rows, cols : int, optional
        Required dimensions; ``DimensionMismatch`` is raised on conflict.
    """
    arr = np.asarray(value, dtype=float)
    if arr.size == 0:
        arr = arr.reshape(rows if rows is not None else 0,
                          cols if cols is not None else 0)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D array, got ndim={arr.ndim}")
    if rows is not None and arr.shape[0] != rows:
        raise DimensionMismatch(f"expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise DimensionMismatch(f"expected {cols} columns, got {arr.shape[1]}")
    return arr


def symmetrize(mat, tol=SYM_TOL):
    """Return (S + S.T)/2 after checking S is symmetric to tolerance.

    The check is ``max|S - S.T| <= tol * max(1, max|S|)``; failures raise
    ``NotSymmetric`` rather than silently averaging away a real asymmetry.
    """
    mat = as_matrix(mat)
    if mat.shape[0] != mat.shape[1]:
        raise DimensionMismatch(f"matrix is {mat.shape}, not square")
    if mat.size == 0:
        return mat
    scale = max(1.0, np.abs(mat).max())
    gap = np.abs(mat - mat.T).max()
    if gap > tol * scale:
        raise NotSymmetric(f"asymmetry {gap:.3e} exceeds {tol:.1e} * {scale:.3e}")
    return 0.5 * (mat + mat.T)


def sigma_max(mat):
    """Largest singular value; 0.0 for empty matrices."""
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.size == 0:
        return 0.0
    return float(np.linalg.norm(mat, 2))


def lambda_extremes(sym):
    """(lambda_min, lambda_max) of a symmetric matrix; (0, 0) when empty."""
    sym = symmetrize(sym)
    if sym.size == 0:
        return 0.0, 0.0
    eigs = np.linalg.eigvalsh(sym)
    return float(eigs[0]), float(eigs[-1])


def is_psd(sym, tol=DEF_TOL):
    """True when lambda_min >= -tol * max(1, sigma_max)."""
    sym = symmetrize(sym)
    if sym.size == 0:
        return True
    lo, _ = lambda_extremes(sym)
    return lo >= -tol * max(1.0, sigma_max(sym))


def is_nsd(sym, tol=DEF_TOL):
    """True when lambda_max <= tol * max(1, sigma_max)."""
    sym = symmetrize(sym)
    if sym.size == 0:
        return True
    _, hi = lambda_extremes(sym)
    return hi <= tol * max(1.0, sigma_max(sym))


def orth_complement(mat, rank_tol=RANK_TOL):
    """Orthonormal annihilator of a full-rank matrix.

    For a wide matrix U (k x n, k < n) returns W with ``U @ W = 0``; for a
    tall matrix returns W with ``U.T @ W = 0``.  Columns of W are orthonormal
    and span the whole annihilated subspace, so W has ``n - k`` columns.  A
    square full-rank input yields a matrix with zero columns.  Inputs whose
    numerical rank falls short of ``min(shape)`` raise ``RankDeficient``.
    """
    mat = as_matrix(mat)
    if mat.size == 0:
        # Nothing to annihilate: the complement is the full space.
        n = max(mat.shape)
        return np.eye(n)
    wide = mat if mat.shape[0] <= mat.shape[1] else mat.T
    svals = np.linalg.svd(wide, compute_uv=False)
    if svals[-1] <= rank_tol * svals[0]:
        raise RankDeficient(
            f"rank < {min(mat.shape)} (sigma_min/sigma_max = "
            f"{svals[-1] / svals[0]:.3e})")
    null = scipy.linalg.null_space(wide, rcond=rank_tol)
    return null


def blkdiag(*mats):
    """Block-diagonal stacking that tolerates empty blocks."""
    mats = [as_matrix(m) for m in mats]
    if not mats:
        return np.zeros((0, 0))
    return scipy.linalg.block_diag(*mats)
