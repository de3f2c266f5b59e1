"""Static supply rates in conformal 2x2 block form, and families quadratic
in a performance parameter.

A supply rate here is the quadratic form

    s(v, y) = [v; y]' [[X11, X12], [X12', X22]] [v; y]

over an (input, output) port pair.  Sign conventions follow the synthesis
usage throughout the package: a *valid* performance multiplier has X11 >= 0
and X22 <= 0, so that larger supply means weaker requirements on the system.
"""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import DimensionMismatch, NotStabilityMultiplier

__all__ = [
    "Multiplier",
    "QuadMultiplier",
    "StabilityCertificate",
    "l2gain_quad",
    "passivity",
    "constant_quad",
    "structured_quad",
    "check_stability_multiplier",
]


@dataclass(frozen=True)
class Multiplier:
    """Symmetric supply-rate matrix split along an (input, output) partition."""

    x11: np.ndarray
    x12: np.ndarray
    x22: np.ndarray

    def __post_init__(self):
        x11 = linalg.symmetrize(self.x11)
        x22 = linalg.symmetrize(self.x22)
        x12 = linalg.as_matrix(self.x12, rows=x11.shape[0], cols=x22.shape[0])
        object.__setattr__(self, "x11", x11)
        object.__setattr__(self, "x12", x12)
        object.__setattr__(self, "x22", x22)

    @property
    def n_in(self):
        return self.x11.shape[0]

    @property
    def n_out(self):
        return self.x22.shape[0]

    def full(self):
        return np.block([[self.x11, self.x12], [self.x12.T, self.x22]])

    @classmethod
    def from_full(cls, mat, n_in):
        mat = linalg.symmetrize(mat)
        if not 0 <= n_in <= mat.shape[0]:
            raise DimensionMismatch(f"n_in={n_in} outside 0..{mat.shape[0]}")
        return cls(mat[:n_in, :n_in], mat[:n_in, n_in:], mat[n_in:, n_in:])

    def scale(self, alpha):
        return Multiplier(alpha * self.x11, alpha * self.x12, alpha * self.x22)

    def __add__(self, other):
        self._check_partition(other)
        return Multiplier(self.x11 + other.x11, self.x12 + other.x12,
                          self.x22 + other.x22)

    def _check_partition(self, other):
        if (self.n_in, self.n_out) != (other.n_in, other.n_out):
            raise DimensionMismatch(
                f"partition ({self.n_in},{self.n_out}) vs "
                f"({other.n_in},{other.n_out})")

    def is_valid_supply(self, tol=linalg.DEF_TOL):
        """Sign pattern required of a performance multiplier."""
        return linalg.is_psd(self.x11, tol) and linalg.is_nsd(self.x22, tol)

    def supply(self, v, y):
        """Evaluate s(v, y); rows of 2-D inputs are time samples."""
        v = np.atleast_2d(np.asarray(v, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if v.shape[1] != self.n_in or y.shape[1] != self.n_out:
            raise DimensionMismatch("port dimensions do not match multiplier")
        quad = (np.einsum("ti,ij,tj->t", v, self.x11, v)
                + 2.0 * np.einsum("ti,ij,tj->t", v, self.x12, y)
                + np.einsum("ti,ij,tj->t", y, self.x22, y))
        return quad if quad.size > 1 else float(quad[0])


@dataclass(frozen=True)
class QuadMultiplier:
    """Supply-rate family  X(g) = g^2 X1 + 2 g X2 + X3  over one port pair."""

    x1: Multiplier
    x2: Multiplier
    x3: Multiplier

    def __post_init__(self):
        self.x1._check_partition(self.x2)
        self.x1._check_partition(self.x3)

    @property
    def n_in(self):
        return self.x1.n_in

    @property
    def n_out(self):
        return self.x1.n_out

    def eval(self, gamma):
        gamma = float(gamma)
        return (self.x1.scale(gamma * gamma)
                + self.x2.scale(2.0 * gamma)
                + self.x3)

    def coefficients(self):
        return self.x1, self.x2, self.x3


def l2gain_quad(n_in, n_out):
    """Family whose evaluation at g is the gain-g supply  g^2|v|^2 - |y|^2."""
    zero = Multiplier(np.zeros((n_in, n_in)), np.zeros((n_in, n_out)),
                      np.zeros((n_out, n_out)))
    one_in = Multiplier(np.eye(n_in), np.zeros((n_in, n_out)),
                        np.zeros((n_out, n_out)))
    neg_out = Multiplier(np.zeros((n_in, n_in)), np.zeros((n_in, n_out)),
                         -np.eye(n_out))
    return QuadMultiplier(one_in, zero, neg_out)


def passivity(n, eps=0.0):
    """Supply  2 v'y - eps |y|^2  on a square port pair."""
    return Multiplier(np.zeros((n, n)), np.eye(n), -eps * np.eye(n))


def constant_quad(mult):
    """Embed a static multiplier as a gamma-independent family."""
    zero = mult.scale(0.0)
    return QuadMultiplier(zero, zero, mult)


def structured_quad(x11_gain, x12_gain, xbar):
    """Family  [[g^2 X11 + Xb11, 2 g X12 + Xb12], [sym, Xb22]].

    ``x11_gain`` weights the squared input at level g^2, ``x12_gain`` the
    cross term at level g, and ``xbar`` is the constant part.  The sign
    pattern x11_gain >= 0, xbar.x11 >= 0, xbar.x22 <= 0 keeps every
    evaluation a valid performance multiplier.
    """
    x11_gain = linalg.symmetrize(x11_gain)
    n_in, n_out = xbar.n_in, xbar.n_out
    x12_gain = linalg.as_matrix(x12_gain, rows=n_in, cols=n_out)
    if x11_gain.shape[0] != n_in:
        raise DimensionMismatch("x11_gain does not match xbar input size")
    lvl2 = Multiplier(x11_gain, np.zeros((n_in, n_out)),
                      np.zeros((n_out, n_out)))
    lvl1 = Multiplier(np.zeros((n_in, n_in)), x12_gain,
                      np.zeros((n_out, n_out)))
    return QuadMultiplier(lvl2, lvl1, xbar)


@dataclass(frozen=True)
class StabilityCertificate:
    """Energy-gain bound extracted from a supply rate's sign pattern."""

    c: float
    eps: float
    pi11: float
    pi12: float
    pi22: float


def check_stability_multiplier(mult, tol=linalg.DEF_TOL):
    """BIBO certificate from a static supply rate.

    Any system satisfying the integral constraint of ``mult`` has output/
    input energy ratio at most ``c``, where

        c = (pi11 + eps) * eps / (pi22 * eps - pi12^2),
        eps = pi12^2 / pi22 + delta,   delta = max(1e-6, 0.01 pi12^2 / pi22),

    with pi11 = sigma_max(X11), pi12 = sigma_max(X12) and pi22 the magnitude
    of the *least damped* eigenvalue of the NSD block X22 (using anything
    larger would overclaim along weakly damped output directions).  When the
    cross block vanishes the limit eps -> 0 is exact and c = pi11 / pi22.

    Raises
    ------
    NotStabilityMultiplier
        If X11 is not PSD, X22 is not NSD, or X22 has an eigenvalue at zero
        (no damping in some output direction, so no finite bound exists —
        in particular whenever X22 = 0).
    """
    scale = max(1.0, linalg.sigma_max(mult.full()))
    if not linalg.is_psd(mult.x11, tol):
        raise NotStabilityMultiplier("X11 block must be PSD")
    if not linalg.is_nsd(mult.x22, tol):
        raise NotStabilityMultiplier("X22 block must be NSD")
    if mult.n_out == 0:
        raise NotStabilityMultiplier("certificate needs at least one output")

    pi11 = linalg.sigma_max(mult.x11)
    pi12 = linalg.sigma_max(mult.x12)
    _, lam_hi = linalg.lambda_extremes(mult.x22)
    pi22 = abs(min(lam_hi, 0.0))
    if pi22 <= tol * scale:
        if pi12 > tol * scale:
            raise NotStabilityMultiplier(
                "X22 = 0 cannot absorb a nonzero cross block X12")
        raise NotStabilityMultiplier(
            "X22 has an undamped output direction; no finite energy bound")

    if pi12 <= tol * scale:
        return StabilityCertificate(c=pi11 / pi22, eps=0.0,
                                    pi11=pi11, pi12=pi12, pi22=pi22)

    base = pi12 ** 2 / pi22
    delta = max(1e-6, 0.01 * base)
    eps = base + delta
    c = (pi11 + eps) * eps / (pi22 * eps - pi12 ** 2)
    return StabilityCertificate(c=c, eps=eps, pi11=pi11, pi12=pi12, pi22=pi22)
