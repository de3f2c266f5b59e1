"""LTI plants, controller interconnection, and desk-scale validation tools.

The plant convention has two input channels and two output channels:

    dx = A x + B1 v + B2 u        v: disturbance, u: control
    y  = C1 x + D11 v + D12 u     y: performance output
    m  = C2 x + D21 v             m: measurement (no feedthrough from u)

Analysis-only systems simply have empty control/measurement channels.

Frequency responses and time simulations here are deliberately independent
of the LMI machinery: they are the oracles the certificates are checked
against, so they must not share code paths with what they validate.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DimensionMismatch, Unstable
from .linalg import as_matrix, sigma_max

__all__ = [
    "StateSpace",
    "Controller",
    "Signal",
    "close_loop",
    "closed_loop_data",
    "freq_gain_oracle",
    "is_hurwitz",
    "default_dt",
    "simulate",
    "probe_signal",
    "energy",
]


@dataclass(frozen=True)
class StateSpace:
    """Plant with disturbance/performance and optional control channels."""

    a: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    c1: np.ndarray
    d11: np.ndarray
    d12: np.ndarray
    c2: np.ndarray
    d21: np.ndarray

    def __post_init__(self):
        a = as_matrix(self.a)
        n = a.shape[0]
        if a.shape[1] != n:
            raise DimensionMismatch("A must be square")
        b1 = as_matrix(self.b1, rows=n)
        b2 = as_matrix(self.b2, rows=n)
        c1 = as_matrix(self.c1, cols=n)
        c2 = as_matrix(self.c2, cols=n)
        d11 = as_matrix(self.d11, rows=c1.shape[0], cols=b1.shape[1])
        d12 = as_matrix(self.d12, rows=c1.shape[0], cols=b2.shape[1])
        d21 = as_matrix(self.d21, rows=c2.shape[0], cols=b1.shape[1])
        for name, val in (("a", a), ("b1", b1), ("b2", b2), ("c1", c1),
                          ("d11", d11), ("d12", d12), ("c2", c2), ("d21", d21)):
            object.__setattr__(self, name, val)

    @classmethod
    def plant(cls, a, b1, c1, d11):
        """System with no control or measurement channel."""
        a = as_matrix(a)
        n = a.shape[0]
        b1 = as_matrix(b1, rows=n)
        c1 = as_matrix(c1, cols=n)
        return cls(a, b1, np.zeros((n, 0)), c1, d11,
                   np.zeros((c1.shape[0], 0)), np.zeros((0, n)),
                   np.zeros((0, b1.shape[1])))

    @property
    def n(self):
        return self.a.shape[0]

    @property
    def n_v(self):
        return self.b1.shape[1]

    @property
    def n_u(self):
        return self.b2.shape[1]

    @property
    def n_y(self):
        return self.c1.shape[0]

    @property
    def n_m(self):
        return self.c2.shape[0]

    @property
    def has_control(self):
        return self.n_u > 0 or self.n_m > 0


@dataclass(frozen=True)
class Controller:
    """Dynamic output feedback  dxc = Ac xc + Bc m,  u = Cc xc + Dc m."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        a = as_matrix(self.a)
        if a.shape[0] != a.shape[1]:
            raise DimensionMismatch("controller A must be square")
        b = as_matrix(self.b, rows=a.shape[0])
        c = as_matrix(self.c, cols=a.shape[0])
        d = as_matrix(self.d, rows=c.shape[0], cols=b.shape[1])
        for name, val in (("a", a), ("b", b), ("c", c), ("d", d)):
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.a.shape[0]


def closed_loop_data(plant, ctrl):
    """(Acl, Bcl, Ccl, Dcl) of the disturbance -> performance channel."""
    if ctrl.b.shape[1] != plant.n_m or ctrl.c.shape[0] != plant.n_u:
        raise DimensionMismatch("controller ports do not match the plant")
    a, b1, b2 = plant.a, plant.b1, plant.b2
    c1, d11, d12 = plant.c1, plant.d11, plant.d12
    c2, d21 = plant.c2, plant.d21
    ak, bk, ck, dk = ctrl.a, ctrl.b, ctrl.c, ctrl.d
    acl = np.block([[a + b2 @ dk @ c2, b2 @ ck], [bk @ c2, ak]])
    bcl = np.block([[b1 + b2 @ dk @ d21], [bk @ d21]])
    ccl = np.block([[c1 + d12 @ dk @ c2, d12 @ ck]])
    dcl = d11 + d12 @ dk @ d21
    return acl, bcl, ccl, dcl


def close_loop(plant, ctrl):
    """Close the measurement/control loop; the result has no open channels."""
    acl, bcl, ccl, dcl = closed_loop_data(plant, ctrl)
    return StateSpace.plant(acl, bcl, ccl, dcl)


def is_hurwitz(a):
    a = as_matrix(a)
    if a.size == 0:
        return True
    return float(np.max(np.linalg.eigvals(a).real)) < 0.0


def _gain_at(sys, omega):
    if sys.n == 0:
        return sigma_max(sys.d11)
    resolvent = np.linalg.solve(1j * omega * np.eye(sys.n) - sys.a, sys.b1)
    return float(np.linalg.norm(sys.c1 @ resolvent + sys.d11, 2))


def freq_gain_oracle(sys, grid=None, refine=True):
    """Peak gain of the disturbance channel over frequency.

    Sweeps ``grid`` (default: 400 log-spaced points in [1e-3, 1e3] rad/s
    plus omega = 0), then polishes around the best point with a bounded
    scalar search.  The high-frequency limit sigma_max(D11) is always
    included as a candidate.  Raises ``Unstable`` for non-Hurwitz A.
    """
    if sys.has_control:
        raise DimensionMismatch("close the loop before calling the oracle")
    if not is_hurwitz(sys.a):
        raise Unstable("A is not Hurwitz; peak gain is unbounded")
    if sys.n == 0 or sys.n_v == 0 or sys.n_y == 0:
        return sigma_max(sys.d11)
    if grid is None:
        grid = np.concatenate(([0.0], np.logspace(-3.0, 3.0, 400)))
    grid = np.asarray(grid, dtype=float)
    vals = np.array([_gain_at(sys, w) for w in grid])
    k = int(np.argmax(vals))
    best = float(vals[k])
    if refine and len(grid) > 2:
        lo = grid[max(k - 1, 0)]
        hi = grid[min(k + 1, len(grid) - 1)]
        if hi > lo:
            res = minimize_scalar(lambda w: -_gain_at(sys, w),
                                  bounds=(lo, hi), method="bounded",
                                  options={"xatol": 1e-12})
            best = max(best, float(-res.fun))
    return max(best, sigma_max(sys.d11))


@dataclass(frozen=True)
class Signal:
    """Uniformly sampled vector signal; ``samples`` has one row per step."""

    dt: float
    samples: np.ndarray

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.dt <= 0.0:
            raise DimensionMismatch("dt must be positive")
        object.__setattr__(self, "samples", samples)

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def steps(self):
        return self.samples.shape[0]


def default_dt(sys):
    """Integration step 0.1 / sigma_max(A), clamped to [1e-4, 1e-2]."""
    rate = sigma_max(sys.a)
    if rate <= 0.0:
        return 1e-2
    return float(np.clip(0.1 / rate, 1e-4, 1e-2))


def simulate(sys, signal):
    """Fixed-step RK4 simulation from x(0) = 0.

    The input is interpolated linearly between samples for the half-step
    evaluations.  Returns (states, outputs) sampled on the signal's grid.
    """
    if sys.has_control:
        raise DimensionMismatch("close the loop before simulating")
    if signal.dim != sys.n_v:
        raise DimensionMismatch(
            f"signal dim {signal.dim} != disturbance dim {sys.n_v}")
    a, b, c, d = sys.a, sys.b1, sys.c1, sys.d11
    u = signal.samples
    steps = signal.steps
    dt = signal.dt
    x = np.zeros(sys.n)
    states = np.zeros((steps, sys.n))
    for k in range(steps - 1):
        states[k] = x
        u0, u1 = u[k], u[k + 1]
        um = 0.5 * (u0 + u1)
        k1 = a @ x + b @ u0
        k2 = a @ (x + 0.5 * dt * k1) + b @ um
        k3 = a @ (x + 0.5 * dt * k2) + b @ um
        k4 = a @ (x + dt * k3) + b @ u1
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    states[steps - 1] = x
    outputs = states @ c.T + u @ d.T
    return states, outputs


def probe_signal(rng, dim, dt, duration):
    """Smooth, windowed excitation with finite energy; deterministic in rng."""
    steps = max(int(round(duration / dt)), 8)
    raw = rng.normal(size=(steps, dim))
    kernel = np.hanning(max(steps // 16, 5))
    kernel /= kernel.sum()
    smooth = np.column_stack(
        [np.convolve(raw[:, j], kernel, mode="same") for j in range(dim)])
    window = np.hanning(steps)[:, None]
    return Signal(dt=dt, samples=smooth * window)


def energy(samples, dt):
    """Trapezoidal estimate of the squared L2 norm of a sampled signal."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    power = np.sum(samples ** 2, axis=1)
    return float(np.trapezoid(power, dx=dt))
