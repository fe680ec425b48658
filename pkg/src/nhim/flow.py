"""Fixed-step RK4 integration on a shared time grid.

All curves live on ``t_i = -T + i*h``, ``i = 0..N``.  Operations accept an
optional batch axis so that many base points can be integrated in one
vectorised sweep; each batch member is computed independently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import IntegrationError
from .vf_model import SystemSpec


def grid_steps(horizon: float, step: float) -> int:
    """Number of steps ``horizon / step``; it must be integral."""
    if not (horizon > 0 and step > 0):
        raise ValueError(f"horizon and step must be > 0, got {horizon}, {step}")
    n = round(horizon / step)
    if n < 1 or abs(n * step - horizon) > 1e-9 * horizon:
        raise ValueError(f"horizon {horizon} is not an integer multiple of step {step}")
    return n


def _lagrange4(s: np.ndarray | float) -> tuple:
    """Cubic Lagrange weights for nodes at 0, 1, 2, 3 evaluated at ``s``."""
    return (
        -(s - 1) * (s - 2) * (s - 3) / 6,
        s * (s - 2) * (s - 3) / 2,
        -s * (s - 1) * (s - 3) / 2,
        s * (s - 1) * (s - 2) / 6,
    )


@dataclass(frozen=True)
class Curve:
    """Samples of a function of time on ``[-horizon, 0]``.

    ``values`` has shape ``(N + 1, ...)``; the trailing axis is the state
    dimension and anything in between is a batch. X-valued curves are kept
    unwrapped. Between nodes the curve is read through a local cubic
    (four-point Lagrange) interpolant.
    """

    horizon: float
    step: float
    values: np.ndarray
    interpolation: str = "piecewise-cubic"

    def __post_init__(self):
        n = grid_steps(self.horizon, self.step)
        if self.values.shape[0] != n + 1:
            raise ValueError(f"expected {n + 1} samples, got {self.values.shape[0]}")
        if n < 3:
            raise ValueError("a curve needs at least 3 steps for cubic interpolation")

    @classmethod
    def zeros(cls, horizon: float, step: float, shape: tuple) -> "Curve":
        n = grid_steps(horizon, step)
        return cls(horizon, step, np.zeros((n + 1,) + tuple(shape)))

    @classmethod
    def from_function(cls, horizon: float, step: float, fn: Callable) -> "Curve":
        """Sample ``fn(times)``; ``fn`` returns an array with time on axis 0."""
        n = grid_steps(horizon, step)
        t = -horizon + step * np.arange(n + 1)
        return cls(horizon, step, np.asarray(fn(t), dtype=float))

    @property
    def n_steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return -self.horizon + self.step * np.arange(self.n_steps + 1)

    @property
    def final(self) -> np.ndarray:
        """Sample at ``t = 0``."""
        return self.values[-1]

    def sup_norm(self) -> float | np.ndarray:
        """Sup over time of the max-norm; one value per batch member."""
        a = np.abs(self.values)
        a = a.max(axis=-1)
        return a.max(axis=0)

    def _interp(self, index: np.ndarray, frac: np.ndarray) -> np.ndarray:
        n = self.n_steps
        base = np.clip(index - 1, 0, n - 3)
        s = index + frac - base
        w = _lagrange4(s)
        v = self.values
        extra = (1,) * (v.ndim - 1)
        out = 0.0
        for k in range(4):
            wk = np.reshape(w[k], np.shape(w[k]) + extra)
            out = out + wk * v[base + k]
        return out

    def __call__(self, t) -> np.ndarray:
        """Interpolated values at times ``t`` (scalar or 1-D array)."""
        t = np.asarray(t, dtype=float)
        u = (t + self.horizon) / self.step
        if np.any(u < -1e-9) or np.any(u > self.n_steps + 1e-9):
            raise ValueError("time outside [-horizon, 0]")
        index = np.clip(np.floor(u).astype(int), 0, self.n_steps - 1)
        return self._interp(index, u - index)

    def at_fraction(self, frac: float) -> np.ndarray:
        """Values at ``t_i + frac*h`` for ``i = 0..N-1`` (exact grid offsets)."""
        index = np.arange(self.n_steps)
        return self._interp(index, np.full(self.n_steps, float(frac)))

    def refine(self) -> "Curve":
        """Same curve on the grid with half the step (midpoints interpolated)."""
        mid = self.at_fraction(0.5)
        out = np.empty((2 * self.n_steps + 1,) + self.values.shape[1:])
        out[0::2] = self.values
        out[1::2] = mid
        return Curve(self.horizon, self.step / 2, out, self.interpolation)


@dataclass(frozen=True)
class Cocycle:
    """Per-step transitions ``Psi(t_{i+1}, t_i)`` of ``Y' = A(x(t)) Y``.

    ``matrices`` has shape ``(N, ..., dy, dy)``.
    """

    horizon: float
    step: float
    matrices: np.ndarray

    def transition(self, j: int, i: int) -> np.ndarray:
        """``Psi(t_j, t_i)`` for grid indices ``i <= j`` by composition."""
        if not 0 <= i <= j <= self.matrices.shape[0]:
            raise IndexError(f"need 0 <= i <= j <= {self.matrices.shape[0]}")
        dy = self.matrices.shape[-1]
        out = np.broadcast_to(np.eye(dy), self.matrices.shape[1:]).copy()
        for k in range(i, j):
            out = self.matrices[k] @ out
        return out


# ------------------------------------------------------------------- RK4

def _rk4_linear_step(A0, Am, A1, s):
    """One RK4 step of ``Y' = A(t) Y`` from the identity (vectorised)."""
    eye = np.eye(A0.shape[-1])
    k1 = A0
    k2 = Am @ (eye + 0.5 * s * k1)
    k3 = Am @ (eye + 0.5 * s * k2)
    k4 = A1 @ (eye + s * k3)
    return eye + (s / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _batched(values: np.ndarray, dim: int):
    arr = np.asarray(values, dtype=float)
    single = arr.ndim == 1
    if arr.shape[-1] != dim:
        raise ValueError(f"trailing dimension must be {dim}, got shape {arr.shape}")
    return (arr[None, :] if single else arr), single


def flow_horizontal(spec: SystemSpec, y: Optional[Curve], x0, horizon: float | None = None,
                    step: float | None = None) -> Curve:
    """Solve ``x' = v_X(x, y(t))`` backward from ``x(0) = x0`` over ``[-T, 0]``.

    ``x0`` is one point ``(dx,)`` or a batch ``(B, dx)``; ``y`` carries the
    grid (``None`` means ``y = 0`` on the grid given by ``horizon``/``step``).
    The returned curve is unwrapped.
    """
    x0b, single = _batched(x0, spec.dx)
    B = x0b.shape[0]
    if y is None:
        y = Curve.zeros(horizon, step, (B, spec.dy))
    yv = y.values if y.values.ndim == 3 else y.values[:, None, :]
    if yv.shape[1] not in (1, B):
        raise ValueError(f"y-curve batch {yv.shape[1]} does not match {B} base points")
    ymid = y.at_fraction(0.5)
    if ymid.ndim == 2:
        ymid = ymid[:, None, :]
    N, h = y.n_steps, y.step
    s = -h
    X = np.empty((N + 1, B, spec.dx))
    X[N] = x0b
    v = spec.horizontal
    with np.errstate(all="ignore"):
        for i in range(N, 0, -1):
            xi = X[i]
            ym = ymid[i - 1]
            k1 = v(xi, yv[i])
            k2 = v(xi + (0.5 * s) * k1, ym)
            k3 = v(xi + (0.5 * s) * k2, ym)
            k4 = v(xi + s * k3, yv[i - 1])
            X[i - 1] = xi + (s / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    finite = np.isfinite(X).all(axis=(1, 2))
    if not finite.all():
        last_bad = int(np.nonzero(~finite)[0].max())
        raise IntegrationError("non-finite horizontal state", time=-y.horizon + last_bad * h)
    return Curve(y.horizon, h, X[:, 0] if single else X)


def linear_transitions(spec: SystemSpec, x_nodes: np.ndarray, x_mid: np.ndarray,
                       step: float) -> np.ndarray:
    """RK4 transitions for consecutive nodes of an x-path.

    ``x_nodes`` has shape ``(M + 1, ..., dx)`` and ``x_mid`` the midpoint
    values ``(M, ..., dx)``.
    """
    with np.errstate(all="ignore"):
        A_nodes = spec.linear(x_nodes)
        A_mid = spec.linear(x_mid)
        P = _rk4_linear_step(A_nodes[:-1], A_mid, A_nodes[1:], step)
    return P


def flow_linear(spec: SystemSpec, x: Curve) -> Cocycle:
    """Per-step transition matrices of ``Y' = A(x(t)) Y`` along ``x``."""
    P = linear_transitions(spec, x.values, x.at_fraction(0.5), x.step)
    if not np.isfinite(P).all():
        idx = np.argwhere(~np.isfinite(P))[0][0]
        raise IntegrationError("non-finite linear transition", time=-x.horizon + idx * x.step)
    return Cocycle(x.horizon, x.step, P)


# ------------------------------------------------------ variational flow

@dataclass(frozen=True)
class VariationalResult:
    """Trajectory and accumulated linearisation ``D Phi^t``.

    ``states`` is ``(n + 1, ..., D)``; ``matrices[k]`` is the transition
    from ``times[0]`` to ``times[k]`` with shape ``(..., D, D)``.
    """

    times: np.ndarray
    states: np.ndarray
    matrices: np.ndarray

    @property
    def transition(self) -> np.ndarray:
        return self.matrices[-1]


def full_field(spec: SystemSpec) -> Callable[[np.ndarray], np.ndarray]:
    """The vector field on ``X x Y`` acting on stacked states ``z = (x, y)``."""
    dx = spec.dx

    def field(z):
        x, y = z[..., :dx], z[..., dx:]
        return np.concatenate([spec.horizontal(x, y), spec.vertical(x, y)], axis=-1)

    return field


def fd_jacobian(field: Callable, z: np.ndarray, rel_step: float = 1e-6) -> np.ndarray:
    """Central finite-difference Jacobian of ``field`` at (batched) ``z``."""
    D = z.shape[-1]
    hk = rel_step * np.maximum(1.0, np.abs(z))  # (..., D)
    # all 2*D shifted copies go through the field in one call
    shifts = np.eye(D) * hk[..., None, :]  # (..., D, D), row k shifts coordinate k
    zs = np.concatenate([z[..., None, :] + shifts, z[..., None, :] - shifts], axis=-2)
    vals = field(zs)
    J = (vals[..., :D, :] - vals[..., D:, :]) / (2.0 * hk)[..., :, None]
    return np.swapaxes(J, -1, -2)


def variational_flow(spec: SystemSpec, z0, t_span: float, h_t: float,
                     field: Callable | None = None, rel_step: float = 1e-6) -> VariationalResult:
    """Integrate ``z' = F(z)`` together with ``Phi' = DF(z) Phi``, ``Phi(0) = I``.

    ``t_span`` may be negative (backward in time). The step is the largest
    value ``<= h_t`` that divides ``|t_span|``. ``field`` defaults to the
    full split field of ``spec``.
    """
    F = field or full_field(spec)
    D = spec.dx + spec.dy
    z, single = _batched(z0, D)
    if not math.isfinite(t_span):
        raise ValueError("t_span must be finite")
    if not h_t > 0:
        raise ValueError("h_t must be > 0")
    n = math.ceil(abs(t_span) / h_t - 1e-9) if t_span != 0 else 0
    s = t_span / n if n else 0.0
    B = z.shape[0]
    states = np.empty((n + 1, B, D))
    mats = np.empty((n + 1, B, D, D))
    states[0] = z
    mats[0] = np.eye(D)

    def rhs(zz, PP):
        return F(zz), fd_jacobian(F, zz, rel_step) @ PP

    with np.errstate(all="ignore"):
        for i in range(n):
            zi, Pi = states[i], mats[i]
            a1, b1 = rhs(zi, Pi)
            a2, b2 = rhs(zi + 0.5 * s * a1, Pi + 0.5 * s * b1)
            a3, b3 = rhs(zi + 0.5 * s * a2, Pi + 0.5 * s * b2)
            a4, b4 = rhs(zi + s * a3, Pi + s * b3)
            states[i + 1] = zi + (s / 6.0) * (a1 + 2 * a2 + 2 * a3 + a4)
            mats[i + 1] = Pi + (s / 6.0) * (b1 + 2 * b2 + 2 * b3 + b4)
            if (i & 63) == 63 or i == n - 1:
                if not (np.isfinite(states[i + 1]).all() and np.isfinite(mats[i + 1]).all()):
                    lo = i - (i & 63)
                    ok = [np.isfinite(states[k]).all() and np.isfinite(mats[k]).all()
                          for k in range(lo, i + 2)]
                    first = lo + ok.index(False)
                    raise IntegrationError("variational flow blew up", time=first * s)
    times = s * np.arange(n + 1)
    if single:
        return VariationalResult(times, states[:, 0], mats[:, 0])
    return VariationalResult(times, states, mats)
