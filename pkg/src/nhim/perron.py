"""Lyapunov-Perron fixed-point iteration for attracting invariant graphs.

For a base point ``x0`` the map ``T(y) = T_Y(T_X(y, x0), y)`` acts on
y-curves over ``[-T, 0]``; its fixed point evaluated at ``t = 0`` is the
graph value ``h(x0)``.  Base points are processed in vectorised batches,
but every node keeps its own iteration count, history and convergence
decision, so results do not depend on how nodes are batched.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import (AdmissibilityError, ConvergenceError, IntegrationError,
                     ManifoldSolveError, NHIMError)
from .flow import Curve, _rk4_linear_step, flow_horizontal, grid_steps
from .vf_model import SystemSpec

log = logging.getLogger(__name__)

#: time steps per vectorised block in apply_TY
TIME_CHUNK = 4096


@dataclass(frozen=True)
class PerronConfig:
    horizon: float = 30.0
    step: float = 1e-3
    eta: float = 0.5
    tol: float = 1e-10
    max_iter: int = 50
    initial: str = "zero"  # or "user"

    def __post_init__(self):
        grid_steps(self.horizon, self.step)
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.initial not in ("zero", "user"):
            raise ValueError(f"initial must be 'zero' or 'user', got {self.initial!r}")

    @property
    def n_steps(self) -> int:
        return grid_steps(self.horizon, self.step)


@dataclass
class PerronState:
    """Iteration record for one base point."""

    x0: np.ndarray
    y: Curve
    x: Curve
    iterations: int
    history: list = field(default_factory=list)
    converged: bool = False

    @property
    def ratios(self) -> list:
        """Successive distance ratios ``d_k / d_{k-1}``."""
        h = self.history
        return [h[k] / h[k - 1] if h[k - 1] > 0 else 0.0 for k in range(1, len(h))]

    @property
    def q_hat(self) -> float:
        """Empirical contraction factor.

        Largest ratio after discarding the first one, which measures the
        transient away from the initial curve.
        """
        r = self.ratios
        if not r:
            return 0.0
        return max(r[1:]) if len(r) > 1 else r[0]


# ------------------------------------------------------------ T_X and T_Y

def apply_TX(spec: SystemSpec, y: Curve, x0) -> Curve:
    """Horizontal flow ``t -> Phi_y(t, 0, x0)`` on the grid of ``y``."""
    return flow_horizontal(spec, y, x0)


def _as3(values):
    return values if values.ndim == 3 else values[:, None, :]


def _ty_values(spec: SystemSpec, x: Curve, y: Curve) -> np.ndarray:
    """Batched core of :func:`apply_TY`; returns values ``(N+1, B, dy)``."""
    X = _as3(x.values)
    Y = _as3(y.values)
    B = max(X.shape[1], Y.shape[1])
    if X.shape[0] != Y.shape[0]:
        raise ValueError("x and y curves are on different grids")
    # reshape the curves to a common 3-d layout so _interp indexes cleanly
    xc = Curve(x.horizon, x.step, X)
    yc = Curve(y.horizon, y.step, Y)
    N, h, dy = xc.n_steps, xc.step, spec.dy
    c = h / 6.0
    out = np.zeros((N + 1, B, dy))
    with np.errstate(all="ignore"):
        for a in range(0, N, TIME_CHUNK):
            b = min(N, a + TIME_CHUNK)
            idx = np.arange(a, b)
            x0, x1 = X[a:b], X[a + 1:b + 1]
            xq1 = xc._interp(idx, np.full(b - a, 0.25))
            xm = xc._interp(idx, np.full(b - a, 0.5))
            xq3 = xc._interp(idx, np.full(b - a, 0.75))
            ym = yc._interp(idx, np.full(b - a, 0.5))
            Am = spec.linear(xm)
            # half-step transitions Psi(t_m, t_i) and Psi(t_{i+1}, t_m)
            P1 = _rk4_linear_step(spec.linear(x0), spec.linear(xq1), Am, 0.5 * h)
            P2 = _rk4_linear_step(Am, spec.linear(xq3), spec.linear(x1), 0.5 * h)
            g0 = spec.nonlinear(x0, Y[a:b])
            gm = spec.nonlinear(xm, ym)
            g1 = spec.nonlinear(x1, Y[a + 1:b + 1])
            # Simpson on [t_i, t_{i+1}] of Psi(t_{i+1}, tau) g(tau)
            inner = np.einsum("...ij,...j->...i", P1, c * g0) + (4.0 * c) * gm
            forcing = np.einsum("...ij,...j->...i", P2, inner) + c * g1
            M = P2 @ P1
            if dy == 1:
                m = np.broadcast_to(M[..., 0, 0], (b - a, B))
                fo = np.broadcast_to(forcing[..., 0], (b - a, B))
                col = out[:, :, 0]
                for k in range(b - a):
                    col[a + k + 1] = m[k] * col[a + k] + fo[k]
            else:
                M = np.broadcast_to(M, (b - a, B, dy, dy))
                fo = np.broadcast_to(forcing, (b - a, B, dy))
                for k in range(b - a):
                    out[a + k + 1] = np.einsum("bij,bj->bi", M[k], out[a + k]) + fo[k]
    return out


def apply_TY(spec: SystemSpec, x: Curve, y: Curve, eta: float | None = None) -> Curve:
    """``t -> int_{-T}^t Psi_x(t, tau) f(x(tau), y(tau)) dtau`` on the grid.

    Uses the cocycle of ``A`` along ``x`` and composite Simpson quadrature
    (half-step RK4 transitions supply the midpoint weights). The tail of
    the integral before ``-T`` is dropped. With ``eta`` given, an output
    whose sup-norm exceeds ``2*eta`` raises :class:`AdmissibilityError`.
    """
    vals = _ty_values(spec, x, y)
    if not np.isfinite(vals).all():
        raise IntegrationError("non-finite quadrature in T_Y")
    single = x.values.ndim == 2 and y.values.ndim == 2
    curve = Curve(x.horizon, x.step, vals[:, 0] if single else vals)
    if eta is not None:
        sup = np.max(np.abs(vals))
        if sup > 2 * eta:
            raise AdmissibilityError(
                f"left admissible neighborhood: sup|T_Y| = {sup:.6g} > 2*eta = {2 * eta:.6g}")
    return curve


def apply_T(spec: SystemSpec, y: Curve, x0) -> Curve:
    """One application of the full contraction ``T(y, x0)``."""
    return apply_TY(spec, apply_TX(spec, y, x0), y)


# ------------------------------------------------------------ iteration

def _iterate_batch(spec: SystemSpec, x0s: np.ndarray, cfg: PerronConfig,
                   initial: Optional[np.ndarray] = None) -> list:
    """Iterate ``T`` for a batch of base points.

    Returns one entry per node: a converged :class:`PerronState` or the
    exception that stopped that node.
    """
    B = x0s.shape[0]
    N = cfg.n_steps
    shape = (N + 1, B, spec.dy)
    if initial is None:
        Y = np.zeros(shape)
    else:
        Y = np.array(np.broadcast_to(initial.reshape(N + 1, -1, spec.dy), shape))
        sup0 = np.abs(Y).max(axis=(0, 2))
        if np.any(sup0 > cfg.eta):
            raise ValueError(f"initial curve has sup-norm {sup0.max():.6g} > eta = {cfg.eta}")

    results: list = [None] * B
    history = [[] for _ in range(B)]
    active = np.arange(B)
    X_fixed = None
    if not spec.horizontal_uses_y:
        X_fixed = flow_horizontal(spec, None, x0s, cfg.horizon, cfg.step).values

    for it in range(1, cfg.max_iter + 1):
        Ya = Y[:, active]
        if X_fixed is not None:
            Xa = X_fixed[:, active]
        else:
            Xa = flow_horizontal(spec, Curve(cfg.horizon, cfg.step, Ya), x0s[active]).values
        new = _ty_values(spec, Curve(cfg.horizon, cfg.step, Xa), Curve(cfg.horizon, cfg.step, Ya))
        finite = np.isfinite(new).all(axis=(0, 2))
        sup = np.where(finite, np.abs(new).max(axis=(0, 2)), np.inf)
        dist = np.abs(new - Ya).max(axis=(0, 2))
        keep = []
        for j, node in enumerate(active):
            history[node].append(float(dist[j]))
            if not finite[j]:
                results[node] = IntegrationError("non-finite quadrature in T_Y")
            elif sup[j] > 2 * cfg.eta:
                results[node] = AdmissibilityError(
                    f"left admissible neighborhood at iteration {it}: "
                    f"sup|y| = {sup[j]:.6g} > 2*eta = {2 * cfg.eta:.6g}")
            elif dist[j] < cfg.tol:
                if sup[j] > cfg.eta:
                    results[node] = AdmissibilityError(
                        f"fixed point outside the eta-neighborhood: "
                        f"sup|y| = {sup[j]:.6g} > eta = {cfg.eta:.6g}")
                else:
                    results[node] = PerronState(
                        x0=x0s[node].copy(),
                        y=Curve(cfg.horizon, cfg.step, new[:, j].copy()),
                        x=Curve(cfg.horizon, cfg.step, Xa[:, j].copy()),
                        iterations=it, history=history[node], converged=True)
            else:
                keep.append(j)
        Y[:, active] = new
        active = active[keep]
        if active.size == 0:
            break
    for node in active:
        h = history[node]
        q = h[-1] / h[-2] if len(h) > 1 and h[-2] > 0 else float("nan")
        results[node] = ConvergenceError(
            f"no convergence after {cfg.max_iter} iterations "
            f"(last change {h[-1]:.3g}, last ratio {q:.3g})", history=h)
    return results


def _iterate_robust(spec, x0s, cfg, initial=None):
    """Batch iteration that isolates integration failures per node."""
    try:
        return _iterate_batch(spec, x0s, cfg, initial)
    except IntegrationError:
        if len(x0s) == 1:
            raise
    out = []
    for k in range(len(x0s)):
        init_k = None if initial is None else initial[:, k:k + 1]
        try:
            out += _iterate_batch(spec, x0s[k:k + 1], cfg, init_k)
        except IntegrationError as exc:
            out.append(exc)
    return out


def iterate_T(spec: SystemSpec, x0, cfg: PerronConfig,
              initial: Curve | np.ndarray | None = None) -> PerronState:
    """Iterate ``y <- T_Y(T_X(y, x0), y)`` to a fixed point.

    The initial curve is zero unless ``cfg.initial == "user"``, in which
    case ``initial`` (a curve or array of shape ``(N+1, dy)``) is used.
    """
    x0 = np.asarray(x0, dtype=float).reshape(1, spec.dx)
    init = None
    if cfg.initial == "user":
        if initial is None:
            raise ValueError("cfg.initial == 'user' requires an initial curve")
        init = initial.values if isinstance(initial, Curve) else np.asarray(initial, float)
        init = init.reshape(cfg.n_steps + 1, 1, spec.dy)
    result = _iterate_batch(spec, x0, cfg, init)[0]
    if isinstance(result, Exception):
        raise result
    return result


def evaluate_h(state: PerronState) -> np.ndarray:
    """Graph value: the fixed-point curve at ``t = 0``."""
    if not state.converged:
        raise ConvergenceError("state has not converged", history=state.history)
    return state.y.final.copy()


# ------------------------------------------------------------- manifold

@dataclass(frozen=True)
class GraphManifold:
    """Values of ``h`` on a regular periodic grid over X.

    ``values`` has shape ``(*counts, dy)``; node ``k`` along axis ``a`` sits
    at ``k * periods[a] / counts[a]``.  Off-grid evaluation uses periodic
    cubic B-spline interpolation.
    """

    periods: tuple
    counts: tuple
    values: np.ndarray
    iterations: Optional[np.ndarray] = None
    q_hat: Optional[np.ndarray] = None

    def __post_init__(self):
        if tuple(self.values.shape[:-1]) != tuple(self.counts):
            raise ValueError(f"values shape {self.values.shape} does not match counts {self.counts}")
        if not np.isfinite(self.values).all():
            raise ValueError("manifold values must be finite")

    @property
    def dx(self) -> int:
        return len(self.counts)

    @property
    def dy(self) -> int:
        return self.values.shape[-1]

    @property
    def spacing(self) -> np.ndarray:
        return np.asarray(self.periods) / np.asarray(self.counts)

    def nodes(self) -> np.ndarray:
        return grid_nodes(self.periods, self.counts)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __call__(self, x) -> np.ndarray:
        """Interpolated ``h(x)`` at points ``x`` of shape ``(..., dx)``."""
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        pts = x.reshape(-1, self.dx)
        coords = (np.mod(pts, self.periods) / self.spacing).T
        out = np.empty((pts.shape[0], self.dy))
        for k in range(self.dy):
            out[:, k] = ndimage.map_coordinates(self.values[..., k], coords, order=3,
                                                mode="grid-wrap")
        return out.reshape(lead + (self.dy,))

    def resample(self, counts) -> "GraphManifold":
        """Interpolate onto another regular grid over the same box."""
        counts = tuple(int(c) for c in np.broadcast_to(counts, (self.dx,)))
        vals = self(grid_nodes(self.periods, counts))
        return GraphManifold(self.periods, counts, vals)


def grid_nodes(periods: Sequence[float], counts: Sequence[int]) -> np.ndarray:
    """Node coordinates, shape ``(*counts, dx)``, C order."""
    axes = [np.arange(n) * (L / n) for L, n in zip(periods, counts)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def _solve_chunk(args):
    spec, x0s, cfg = args
    return _iterate_robust(spec, x0s, cfg)


def solve_manifold(spec: SystemSpec, grid, cfg: PerronConfig, workers: int = 1,
                   batch_size: int = 256) -> GraphManifold:
    """Solve for ``h`` at every node of a regular grid over X.

    ``grid`` is a node count (same on every axis) or a sequence of per-axis
    counts. Nodes are iterated independently; any failure aborts with
    :class:`ManifoldSolveError` listing all failed nodes.
    """
    counts = tuple(int(c) for c in np.broadcast_to(np.asarray(grid), (spec.dx,)))
    if any(c < 1 for c in counts):
        raise ValueError(f"grid must be nonempty, got {counts}")
    nodes = grid_nodes(spec.periods, counts).reshape(-1, spec.dx)
    chunks = [nodes[i:i + batch_size] for i in range(0, len(nodes), batch_size)]
    tasks = [(spec, c, cfg) for c in chunks]
    if workers > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_solve_chunk, tasks))
    else:
        parts = [_solve_chunk(t) for t in tasks]
    results = [r for part in parts for r in part]

    failures = {tuple(nodes[k]): r for k, r in enumerate(results) if isinstance(r, Exception)}
    if failures:
        raise ManifoldSolveError(failures)
    values = np.stack([evaluate_h(r) for r in results]).reshape(counts + (spec.dy,))
    iters = np.array([r.iterations for r in results]).reshape(counts)
    q = np.array([r.q_hat for r in results]).reshape(counts)
    log.info("solved %d nodes, max iterations %d, max q_hat %.3g", len(results), iters.max(), q.max())
    return GraphManifold(tuple(spec.periods), counts, values, iters, q)


def suggest_horizon(rho_minus: float, C_minus: float, sup_f: float, tol: float,
                    step: float) -> float:
    """Smallest grid-aligned horizon whose dropped tail is below ``tol/10``.

    The tail is bounded by ``C_minus * exp(rho_minus * T) * sup_f``.
    """
    if not rho_minus < 0:
        raise ValueError("rho_minus must be negative")
    if sup_f <= 0:
        return 3 * step
    T = math.log(tol / (10.0 * C_minus * sup_f)) / rho_minus
    n = max(3, math.ceil(T / step - 1e-9))
    return n * step
