"""Finite-time estimates of tangential and normal growth rates.

Rates are measured along the unperturbed invariant graph ``y = 0``.  The
field used is ``(v_X(x, y), A(x) y + f(x, y) - f(x, 0))``, which keeps the
linear part and any higher-order terms of ``f`` but removes the forcing
that would push orbits off ``y = 0``.  With this field the splitting into
``TX`` and ``Y`` is axis aligned and the normal block of the linearised
flow is exactly the cocycle of ``A``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import RateFitError
from .flow import variational_flow
from .vf_model import SystemSpec


@dataclass(frozen=True)
class RateEstimate:
    """Growth exponents and envelope constants.

    ``C * exp(rho * t)`` dominates every stored sample. ``rho_plus`` is
    infinite because the unstable bundle is empty.
    """

    rho_M: float
    rho_minus: float
    C_M: float = 1.0
    C_minus: float = 1.0
    rho_plus: float = math.inf
    n_points: int = 0
    window: float = 0.0
    step: float = 0.0
    # samples, time on axis 0 and base point on axis 1
    times: Optional[np.ndarray] = field(default=None, repr=False)
    tangential_log: Optional[np.ndarray] = field(default=None, repr=False)
    tangential_log_backward: Optional[np.ndarray] = field(default=None, repr=False)
    normal_log: Optional[np.ndarray] = field(default=None, repr=False)

    def is_normally_hyperbolic(self) -> bool:
        return self.rho_minus < -self.rho_M <= 0


@dataclass(frozen=True)
class GapCheck:
    r: float
    margin: float
    passed: bool


@dataclass(frozen=True)
class GapReport:
    r_max: float
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, r) -> GapCheck:
        for c in self.checks:
            if c.r == r:
                return c
        raise KeyError(r)


def unperturbed_field(spec: SystemSpec):
    """Stacked field with the ``y = 0`` forcing of ``f`` removed."""
    dx = spec.dx

    def field_(z):
        x, y = z[..., :dx], z[..., dx:]
        zero = np.zeros_like(y)
        vy = (np.einsum("...ij,...j->...i", spec.linear(x), y)
              + spec.nonlinear(x, y) - spec.nonlinear(x, zero))
        return np.concatenate([spec.horizontal(x, y), vy], axis=-1)

    return field_


def default_base_points(spec: SystemSpec, n: int = 32) -> np.ndarray:
    """Low-discrepancy (Halton) points over the periodic box."""
    u = qmc.Halton(d=spec.dx, scramble=False).random(n)
    return u * np.asarray(spec.periods)


def _block_lognorm(mats: np.ndarray, lo: int, hi: int) -> np.ndarray:
    blk = mats[..., lo:hi, lo:hi]
    return np.log(np.linalg.norm(blk, ord=2, axis=(-2, -1)))


def _envelope(t: np.ndarray, logn: np.ndarray, clamp_nonneg: bool):
    """Least-squares slope, then the smallest constant dominating all samples."""
    tt = np.broadcast_to(t[:, None], logn.shape).ravel()
    ll = logn.ravel()
    slope = float(np.polyfit(tt, ll, 1)[0])
    if clamp_nonneg:
        slope = max(slope, 0.0)
    logC = float(np.max(ll - slope * tt))
    return slope, max(logC, 0.0)


def estimate_rates(spec: SystemSpec, base_points: Sequence | None = None, window: float = 20.0,
                   h_t: float = 0.01, n_points: int = 32,
                   max_log_envelope: float = 5.0) -> RateEstimate:
    """Fit ``rho_M``, ``rho_minus`` and envelope constants on ``y = 0``.

    The tangential block is sampled over ``[-window, window]`` and fitted
    against ``|t|``; the normal block over ``[0, window]``. Raises
    :class:`RateFitError` if an envelope constant exceeds
    ``exp(max_log_envelope)`` (growth is not exponential on the window) or
    if the fitted rates violate ``rho_minus < -rho_M <= 0``.
    """
    if not window > 0:
        raise ValueError("window must be > 0")
    if base_points is None:
        base_points = default_base_points(spec, n_points)
    x = np.atleast_2d(np.asarray(base_points, dtype=float))
    if x.shape[-1] != spec.dx:
        raise ValueError(f"base points must have {spec.dx} coordinates")
    z0 = np.concatenate([x, np.zeros((x.shape[0], spec.dy))], axis=1)
    F = unperturbed_field(spec)
    fwd = variational_flow(spec, z0, window, h_t, field=F)
    bwd = variational_flow(spec, z0, -window, h_t, field=F)
    dx, D = spec.dx, spec.dx + spec.dy

    t = fwd.times
    tan_f = _block_lognorm(fwd.matrices, 0, dx)
    tan_b = _block_lognorm(bwd.matrices, 0, dx)
    nor = _block_lognorm(fwd.matrices, dx, D)
    for name, arr in (("tangential", tan_f), ("tangential", tan_b), ("normal", nor)):
        if not np.isfinite(arr).all():
            raise RateFitError(f"{name} block norm is not finite or degenerate")

    rho_M, logC_M = _envelope(np.concatenate([t, np.abs(bwd.times)]),
                              np.concatenate([tan_f, tan_b]), clamp_nonneg=True)
    rho_minus, logC_minus = _envelope(t, nor, clamp_nonneg=False)
    for name, logC in (("tangential", logC_M), ("normal", logC_minus)):
        if logC > max_log_envelope:
            raise RateFitError(
                f"{name} growth is not exponential on the window: "
                f"envelope constant exp({logC:.3g}) exceeds exp({max_log_envelope})")
    est = RateEstimate(
        rho_M=rho_M, rho_minus=rho_minus, C_M=math.exp(logC_M), C_minus=math.exp(logC_minus),
        n_points=x.shape[0], window=float(window), step=float(t[1] - t[0]),
        times=t, tangential_log=tan_f, tangential_log_backward=tan_b, normal_log=nor,
    )
    if not est.is_normally_hyperbolic():
        raise RateFitError(
            f"rates violate rho_minus < -rho_M <= 0: rho_M = {rho_M:.6g}, "
            f"rho_minus = {rho_minus:.6g}")
    return est


def check_gap(rates: RateEstimate, r: float | Sequence[float] = 1.0) -> GapReport:
    """Check ``rho_minus < -r * rho_M`` for each requested ``r >= 1``."""
    rs = [float(r)] if np.isscalar(r) else [float(v) for v in r]
    if any(not v >= 1 for v in rs):
        raise ValueError(f"r must be >= 1, got {rs}")
    r_max = -rates.rho_minus / rates.rho_M if rates.rho_M > 0 else math.inf
    checks = []
    for v in rs:
        margin = -rates.rho_minus - v * rates.rho_M
        checks.append(GapCheck(v, margin, margin > 0))
    return GapReport(r_max, tuple(checks))
