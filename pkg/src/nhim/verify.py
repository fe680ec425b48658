"""A posteriori checks on computed invariant graphs."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, NHIMError
from .perron import GraphManifold, PerronConfig, solve_manifold
from .vf_model import (PerturbationSpec, SystemSpec, apply_perturbation, eval_horizontal,
                       eval_linear, eval_nonlinear)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ResidualReport:
    sup: float
    per_node: np.ndarray  # (*counts,) Euclidean norm of the defect
    stencil_width: tuple  # grid spacing per axis
    nodes: np.ndarray = field(repr=False, default=None)


@dataclass(frozen=True)
class SweepEntry:
    delta: float
    dist0: float
    dist1: float
    error: Optional[str] = None


@dataclass(frozen=True)
class SweepResult:
    entries: tuple
    slope: float

    @property
    def failed(self) -> list:
        return [e for e in self.entries if e.error is not None]


def grid_gradient(values: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    """Central differences on a periodic grid: ``(*counts, dy)`` -> ``(*counts, dy, dx)``."""
    dx = values.ndim - 1
    parts = [(np.roll(values, -1, axis=a) - np.roll(values, 1, axis=a)) / (2.0 * spacing[a])
             for a in range(dx)]
    return np.stack(parts, axis=-1)


def invariance_residual(spec: SystemSpec, manifold: GraphManifold) -> ResidualReport:
    """Defect of the graph-invariance equation ``Dh v_X(x, h) = A(x) h + f(x, h)``.

    ``Dh`` uses second-order central differences on the periodic grid.
    """
    if manifold.dx != spec.dx or manifold.dy != spec.dy:
        raise DimensionError("manifold and system dimensions differ")
    if any(c < 5 for c in manifold.counts):
        raise ValueError(f"need at least 5 nodes per axis, got {manifold.counts}")
    h = manifold.values
    x = manifold.nodes()
    spacing = tuple(manifold.spacing)
    Dh = grid_gradient(h, spacing)
    flat_x = x.reshape(-1, spec.dx)
    flat_h = h.reshape(-1, spec.dy)
    vx = eval_horizontal(spec, flat_x, flat_h)
    A = eval_linear(spec, flat_x)
    f = eval_nonlinear(spec, flat_x, flat_h)
    lhs = np.einsum("nij,nj->ni", Dh.reshape(-1, spec.dy, spec.dx), vx)
    rhs = np.einsum("nij,nj->ni", A, flat_h) + f
    per_node = np.linalg.norm(lhs - rhs, axis=-1).reshape(manifold.counts)
    return ResidualReport(float(per_node.max()), per_node, spacing, x)


def manifold_distance(m1: GraphManifold, m2: GraphManifold) -> tuple[float, float]:
    """Sup distance of values and of central-difference gradients.

    ``m2`` is resampled onto ``m1``'s grid when the grids differ.
    """
    if m1.dx != m2.dx or m1.dy != m2.dy:
        raise DimensionError("manifolds have different dimensions")
    if not np.allclose(m1.periods, m2.periods):
        raise DimensionError("manifolds live on different periodic boxes")
    if tuple(m1.counts) != tuple(m2.counts):
        m2 = m2.resample(m1.counts)
    d0 = float(np.max(np.abs(m1.values - m2.values)))
    g1 = grid_gradient(m1.values, m1.spacing)
    g2 = grid_gradient(m2.values, m1.spacing)
    d1 = float(np.max(np.abs(g1 - g2)))
    return d0, d1


def _loglog_slope(entries) -> float:
    pts = [(e.delta, e.dist0) for e in entries
           if e.error is None and e.delta > 0 and e.dist0 > 0]
    if len(pts) < 2:
        return math.nan
    d, r = np.log(np.array(pts)).T
    return float(np.polyfit(d, r, 1)[0])


def perturbation_sweep(spec: SystemSpec, pert: PerturbationSpec, deltas: Sequence[float],
                       cfg: PerronConfig, grid=64, workers: int = 1) -> SweepResult:
    """Solve at each amplitude and measure the distance to the unperturbed graph.

    Failures are recorded per amplitude and do not stop the sweep.
    """
    deltas = [float(d) for d in deltas]
    if 0.0 not in deltas:
        raise ValueError("deltas must include 0")
    try:
        base = solve_manifold(spec, grid, cfg, workers=workers)
    except NHIMError as exc:
        msg = f"unperturbed solve failed: {type(exc).__name__}: {exc}"
        entries = tuple(SweepEntry(d, math.nan, math.nan, msg) for d in deltas)
        return SweepResult(entries, math.nan)

    entries = []
    for d in deltas:
        if d == 0.0:
            entries.append(SweepEntry(0.0, 0.0, 0.0))
            continue
        try:
            m = solve_manifold(apply_perturbation(spec, pert.with_delta(d)), grid, cfg,
                               workers=workers)
        except NHIMError as exc:
            log.warning("sweep: delta=%g failed: %s", d, exc)
            entries.append(SweepEntry(d, math.nan, math.nan, f"{type(exc).__name__}: {exc}"))
            continue
        d0, d1 = manifold_distance(m, base)
        entries.append(SweepEntry(d, d0, d1))
    return SweepResult(tuple(entries), _loglog_slope(entries))
