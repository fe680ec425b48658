"""CSV readers and writers. Floats are written with 17 significant digits."""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .perron import GraphManifold, grid_nodes
from .rates import GapReport, RateEstimate
from .verify import ResidualReport, SweepResult


def fmt(v: float) -> str:
    return format(float(v), ".17g")


def _write(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def write_manifold(path, m: GraphManifold) -> None:
    """Columns ``x1..x_dx, h1..h_dy``, one row per node in C order."""
    nodes = m.nodes().reshape(-1, m.dx)
    vals = m.values.reshape(-1, m.dy)
    header = [f"x{i + 1}" for i in range(m.dx)] + [f"h{i + 1}" for i in range(m.dy)]
    _write(path, header, np.hstack([nodes, vals]))


def read_manifold(path, periods) -> GraphManifold:
    """Rebuild a :class:`GraphManifold` from :func:`write_manifold` output."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    dx = sum(1 for h in header if h.startswith("x"))
    dy = sum(1 for h in header if h.startswith("h"))
    if dx != len(periods) or dx + dy != len(header) or dy == 0:
        raise ValueError(f"{path}: header {header} does not match a {len(periods)}-dimensional box")
    data = np.array(body, dtype=float)
    if data.ndim != 2 or data.shape[1] != dx + dy:
        raise ValueError(f"{path}: malformed rows")
    counts = tuple(len(np.unique(data[:, a])) for a in range(dx))
    if math.prod(counts) != data.shape[0]:
        raise ValueError(f"{path}: nodes do not form a regular grid")
    expect = grid_nodes(periods, counts).reshape(-1, dx)
    if not np.allclose(expect, data[:, :dx], rtol=1e-12, atol=1e-12):
        raise ValueError(f"{path}: node coordinates do not match the periodic grid")
    return GraphManifold(tuple(periods), counts, data[:, dx:].reshape(counts + (dy,)))


def write_rates(path, rates: RateEstimate, gap: GapReport) -> None:
    """``quantity, value`` table."""
    rows = [
        ("rho_M", rates.rho_M), ("rho_minus", rates.rho_minus), ("rho_plus", rates.rho_plus),
        ("C_M", rates.C_M), ("C_minus", rates.C_minus),
        ("n_points", rates.n_points), ("window", rates.window), ("step", rates.step),
        ("r_max", gap.r_max),
    ]
    for c in gap.checks:
        rows += [(f"margin[r={fmt(c.r)}]", c.margin), (f"pass[r={fmt(c.r)}]", int(c.passed))]
    _write(path, ["quantity", "value"], rows)


def write_rate_samples(path, rates: RateEstimate) -> None:
    """Log-norm samples: ``t`` then one tangential and one normal column per base point.

    Backward-time rows (``t < 0``) carry tangential samples only.
    """
    n = rates.n_points
    header = ["t"] + [f"tangential_{k}" for k in range(n)] + [f"normal_{k}" for k in range(n)]
    rows = []
    t = rates.times
    for i in range(len(t) - 1, 0, -1):
        rows.append([-t[i], *rates.tangential_log_backward[i], *([""] * n)])
    for i in range(len(t)):
        rows.append([t[i], *rates.tangential_log[i], *rates.normal_log[i]])
    _write(path, header, rows)


def write_residual(path, m: GraphManifold, report: ResidualReport) -> None:
    nodes = m.nodes().reshape(-1, m.dx)
    vals = m.values.reshape(-1, m.dy)
    header = ([f"x{i + 1}" for i in range(m.dx)] + [f"h{i + 1}" for i in range(m.dy)]
              + ["residual"])
    _write(path, header, np.hstack([nodes, vals, report.per_node.reshape(-1, 1)]))


def write_sweep(path, sweep: SweepResult) -> None:
    _write(path, ["delta", "dist0", "dist1"],
           [(e.delta, e.dist0, e.dist1) for e in sweep.entries])
