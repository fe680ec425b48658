"""Split vector fields on a periodic box X times R^n.

The vertical part is always given as ``A(x) y + f(x, y)``; this module
never tries to derive ``A`` from a combined field.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import expr as ex
from .errors import ConfigError, DimensionError, EvaluationError, ParseError

TWO_PI = 2.0 * math.pi

# Split "dx=1 dy=1 vx1=1" style lines; '=' never occurs inside an expression.
_ASSIGN_SPLIT = re.compile(r"(?<!\bparam)\s+(?=(?:param\s+)?[A-Za-z_]\w*\s*=)")
_PARAM_RE = re.compile(r"param\s+([A-Za-z_]\w*)$")
_NAME_RE = re.compile(r"[A-Za-z_]\w*$")
_RESERVED = {"pi", "x", "y"} | set(ex.FUNCTIONS)


@dataclass(frozen=True)
class SystemSpec:
    """Split vector field ``(v_X(x, y), A(x) y + f(x, y))``.

    ``vx`` has ``dx`` entries, ``A`` is a ``dy`` x ``dy`` nested tuple and
    ``f`` has ``dy`` entries. ``params`` is a tuple of ``(name, value)``.
    """

    dx: int
    dy: int
    periods: tuple[float, ...]
    vx: tuple[ex.Expr, ...]
    A: tuple[tuple[ex.Expr, ...], ...]
    f: tuple[ex.Expr, ...]
    params: tuple[tuple[str, float], ...] = ()

    def __post_init__(self):
        if self.dx < 1 or self.dy < 1:
            raise DimensionError(f"need dim_x >= 1 and dim_y >= 1, got {self.dx}, {self.dy}")
        if len(self.periods) != self.dx or any(not p > 0 for p in self.periods):
            raise DimensionError(f"need {self.dx} positive periods, got {self.periods}")
        if len(self.vx) != self.dx:
            raise DimensionError(f"expected {self.dx} horizontal components, got {len(self.vx)}")
        if len(self.f) != self.dy:
            raise DimensionError(f"expected {self.dy} nonlinear components, got {len(self.f)}")
        if len(self.A) != self.dy or any(len(row) != self.dy for row in self.A):
            raise DimensionError(f"A must be {self.dy}x{self.dy}")
        for row in self.A:
            for e in row:
                if any(kind == "y" for kind, _ in ex.variables(e)):
                    raise ConfigError("A(x) must not depend on y")

    # pickling drops compiled closures; they are rebuilt on demand
    def __getstate__(self):
        return {k: v for k, v in self.__dict__.items() if not k.startswith("_c_")}

    def __setstate__(self, state):
        self.__dict__.update(state)

    @property
    def param_values(self) -> dict[str, float]:
        return dict(self.params)

    def with_params(self, **values: float) -> "SystemSpec":
        """Copy with some parameter values replaced."""
        current = dict(self.params)
        unknown = set(values) - set(current)
        if unknown:
            raise ConfigError(f"unknown parameter(s): {sorted(unknown)}")
        current.update({k: float(v) for k, v in values.items()})
        return SystemSpec(self.dx, self.dy, self.periods, self.vx, self.A, self.f,
                          tuple(current.items()))

    @cached_property
    def horizontal_uses_y(self) -> bool:
        return any(kind == "y" for e in self.vx for kind, _ in ex.variables(e))

    @cached_property
    def _c_vx(self):
        p = self.param_values
        return [ex.compile_expr(e, p) for e in self.vx]

    @cached_property
    def _c_A(self):
        p = self.param_values
        return [[ex.compile_expr(e, p) for e in row] for row in self.A]

    @cached_property
    def _c_f(self):
        p = self.param_values
        return [ex.compile_expr(e, p) for e in self.f]

    # Unchecked batched evaluators. x has shape (..., dx), y (..., dy).
    def horizontal(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = np.empty(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]) + (self.dx,))
        for i, fn in enumerate(self._c_vx):
            out[..., i] = fn(x, y)
        return out

    def linear(self, x: np.ndarray) -> np.ndarray:
        out = np.empty(x.shape[:-1] + (self.dy, self.dy))
        for i, row in enumerate(self._c_A):
            for j, fn in enumerate(row):
                out[..., i, j] = fn(x, None)
        return out

    def nonlinear(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        out = np.empty(np.broadcast_shapes(x.shape[:-1], y.shape[:-1]) + (self.dy,))
        for i, fn in enumerate(self._c_f):
            out[..., i] = fn(x, y)
        return out

    def vertical(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """``A(x) y + f(x, y)``."""
        return np.einsum("...ij,...j->...i", self.linear(x), y) + self.nonlinear(x, y)

    def wrap(self, x: np.ndarray) -> np.ndarray:
        """Reduce X-coordinates into ``[0, period)``."""
        return np.mod(x, np.asarray(self.periods))

    def to_text(self) -> str:
        """Config text that parses back to an equivalent spec."""
        lines = [f"dim_x = {self.dx}", f"dim_y = {self.dy}"]
        lines += [f"period_{i + 1} = {p!r}" for i, p in enumerate(self.periods)]
        lines += [f"param {k} = {v!r}" for k, v in self.params]
        lines += [f"vx{i + 1} = {ex.to_string(e)}" for i, e in enumerate(self.vx)]
        for i, row in enumerate(self.A):
            lines += [f"A{i + 1}_{j + 1} = {ex.to_string(e)}" for j, e in enumerate(row)]
        lines += [f"f{i + 1} = {ex.to_string(e)}" for i, e in enumerate(self.f)]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PerturbationSpec:
    """Additive deltas ``v_X += delta * dvx``, ``f += delta * df``.

    Missing components (``None``) are left untouched.
    """

    dvx: tuple = ()
    df: tuple = ()
    delta: float = 0.0

    def __post_init__(self):
        if not self.delta >= 0 or not math.isfinite(self.delta):
            raise ConfigError(f"perturbation amplitude must be finite and >= 0, got {self.delta}")

    def with_delta(self, delta: float) -> "PerturbationSpec":
        return PerturbationSpec(self.dvx, self.df, float(delta))


# ------------------------------------------------------------------ parsing

@dataclass
class _Assignment:
    key: str
    value: str
    line: int
    col: int  # 1-based column of the value


def _assignments(text: str) -> list[_Assignment]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        start = 0
        pieces = []
        for m in _ASSIGN_SPLIT.finditer(line):
            pieces.append((start, line[start:m.start()]))
            start = m.end()
        pieces.append((start, line[start:]))
        for offset, piece in pieces:
            if not piece.strip():
                continue
            if "=" not in piece:
                col = offset + len(piece) - len(piece.lstrip()) + 1
                raise ParseError(f"expected 'key = value', got {piece.strip()!r}", lineno, col)
            key, value = piece.split("=", 1)
            lead = len(value) - len(value.lstrip())
            col = offset + len(key) + 1 + lead + 1
            key = " ".join(key.split())
            out.append(_Assignment(key, value.strip(), lineno, col))
    return out


def _parse_float(a: _Assignment) -> float:
    try:
        v = float(a.value)
    except ValueError:
        raise ParseError(f"{a.key}: expected a number, got {a.value!r}", a.line, a.col) from None
    if not math.isfinite(v):
        raise ParseError(f"{a.key}: value must be finite", a.line, a.col)
    return v


def _parse_int(a: _Assignment) -> int:
    try:
        return int(a.value)
    except ValueError:
        raise ParseError(f"{a.key}: expected an integer, got {a.value!r}", a.line, a.col) from None


def _index(a: _Assignment, idx: str, limit: int, what: str) -> int:
    i = int(idx)
    if not 1 <= i <= limit:
        raise DimensionError(f"{a.key}: {what} index {i} out of range 1..{limit}", a.line)
    return i - 1


def _header(assigns: list[_Assignment], dims_required=True):
    """Extract dimensions, periods and parameters; return the rest."""
    dx = dy = None
    periods = {}
    params = {}
    rest = []
    for a in assigns:
        key = a.key
        m = _PARAM_RE.fullmatch(key)
        if key in ("dim_x", "dx"):
            dx = _parse_int(a)
        elif key in ("dim_y", "dy"):
            dy = _parse_int(a)
        elif re.fullmatch(r"period_?(\d+)", key):
            periods[int(re.fullmatch(r"period_?(\d+)", key).group(1))] = (_parse_float(a), a)
        elif m:
            name = m.group(1)
            if name in _RESERVED or re.fullmatch(r"[xy]\d+", name):
                raise ParseError(f"reserved parameter name {name!r}", a.line)
            if name in params:
                raise ConfigError(f"duplicate parameter {name!r}", a.line)
            params[name] = _parse_float(a)
        else:
            rest.append(a)
    return dx, dy, periods, params, rest


def parse_system(config_text: str, check: bool = True) -> SystemSpec:
    """Parse a system config into a :class:`SystemSpec`.

    Missing ``A`` entries default to zero; every ``vx<i>`` and ``f<i>``
    must be present. With ``check`` the expressions are sampled for
    finiteness and x-periodicity (see :func:`check_system`).
    """
    assigns = _assignments(config_text)
    dx, dy, periods, params, rest = _header(assigns)
    if dx is None or dy is None:
        raise DimensionError("config must declare dim_x and dim_y")
    if dx < 1 or dy < 1:
        raise DimensionError(f"need dim_x >= 1 and dim_y >= 1, got {dx}, {dy}")
    per = [TWO_PI] * dx
    for k, (v, a) in periods.items():
        if not 1 <= k <= dx:
            raise DimensionError(f"{a.key}: axis out of range 1..{dx}", a.line)
        if v <= 0:
            raise ConfigError(f"{a.key}: period must be > 0", a.line)
        per[k - 1] = v

    names = list(params)
    vx: dict[int, ex.Expr] = {}
    f: dict[int, ex.Expr] = {}
    A: dict[tuple[int, int], ex.Expr] = {}
    for a in rest:
        def parse(allow_y=True):
            return ex.parse_expr(a.value, dx, dy, names, allow_y, a.line, a.col - 1)

        if m := re.fullmatch(r"vx(\d+)", a.key):
            slot, target = _index(a, m.group(1), dx, "horizontal"), vx
            value = parse()
        elif m := re.fullmatch(r"f(\d+)", a.key):
            slot, target = _index(a, m.group(1), dy, "nonlinear"), f
            value = parse()
        elif m := (re.fullmatch(r"A(\d+)_(\d+)", a.key) or re.fullmatch(r"A(\d)(\d)", a.key)):
            slot = (_index(a, m.group(1), dy, "row"), _index(a, m.group(2), dy, "column"))
            target = A
            value = parse(allow_y=False)
        else:
            raise ParseError(f"unknown key {a.key!r}", a.line)
        if slot in target:
            raise ConfigError(f"duplicate key {a.key!r}", a.line)
        target[slot] = value

    missing = [f"vx{i + 1}" for i in range(dx) if i not in vx]
    missing += [f"f{i + 1}" for i in range(dy) if i not in f]
    if missing:
        raise DimensionError(f"dim_x={dx}, dim_y={dy} but missing {', '.join(missing)}")
    if not A:
        raise DimensionError("no A<i><j> entries given")
    zero = ex.Const(0.0)
    spec = SystemSpec(
        dx, dy, tuple(per),
        tuple(vx[i] for i in range(dx)),
        tuple(tuple(A.get((i, j), zero) for j in range(dy)) for i in range(dy)),
        tuple(f[i] for i in range(dy)),
        tuple(params.items()),
    )
    if check:
        check_system(spec)
    return spec


def parse_perturbation(text: str, spec: SystemSpec) -> PerturbationSpec:
    """Parse a perturbation file (keys ``dvx<i>``, ``df<i>``, ``delta``)."""
    assigns = _assignments(text)
    names = [k for k, _ in spec.params]
    dvx: list = [None] * spec.dx
    df: list = [None] * spec.dy
    delta = None
    for a in assigns:
        if a.key == "delta":
            delta = _parse_float(a)
            continue
        if m := re.fullmatch(r"dvx(\d+)", a.key):
            target, i = dvx, _index(a, m.group(1), spec.dx, "horizontal")
        elif m := re.fullmatch(r"df(\d+)", a.key):
            target, i = df, _index(a, m.group(1), spec.dy, "nonlinear")
        else:
            raise ParseError(f"unknown perturbation key {a.key!r}", a.line)
        if target[i] is not None:
            raise ConfigError(f"duplicate key {a.key!r}", a.line)
        target[i] = ex.parse_expr(a.value, spec.dx, spec.dy, names, True, a.line, a.col - 1)
    if delta is None:
        raise ConfigError("perturbation file must set delta")
    return PerturbationSpec(tuple(dvx), tuple(df), delta)


def check_system(spec: SystemSpec, samples: int = 100, tol: float = 1e-12,
                 y_box: float = 1.0, seed: int = 0) -> None:
    """Sample-check finiteness and x-periodicity of every expression.

    For each x-axis, ``samples`` random points are evaluated at ``x`` and
    at ``x`` shifted by one period; values must agree to ``tol``
    (relative to max(1, |value|)). ``y`` is drawn from ``[-y_box, y_box]``.
    """
    rng = np.random.default_rng(seed)
    L = np.asarray(spec.periods)
    x = rng.uniform(0.0, 1.0, (samples, spec.dx)) * L
    y = rng.uniform(-y_box, y_box, (samples, spec.dy))
    groups = {
        "vx": lambda xx: spec.horizontal(xx, y),
        "A": lambda xx: spec.linear(xx).reshape(samples, -1),
        "f": lambda xx: spec.nonlinear(xx, y),
    }
    with np.errstate(all="ignore"):
        for name, fn in groups.items():
            base = fn(x)
            bad = ~np.isfinite(base)
            if bad.any():
                k = int(np.argwhere(bad)[0][0])
                raise ConfigError(f"{name} is not finite at x={x[k].tolist()}, y={y[k].tolist()}")
            for axis in range(spec.dx):
                shifted = x.copy()
                shifted[:, axis] += L[axis]
                diff = np.abs(fn(shifted) - base)
                scale = np.maximum(1.0, np.abs(base))
                if not np.all(diff <= tol * scale):
                    k = int(np.argwhere(diff > tol * scale)[0][0])
                    raise ConfigError(
                        f"{name} is not periodic along x{axis + 1} "
                        f"(period {L[axis]!r}) near x={x[k].tolist()}"
                    )


# --------------------------------------------------------------- evaluation

def _as_points(v, dim, what):
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] != dim:
        raise DimensionError(f"{what} must have trailing dimension {dim}, got shape {arr.shape}")
    return arr


def _checked(values, x, y=None):
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.argwhere(bad)[0]
        lead = tuple(idx[: x.ndim - 1])
        point = f"x={x[lead].tolist()}" if x.ndim > 1 else f"x={x.tolist()}"
        if y is not None:
            yl = y[lead] if y.ndim > 1 else y
            point += f", y={np.asarray(yl).tolist()}"
        raise EvaluationError("expression domain error", point)
    return values


def eval_horizontal(spec: SystemSpec, x, y) -> np.ndarray:
    """Horizontal velocity ``v_X(x, y)``; accepts single points or batches."""
    x = _as_points(x, spec.dx, "x")
    y = _as_points(y, spec.dy, "y")
    with np.errstate(all="ignore"):
        return _checked(spec.horizontal(x, y), x, y)


def eval_linear(spec: SystemSpec, x) -> np.ndarray:
    """The ``dy`` x ``dy`` matrix ``A(x)``."""
    x = _as_points(x, spec.dx, "x")
    with np.errstate(all="ignore"):
        return _checked(spec.linear(x), x)


def eval_nonlinear(spec: SystemSpec, x, y) -> np.ndarray:
    """The vertical nonlinearity ``f(x, y)``."""
    x = _as_points(x, spec.dx, "x")
    y = _as_points(y, spec.dy, "y")
    with np.errstate(all="ignore"):
        return _checked(spec.nonlinear(x, y), x, y)


def _add_scaled(base: ex.Expr, delta: float, d: ex.Expr | None) -> ex.Expr:
    if d is None or delta == 0.0:
        return base
    return ex.BinOp("+", base, ex.BinOp("*", ex.Const(delta), d))


def apply_perturbation(spec: SystemSpec, pert: PerturbationSpec) -> SystemSpec:
    """Return ``spec`` with ``vx += delta*dvx`` and ``f += delta*df``.

    ``delta == 0`` returns a spec sharing the base expression trees, so
    evaluations are bit-identical.
    """
    dvx = tuple(pert.dvx) or (None,) * spec.dx
    df = tuple(pert.df) or (None,) * spec.dy
    if len(dvx) != spec.dx or len(df) != spec.dy:
        raise DimensionError(
            f"perturbation has {len(dvx)} horizontal / {len(df)} vertical deltas, "
            f"system has dim_x={spec.dx}, dim_y={spec.dy}"
        )
    for d in (*dvx, *df):
        if d is None:
            continue
        for kind, i in ex.variables(d):
            if i >= (spec.dx if kind == "x" else spec.dy):
                raise DimensionError(f"perturbation references {kind}{i + 1} outside the system")
    return SystemSpec(
        spec.dx, spec.dy, spec.periods,
        tuple(_add_scaled(b, pert.delta, d) for b, d in zip(spec.vx, dvx)),
        spec.A,
        tuple(_add_scaled(b, pert.delta, d) for b, d in zip(spec.f, df)),
        spec.params,
    )


def perturbation_size(spec: SystemSpec, pert: PerturbationSpec, grid: int = 64,
                      y_box: float = 1.0, h: float = 1e-6) -> float:
    """Sampled surrogate for the C^1 norm of the perturbation.

    Max over a regular grid in X times a few y-levels of the value and
    central-difference first derivatives of ``delta * (dvx, df)``.
    """
    perturbed = apply_perturbation(spec, pert)
    axes = [np.linspace(0.0, L, grid, endpoint=False) for L in spec.periods]
    xs = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dx)
    levels = np.linspace(-y_box, y_box, 5)
    total = 0.0

    def diff(x, y):
        return np.concatenate([perturbed.horizontal(x, y) - spec.horizontal(x, y),
                               perturbed.nonlinear(x, y) - spec.nonlinear(x, y)], axis=-1)

    for level in levels:
        y = np.full((len(xs), spec.dy), level)
        total = max(total, float(np.max(np.abs(diff(xs, y)))))
        for k in range(spec.dx + spec.dy):
            e = np.zeros(spec.dx + spec.dy)
            e[k] = h
            xp, yp = xs + e[: spec.dx], y + e[spec.dx:]
            xm, ym = xs - e[: spec.dx], y - e[spec.dx:]
            d = (diff(xp, yp) - diff(xm, ym)) / (2 * h)
            total = max(total, float(np.max(np.abs(d))))
    return total
