"""Sampled fields on a truncated box with a tagged interface at ``x_n = 0``.

Nodes are cell centred, ``x_i = -L + (i + 1/2) h`` with ``h = 2L / N``, so with
``N`` even no node sits on the interface.  The last array axis is the normal
direction ``x_n``.  Arrays carry the spatial axes last; leading axes (time,
vector component, quadrature batch) are allowed by the array-level helpers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

BOUNDARY_MODES = ("periodic", "zero")


@dataclass(frozen=True)
class GridSpec:
    """Discretisation of ``[-L, L]^n`` plus graded time levels.

    ``boundary`` fixes how fields are continued outside the box: ``"periodic"``
    treats them as periodised over the box (each half-space then carries
    reflecting walls at ``x_n = 0`` and ``x_n = +-L``), ``"zero"`` pads with
    zeros to ``2N`` per axis before any spectral operation.
    """

    dimension: int
    half_width: float
    points_per_axis: int
    time_levels: tuple[float, ...] = (1.0,)
    boundary: str = "periodic"

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if not self.half_width > 0:
            raise ValueError("half_width must be positive")
        if self.points_per_axis < 2 or self.points_per_axis % 2:
            raise ValueError("points_per_axis must be even so that no node lies on x_n = 0")
        if self.boundary not in BOUNDARY_MODES:
            raise ValueError(f"boundary must be one of {BOUNDARY_MODES}")
        levels = tuple(float(t) for t in self.time_levels)
        if not levels:
            raise ValueError("at least one time level is required")
        if levels[0] <= 0 or any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError("time_levels must be positive and strictly increasing")
        object.__setattr__(self, "time_levels", levels)

    @classmethod
    def graded(cls, dimension=1, half_width=4.0, points_per_axis=128, n_levels=32,
               horizon=1.0, boundary="periodic") -> "GridSpec":
        """Grid with time levels ``t_k = T (k / M)^2``, ``k = 1..M``."""
        k = np.arange(1, n_levels + 1)
        levels = tuple(horizon * (k / n_levels) ** 2)
        return cls(dimension, half_width, points_per_axis, levels, boundary)

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.points_per_axis

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dimension

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dimension

    @property
    def levels(self) -> np.ndarray:
        return np.asarray(self.time_levels)

    @property
    def n_levels(self) -> int:
        return len(self.time_levels)

    @property
    def horizon(self) -> float:
        return self.time_levels[-1]

    def coords(self) -> np.ndarray:
        i = np.arange(self.points_per_axis)
        return -self.half_width + (i + 0.5) * self.h

    def mesh(self) -> list[np.ndarray]:
        axes = [self.coords()] * self.dimension
        return np.meshgrid(*axes, indexing="ij")

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(N**n, n)`` in row-major order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)

    def upper_mask(self) -> np.ndarray:
        """Boolean mask of nodes with ``x_n > 0`` (broadcastable to ``shape``)."""
        upper = np.arange(self.points_per_axis) >= self.points_per_axis // 2
        return np.broadcast_to(upper, self.shape)

    def with_levels(self, levels: Sequence[float]) -> "GridSpec":
        return replace(self, time_levels=tuple(levels))

    def refined(self, factor: int = 2) -> "GridSpec":
        return replace(self, points_per_axis=self.points_per_axis * factor)

    def describe(self) -> dict:
        return {
            "n": self.dimension,
            "L": self.half_width,
            "N": self.points_per_axis,
            "h": self.h,
            "M": self.n_levels,
            "t_min": self.time_levels[0],
            "t_max": self.time_levels[-1],
            "boundary": self.boundary,
        }


def _check_values(spec: GridSpec, values: np.ndarray, lead: tuple[int, ...], what: str):
    expected = lead + spec.shape
    if values.shape != expected:
        raise ValueError(f"{what}: expected shape {expected}, got {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{what}: samples must be finite")


class _FieldArithmetic:
    """Elementwise arithmetic shared by the field containers."""

    def _new(self, values):
        return type(self)(self.spec, values)

    def _other(self, other):
        if isinstance(other, _FieldArithmetic):
            if other.spec != self.spec:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return self._new(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self._new(self.values - self._other(other))

    def __rsub__(self, other):
        return self._new(self._other(other) - self.values)

    def __mul__(self, other):
        return self._new(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._new(self.values / self._other(other))

    def __neg__(self):
        return self._new(-self.values)

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True, eq=False)
class ScalarField(_FieldArithmetic):
    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        _check_values(self.spec, values, (), "ScalarField")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, spec: GridSpec, func) -> "ScalarField":
        """Sample ``func(*coordinate_arrays)`` at the nodes."""
        return cls(spec, np.broadcast_to(func(*spec.mesh()), spec.shape))

    @classmethod
    def constant(cls, spec: GridSpec, value: float) -> "ScalarField":
        return cls(spec, np.full(spec.shape, float(value)))


@dataclass(frozen=True, eq=False)
class VectorField(_FieldArithmetic):
    """``n`` components stacked on a leading axis, shape ``(n,) + spec.shape``."""

    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        _check_values(self.spec, values, (self.spec.dimension,), "VectorField")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_components(cls, components: Sequence[ScalarField]) -> "VectorField":
        spec = components[0].spec
        if any(c.spec != spec for c in components):
            raise ValueError("all components must share one GridSpec")
        return cls(spec, np.stack([c.values for c in components]))

    @property
    def components(self) -> list[ScalarField]:
        return [ScalarField(self.spec, v) for v in self.values]


@dataclass(frozen=True, eq=False)
class SpaceTimeField(_FieldArithmetic):
    """Samples ``u(x, t_k)``; slice ``k`` belongs to ``spec.time_levels[k]``."""

    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        _check_values(self.spec, values, (self.spec.n_levels,), "SpaceTimeField")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_function(cls, spec: GridSpec, func) -> "SpaceTimeField":
        """Sample ``func(t, *coordinate_arrays)`` on every level."""
        mesh = spec.mesh()
        return cls(spec, np.stack([np.broadcast_to(func(t, *mesh), spec.shape)
                                   for t in spec.time_levels]))

    @classmethod
    def zeros(cls, spec: GridSpec) -> "SpaceTimeField":
        return cls(spec, np.zeros((spec.n_levels,) + spec.shape))

    @property
    def slices(self) -> list[ScalarField]:
        return [ScalarField(self.spec, v) for v in self.values]

    def slice(self, k: int) -> ScalarField:
        return ScalarField(self.spec, self.values[k])


@dataclass(frozen=True, eq=False)
class SpaceTimeVectorField(_FieldArithmetic):
    """Time-indexed vector field, shape ``(M, n) + spec.shape``."""

    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        _check_values(self.spec, values, (self.spec.n_levels, self.spec.dimension),
                      "SpaceTimeVectorField")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def along(cls, direction: Sequence[float], u: SpaceTimeField) -> "SpaceTimeVectorField":
        """The field ``b * u`` for a constant vector ``b``."""
        b = np.asarray(direction, dtype=float).reshape((1, -1) + (1,) * u.spec.dimension)
        return cls(u.spec, b * u.values[:, None])


# ---------------------------------------------------------------------------
# quadrature

def _region_mask(spec: GridSpec, region: str, center=None, radius=None) -> np.ndarray:
    if region == "all":
        return np.ones(spec.shape, dtype=bool)
    if region in ("upper", "upper-half"):
        return np.array(spec.upper_mask())
    if region in ("lower", "lower-half"):
        return ~spec.upper_mask()
    if region == "ball":
        if center is None or radius is None:
            raise ValueError("ball region needs a center and a radius")
        center = np.broadcast_to(np.asarray(center, dtype=float), (spec.dimension,))
        d2 = sum((m - c) ** 2 for m, c in zip(spec.mesh(), center))
        return d2 < radius ** 2
    raise ValueError(f"unknown region {region!r}")


def integrate(f: ScalarField, region: str = "all", center=None, radius=None) -> float:
    """Midpoint rule ``h^n * sum(samples)`` over the nodes of ``region``.

    ``region`` is ``"all"``, ``"upper-half"``, ``"lower-half"`` or ``"ball"``
    (with ``center`` and ``radius``).
    """
    mask = _region_mask(f.spec, region, center, radius)
    if not mask.any():
        raise ValueError("empty quadrature region")
    return float(f.spec.cell_volume * f.values[mask].sum())


def time_weights(levels: np.ndarray, upper: float) -> np.ndarray:
    """Weights ``w`` with ``sum(w * g(levels)) ~ int_0^upper g(t) dt``.

    ``g`` is taken constant on ``[0, t_1]`` and piecewise linear between
    levels; ``upper`` beyond the last level is clipped to it.
    """
    levels = np.asarray(levels, dtype=float)
    w = np.zeros(len(levels))
    upper = min(float(upper), levels[-1])
    if upper <= 0:
        return w
    w[0] = min(upper, levels[0])
    for k in range(len(levels) - 1):
        a, b = levels[k], levels[k + 1]
        if upper <= a:
            break
        c = min(upper, b)
        # integral over [a, c] of the linear interpolant between (a, g_k), (b, g_{k+1})
        length = c - a
        frac = length / (b - a)
        w[k] += length * (1.0 - 0.5 * frac)
        w[k + 1] += length * 0.5 * frac
    return w


# ---------------------------------------------------------------------------
# half-space restriction and reflection

def mirror(values: np.ndarray) -> np.ndarray:
    """Reflect across ``x_n = 0``: node ``i`` maps to ``N - 1 - i`` on the last axis."""
    return values[..., ::-1]


def upper_nodes(spec: GridSpec) -> np.ndarray:
    return np.arange(spec.points_per_axis) >= spec.points_per_axis // 2


def even_extend_values(values: np.ndarray, spec: GridSpec, sign: int = +1) -> np.ndarray:
    upper = upper_nodes(spec)
    keep = upper if sign > 0 else ~upper
    return np.where(keep, values, mirror(values))


def odd_extend_values(values: np.ndarray, spec: GridSpec, sign: int = +1) -> np.ndarray:
    upper = upper_nodes(spec)
    keep = upper if sign > 0 else ~upper
    return np.where(keep, values, -mirror(values))


def _sign(sign) -> int:
    if sign in (+1, "+", "upper"):
        return +1
    if sign in (-1, "-", "lower"):
        return -1
    raise ValueError(f"sign must be '+' or '-', got {sign!r}")


def restrict(f: ScalarField, sign) -> ScalarField:
    """``f`` on the chosen half-space, zero on the other one."""
    s = _sign(sign)
    upper = upper_nodes(f.spec)
    keep = upper if s > 0 else ~upper
    return ScalarField(f.spec, np.where(keep, f.values, 0.0))


def even_extension(f_half: ScalarField, sign="+") -> ScalarField:
    """``g(x', x_n) = f_half(x', |x_n|)`` (upper) or ``f_half(x', -|x_n|)`` (lower)."""
    return ScalarField(f_half.spec, even_extend_values(f_half.values, f_half.spec, _sign(sign)))


# ---------------------------------------------------------------------------
# finite differences

def _check_stencil(spec: GridSpec):
    if spec.points_per_axis < 4:
        raise ValueError("grid too coarse for stencils")


def _diff4(v: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order first derivative along the last axis, one-sided near the ends."""
    out = np.empty_like(v)
    out[..., 2:-2] = (v[..., :-4] - 8 * v[..., 1:-3] + 8 * v[..., 3:-1] - v[..., 4:]) / (12 * h)
    for i, c in ((0, (-25, 48, -36, 16, -3)), (1, (-3, -10, 18, -6, 1))):
        out[..., i] = sum(ck * v[..., k] for k, ck in enumerate(c)) / (12 * h)
        out[..., -1 - i] = -sum(ck * v[..., -1 - k] for k, ck in enumerate(c)) / (12 * h)
    return out


def _diff(v: np.ndarray, h: float, axis: int, order: int) -> np.ndarray:
    if order == 2:
        return np.gradient(v, h, axis=axis, edge_order=2)
    if order == 4:
        return np.moveaxis(_diff4(np.moveaxis(v, axis, -1), h), -1, axis)
    raise ValueError("order must be 2 or 4")


def partial(values: np.ndarray, spec: GridSpec, axis: int, order: int = 2) -> np.ndarray:
    """Derivative along spatial ``axis`` (0-based) of the given order, one-sided at edges.

    The normal axis is differentiated separately on each half-space so no
    stencil crosses the interface.
    """
    _check_stencil(spec)
    if order == 4 and spec.points_per_axis < 10:
        raise ValueError("grid too coarse for fourth-order stencils")
    n = spec.dimension
    ax = values.ndim - n + axis
    if axis < n - 1:
        return _diff(values, spec.h, ax, order)
    half = spec.points_per_axis // 2
    lower = np.take(values, np.arange(half), axis=ax)
    upper = np.take(values, np.arange(half, spec.points_per_axis), axis=ax)
    return np.concatenate([_diff(lower, spec.h, ax, order),
                           _diff(upper, spec.h, ax, order)], axis=ax)


def gradient_values(values: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Stack of partial derivatives on a new axis placed before the spatial axes."""
    n = spec.dimension
    return np.stack([partial(values, spec, a) for a in range(n)], axis=values.ndim - n)


def divergence_values(values: np.ndarray, spec: GridSpec, order: int = 2) -> np.ndarray:
    """Divergence of an array whose component axis directly precedes the spatial axes."""
    n = spec.dimension
    comp_axis = values.ndim - n - 1
    return sum(partial(np.take(values, a, axis=comp_axis), spec, a, order) for a in range(n))


def gradient(f: ScalarField) -> VectorField:
    return VectorField(f.spec, gradient_values(f.values, f.spec))


def divergence(F: VectorField) -> ScalarField:
    return ScalarField(F.spec, divergence_values(F.values, F.spec))


def neumann_laplacian_values(values: np.ndarray, spec: GridSpec) -> np.ndarray:
    """Three-point Laplacian per axis with mirror ghosts at ``x_n = 0``.

    Normal axis: every half-space is closed by a reflecting ghost at the
    interface; at ``x_n = +-L`` the ghost is a mirror (periodic mode, where the
    box faces are walls of the reflected problem) or zero (zero mode).
    Tangential axes wrap in periodic mode and see zero ghosts in zero mode.
    """
    _check_stencil(spec)
    n = spec.dimension
    h2 = spec.h ** 2
    out = np.zeros_like(values)
    for a in range(n):
        ax = values.ndim - n + a
        v = np.moveaxis(values, ax, -1)
        if a < n - 1 and spec.boundary == "periodic":
            left = np.roll(v, 1, axis=-1)
            right = np.roll(v, -1, axis=-1)
        else:
            left = np.concatenate([v[..., :1] * 0.0, v[..., :-1]], axis=-1)
            right = np.concatenate([v[..., 1:], v[..., :1] * 0.0], axis=-1)
            if a == n - 1:
                half = spec.points_per_axis // 2
                right[..., half - 1] = v[..., half - 1]
                left[..., half] = v[..., half]
                if spec.boundary == "periodic":
                    left[..., 0] = v[..., 0]
                    right[..., -1] = v[..., -1]
        out += np.moveaxis((left - 2.0 * v + right) / h2, -1, ax)
    return out


def neumann_laplacian(f: ScalarField) -> ScalarField:
    return ScalarField(f.spec, neumann_laplacian_values(f.values, f.spec))


def time_derivative(values: np.ndarray, levels: np.ndarray) -> np.ndarray:
    """Second-order derivative along axis 0 on the (non-uniform) time levels."""
    if len(levels) < 3:
        raise ValueError("need at least three time levels for a time derivative")
    return np.gradient(values, np.asarray(levels), axis=0, edge_order=2)


# ---------------------------------------------------------------------------
# snapshots

def write_snapshot(path, f: ScalarField, time: float | None = None) -> None:
    """CSV snapshot: one ``#`` header line of ``key=value`` pairs, then one sample per line.

    Samples are written in row-major (C) order of the node multi-index.
    """
    spec = f.spec
    header = (f"# n={spec.dimension} L={spec.half_width!r} N={spec.points_per_axis} "
              f"ordering=row-major boundary={spec.boundary}")
    if time is not None:
        header += f" time={float(time)!r}"
    body = "\n".join(repr(float(v)) for v in f.values.ravel(order="C"))
    Path(path).write_text(header + "\nvalue\n" + body + "\n")


def read_snapshot(path) -> tuple[ScalarField, float | None]:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValueError("snapshot is missing its header line")
    meta = dict(item.split("=", 1) for item in lines[0][1:].split())
    if meta.get("ordering", "row-major") != "row-major":
        raise ValueError("only row-major snapshots are supported")
    n, L, N = int(meta["n"]), float(meta["L"]), int(meta["N"])
    time = float(meta["time"]) if "time" in meta else None
    spec = GridSpec(n, L, N, (time,) if time else (1.0,), meta.get("boundary", "periodic"))
    start = 2 if len(lines) > 1 and lines[1].strip() == "value" else 1
    values = np.array([float(v) for v in lines[start:] if v.strip()])
    if values.size != N ** n:
        raise ValueError(f"snapshot holds {values.size} samples, expected {N ** n}")
    return ScalarField(spec, values.reshape(spec.shape)), time


def ball_volume(dimension: int, radius: float) -> float:
    return math.pi ** (dimension / 2) / math.gamma(dimension / 2 + 1) * radius ** dimension
