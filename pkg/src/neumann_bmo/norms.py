"""Oscillation, Carleson and tent-space functionals of sampled fields.

Every supremum over balls or tent apices is a maximum over a finite
:class:`ParabolicBallFamily`.  Ball integrals use the midpoint rule on the
nodes strictly inside the ball and are evaluated for all centres at once by
FFT convolution with the ball indicator.  Carleson boxes ``B(x, r) x (0, r^2]``
integrate in time with :func:`~neumann_bmo.grid.time_weights`.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy.signal import fftconvolve

from .grid import (
    GridSpec,
    ScalarField,
    SpaceTimeField,
    gradient_values,
    neumann_laplacian_values,
    time_derivative,
    time_weights,
    upper_nodes,
)
from .semigroup import build_extension, heat_values, neumann_values

NORM_KEYS = ("bmo_N", "tmo", "tent_inf2", "tent_inf1", "tent_12", "bmo_inv_N",
             "weighted_linf", "path_eps", "hardy", "square_fn_l1")


def _floor_pow2(x: float) -> int:
    return 1 if x < 2 else 2 ** int(math.floor(math.log2(x)))


def _axis_centres(spec: GridSpec, radius: float, stride: int) -> np.ndarray:
    """Node indices mirrored about the box centre, keeping the ball inside the box."""
    N = spec.points_per_axis
    half = N // 2
    x = spec.coords()
    k = np.arange(0, half, stride)
    idx = np.unique(np.concatenate([half + k, half - 1 - k]))
    inside = np.abs(x[idx]) + radius <= spec.half_width + 1e-12
    if not inside.any():
        return np.array([half - 1, half])
    return idx[inside]


@dataclass(frozen=True)
class ParabolicBallFamily:
    """Finite set of balls ``B(x_B, r_B)``, the apices of their Carleson boxes.

    Radii are dyadic, ``L 2^{-j/refine}``; centres are grid nodes on a lattice
    of spacing about ``r / (2 refine)`` (a power-of-two number of cells),
    placed symmetrically about ``x_n = 0`` so that reflection maps the family
    onto itself.
    """

    spec: GridSpec
    radii: tuple[float, ...]
    centres: tuple[np.ndarray, ...]
    refine: int = 1

    def __post_init__(self):
        if len(self.radii) == 0 or any(len(c) == 0 for c in self.centres):
            raise ValueError("empty ball family")
        if max(self.radii) > self.spec.half_width:
            raise ValueError("ball radii must not exceed the box half-width")

    @classmethod
    def dyadic(cls, spec: GridSpec, refine: int = 1, r_max: float | None = None,
               r_min: float | None = None) -> "ParabolicBallFamily":
        L = spec.half_width
        if r_max is None:
            r_max = min(L / 2, math.sqrt(spec.horizon))
        if r_min is None:
            r_min = max(2 * spec.h, math.sqrt(spec.levels[0]))
        radii, centres = [], []
        j = 0
        while True:
            r = L * 2.0 ** (-j / refine)
            j += 1
            if r > r_max * (1 + 1e-12):
                continue
            if r < r_min * (1 - 1e-12):
                break
            stride = _floor_pow2(r / (2 * spec.h * refine))
            axes = [_axis_centres(spec, r, stride) for _ in range(spec.dimension)]
            grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dimension)
            radii.append(r)
            centres.append(grid)
        return cls(spec, tuple(radii), tuple(centres), refine)

    def __len__(self) -> int:
        return sum(len(c) for c in self.centres)

    def __iter__(self):
        return iter(zip(self.radii, self.centres))

    def points(self, k: int) -> np.ndarray:
        """Centre coordinates of the balls with radius ``radii[k]``."""
        return self.spec.coords()[self.centres[k]]

    def describe(self) -> dict:
        return {
            "policy": "dyadic",
            "refine": self.refine,
            "n_balls": len(self),
            "r_min": min(self.radii),
            "r_max": max(self.radii),
            "n_radii": len(self.radii),
        }


# ---------------------------------------------------------------------------
# ball sums

@lru_cache(maxsize=256)
def _offsets(dimension: int, h: float, radius: float) -> np.ndarray:
    m = int(math.ceil(radius / h))
    r = np.arange(-m, m + 1)
    grids = np.meshgrid(*([r] * dimension), indexing="ij")
    d2 = sum((g * h) ** 2 for g in grids)
    return d2 < radius ** 2


def _ball_indicator(spec: GridSpec, radius: float) -> np.ndarray:
    mask = _offsets(spec.dimension, spec.h, float(radius))
    if not mask.any():
        mask = mask.copy()
        mask[(mask.shape[0] // 2,) * spec.dimension] = True
    return mask


def ball_count(spec: GridSpec, radius: float) -> int:
    """Number of nodes inside a ball of the given radius."""
    return int(_ball_indicator(spec, radius).sum())


def ball_sums(values: np.ndarray, spec: GridSpec, radius: float) -> np.ndarray:
    """``sum_{|y - x| < r} values(y)`` at every node ``x`` (zero outside the box)."""
    kern = _ball_indicator(spec, radius).astype(float)
    n = spec.dimension
    lead = values.ndim - n
    kern = kern.reshape((1,) * lead + kern.shape)
    axes = tuple(range(lead, values.ndim))
    return fftconvolve(values, kern, mode="same", axes=axes)


def _gather(values: np.ndarray, spec: GridSpec, idx: np.ndarray) -> np.ndarray:
    n = spec.dimension
    return values[(Ellipsis,) + tuple(idx[:, a] for a in range(n))]


def _check_family(balls: ParabolicBallFamily, spec: GridSpec):
    if balls is None or len(balls) == 0:
        raise ValueError("empty ball family")
    if balls.spec.shape != spec.shape or balls.spec.half_width != spec.half_width:
        raise ValueError("ball family was built for a different grid")


def _family(spec: GridSpec, balls):
    if balls is None:
        balls = ParabolicBallFamily.dyadic(spec)
    _check_family(balls, spec)
    return balls


# ---------------------------------------------------------------------------
# BMO functionals

def bmo_neumann_norm(f: ScalarField, balls: ParabolicBallFamily | None = None) -> float:
    """``sup_B |B|^{-1} int_B |f - e^{r_B^2 Delta_N} f|``."""
    spec = f.spec
    balls = _family(spec, balls)
    best = 0.0
    for r, idx in balls:
        osc = np.abs(f.values - neumann_values(f.values, spec, r * r))
        means = _gather(ball_sums(osc, spec, r), spec, idx) / ball_count(spec, r)
        best = max(best, float(means.max()))
    return best


def classical_bmo_norm(f: ScalarField, balls: ParabolicBallFamily | None = None) -> float:
    """``sup_B |B|^{-1} int_B |f - f_B|`` with ``f_B`` the ball average."""
    spec = f.spec
    balls = _family(spec, balls)
    n = spec.dimension
    best = 0.0
    for r, idx in balls:
        mask = _ball_indicator(spec, r)
        m = mask.shape[0] // 2
        offs = np.argwhere(mask) - m
        pts = idx[:, None, :] + offs[None, :, :]
        inside = np.all((pts >= 0) & (pts < spec.points_per_axis), axis=-1)
        pts = np.clip(pts, 0, spec.points_per_axis - 1)
        vals = f.values[tuple(pts[..., a] for a in range(n))]
        cnt = inside.sum(axis=1)
        avg = (vals * inside).sum(axis=1) / cnt
        osc = (np.abs(vals - avg[:, None]) * inside).sum(axis=1) / cnt
        best = max(best, float(osc.max()))
    return best


# ---------------------------------------------------------------------------
# Carleson functionals

def carleson_values(density: np.ndarray, spec: GridSpec, balls: ParabolicBallFamily) -> list[np.ndarray]:
    """``r^{-n} int_0^{r^2} int_B density`` for every ball, grouped by radius.

    ``density`` has shape ``(M,) + spec.shape`` on the time levels of ``spec``.
    """
    n = spec.dimension
    levels = spec.levels
    out = []
    for r, idx in balls:
        w = time_weights(levels, r * r)
        active = np.nonzero(w)[0]
        sums = _gather(ball_sums(density[active], spec, r), spec, idx)
        out.append(r ** (-n) * spec.cell_volume * np.tensordot(w[active], sums, axes=(0, 0)))
    return out


def carleson_sup(density: np.ndarray, spec: GridSpec, balls: ParabolicBallFamily) -> float:
    return float(max(v.max() for v in carleson_values(density, spec, balls)))


def _check_time_grid(spec: GridSpec, balls: ParabolicBallFamily):
    if spec.levels[0] > min(balls.radii) ** 2 * (1 + 1e-12):
        raise ValueError("time grid too coarse")


def tmo_norm(u: SpaceTimeField, balls: ParabolicBallFamily | None = None,
             time_derivative_term: bool = True) -> float:
    """Carleson norm of ``|grad u|^2`` with ``grad = (grad_x, d_t)``, per half-space.

    The spatial gradient never crosses the interface; the larger of the two
    half-space functionals is returned.
    """
    spec = u.spec
    balls = _family(spec, balls)
    _check_time_grid(spec, balls)
    vals = u.values
    dens = np.sum(gradient_values(vals, spec) ** 2, axis=1)
    if time_derivative_term:
        dens = dens + time_derivative(vals, spec.levels) ** 2
    upper = upper_nodes(spec)
    plus = carleson_sup(np.where(upper, dens, 0.0), spec, balls)
    minus = carleson_sup(np.where(upper, 0.0, dens), spec, balls)
    return math.sqrt(max(plus, minus, 0.0))


def tent_inf2_norm(u: SpaceTimeField, balls: ParabolicBallFamily | None = None) -> float:
    """``sup (t^{-n/2} int_0^t int_{B(x, sqrt t)} |u|^2)^{1/2}`` over the apices."""
    spec = u.spec
    balls = _family(spec, balls)
    _check_time_grid(spec, balls)
    # FFT round-off can leave tiny negative sums for vanishing data
    return math.sqrt(max(carleson_sup(u.values ** 2, spec, balls), 0.0))


def tent_inf1_norm(u: SpaceTimeField, balls: ParabolicBallFamily | None = None) -> float:
    """``sup t^{-n/2} int_0^t int_{B(x, sqrt t)} |u|`` over the apices."""
    spec = u.spec
    balls = _family(spec, balls)
    _check_time_grid(spec, balls)
    return carleson_sup(np.abs(u.values), spec, balls)


def cone_square(u_values: np.ndarray, spec: GridSpec, times, weights, radii, power: float):
    """``int int_{|y - x| < radius(s)} |u(y, s)|^2 s^{-power} dy ds`` at every node ``x``."""
    acc = np.zeros(spec.shape)
    for k, (s, w, r) in enumerate(zip(times, weights, radii)):
        if w == 0:
            continue
        acc += w * s ** (-power) * spec.cell_volume * ball_sums(u_values[k] ** 2, spec, r)
    return np.maximum(acc, 0.0)


def tent_12_norm(u: SpaceTimeField) -> float:
    """``int (int int_{|y - x| < sqrt s} |u|^2 s^{-n/2 - 1} dy ds)^{1/2} dx``."""
    spec = u.spec
    levels = spec.levels
    w = time_weights(levels, levels[-1])
    inner = cone_square(u.values, spec, levels, w, np.sqrt(levels), spec.dimension / 2 + 1)
    return float(spec.cell_volume * np.sqrt(inner).sum())


def bmo_inv_neumann_norm(f: ScalarField, balls: ParabolicBallFamily | None = None) -> float:
    """``sup_B (r^{-n} int_0^{r^2} int_B |e^{t Delta_N} f|^2)^{1/2}``."""
    return tent_inf2_norm(build_extension(f), balls)


def weighted_linf_norm(u: SpaceTimeField) -> float:
    """``max_k t_k^{1/2} max |u(., t_k)|``."""
    spec = u.spec
    per_level = np.abs(u.values).reshape(spec.n_levels, -1).max(axis=1)
    return float(np.max(np.sqrt(spec.levels) * per_level))


def path_norm(u: SpaceTimeField, balls: ParabolicBallFamily | None = None) -> float:
    """``||u||_eps = ||t^{1/2} u||_inf + ||u||_{T^{inf,2}}``."""
    return weighted_linf_norm(u) + tent_inf2_norm(u, balls)


# ---------------------------------------------------------------------------
# square functions

def square_scales(spec: GridSpec, n_scales: int = 48, t_max: float | None = None):
    """Midpoint nodes and weights of a uniform mesh in ``t`` on ``(0, t_max]``."""
    t_max = spec.half_width / 2 if t_max is None else t_max
    t = (np.arange(n_scales) + 0.5) * t_max / n_scales
    return t, np.full(n_scales, t_max / n_scales)


def square_function(f: ScalarField, n_scales: int = 48, t_max: float | None = None,
                    operator: str = "neumann") -> ScalarField:
    """Area function of ``t^2 Delta e^{t^2 Delta} f`` over cones ``|y - x| < t``.

    ``operator="neumann"`` uses ``Delta_N`` (finite-difference Laplacian per
    half-space of the Neumann flow); ``"whole-space"`` uses the free flow and
    the spectral Laplacian.
    """
    spec = f.spec
    t, w = square_scales(spec, n_scales, t_max)
    stack = np.broadcast_to(f.values, (len(t),) + spec.shape)
    if operator == "neumann":
        lap = neumann_laplacian_values(neumann_values(stack, spec, t * t), spec)
    elif operator == "whole-space":
        lap = heat_values(stack, spec, t * t, laplacian=True)
    else:
        raise ValueError(f"unknown operator {operator!r}")
    g = (t * t).reshape((-1,) + (1,) * spec.dimension) * lap
    inner = cone_square(g, spec, t, w, t, spec.dimension + 1)
    return ScalarField(spec, np.sqrt(inner))


def hardy_norm(f: ScalarField, n_scales: int = 48, t_max: float | None = None,
               operator: str = "neumann") -> float:
    """``||S f||_{L^1}`` over the box."""
    s = square_function(f, n_scales, t_max, operator)
    return float(f.spec.cell_volume * s.values.sum())


def besov_norm(values: np.ndarray, spec: GridSpec, times=None) -> float:
    """``sup_t t^{1/2} ||e^{t Delta} g||_inf`` over ``times`` (the grid levels by default)."""
    times = spec.levels if times is None else np.asarray(times, dtype=float)
    flows = heat_values(np.broadcast_to(values, (len(times),) + spec.shape), spec, times)
    per = np.abs(flows).reshape(len(times), -1).max(axis=1)
    return float(np.max(np.sqrt(times) * per))


# ---------------------------------------------------------------------------
# report

@dataclass
class NormReport:
    """All norm functionals of one field, with the discretisation they used."""

    values: dict[str, float]
    ball_family: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.values.items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"norm {k} is not a finite nonnegative number: {v}")

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, **kwargs) -> str:
        kwargs.setdefault("indent", 2)
        kwargs.setdefault("sort_keys", True)
        return json.dumps(self.to_dict(), **kwargs)


def norm_report(f: ScalarField, balls: ParabolicBallFamily | None = None) -> NormReport:
    """Evaluate every functional for ``f`` and its Neumann heat extension.

    ``hardy`` is the Neumann area-function norm; ``square_fn_l1`` is the same
    norm built on the whole-space Laplacian, kept as a cross-check.
    """
    spec = f.spec
    balls = _family(spec, balls)
    u = build_extension(f)
    inf2 = tent_inf2_norm(u, balls)
    wlinf = weighted_linf_norm(u)
    values = {
        "bmo_N": bmo_neumann_norm(f, balls),
        "tmo": tmo_norm(u, balls),
        "tent_inf2": inf2,
        "tent_inf1": tent_inf1_norm(u, balls),
        "tent_12": tent_12_norm(u),
        "bmo_inv_N": inf2,
        "weighted_linf": wlinf,
        "path_eps": wlinf + inf2,
        "hardy": hardy_norm(f),
        "square_fn_l1": hardy_norm(f, operator="whole-space"),
    }
    return NormReport(values, balls.describe(), spec.describe())
