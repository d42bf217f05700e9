"""Heat semigroups ``e^{t Delta}`` and ``e^{t Delta_N}`` acting on sampled fields.

The production path is spectral: a field is continued past the box according
to ``spec.boundary`` (periodised over ``[-L, L]^n`` or zero-padded to ``2N``
per axis) and multiplied by ``exp(-t |k|^2)`` in Fourier space.  The Neumann
semigroup acts on each half-space through the even extension of the
restriction, ``(e^{t Delta_N} f)_+ = e^{t Delta} f_{+,e}`` on ``{x_n > 0}``.
A second, real-space path evaluates the kernel sums directly and is used as
an oracle.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .grid import (
    GridSpec,
    ScalarField,
    SpaceTimeField,
    SpaceTimeVectorField,
    VectorField,
    divergence_values,
    even_extend_values,
    odd_extend_values,
    upper_nodes,
)
from .kernel import gaussian_kernel, neumann_kernel

KERNEL_PATH = "kernel"
FIELD_PATH = "field"


def _check_time(t):
    if np.any(np.asarray(t) <= 0):
        raise ValueError("semigroup time must be positive")


class _Spectral:
    """FFT workspace for one (dimension, L, N, boundary) combination."""

    def __init__(self, dimension: int, half_width: float, n_points: int, boundary: str):
        self.dimension = dimension
        self.n_points = n_points
        self.h = 2.0 * half_width / n_points
        self.padded = boundary == "zero"
        self.size = 2 * n_points if self.padded else n_points
        self.period = self.size * self.h
        ks = []
        for a in range(dimension):
            if a == dimension - 1:
                k = 2 * np.pi * np.fft.rfftfreq(self.size, d=self.h)
            else:
                k = 2 * np.pi * np.fft.fftfreq(self.size, d=self.h)
            shape = [1] * dimension
            shape[a] = -1
            ks.append(k.reshape(shape))
        self.k = ks
        self.ksq = sum(k * k for k in ks)
        # the Nyquist mode has no well-defined odd derivative
        self.dk = []
        for a, k in enumerate(ks):
            d = 1j * k.copy()
            nyq = np.isclose(np.abs(k), np.pi / self.h)
            d[nyq] = 0.0
            self.dk.append(d)
        self.axes = tuple(range(-dimension, 0))

    def _pad(self, values):
        if not self.padded:
            return values
        pad = [(0, 0)] * (values.ndim - self.dimension) + [(0, self.n_points)] * self.dimension
        return np.pad(values, pad)

    def normal_coords(self) -> np.ndarray:
        """Normal-axis node coordinates of the (possibly padded) working array."""
        return -0.5 * self.n_points * self.h + (np.arange(self.size) + 0.5) * self.h

    def _crop(self, values):
        if not self.padded:
            return values
        index = (Ellipsis,) + (slice(0, self.n_points),) * self.dimension
        return values[index]

    def apply(self, values, t, deriv_axis=None, laplacian=False, prepadded=False):
        """``e^{t Delta}`` (optionally followed by ``d/dx_axis`` or ``Delta``) on the last axes."""
        t = np.asarray(t, dtype=float)
        spectrum = np.fft.rfftn(values if prepadded else self._pad(values), axes=self.axes)
        tt = t.reshape(t.shape + (1,) * self.dimension)
        mult = np.exp(-tt * self.ksq)
        if deriv_axis is not None:
            mult = mult * self.dk[deriv_axis]
        if laplacian:
            mult = mult * (-self.ksq)
        spectrum = spectrum * mult
        shape = (self.size,) * self.dimension
        return self._crop(np.fft.irfftn(spectrum, s=shape, axes=self.axes))


@lru_cache(maxsize=32)
def _workspace(dimension, half_width, n_points, boundary) -> _Spectral:
    return _Spectral(dimension, half_width, n_points, boundary)


def workspace(spec: GridSpec) -> _Spectral:
    return _workspace(spec.dimension, spec.half_width, spec.points_per_axis, spec.boundary)


def _lead(t, values, spec):
    """Broadcast ``t`` against the leading (non-spatial) axes of ``values``."""
    t = np.asarray(t, dtype=float)
    lead = values.shape[: values.ndim - spec.dimension]
    return np.broadcast_to(t, lead) if t.ndim else t


# ---------------------------------------------------------------------------
# array-level operators

def heat_values(values: np.ndarray, spec: GridSpec, t, deriv_axis=None, laplacian=False):
    _check_time(t)
    return workspace(spec).apply(values, _lead(t, values, spec), deriv_axis, laplacian)


def neumann_values(values: np.ndarray, spec: GridSpec, t, laplacian=False,
                   variant: str = "neumann") -> np.ndarray:
    """``e^{t Delta_N}`` on an array with spatial axes last; ``t`` broadcasts over leading axes.

    ``variant="dirichlet"`` uses odd reflections (absorbing interface) and
    ``"whole-space"`` ignores the interface; both are contrast cases.
    """
    _check_time(t)
    if variant == "whole-space":
        return heat_values(values, spec, t, laplacian=laplacian)
    if variant not in ("neumann", "dirichlet"):
        raise ValueError(f"unknown kernel variant {variant!r}")
    extend = even_extend_values if variant == "neumann" else odd_extend_values
    n = spec.dimension
    t = _lead(t, values, spec)
    plus = extend(values, spec, +1)
    minus = extend(values, spec, -1)
    both = np.stack([plus, minus], axis=values.ndim - n)
    out = workspace(spec).apply(both, np.asarray(t)[..., None], laplacian=laplacian)
    idx_plus = (Ellipsis, 0) + (slice(None),) * n
    idx_minus = (Ellipsis, 1) + (slice(None),) * n
    return np.where(upper_nodes(spec), out[idx_plus], out[idx_minus])


def _periodic_gauss_1d(t, x, period, images):
    t = np.asarray(t, dtype=float)
    total = 0.0
    for m in range(-images, images + 1):
        total = total + gaussian_kernel(t, (x - m * period)[..., None])
    return total


def _image_count(t_max: float, half_width: float, period: float) -> int:
    reach = 14.0 * math.sqrt(max(t_max, 1e-300)) + 2.0 * half_width
    return max(1, int(math.ceil(reach / period)))


def _trace(a: np.ndarray, i: int, step: int) -> np.ndarray:
    """Fourth-order extrapolation to the face half a cell beyond node ``i``."""
    return (35 * a[..., i] - 35 * a[..., i + step] + 21 * a[..., i + 2 * step]
            - 5 * a[..., i + 3 * step]) / 16


def _face_jumps(alpha_n: np.ndarray, spec: GridSpec, sign: int):
    """Jumps of the odd extension of ``alpha_n`` (one half-space) at its faces.

    Traces are extrapolated from the first four node rows next to each face.
    Returns ``[(face_coordinate, jump), ...]`` with jumps shaped like
    ``alpha_n`` without its normal axis.
    """
    N = spec.points_per_axis
    half = N // 2
    L = spec.half_width
    zero_mode = spec.boundary == "zero"
    a = alpha_n
    if sign > 0:
        inner = _trace(a, half, 1)
        outer = _trace(a, N - 1, -1)
        if zero_mode:
            return [(0.0, 2 * inner), (L, -outer), (-L, -outer)]
        return [(0.0, 2 * inner), (L, -2 * outer)]
    inner = _trace(a, half - 1, -1)
    outer = _trace(a, 0, 1)
    if zero_mode:
        return [(0.0, -2 * inner), (-L, outer), (L, outer)]
    return [(0.0, -2 * inner), (L, 2 * outer)]


def _sawtooth(y, face, period):
    """Periodic function with a unit upward jump at ``face`` and slope ``-1/period`` elsewhere."""
    return 0.5 - np.mod((y - face) / period, 1.0)


def semigroup_divergence_values(alpha: np.ndarray, spec: GridSpec, tau, path: str = KERNEL_PATH):
    """``e^{tau Delta_N} div alpha`` for ``alpha`` of shape ``(..., n) + spec.shape``.

    ``path="kernel"`` moves the derivative onto the kernel: for each half-space
    the tangential components are reflected evenly and the normal component
    oddly, and ``e^{tau Delta}`` is differentiated spectrally, which is the
    quadrature of ``-int grad_y p . alpha``.  The odd reflection jumps at the
    faces of the half-space (the interface, and the walls ``x_n = +-L``); those
    jumps are the face terms ``int p alpha_n dS`` of the integration by parts.
    They are measured from the first node rows, removed with periodic
    sawtooth profiles before differentiating, and the sawtooth slopes are put
    back afterwards, so no delta function is ever sampled.

    ``path="field"`` takes the fourth-order finite-difference divergence per
    half-space and then applies the semigroup.  Both paths agree to about
    ``O(h^3)`` on smooth data.
    """
    _check_time(tau)
    n = spec.dimension
    if path == FIELD_PATH:
        div = divergence_values(alpha, spec, order=4)
        return neumann_values(div, spec, tau)
    if path != KERNEL_PATH:
        raise ValueError(f"unknown divergence path {path!r}")
    ws = workspace(spec)
    comp_axis = alpha.ndim - n - 1
    lead_shape = alpha.shape[:comp_axis]
    tau = np.broadcast_to(np.asarray(tau, dtype=float), lead_shape)
    tang = _workspace(n - 1, spec.half_width, spec.points_per_axis, spec.boundary) if n > 1 else None
    y = ws.normal_coords()
    halves = []
    for sign in (+1, -1):
        out = 0.0
        for i in range(n - 1):
            comp = even_extend_values(np.take(alpha, i, axis=comp_axis), spec, sign)
            out = out + ws.apply(comp, tau, deriv_axis=i)
        alpha_n = np.take(alpha, n - 1, axis=comp_axis)
        odd = ws._pad(odd_extend_values(alpha_n, spec, sign))
        slope = 0.0
        for face, jump in _face_jumps(alpha_n, spec, sign):
            if tang is not None and ws.padded:
                pad = [(0, 0)] * len(lead_shape) + [(0, spec.points_per_axis)] * (n - 1)
                jump_p = np.pad(jump, pad)
            else:
                jump_p = jump
            odd = odd - jump_p[..., None] * _sawtooth(y, face, ws.period)
            smoothed = tang.apply(jump, tau) if tang is not None else jump
            slope = slope + smoothed
        out = out + ws.apply(odd, tau, deriv_axis=n - 1, prepadded=True)
        out = out - (slope / ws.period)[..., None]
        halves.append(out)
    return np.where(upper_nodes(spec), halves[0], halves[1])


# ---------------------------------------------------------------------------
# field-level API

def heat_extend_whole(f: ScalarField, t: float) -> ScalarField:
    """Whole-space heat flow ``e^{t Delta} f`` (spectral, continued per ``spec.boundary``)."""
    return ScalarField(f.spec, heat_values(f.values, f.spec, t))


def neumann_extend(f: ScalarField, t: float) -> ScalarField:
    """``e^{t Delta_N} f`` via reflection of each half-space and the spectral whole-space flow."""
    return ScalarField(f.spec, neumann_values(f.values, f.spec, t))


def _axis_matrix(spec: GridSpec, t: float, normal: bool) -> np.ndarray:
    """Real-space kernel matrix (times ``h``) along one axis, images included."""
    x = spec.coords()
    h = spec.h
    periodic = spec.boundary == "periodic"
    period = 2 * spec.half_width
    images = _image_count(t, spec.half_width, period) if periodic else 0
    X, Y = np.meshgrid(x, x, indexing="ij")
    if not normal:
        return h * _periodic_gauss_1d(t, X - Y, period, images)
    K = neumann_kernel(t, X[..., None], Y[..., None])
    for m in range(-images, images + 1):
        if m == 0:
            continue
        K = K + gaussian_kernel(t, (X - Y - m * period)[..., None])
        K = K + gaussian_kernel(t, (X + Y - m * period)[..., None])
    same = (X > 0) == (Y > 0)
    return h * np.where(same, K, 0.0)


def neumann_extend_direct(f: ScalarField, t: float) -> ScalarField:
    """``e^{t Delta_N} f`` by direct quadrature against the Neumann kernel.

    The kernel factorises over axes, so the quadrature is applied one axis at
    a time with dense ``N x N`` kernel matrices (periodic images added in
    periodic mode).
    """
    _check_time(t)
    spec = f.spec
    out = f.values
    for a in range(spec.dimension):
        K = _axis_matrix(spec, t, normal=(a == spec.dimension - 1))
        out = np.moveaxis(np.tensordot(K, np.moveaxis(out, a, 0), axes=(1, 0)), 0, a)
    return ScalarField(spec, out)


def build_extension(f: ScalarField, variant: str = "neumann") -> SpaceTimeField:
    """Slices ``e^{t_k Delta_N} f`` on every time level of ``f.spec``."""
    spec = f.spec
    vals = neumann_values(np.broadcast_to(f.values, (spec.n_levels,) + spec.shape),
                          spec, spec.levels, variant=variant)
    return SpaceTimeField(spec, vals)


# ---------------------------------------------------------------------------
# Duhamel integrals

class TimeInterpolant:
    """Piecewise-linear interpolation of a time-indexed array in ``s``.

    Knots are ``0, t_1, ..., t_M``; the value at ``s = 0`` is ``initial`` (the
    first level when omitted) and the field vanishes for ``s > t_M``.
    """

    def __init__(self, values: np.ndarray, levels, initial=None):
        levels = np.asarray(levels, dtype=float)
        if initial is None:
            initial = values[0]
        self.knots = np.concatenate([[0.0], levels])
        self.values = np.concatenate([np.asarray(initial)[None], values], axis=0)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("time-indexed field contains non-finite samples")

    def __call__(self, s) -> np.ndarray:
        s = np.atleast_1d(np.asarray(s, dtype=float))
        j = np.clip(np.searchsorted(self.knots, s, side="right") - 1, 0, len(self.knots) - 2)
        a, b = self.knots[j], self.knots[j + 1]
        w = np.clip((s - a) / (b - a), 0.0, 1.0)
        shape = (-1,) + (1,) * (self.values.ndim - 1)
        out = (1 - w).reshape(shape) * self.values[j] + w.reshape(shape) * self.values[j + 1]
        out[s > self.knots[-1] * (1 + 1e-12)] = 0.0
        return out


def sigma_nodes(n_sigma: int):
    """Midpoints of a uniform mesh on ``[0, 1]``; ``s = t(1 - sigma^2)`` maps them to ``[0, t]``."""
    sigma = (np.arange(n_sigma) + 0.5) / n_sigma
    return sigma, np.full(n_sigma, 1.0 / n_sigma)


def panel_nodes(breaks, order: int = 3):
    """Composite Gauss-Legendre nodes and weights on consecutive ``breaks``."""
    x, w = np.polynomial.legendre.leggauss(order)
    breaks = np.asarray(breaks, dtype=float)
    a, b = breaks[:-1, None], breaks[1:, None]
    nodes = 0.5 * (b - a) * x + 0.5 * (a + b)
    weights = 0.5 * (b - a) * w
    keep = (b - a).ravel() > 0
    return nodes[keep].ravel(), weights[keep].ravel()


def _level_index(spec: GridSpec, t: float) -> int:
    levels = spec.levels
    k = int(np.argmin(np.abs(levels - t)))
    if not math.isclose(levels[k], t, rel_tol=1e-12, abs_tol=0.0):
        raise ValueError(f"t = {t} is not a time level of the grid")
    return k


def duhamel_nodes(t: float, knots, rule: str = "aligned", n_sigma: int = 64, order: int = 4):
    """Nodes ``s``, lags ``t - s`` and weights for ``int_0^t g(s) ds`` after ``s = t (1 - sigma^2)``.

    ``rule="uniform"`` uses ``n_sigma`` midpoints in ``sigma``;
    ``rule="aligned"`` uses Gauss-Legendre panels of the given order whose
    ends are the images of the interpolation knots merged with a uniform mesh
    of ``n_sigma / order`` panels, so piecewise-linear data in ``s`` is
    integrated without kink errors.
    """
    if rule == "uniform":
        sigma, dsig = sigma_nodes(n_sigma)
        weights = 2 * t * sigma * dsig
    elif rule == "aligned":
        knots = np.asarray(knots, dtype=float)
        inner = knots[(knots > 0) & (knots < t * (1 - 1e-12))]
        uniform = np.linspace(0.0, 1.0, max(2, n_sigma // order) + 1)
        breaks = np.unique(np.concatenate([uniform, np.sqrt(1.0 - inner / t)]))
        sigma, dsig = panel_nodes(breaks, order)
        weights = 2 * t * sigma * dsig
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    return t * (1 - sigma ** 2), t * sigma ** 2, weights


def duhamel_values(alpha: np.ndarray, spec: GridSpec, alpha0=None, path=KERNEL_PATH,
                   n_sigma=None, levels=None, rule: str = "aligned") -> np.ndarray:
    """``int_0^t e^{(t-s) Delta_N} div alpha(s) ds`` at the requested level indices.

    ``alpha`` has shape ``(M, n) + spec.shape``.  The substitution
    ``s = t (1 - sigma^2)`` absorbs the ``(t - s)^{-1/2}`` growth of the
    kernel gradient; see :func:`duhamel_nodes` for the ``sigma`` rules.
    """
    interp = TimeInterpolant(alpha, spec.levels, alpha0)
    n_sigma = n_sigma or 2 * spec.n_levels
    levels = range(spec.n_levels) if levels is None else levels
    out = []
    for k in levels:
        t = spec.time_levels[k]
        s, tau, weights = duhamel_nodes(t, interp.knots, rule, n_sigma)
        terms = semigroup_divergence_values(interp(s), spec, tau, path)
        out.append(np.tensordot(weights, terms, axes=(0, 0)))
    return np.stack(out)


def duhamel_divergence(alpha: SpaceTimeVectorField, t: float, alpha0: VectorField | None = None,
                       path: str = KERNEL_PATH, n_sigma: int | None = None,
                       rule: str = "aligned") -> ScalarField:
    """Duhamel term ``int_0^t e^{(t-s) Delta_N} div_x alpha(s) ds`` at a grid level ``t``."""
    spec = alpha.spec
    k = _level_index(spec, t)
    a0 = None if alpha0 is None else alpha0.values
    vals = duhamel_values(alpha.values, spec, a0, path, n_sigma, levels=[k], rule=rule)
    return ScalarField(spec, vals[0])
