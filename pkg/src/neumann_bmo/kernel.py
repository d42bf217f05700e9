"""Closed-form heat kernels on R^n and on the two half-spaces ``{x_n > 0}``, ``{x_n < 0}``.

The Neumann kernel is the whole-space Gaussian plus its reflection through
``x_n = 0`` (reflecting boundary), cut off across the interface by the factor
``H(x_n y_n)``.  The ``"dirichlet"`` variant subtracts the reflection instead
(absorbing boundary); it is kept for contrast checks only.

Points are arrays whose last axis is the coordinate axis; a plain float is a
point in R^1.  All functions broadcast over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import GridSpec

VARIANTS = ("neumann", "dirichlet", "whole-space")


def _points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[..., None] if x.ndim == 0 else x


def _check_time(t):
    if np.any(np.asarray(t) <= 0):
        raise ValueError("heat kernel requires t > 0")


def gaussian_kernel(t, x) -> np.ndarray:
    """``h_t(x) = (4 pi t)^{-n/2} exp(-|x|^2 / 4t)``."""
    _check_time(t)
    x = _points(x)
    n = x.shape[-1]
    t = np.asarray(t, dtype=float)
    return (4 * np.pi * t) ** (-n / 2) * np.exp(-np.sum(x * x, axis=-1) / (4 * t))


def _split(t, x, y):
    x, y = np.broadcast_arrays(_points(x), _points(y))
    n = x.shape[-1]
    t = np.asarray(t, dtype=float)
    tang = np.sum((x[..., :-1] - y[..., :-1]) ** 2, axis=-1)
    pref = (4 * np.pi * t) ** (-n / 2) * np.exp(-tang / (4 * t))
    direct = np.exp(-(x[..., -1] - y[..., -1]) ** 2 / (4 * t))
    image = np.exp(-(x[..., -1] + y[..., -1]) ** 2 / (4 * t))
    same_side = x[..., -1] * y[..., -1] >= 0
    return x, y, pref, direct, image, same_side


def neumann_kernel(t, x, y, variant: str = "neumann") -> np.ndarray:
    """Heat kernel of the reflecting (or absorbing) half-space problem."""
    _check_time(t)
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    if variant == "whole-space":
        return gaussian_kernel(t, _points(x) - _points(y))
    _, _, pref, direct, image, same_side = _split(t, x, y)
    sign = 1.0 if variant == "neumann" else -1.0
    return np.where(same_side, pref * (direct + sign * image), 0.0)


def neumann_kernel_gradient(t, x, y, variant: str = "neumann") -> np.ndarray:
    """Gradient in ``x`` of :func:`neumann_kernel`, last axis = component.

    Across the interface the kernel vanishes identically, so the zero vector
    is returned there.  On the interface itself the one-sided limit from the
    half-space of ``y`` is used.
    """
    _check_time(t)
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    t = np.asarray(t, dtype=float)
    if variant == "whole-space":
        d = _points(x) - _points(y)
        return -d / (2 * t[..., None]) * gaussian_kernel(t, d)[..., None]
    x, y, pref, direct, image, same_side = _split(t, x, y)
    sign = 1.0 if variant == "neumann" else -1.0
    tn = t[..., None] if t.ndim else t
    p = pref * (direct + sign * image)
    grad_tang = -(x[..., :-1] - y[..., :-1]) / (2 * tn) * p[..., None]
    d_normal = pref * (-(x[..., -1] - y[..., -1]) / (2 * t) * direct
                       - sign * (x[..., -1] + y[..., -1]) / (2 * t) * image)
    grad = np.concatenate([grad_tang, d_normal[..., None]], axis=-1)
    return np.where(same_side[..., None], grad, 0.0)


def kernel_mass(t: float, x, spec: GridSpec, variant: str = "neumann") -> float:
    """Midpoint-rule integral of ``y -> p_t(x, y)`` over the half-space containing ``x``."""
    x = _points(x)
    if x.shape[-1] != spec.dimension:
        raise ValueError("point dimension does not match the grid")
    if x[-1] == 0:
        raise ValueError("x must lie off the interface")
    pts = spec.points()
    side = pts[:, -1] > 0 if x[-1] > 0 else pts[:, -1] < 0
    vals = neumann_kernel(t, x[None, :], pts[side], variant)
    return float(spec.cell_volume * vals.sum())


@dataclass(frozen=True)
class KernelQuery:
    """One kernel evaluation request."""

    t: float
    x: tuple[float, ...]
    y: tuple[float, ...]
    variant: str = "neumann"

    def __post_init__(self):
        if not self.t > 0:
            raise ValueError("t must be positive")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))):
            raise ValueError("x and y must be finite")
        if len(self.x) != len(self.y):
            raise ValueError("x and y must have the same dimension")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")

    def value(self) -> float:
        return float(neumann_kernel(self.t, self.x, self.y, self.variant))

    def gradient(self) -> np.ndarray:
        return neumann_kernel_gradient(self.t, self.x, self.y, self.variant)
