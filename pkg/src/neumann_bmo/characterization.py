"""Measurable forms of the trace characterisation and the half-space extension bounds.

Each experiment returns plain dictionaries so the CLI can write them as CSV
rows without further translation.
"""

from __future__ import annotations

import math

import numpy as np

from .grid import GridSpec, ScalarField, SpaceTimeField, VectorField, even_extend_values
from .norms import (
    ParabolicBallFamily,
    _family,
    besov_norm,
    bmo_neumann_norm,
    carleson_sup,
    tent_inf1_norm,
    tent_inf2_norm,
    tmo_norm,
    weighted_linf_norm,
)
from .semigroup import build_extension, heat_values, neumann_values, semigroup_divergence_values

# Constant in ||div F||_{BMO^-1} <= C_EMB sum_j ||F_j||_{BMO_N}.  Already a
# sinusoid needs more than 1; the reported ratio is the empirical constant.
C_EMB = 1.0


def trace_forward(f: ScalarField, balls: ParabolicBallFamily | None = None,
                  variant: str = "neumann") -> dict:
    """``tmo(e^{t Delta_N} f)`` against ``||f||_{BMO_N}`` and their ratio.

    The ratio is ``nan`` (with ``defined=False``) when the oscillation norm
    vanishes.  ``variant`` swaps the caloric extension for a contrast kernel.
    """
    balls = _family(f.spec, balls)
    u = build_extension(f, variant)
    tmo = tmo_norm(u, balls)
    bmo = bmo_neumann_norm(f, balls)
    defined = bmo > 1e-12 * max(1.0, f.max_abs())
    return {"tmo": tmo, "bmo": bmo, "ratio": tmo / bmo if defined else math.nan,
            "defined": bool(defined)}


def _normal_defect(u: SpaceTimeField) -> float:
    """Second-order one-sided ``d/dx_n`` at ``x_n = 0+-``, relative to ``max |d_n u|``."""
    half = u.spec.points_per_axis // 2
    v = u.values
    h = u.spec.h
    up = (-2 * v[..., half] + 3 * v[..., half + 1] - v[..., half + 2]) / h
    down = (2 * v[..., half - 1] - 3 * v[..., half - 2] + v[..., half - 3]) / h
    scale = np.abs(np.diff(v, axis=-1)).max() / h
    if scale == 0:
        return 0.0
    return float(max(np.abs(up).max(), np.abs(down).max()) / scale)


def trace_roundtrip(f: ScalarField, balls: ParabolicBallFamily | None = None) -> dict:
    """Recover the trace of ``u = e^{t Delta_N} f`` from its first time level.

    A numerical surrogate for the converse direction: ``g = u(., t_1)`` should
    approach ``f`` like ``O(t_1)`` on smooth data, and its oscillation norm
    should stay controlled by ``tmo(u)``.
    """
    spec = f.spec
    balls = _family(spec, balls)
    u = build_extension(f)
    g = u.slice(0)
    tmo = tmo_norm(u, balls)
    bmo_g = bmo_neumann_norm(g, balls)
    bmo_f = bmo_neumann_norm(f, balls)
    # semigroup law: e^{t Delta_N} g = u(t + t_1)
    shifted = neumann_values(np.broadcast_to(f.values, (spec.n_levels,) + spec.shape),
                             spec, spec.levels + spec.levels[0])
    law = np.abs(build_extension(g).values - shifted).max() / max(f.max_abs(), 1e-300)
    return {
        "t1": float(spec.levels[0]),
        "recovered_trace_error": float(np.abs(g.values - f.values).max()),
        "norm_defect": abs(bmo_g - bmo_f),
        "bmo_trace": bmo_g,
        "tmo": tmo,
        "trace_to_tmo": bmo_g / tmo if tmo > 0 else math.nan,
        "normal_derivative_defect": _normal_defect(u),
        "semigroup_law_defect": float(law),
    }


def divergence_extension(F: VectorField) -> SpaceTimeField:
    """``e^{t Delta_N} div F`` on every time level, derivative on the kernel."""
    spec = F.spec
    M = spec.n_levels
    stack = np.broadcast_to(F.values, (M,) + F.values.shape)
    return SpaceTimeField(spec, semigroup_divergence_values(stack, spec, spec.levels))


def divergence_embedding(F: VectorField, balls: ParabolicBallFamily | None = None,
                         slack: float = 0.0, constant: float = C_EMB) -> dict:
    """Check ``||div F||_{BMO^-1_N} <= C sum_j ||F_j||_{BMO_N}``."""
    spec = F.spec
    balls = _family(spec, balls)
    lhs = tent_inf2_norm(divergence_extension(F), balls)
    rhs = constant * sum(bmo_neumann_norm(c, balls) for c in F.components)
    scale = max(lhs, rhs)
    total = rhs / constant
    return {"lhs": lhs, "rhs": rhs, "constant": constant,
            "ratio": lhs / total if total > 0 else math.nan,
            "pass": bool(lhs <= rhs + slack * scale + 1e-12 * scale)}


def _even_parts(values: np.ndarray, spec: GridSpec):
    return even_extend_values(values, spec, +1), even_extend_values(values, spec, -1)


# (name, lower constant, upper constant, printed upper constant or None)
CHAINS = (
    ("tent_inf2", 1.0, 2.0 * math.sqrt(2.0), None),
    ("bmo_inv", 1.0, 2.0 * math.sqrt(2.0), math.sqrt(2.0) / 2.0),
    ("tent_inf1", 1.0, 4.0, None),
    ("weighted_linf", 1.0, 2.0, None),
)


def chain_values(f, balls: ParabolicBallFamily | None = None) -> dict:
    """Norms of ``f`` and of its two even extensions for every chain.

    ``f`` is a :class:`ScalarField` (its Neumann heat extension supplies the
    space-time input) or a :class:`SpaceTimeField`.  Returns
    ``{chain: (norm_f, norm_plus, norm_minus)}``; the Besov entry holds
    ``(||t^{1/2} e^{t Delta_N} f||_inf, B(f_+e), B(f_-e))`` when ``f`` is a
    scalar field.
    """
    spec = f.spec
    balls = _family(spec, balls)
    scalar = isinstance(f, ScalarField)
    u = build_extension(f) if scalar else f
    plus, minus = _even_parts(u.values, spec)
    up, um = SpaceTimeField(spec, plus), SpaceTimeField(spec, minus)
    out = {
        "tent_inf2": (tent_inf2_norm(u, balls), tent_inf2_norm(up, balls), tent_inf2_norm(um, balls)),
        "tent_inf1": (tent_inf1_norm(u, balls), tent_inf1_norm(up, balls), tent_inf1_norm(um, balls)),
        "weighted_linf": (weighted_linf_norm(u), weighted_linf_norm(up), weighted_linf_norm(um)),
    }
    if scalar:
        fp, fm = _even_parts(f.values, spec)
        levels = spec.levels

        def whole(g):
            flow = heat_values(np.broadcast_to(g, (len(levels),) + spec.shape), spec, levels)
            return math.sqrt(max(carleson_sup(flow ** 2, spec, balls), 0.0))

        out["bmo_inv"] = (tent_inf2_norm(u, balls), whole(fp), whole(fm))
        out["besov"] = (weighted_linf_norm(u), besov_norm(fp, spec), besov_norm(fm, spec))
    return out


def extension_equivalence_suite(f, balls: ParabolicBallFamily | None = None,
                                slack: float = 0.0) -> list[dict]:
    """Margins of every extension chain ``lower ||f|| <= ||f_+e|| + ||f_-e|| <= upper ||f||``.

    The Besov row reports the empirical constant of
    ``||t^{1/2} e^{t Delta_N} f||_inf <= C (B(f_+e) + B(f_-e))``.
    ``slack`` is a relative tolerance on both margins.
    """
    vals = chain_values(f, balls)
    rows = []
    for name, lo, hi, printed in CHAINS:
        if name not in vals:
            continue
        norm_f, p, m = vals[name]
        total = p + m
        scale = max(norm_f, total, 1e-300)
        lower_margin = total - lo * norm_f
        upper_margin = hi * norm_f - total
        ok = lower_margin >= -slack * scale and upper_margin >= -slack * scale
        rows.append({
            "chain": name, "norm_f": norm_f, "norm_plus": p, "norm_minus": m,
            "sum_ext": total, "lower_const": lo, "upper_const": hi,
            "lower_margin": lower_margin, "upper_margin": upper_margin,
            "printed_upper_holds": (None if printed is None
                                    else bool(total <= printed * norm_f * (1 + slack))),
            "pass": bool(ok),
        })
    if "besov" in vals:
        lhs, p, m = vals["besov"]
        total = p + m
        rows.append({
            "chain": "besov", "norm_f": lhs, "norm_plus": p, "norm_minus": m,
            "sum_ext": total, "lower_const": math.nan, "upper_const": math.nan,
            "lower_margin": math.nan, "upper_margin": math.nan,
            "printed_upper_holds": None,
            "empirical_constant": lhs / total if total > 0 else math.nan,
            "pass": bool(lhs <= (1 + slack) * total + 1e-300),
        })
    return rows
