import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neumann_bmo.grid import GridSpec, ScalarField, SpaceTimeField, time_weights
from neumann_bmo.norms import (
    NORM_KEYS,
    NormReport,
    ParabolicBallFamily,
    ball_count,
    ball_sums,
    besov_norm,
    bmo_inv_neumann_norm,
    bmo_neumann_norm,
    classical_bmo_norm,
    hardy_norm,
    norm_report,
    path_norm,
    square_function,
    tent_12_norm,
    tent_inf1_norm,
    tent_inf2_norm,
    tmo_norm,
    weighted_linf_norm,
)
from neumann_bmo.semigroup import build_extension

from conftest import gaussian_bump


def test_ball_family_structure(spec1):
    fam = ParabolicBallFamily.dyadic(spec1)
    d = fam.describe()
    assert d["r_max"] == 1.0 and d["r_min"] == pytest.approx(0.125)
    ratios = np.array(fam.radii[:-1]) / np.array(fam.radii[1:])
    np.testing.assert_allclose(ratios, 2.0)
    x = spec1.coords()
    for k, (r, idx) in enumerate(fam):
        c = x[idx[:, 0]]
        # mirror-symmetric about the interface and inside the box
        np.testing.assert_allclose(np.sort(c), np.sort(-c))
        assert np.all(np.abs(c) + r <= spec1.half_width + 1e-12)
        np.testing.assert_array_equal(fam.points(k), c[:, None])
    fine = ParabolicBallFamily.dyadic(spec1, refine=2)
    assert len(fine.radii) == 2 * len(fam.radii) - 1 and len(fine) > len(fam)


def test_ball_family_errors(spec1):
    with pytest.raises(ValueError, match="empty"):
        ParabolicBallFamily.dyadic(spec1, r_max=0.01)
    coarse = GridSpec.graded(1, 4.0, 128, 2, 1.0)
    with pytest.raises(ValueError, match="too coarse"):
        tent_inf2_norm(build_extension(ScalarField.constant(coarse, 1.0)),
                       ParabolicBallFamily.dyadic(coarse, r_min=0.1))
    other = ParabolicBallFamily.dyadic(spec1.refined())
    with pytest.raises(ValueError, match="different grid"):
        bmo_neumann_norm(ScalarField.constant(spec1, 1.0), other)


def test_ball_sums_match_direct_counts(spec2):
    rng = np.random.default_rng(2)
    v = rng.standard_normal(spec2.shape)
    r = 0.6
    sums = ball_sums(v, spec2, r)
    X, Y = spec2.mesh()
    i, j = 20, 37
    inside = (X - X[i, j]) ** 2 + (Y - Y[i, j]) ** 2 < r ** 2
    assert sums[i, j] == pytest.approx(v[inside].sum(), abs=1e-10)
    assert ball_count(spec2, r) == inside.sum()


def test_constants_have_zero_oscillation(spec1, balls1):
    c = ScalarField.constant(spec1, 3.0)
    assert bmo_neumann_norm(c, balls1) == pytest.approx(0.0, abs=1e-12)
    assert classical_bmo_norm(c, balls1) == pytest.approx(0.0, abs=1e-12)
    assert tmo_norm(build_extension(c), balls1) == pytest.approx(0.0, abs=1e-9)
    assert hardy_norm(c) == pytest.approx(0.0, abs=1e-9)


def test_tmo_of_time_coordinate_is_closed_form(spec1, balls1):
    # |grad_{x,t} t|^2 = 1: every fully one-sided box gives r^{2-n} |B|
    u = SpaceTimeField.from_function(spec1, lambda t, x: t + 0 * x)
    n = spec1.dimension
    expected = max(r ** (2 - n) * ball_count(spec1, r) * spec1.cell_volume for r in balls1.radii)
    assert tmo_norm(u, balls1) ** 2 == pytest.approx(expected, rel=1e-12)
    assert tmo_norm(u, balls1, time_derivative_term=False) == 0.0


@settings(max_examples=10, deadline=None)
@given(lam=st.floats(-5.0, 5.0).filter(lambda v: abs(v) > 1e-3))
def test_homogeneity(spec1, balls1, lam):
    f = gaussian_bump(spec1, centre=0.7, width=0.4)
    u = build_extension(f)
    for norm in (tent_inf2_norm, tent_inf1_norm, tmo_norm):
        assert norm(u * lam, balls1) == pytest.approx(abs(lam) * norm(u, balls1), rel=1e-9)
    assert bmo_neumann_norm(f * lam, balls1) == pytest.approx(abs(lam) * bmo_neumann_norm(f, balls1), rel=1e-9)
    assert weighted_linf_norm(u * lam) == pytest.approx(abs(lam) * weighted_linf_norm(u), rel=1e-12)


def test_reflection_invariance(spec1, balls1):
    f = gaussian_bump(spec1, centre=0.9, width=0.3)
    g = ScalarField(spec1, f.values[::-1])
    for norm in (bmo_neumann_norm, bmo_inv_neumann_norm, classical_bmo_norm):
        assert norm(g, balls1) == pytest.approx(norm(f, balls1), rel=1e-10)


def test_tangential_translation_invariance(spec2):
    balls = ParabolicBallFamily.dyadic(spec2)
    f = ScalarField.from_function(spec2, lambda x, y: np.cos(math.pi * x / 4) * np.exp(-(y - 0.7) ** 2))
    # shift by a multiple of every centre stride
    g = ScalarField(spec2, np.roll(f.values, 16, axis=0))
    assert bmo_inv_neumann_norm(g, balls) == pytest.approx(bmo_inv_neumann_norm(f, balls), rel=0.05)


def _dense_tent_inf2(u, spec, r_max, r_min, per_octave=4):
    """Brute force: every node as centre, radii on a finer geometric mesh."""
    best = 0.0
    x = spec.coords()
    r = r_max
    while r >= r_min * (1 - 1e-12):
        w = time_weights(spec.levels, r * r)
        sums = np.tensordot(w, ball_sums(u.values ** 2, spec, r), axes=(0, 0))
        ok = np.abs(x) + r <= spec.half_width
        best = max(best, float((r ** -spec.dimension * spec.cell_volume * sums)[ok].max()))
        r /= 2 ** (1 / per_octave)
    return math.sqrt(best)


def test_family_matches_dense_brute_force(spec1, balls1):
    f = ScalarField.from_function(spec1, lambda x: np.clip(x, -1.0, 1.0))
    u = build_extension(f)
    fam = tent_inf2_norm(u, balls1)
    dense = _dense_tent_inf2(u, spec1, max(balls1.radii), min(balls1.radii))
    assert fam <= dense * (1 + 1e-12)
    assert fam == pytest.approx(dense, rel=0.05)


def test_path_norm_is_sum(spec1, balls1):
    u = build_extension(gaussian_bump(spec1))
    assert path_norm(u, balls1) == pytest.approx(weighted_linf_norm(u) + tent_inf2_norm(u, balls1))


def test_square_function_and_hardy(spec1):
    f = ScalarField.from_function(spec1, lambda x: x * np.exp(-x ** 2))
    s = square_function(f)
    assert np.all(s.values >= 0) and s.max_abs() > 0
    assert hardy_norm(2 * f) == pytest.approx(2 * hardy_norm(f), rel=1e-10)
    whole = hardy_norm(f, operator="whole-space")
    assert 0.2 < hardy_norm(f) / whole < 5


def test_besov_norm_of_gaussian():
    # e^{t Delta} e^{-x^2/4a} = sqrt(a/(a+t)) e^{-x^2/4(a+t)}, peak sampled at the node x = h/2
    spec = GridSpec.graded(1, 12.0, 512, 64, 4.0)
    a = 0.25
    x0 = spec.h / 2
    g = np.exp(-spec.coords() ** 2 / (4 * a))
    t = spec.levels
    expected = np.max(np.sqrt(t * a / (a + t)) * np.exp(-x0 ** 2 / (4 * (a + t))))
    assert besov_norm(g, spec) == pytest.approx(expected, rel=1e-6)


def test_tent12_is_finite_and_homogeneous(spec1):
    u = build_extension(gaussian_bump(spec1))
    v = tent_12_norm(u)
    assert math.isfinite(v) and v > 0
    assert tent_12_norm(u * 3.0) == pytest.approx(3 * v, rel=1e-10)


def test_norm_report(spec1, balls1):
    rep = norm_report(gaussian_bump(spec1), balls1)
    assert set(NORM_KEYS) <= set(rep.values)
    payload = json.loads(rep.to_json())
    assert payload["values"]["tmo"] == rep["tmo"]
    assert payload["grid"]["N"] == 128 and payload["ball_family"]["policy"] == "dyadic"
    with pytest.raises(ValueError):
        NormReport({"tmo": -1.0})


def test_bmo_against_denser_family():
    spec = GridSpec.graded(1, 1.0, 256, 32, 0.25)
    f = ScalarField.from_function(spec, lambda x: np.sign(x) * np.minimum(1, np.abs(x)))
    coarse = bmo_neumann_norm(f, ParabolicBallFamily.dyadic(spec))
    dense = bmo_neumann_norm(f, ParabolicBallFamily.dyadic(spec, refine=4))
    assert coarse <= dense * (1 + 1e-12)
    assert coarse == pytest.approx(dense, rel=0.05)


def test_refining_the_family_never_decreases_norms(spec1):
    f = ScalarField.from_function(spec1, lambda x: np.log(np.abs(x - 0.3) + 0.2))
    u = build_extension(f)
    a, b = ParabolicBallFamily.dyadic(spec1), ParabolicBallFamily.dyadic(spec1, refine=2)
    for norm in (tent_inf2_norm, tent_inf1_norm, tmo_norm):
        assert norm(u, b) >= norm(u, a) * (1 - 1e-12)
    assert bmo_neumann_norm(f, b) >= bmo_neumann_norm(f, a) * (1 - 1e-12)


def test_classical_bmo_bounds_and_refinement():
    vals = []
    for N in (256, 512):
        spec = GridSpec.graded(1, 4.0, N, 32, 1.0)
        balls = ParabolicBallFamily.dyadic(spec)
        g = ScalarField.from_function(spec, lambda x: np.maximum(np.log(np.abs(x)), -3.0))
        vals.append(classical_bmo_norm(g, balls))
        b = ScalarField.from_function(spec, lambda x: np.sin(3 * x))
        assert classical_bmo_norm(b, balls) <= 2 * b.max_abs()
    assert vals[1] == pytest.approx(vals[0], rel=0.05)


def test_hardy_norm_of_atom_is_stable():
    vals = []
    for N in (256, 512):
        spec = GridSpec(1, 4.0, N)
        vals.append(hardy_norm(ScalarField.from_function(spec, lambda x: (x - 1) / 0.4 * np.exp(-((x - 1) / 0.4) ** 2))))
    assert np.isfinite(vals).all() and vals[1] == pytest.approx(vals[0], rel=0.1)


def test_tent_and_weighted_closed_forms(spec1, balls1):
    one = SpaceTimeField.from_function(spec1, lambda t, x: 1.0 + 0 * x)
    expected = max(r ** -1 * ball_count(spec1, r) * spec1.cell_volume * r * r for r in balls1.radii)
    assert tent_inf2_norm(one, balls1) == pytest.approx(math.sqrt(expected), rel=1e-12)
    zero = one * 0.0
    assert tent_inf2_norm(zero, balls1) == 0.0 and path_norm(zero, balls1) == 0.0
    inv = SpaceTimeField.from_function(spec1, lambda t, x: t ** -0.5 + 0 * x)
    assert weighted_linf_norm(inv) == pytest.approx(1.0, rel=1e-14)
    f = gaussian_bump(spec1, amplitude=1.7)
    assert weighted_linf_norm(build_extension(f)) <= f.max_abs() * math.sqrt(spec1.levels[-1])
    assert bmo_inv_neumann_norm(f, balls1) == tent_inf2_norm(build_extension(f), balls1)
