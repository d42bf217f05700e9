"""End-to-end acceptance gate; each test records one pass/fail line."""

import math
import time

import numpy as np
import pytest

from neumann_bmo import characterization as ch
from neumann_bmo.cli import main
from neumann_bmo.corpus import _profile, load_corpus
from neumann_bmo.experiments import (
    RunConfig,
    bound_constants,
    kernel_suite,
    normalised_data,
    run_smallness_sweep,
    run_solver,
    run_splitting,
    run_trace_forward,
)
from neumann_bmo.grid import GridSpec, ScalarField, VectorField
from neumann_bmo.norms import ParabolicBallFamily, bmo_inv_neumann_norm
from neumann_bmo.semigroup import neumann_extend, neumann_extend_direct

SEED = 20240611


def _cfg(experiment, **kw):
    return RunConfig(experiment=experiment, seed=SEED, **kw)


def test_kernel_suite(acceptance):
    start = time.perf_counter()
    rows = kernel_suite(1, 256, SEED) + kernel_suite(2, 128, SEED)
    elapsed = time.perf_counter() - start
    bad = [(r["property"], r["variant"], r["n"]) for r in rows if not r["pass"]]
    violated = {(r["property"], r["variant"]) for r in rows if r["expect"] == "violated" and r["pass"]}
    ok = not bad and violated == {("mass", "dirichlet"), ("normal-derivative", "dirichlet")} and elapsed < 60
    acceptance(1, ok, f"{len(rows)} rows, failures={bad}, dirichlet violations={sorted(violated)}, {elapsed:.1f}s")
    assert ok


def test_two_path_semigroup_identity(acceptance):
    start = time.perf_counter()
    spec = GridSpec(1, 4.0, 128)
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(50):
        f = ScalarField(spec, rng.standard_normal(spec.shape))
        t = float(rng.uniform(0.01, 1.0))
        a = neumann_extend(f, t).values
        b = neumann_extend_direct(f, t).values
        worst = max(worst, np.abs(a - b).max() / np.abs(b).max())
    elapsed = time.perf_counter() - start
    ok = worst < 1e-8 and elapsed < 60
    acceptance(2, ok, f"max relative gap {worst:.2e} over 50 fields, {elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_trace_forward_band(acceptance):
    start = time.perf_counter()
    c = {}
    for N, refine in ((256, 1), (512, 1), (256, 2)):
        c[N, refine] = run_trace_forward(_cfg("trace-forward", points_per_axis=N, refine=refine)).summary["band_C"]
    grid_change = abs(c[512, 1] / c[256, 1] - 1)
    family_change = abs(c[256, 2] / c[256, 1] - 1)
    elapsed = time.perf_counter() - start
    ok = grid_change < 0.1 and family_change < 0.1 and elapsed < 600
    acceptance(3, ok, f"C={c[256, 1]:.3f} (N=256), {c[512, 1]:.3f} (N=512), {c[256, 2]:.3f} (refine 2); "
                      f"changes {grid_change:.1%}, {family_change:.1%}, {elapsed:.0f}s")
    assert ok


def _chain_table(N):
    spec = GridSpec.graded(1, 4.0, N, 32, 1.0)
    balls = ParabolicBallFamily.dyadic(spec)
    return {e.id: ch.chain_values(e.field(spec), balls) for e in load_corpus()}, spec, balls


@pytest.mark.slow
def test_extension_chains(acceptance):
    start = time.perf_counter()
    coarse, _, _ = _chain_table(128)
    fine, spec, balls = _chain_table(256)
    # refinement defect: largest change of any chain norm from N to 2N, relative to its chain
    defect = 0.0
    for key, chains in fine.items():
        for name, triple in chains.items():
            scale = max(max(coarse[key][name]), max(triple))
            defect = max(defect, max(abs(a - b) for a, b in zip(coarse[key][name], triple)) / scale)
    slack = 3 * defect
    failures, worst = [], math.inf
    for e in load_corpus():
        for r in ch.extension_equivalence_suite(e.field(spec), balls, slack=slack):
            if not r["pass"]:
                failures.append((e.id, r["chain"]))
            if r["chain"] != "besov":
                scale = max(r["norm_f"], r["sum_ext"])
                worst = min(worst, r["lower_margin"] / scale, r["upper_margin"] / scale)
    has_inf2 = any(name == "tent_inf2" and hi == 2 * math.sqrt(2) for name, _, hi, _ in ch.CHAINS)
    elapsed = time.perf_counter() - start
    ok = not failures and has_inf2 and elapsed < 600
    acceptance(4, ok, f"slack {slack:.2e} (3 x defect), smallest relative margin {worst:.3f}, "
                      f"failures={failures}, {elapsed:.0f}s")
    assert ok


@pytest.mark.xfail(strict=True, reason="unit embedding constant is exceeded by corpus fields")
def test_divergence_embedding_with_unit_constant(acceptance):
    start = time.perf_counter()
    spec = GridSpec.graded(1, 4.0, 128, 32, 1.0)
    balls = ParabolicBallFamily.dyadic(spec)
    rows = [ch.divergence_embedding(VectorField.from_components([e.field(spec)]), balls)
            for e in load_corpus()]
    worst = max(r["ratio"] for r in rows)
    failing = sum(not r["pass"] for r in rows)
    scaling = _scaling_spread()
    elapsed = time.perf_counter() - start
    ok = failing == 0 and scaling < 0.05 and elapsed < 300
    acceptance(5, ok, f"embedding with C={ch.C_EMB:g}: {failing}/{len(rows)} fail, max ratio {worst:.2f}; "
                      f"scaling spread {scaling:.1%}, {elapsed:.0f}s")
    assert ok


def _scaling_spread():
    spec = GridSpec.graded(1, 8.0, 512, 64, 4.0)
    balls = ParabolicBallFamily.dyadic(spec)
    x = spec.coords()
    spread = 0.0
    for e in load_corpus(kinds=("atom",)):
        # f -> lam f(lam x) is the parabolic rescaling of BMO^-1 data
        v = [bmo_inv_neumann_norm(ScalarField(spec, lam * _profile(e.kind, e.params, lam * x, spec.half_width)), balls)
             for lam in (0.5, 1.0, 2.0)]
        spread = max(spread, max(v) / min(v) - 1)
    return spread


def test_inverse_bmo_scaling_invariance():
    # the scaling half of the embedding criterion, kept green on its own
    assert _scaling_spread() < 0.05


@pytest.mark.slow
def test_bound_constants_stable_under_refinement(acceptance):
    start = time.perf_counter()
    consts = {}
    for N in (128, 256):
        spec = GridSpec.graded(1, 4.0, N, 32, 1.0)
        balls = ParabolicBallFamily.dyadic(spec)
        rows = [bound_constants(e.field(spec), balls, (1.0,)) for e in load_corpus()]
        consts[N] = {k: max(r[k] for r in rows) for k in ("C_prop33", "C_prop39")}
        assert all(math.isfinite(r[k]) for r in rows for k in ("C_prop33", "C_prop39"))
    change = {k: abs(consts[256][k] / consts[128][k] - 1) for k in consts[128]}
    elapsed = time.perf_counter() - start
    ok = all(v < 0.15 for v in change.values()) and elapsed < 600
    acceptance(6, ok, ", ".join(f"{k} {consts[128][k]:.3f}->{consts[256][k]:.3f} ({change[k]:.1%})"
                                for k in change) + f", {elapsed:.0f}s")
    assert ok


def test_splitting_reconstruction(acceptance):
    start = time.perf_counter()
    res = run_splitting(_cfg("splitting-diagnostics", corpus="bump"))
    worst = res.summary["max_reconstruction"]
    elapsed = time.perf_counter() - start
    ok = worst < 1e-3 and elapsed < 300
    acceptance(7, ok, f"max relative reconstruction error {worst:.1e} on {len(res.tables['splitting'])} bumps, "
                      f"{elapsed:.1f}s")
    assert ok


@pytest.mark.slow
def test_solver_desk_form(acceptance):
    start = time.perf_counter()
    cfg = _cfg("solver")
    assert bmo_inv_neumann_norm(normalised_data(cfg), cfg.balls()) == pytest.approx(0.01)
    s = run_solver(cfg).summary
    solve_ok = (s["verdict"] == "converged" and s["contraction"] < 0.5 and s["residual"] < 1e-6
                and s["stepper_difference"] < s["stepper_tolerance"])
    runs = {N: run_smallness_sweep(_cfg("smallness-sweep", points_per_axis=N)) for N in (128, 256)}
    sweeps = {N: r.summary for N, r in runs.items()}
    th = {N: sw["threshold"] for N, sw in sweeps.items()}
    # convergence fails exactly on the scales above the threshold
    separated = all((r["verdict"] == "converged") == (r["data_scale"] < th[N])
                    for N, res in runs.items() for r in res.tables["sweep"])
    stable = math.isfinite(th[128]) and abs(th[256] / th[128] - 1) < 0.2
    fit = sweeps[128]["affine_fit"]
    affine = bool(fit) and fit["r2"] > 0.95 and fit["slope"] > 0 and sweeps[128]["monotone"]
    elapsed = time.perf_counter() - start
    ok = solve_ok and stable and affine and separated and elapsed < 900
    acceptance(8, ok, f"ratio {s['contraction']:.3g}, residual {s['residual']:.1e}, stepper "
                      f"{s['stepper_difference']:.1e} < {s['stepper_tolerance']:.1e}; threshold "
                      f"{th[128]:.1f} / {th[256]:.1f}, separated={separated}, fit R2 {fit.get('r2', math.nan):.3f}, {elapsed:.0f}s")
    assert ok


def test_determinism(acceptance, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(f"experiment: trace-forward\nseed: {SEED}\ncorpus: all\n")
    tables = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["run", str(cfg), "--out", str(out)]) == 0
        run = next(out.iterdir())
        tables.append({p.name: p.read_bytes() for p in sorted(run.glob("*.csv"))})
    ok = bool(tables[0]) and tables[0] == tables[1]
    acceptance(9, ok, f"{len(tables[0])} CSV files, bit-identical={tables[0] == tables[1]}")
    assert ok
