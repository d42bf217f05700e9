"""Bilinear Duhamel operator, its three-part splitting, and the Picard solver.

The model problem is ``u_t = Delta_N u - div(b u^2)`` with a fixed unit vector
``b``, solved in mild form

    u(t) = e^{t Delta_N} u0 - int_0^t e^{(t-s) Delta_N} div(b u(s)^2) ds,

on the graded time levels of the grid.  ``L = -Delta_N`` throughout, so
``e^{-tau L}`` is the forward heat flow ``e^{tau Delta_N}``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .grid import (
    GridSpec,
    ScalarField,
    SpaceTimeField,
    SpaceTimeVectorField,
    divergence_values,
    neumann_laplacian_values,
)
from .norms import ParabolicBallFamily, _family, path_norm
from .semigroup import (
    KERNEL_PATH,
    TimeInterpolant,
    build_extension,
    duhamel_nodes,
    duhamel_values,
    neumann_values,
    panel_nodes,
    semigroup_divergence_values,
    sigma_nodes,
)

VERDICTS = ("converged", "diverged", "max-iter")


class BlowUpError(FloatingPointError):
    """A Picard iterate stopped being finite."""


@dataclass(frozen=True)
class SolverConfig:
    """Parameters of one Picard solve.

    ``direction`` is the constant vector ``b`` in the nonlinearity
    ``div(b u^2)``; ``n_sigma`` is the number of singular-quadrature nodes per
    Duhamel integral under ``rule="uniform"`` (``2M`` when ``None``).
    """

    data_scale: float = 1.0
    max_iterations: int = 60
    convergence_tol: float = 1e-9
    direction: tuple[float, ...] = (1.0,)
    horizon: float = 1.0
    n_sigma: int | None = None
    rule: str = "aligned"
    path: str = KERNEL_PATH
    patience: int = 3

    def __post_init__(self):
        if not (self.convergence_tol > 0 and self.max_iterations > 0):
            raise ValueError("tolerances and iteration counts must be positive")
        if not math.isclose(float(np.linalg.norm(self.direction)), 1.0, rel_tol=1e-9):
            raise ValueError("direction must be a unit vector")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    def b(self, spec: GridSpec) -> np.ndarray:
        if len(self.direction) != spec.dimension:
            raise ValueError("direction does not match the grid dimension")
        return np.asarray(self.direction, dtype=float)


@dataclass
class SolverDiagnostics:
    """Per-iteration record of a Picard solve."""

    norms: list[float] = field(default_factory=list)
    increments: list[float] = field(default_factory=list)
    ratios: list[float] = field(default_factory=list)
    residual: float = math.nan
    verdict: str = "max-iter"

    @property
    def iterations(self) -> int:
        return len(self.increments)

    @property
    def contraction(self) -> float:
        """Median ratio of successive increments (``nan`` before two iterations)."""
        finite = [r for r in self.ratios if math.isfinite(r)]
        return float(np.median(finite)) if finite else math.nan

    def rows(self) -> list[dict]:
        out = []
        for k, (nrm, inc) in enumerate(zip(self.norms, self.increments)):
            out.append({"iteration": k + 1, "norm_eps": nrm, "increment": inc,
                        "ratio": self.ratios[k - 1] if k >= 1 else math.nan})
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["iterations"] = self.iterations
        d["contraction"] = self.contraction
        return d

    def to_json(self, **kwargs) -> str:
        kwargs.setdefault("indent", 2)
        return json.dumps(self.to_dict(), **kwargs)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["iteration", "norm_eps", "increment", "ratio"])
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


# ---------------------------------------------------------------------------
# bilinear operator and splitting

def _vector(alpha) -> tuple[np.ndarray, GridSpec]:
    if isinstance(alpha, SpaceTimeVectorField):
        return alpha.values, alpha.spec
    raise TypeError("expected a SpaceTimeVectorField")


def bilinear_A(alpha: SpaceTimeVectorField, alpha0=None, path: str = KERNEL_PATH,
               n_sigma: int | None = None, rule: str = "aligned") -> SpaceTimeField:
    """``A(alpha)(t) = int_0^t e^{(t-s) Delta_N} div alpha(s) ds`` on every level.

    ``alpha0`` is the value at ``s = 0`` (the first level is reused when
    omitted); ``alpha`` is linear between levels.
    """
    values, spec = _vector(alpha)
    a0 = alpha0.values if hasattr(alpha0, "values") else alpha0
    return SpaceTimeField(spec, duhamel_values(values, spec, a0, path, n_sigma, rule=rule))


def _forward_integral(interp: TimeInterpolant, spec: GridSpec, t: float, nodes, weights,
                      path: str) -> np.ndarray:
    """``sum_j w_j e^{(t + s_j) Delta_N} div alpha(s_j)``."""
    if len(nodes) == 0:
        return np.zeros(spec.shape)
    terms = semigroup_divergence_values(interp(nodes), spec, t + nodes, path)
    return np.tensordot(weights, terms, axes=(0, 0))


def split_A(alpha: SpaceTimeVectorField, alpha0=None, path: str = KERNEL_PATH,
            n_sigma: int | None = None, order: int = 4, rule: str = "aligned") -> dict:
    """``A = A1 + A2 + A3`` on every level.

    ``A2(t) = int_0^T e^{(t+s) Delta_N} div alpha(s) ds`` and
    ``A3(t) = -int_t^T e^{(t+s) Delta_N} div alpha(s) ds`` use Gauss-Legendre
    panels between time levels (``alpha`` vanishes past the horizon ``T``);
    ``A1(t) = int_0^t e^{(t-s) Delta_N} (I - e^{2s Delta_N}) div alpha(s) ds``,
    the part carried by ``L T(s^{1/2} alpha)``, shares the singular nodes of
    ``A`` so the difference is taken node by node.
    """
    values, spec = _vector(alpha)
    a0 = alpha0.values if hasattr(alpha0, "values") else alpha0
    interp = TimeInterpolant(values, spec.levels, a0)
    n_sigma = n_sigma or 2 * spec.n_levels
    knots = interp.knots
    A, A1, A2, A3 = [], [], [], []
    for t in spec.levels:
        s, lag, w = duhamel_nodes(t, knots, rule, n_sigma)
        a_s = interp(s)
        near = semigroup_divergence_values(a_s, spec, lag, path)
        far = semigroup_divergence_values(a_s, spec, t + s, path)
        A.append(np.tensordot(w, near, axes=(0, 0)))
        A1.append(np.tensordot(w, near - far, axes=(0, 0)))
        nodes, weights = panel_nodes(knots, order)
        A2.append(_forward_integral(interp, spec, t, nodes, weights, path))
        upper = knots[knots >= t * (1 - 1e-12)]
        nodes, weights = panel_nodes(upper, order) if len(upper) > 1 else ((), ())
        A3.append(-_forward_integral(interp, spec, t, np.asarray(nodes), np.asarray(weights), path))
    wrap = lambda arr: SpaceTimeField(spec, np.stack(arr))
    return {"A": wrap(A), "A1": wrap(A1), "A2": wrap(A2), "A3": wrap(A3)}


def operator_T(F: SpaceTimeVectorField, path: str = KERNEL_PATH, n_nu: int = 32) -> SpaceTimeField:
    """``T F(s) = (sL)^{-1} (I - e^{-2sL}) div F(s) = s^{-1} int_0^{2s} e^{mu Delta_N} div F(s) dmu``.

    Quadrature in ``mu = 2 s nu^2`` on midpoint ``nu`` nodes.
    """
    values, spec = _vector(F)
    nu, dnu = sigma_nodes(n_nu)
    out = []
    for k, s in enumerate(spec.levels):
        mu = 2 * s * nu ** 2
        w = 4 * s * nu * dnu / s
        stack = np.broadcast_to(values[k], (n_nu,) + values.shape[1:])
        out.append(np.tensordot(w, semigroup_divergence_values(stack, spec, mu, path), axes=(0, 0)))
    return SpaceTimeField(spec, np.stack(out))


def operator_R(F: SpaceTimeVectorField, path: str = KERNEL_PATH, order: int = 4) -> SpaceTimeField:
    """``R F(s) = int_s^T e^{(s + tau) Delta_N} tau^{-1/2} div F(tau) dtau``, truncated at the horizon."""
    values, spec = _vector(F)
    interp = TimeInterpolant(values, spec.levels)
    knots = interp.knots
    out = []
    for s in spec.levels:
        upper = knots[knots >= s * (1 - 1e-12)]
        if len(upper) < 2:
            out.append(np.zeros(spec.shape))
            continue
        nodes, weights = panel_nodes(upper, order)
        out.append(_forward_integral(interp, spec, s, nodes, weights / np.sqrt(nodes), path))
    return SpaceTimeField(spec, np.stack(out))


def maximal_regularity(F: SpaceTimeField, F0=None, n_sigma: int | None = None,
                       rule: str = "aligned") -> SpaceTimeField:
    """``(M F)(t) = int_0^t L e^{-(t-s) L} F(s) ds`` with ``L e^{-tau L} = -Delta_h e^{tau Delta_N}``.

    ``Delta_h`` is the finite-difference Neumann Laplacian.  The integrand is
    split as ``F(s) = (F(s) - F(t)) + F(t)``: the first part is integrated in
    ``s = t (1 - sigma^2)``, the second in closed form ``(I - e^{t Delta_N}) F(t)``.
    """
    spec = F.spec
    interp = TimeInterpolant(F.values, spec.levels, None if F0 is None else np.asarray(
        F0.values if hasattr(F0, "values") else F0))
    n_sigma = n_sigma or 2 * spec.n_levels
    out = []
    for k, t in enumerate(spec.levels):
        s, lag, w = duhamel_nodes(t, interp.knots, rule, n_sigma)
        diff = interp(s) - F.values[k]
        flow = neumann_values(diff, spec, lag)
        body = -np.tensordot(w, neumann_laplacian_values(flow, spec), axes=(0, 0))
        out.append(body + F.values[k] - neumann_values(F.values[k], spec, t))
    return SpaceTimeField(spec, np.stack(out))


# ---------------------------------------------------------------------------
# fixed-point map

def nonlinearity(u: SpaceTimeField, b) -> SpaceTimeVectorField:
    """``alpha = b u^2`` (pointwise square of the scalar iterate)."""
    return SpaceTimeVectorField.along(b, u * u)


def theta(u: SpaceTimeField, u0: ScalarField, config: SolverConfig | None = None,
          free: SpaceTimeField | None = None) -> SpaceTimeField:
    """``Theta(u) = e^{t Delta_N} u0 - A(b u^2)``; ``free`` may carry a precomputed first term."""
    config = config or SolverConfig(direction=(1.0,) + (0.0,) * (u.spec.dimension - 1))
    b = config.b(u.spec)
    if free is None:
        free = build_extension(u0)
    alpha0 = b.reshape((-1,) + (1,) * u.spec.dimension) * u0.values ** 2
    duh = bilinear_A(nonlinearity(u, b), alpha0, config.path, config.n_sigma, config.rule)
    return free - duh


def residual(u: SpaceTimeField, u0: ScalarField, config: SolverConfig | None = None,
             balls: ParabolicBallFamily | None = None) -> float:
    """``||u - Theta(u)||_eps``."""
    return path_norm(u - theta(u, u0, config), balls)


def contraction_factor(u: SpaceTimeField, v: SpaceTimeField, u0: ScalarField,
                       config: SolverConfig | None = None,
                       balls: ParabolicBallFamily | None = None) -> float:
    """``||Theta(u) - Theta(v)||_eps / ||u - v||_eps`` (``nan`` when ``u = v``)."""
    den = path_norm(u - v, balls)
    if den == 0:
        return math.nan
    free = build_extension(u0)
    num = path_norm(theta(u, u0, config, free) - theta(v, u0, config, free), balls)
    return num / den


def _default_config(spec: GridSpec, config: SolverConfig | None) -> SolverConfig:
    if config is None:
        return SolverConfig(direction=(1.0,) + (0.0,) * (spec.dimension - 1))
    return config


def picard_solve(u0: ScalarField, config: SolverConfig | None = None,
                 balls: ParabolicBallFamily | None = None):
    """Iterate ``u_{k+1} = Theta(u_k)`` from the free evolution of ``data_scale * u0``.

    Stops when the ``eps``-norm increment drops below ``convergence_tol``
    (``"converged"``), after ``patience`` consecutive growing increments
    (``"diverged"``) or at ``max_iterations`` (``"max-iter"``).  Raises
    :class:`BlowUpError` on a non-finite iterate.
    """
    spec = u0.spec
    config = _default_config(spec, config)
    balls = _family(spec, balls)
    data = u0 * config.data_scale
    free = build_extension(data)
    u = free
    diag = SolverDiagnostics()
    growth = 0
    for _ in range(config.max_iterations):
        new = _guarded_theta(u, data, config, free)
        # a huge but finite iterate may overflow when squared inside the norm
        with np.errstate(over="ignore", invalid="ignore"):
            inc = path_norm(new - u, balls)
            diag.norms.append(path_norm(new, balls))
        if diag.increments:
            prev = diag.increments[-1]
            diag.ratios.append(inc / prev if prev > 0 else math.nan)
            growth = growth + 1 if inc > prev else 0
        diag.increments.append(inc)
        u = new
        if inc < config.convergence_tol:
            diag.verdict = "converged"
            break
        if growth >= config.patience:
            diag.verdict = "diverged"
            break
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            diag.residual = path_norm(u - _guarded_theta(u, data, config, free), balls)
    except BlowUpError:
        diag.residual = math.inf
    return u, diag


def _guarded_theta(u, data, config, free) -> SpaceTimeField:
    """``theta`` with overflow turned into :class:`BlowUpError`."""
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            new = theta(u, data, config, free)
    except ValueError as exc:
        if "finite" in str(exc):
            raise BlowUpError("blow-up detected") from exc
        raise
    if not np.all(np.isfinite(new.values)):
        raise BlowUpError("blow-up detected")
    return new


# ---------------------------------------------------------------------------
# independent oracle

def explicit_stepper(u0: ScalarField, b, cfl: float = 0.2) -> SpaceTimeField:
    """Forward-Euler finite differences for ``u_t = Delta_h u - div_h(b u^2)``.

    Uses the finite-difference Neumann Laplacian and the per-half-space
    divergence; steps of at most ``cfl * h^2`` land exactly on every level.
    """
    spec = u0.spec
    b = np.asarray(b, dtype=float).reshape((-1,) + (1,) * spec.dimension)
    dt_max = cfl * spec.h ** 2
    u = np.array(u0.values, dtype=float)
    t = 0.0
    out = []
    for level in spec.levels:
        steps = max(1, int(math.ceil((level - t) / dt_max - 1e-12)))
        dt = (level - t) / steps
        for _ in range(steps):
            u = u + dt * (neumann_laplacian_values(u, spec) - divergence_values(b * u * u, spec))
            if not np.all(np.isfinite(u)):
                raise BlowUpError("blow-up detected")
        t = level
        out.append(u.copy())
    return SpaceTimeField(spec, np.stack(out))


def stepper_time_step(spec: GridSpec, cfl: float = 0.2) -> float:
    """Largest step actually used by :func:`explicit_stepper` on ``spec``."""
    t, dt_max, worst = 0.0, cfl * spec.h ** 2, 0.0
    for level in spec.levels:
        steps = max(1, int(math.ceil((level - t) / dt_max - 1e-12)))
        worst = max(worst, (level - t) / steps)
        t = level
    return worst


# ---------------------------------------------------------------------------
# sweeps

def _attempt(u0: ScalarField, config: SolverConfig, balls) -> tuple[bool, SolverDiagnostics | None]:
    try:
        _, diag = picard_solve(u0, config, balls)
    except BlowUpError:
        return False, None
    return diag.verdict == "converged", diag


def smallness_sweep(u0: ScalarField, scales, config: SolverConfig | None = None,
                    balls: ParabolicBallFamily | None = None, bisection_steps: int = 6) -> dict:
    """Picard behaviour over a range of data scales and the empirical threshold.

    Returns per-scale rows (contraction ratio, iterations, verdict) and the
    threshold between the largest converging and the smallest failing scale,
    refined by bisection.  ``threshold`` is ``nan`` when every scale converges.
    """
    spec = u0.spec
    config = _default_config(spec, config)
    balls = _family(spec, balls)
    rows = []
    last_ok, first_bad = None, None
    for s in sorted(scales):
        ok, diag = _attempt(u0, replace(config, data_scale=float(s)), balls)
        rows.append({
            "data_scale": float(s),
            "contraction": diag.contraction if diag else math.nan,
            "iterations": diag.iterations if diag else 0,
            "residual": diag.residual if diag else math.nan,
            "verdict": diag.verdict if diag else "diverged",
        })
        if ok and first_bad is None:
            last_ok = float(s)
        elif not ok and first_bad is None:
            first_bad = float(s)
    threshold = math.nan
    if first_bad is not None:
        lo = last_ok if last_ok is not None else 0.0
        hi = first_bad
        for _ in range(bisection_steps):
            mid = 0.5 * (lo + hi)
            ok, _ = _attempt(u0, replace(config, data_scale=mid), balls)
            lo, hi = (mid, hi) if ok else (lo, mid)
        threshold = 0.5 * (lo + hi)
    return {"rows": rows, "threshold": threshold}


def affine_fit(x, y) -> dict:
    """Least-squares line ``y = a + c x`` with its coefficient of determination."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    c, a = np.polyfit(x, y, 1)
    pred = a + c * x
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return {"intercept": float(a), "slope": float(c),
            "r2": 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0}


def horizon_doubling(u0: ScalarField, config: SolverConfig | None = None) -> dict:
    """Solve up to ``T`` and up to about ``2T`` and compare on the shared levels.

    The longer run continues the same grading, ``T (k/M)^2`` for
    ``k <= ceil(sqrt(2) M)``, so its first ``M`` levels coincide.
    """
    spec = u0.spec
    config = _default_config(spec, config)
    M = spec.n_levels
    K = int(math.ceil(math.sqrt(2.0) * M))
    long_spec = spec.with_levels(tuple(spec.horizon * (np.arange(1, K + 1) / M) ** 2))
    u_short, d_short = picard_solve(u0, config)
    u_long, d_long = picard_solve(ScalarField(long_spec, u0.values), config)
    diff = np.abs(u_long.values[:M] - u_short.values).max()
    return {"verdict_T": d_short.verdict, "verdict_2T": d_long.verdict,
            "contraction_T": d_short.contraction, "contraction_2T": d_long.contraction,
            "max_difference": float(diff)}
