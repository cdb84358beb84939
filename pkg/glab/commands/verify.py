"""The invariant suite: every enabled analysis section, aggregated into one report.

Sections run in a fixed order and share one simulated scenario family and one
cascade of the configured problem, so reruns with the same seed reproduce the
report byte for byte.
"""

import logging
import math
from functools import cached_property
from pathlib import Path

import numpy as np

from glab.commands.common import family_of, new_report, partition_of, problem_of
from glab.commands.solve import cascade_section, paths_section
from glab.models import SpaceGrid, TerminalSpec, TimePartition, VolatilityBand
from glab.schemas import ExperimentConfig, RunReport
from glab.services import gcore, gpde
from glab.services.analysis import (
    StabilityRun,
    apriori_report,
    bmo_norm,
    compare_apriori,
    decreasing_martingale_under_tilt,
    doleans_exponential,
    girsanov_shift,
    grid_eval_times,
    linearization_coefficients,
    stability_gap,
    stability_sweep,
    tilted_mean_stderr,
)
from glab.services.cascade import build_solution_paths, residual_refinement, solve_cascade
from glab.services.presets import build_generator, build_terminal
from glab.services.scenarios import (
    ScenarioFamily,
    UpperExpectation,
    ito_integral,
    qv_band_violations,
    qv_integral,
    simulate_bundle,
    simulate_family,
    upper_expectation,
    upper_expectation_of,
)

logger = logging.getLogger(__name__)

# residuals of exactly solvable drivers sit at rounding level
RESIDUAL_FLOOR = 1e-9


class Workspace:
    """Lazily built objects shared across sections."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.partition = partition_of(config)
        self.f, self.phi = problem_of(config)

    @cached_property
    def family(self) -> ScenarioFamily:
        return family_of(self.config)

    @cached_property
    def bundles(self):
        return simulate_family(self.family)

    @cached_property
    def cascade(self):
        return solve_cascade(self.f, self.phi, self.partition, self.config.band, self.config.grid)

    @cached_property
    def paths(self):
        return build_solution_paths(self.cascade, self.bundles)

    def constant_driver(self, c: float = 0.3, n_intervals: int = 2):
        partition = TimePartition.uniform(self.config.horizon, n_intervals)
        f = build_generator("constant", n_intervals, {"c": c})
        phi = build_terminal("zero", n_intervals)
        cas = solve_cascade(f, phi, partition, self.config.band, self.config.grid)
        return cas, build_solution_paths(cas, self.bundles)

    @cached_property
    def constant_case(self):
        return self.constant_driver()


def mc_close(est: float, expected: float, stderr: float, sigmas: float, floor: float = 0.0) -> bool:
    return abs(est - expected) <= sigmas * stderr + floor


# ── Deterministic sections ──────────────────────────────


def check_g_function(report: RunReport, ws: Workspace) -> None:
    band = ws.config.band
    sec = report.section("g_function")
    rng = np.random.default_rng(ws.config.seed)
    a, b = rng.normal(scale=3.0, size=(2, 10_000))
    lam = rng.uniform(0.0, 5.0, size=10_000)
    G = lambda v: gcore.g_function(v, band)  # noqa: E731
    sec.record(G_plus_one=G(1.0), G_minus_one=G(-1.0))
    sec.check("G(1) = var_hi/2", abs(G(1.0) - 0.5 * band.var_hi) <= 1e-15)
    sec.check("G(-1) = -var_lo/2", abs(G(-1.0) + 0.5 * band.var_lo) <= 1e-15)
    sec.check("subadditive", bool(np.all(G(a + b) <= G(a) + G(b) + 1e-12)))
    sec.check("positively homogeneous", np.allclose(G(lam * a), lam * G(a), rtol=1e-12, atol=1e-12))
    sec.check("monotone", bool(np.all(G(np.maximum(a, b)) >= G(np.minimum(a, b)))))
    sec.check("dominated by var_hi/2 |a - b|", bool(np.all(np.abs(G(a) - G(b)) <= 0.5 * band.var_hi * np.abs(a - b) + 1e-12)))


def check_ledger(report: RunReport, ws: Workspace) -> None:
    tol = ws.config.tolerances.ledger
    band = VolatilityBand(sigma_lo=0.5, sigma_hi=1.0)
    sec = report.section("ledger")
    sec.tolerance(ledger=tol)
    single = gcore.derivative_bound_ledger(1.0, 0.0, 1.0, band, TimePartition.uniform(1.0, 1))
    double = gcore.derivative_bound_ledger(1.0, 1.0, 1.0, band, TimePartition.uniform(1.0, 2))
    expected = {
        "single": (single.bounds[0], math.e),
        "L2": (double.bounds[1], 2 * math.exp(0.5) - 1),
        "L1": (double.bounds[0], 2 * math.exp(0.5) * math.exp(0.5) - 1),
    }
    sec.record(**{k: v for k, (v, _) in expected.items()})
    for name, (got, want) in expected.items():
        sec.check(f"{name} matches the hand value", abs(got - want) <= tol, f"{got!r} vs {want!r}")


def check_gheat(report: RunReport, ws: Workspace) -> None:
    cfg, tol = ws.config, ws.config.tolerances
    band, T = cfg.band, cfg.horizon
    grid = SpaceGrid.symmetric(cfg.grid.width_multiplier * band.sigma_hi * math.sqrt(T), cfg.analysis.gheat_nodes)
    sec = report.section("gheat")
    sec.given(nodes=grid.m, half_width=grid.x_max)
    sec.tolerance(gheat=tol.gheat, classical=tol.classical)

    for preset, expected in (("quad-convex", band.var_hi * T), ("quad-concave", -band.var_lo * T)):
        sol = gpde.solve_g_heat(build_terminal(preset, 1), band, T, grid, safety=cfg.grid.dt_safety, store_steps=1)
        got = sol.value(T, 0.0)
        sec.record(**{f"{preset}_u_T0": got})
        sec.check(f"{preset}: u(T, 0) closed form", abs(got - expected) <= tol.gheat, f"{got:.6g} vs {expected:.6g}")

    flat = VolatilityBand(sigma_lo=band.sigma_hi, sigma_hi=band.sigma_hi)
    sol = gpde.solve_g_heat(build_terminal("exp-clamped", 1), flat, T, grid, safety=cfg.grid.dt_safety, store_steps=1)
    expected = math.exp(0.5 * flat.var_hi * T)
    got = sol.value(T, 0.0)
    sec.record(classical_u_T0=got)
    sec.check("degenerate band: u(T, 0) = exp(var T / 2)", abs(got - expected) <= tol.classical)

    alpha = 0.5
    partition = TimePartition.uniform(T, 1)
    cas = solve_cascade(
        build_generator("linear-y", 1, {"alpha": alpha}),
        build_terminal("constant", 1, {"value": 1.0}),
        partition,
        band,
        cfg.grid,
    )
    expected = math.exp(alpha * band.var_hi * T)
    sec.record(linear_y0=cas.y0, linear_expected=expected)
    sec.check("linear generator matches the ODE solution", abs(cas.y0 - expected) <= tol.classical * expected)


def check_cascade(report: RunReport, ws: Workspace) -> None:
    cfg, tol = ws.config, ws.config.tolerances
    band, T, c = cfg.band, cfg.horizon, 0.3
    cascade_section(report.section("cascade"), ws.cascade, cfg)
    paths_section(report.section("paths"), ws.paths, cfg, 10 * ws.cascade.grid.dx)

    cas, paths = ws.constant_case
    sec = report.section("cascade_constant_driver")
    sec.tolerance(y0=tol.cascade_y0, k_extreme=tol.k_extreme, martingale=tol.martingale)
    sec.record(y0=cas.y0, expected_y0=band.var_hi * c * T)
    sec.check("Y0 = var_hi c T", abs(cas.y0 - band.var_hi * c * T) <= tol.cascade_y0)
    sec.check("K nonincreasing", paths.k_monotonicity_violation() <= tol.k_monotone)
    k_T = {b.label: float(np.mean(b.K[:, -1])) for b in paths.blocks}
    expected_lo = c * (band.var_lo - band.var_hi) * T
    sec.record(k_T_constant_lo=k_T["constant-lo"], expected_k_T_constant_lo=expected_lo)
    sec.check("K_T at constant-lo", abs(k_T["constant-lo"] - expected_lo) <= tol.k_extreme)
    sup_k = upper_expectation_of([(b.bundle, b.K[:, -1]) for b in paths.blocks])
    sec.record(upper_k_T=sup_k.estimate, upper_k_T_argmax=sup_k.argmax)
    sec.check("K is a G-martingale: sup of E[K_T] = 0", abs(sup_k.estimate) <= tol.martingale)


# ── Monte-Carlo sections ────────────────────────────────


def terminal_samples(family: ScenarioFamily, batch: int = 4096) -> dict[str, np.ndarray]:
    out = {}
    for m in family.members:
        chunks = [
            simulate_bundle(m, family.dt, family.horizon, range(s, min(s + batch, m.n_paths))).B[:, -1]
            for s in range(0, m.n_paths, batch)
        ]
        out[m.label] = np.concatenate(chunks)
    return out


def check_upper_expectation(report: RunReport, ws: Workspace) -> None:
    cfg, tol = ws.config, ws.config.tolerances
    band, T, k = cfg.band, cfg.horizon, tol.mc_sigmas
    family = family_of(cfg, dt=cfg.analysis.oracle_dt, paths_per_control=cfg.analysis.oracle_paths, seed_offset=1)
    sec = report.section("upper_expectation")
    sec.given(paths_per_control=cfg.analysis.oracle_paths, dt=cfg.analysis.oracle_dt, controls=len(family.members))
    sec.tolerance(mc_sigmas=k, gheat=tol.gheat)

    square = upper_expectation(lambda b: b.B[:, -1] ** 2, family)
    b_T = terminal_samples(family)
    neg_square = UpperExpectation.from_samples({lbl: -(v**2) for lbl, v in b_T.items()})
    linear = UpperExpectation.from_samples(b_T)
    sec.record(
        square=square.estimate,
        square_argmax=square.argmax,
        neg_square=neg_square.estimate,
        neg_square_argmax=neg_square.argmax,
        linear_means=linear.means,
    )
    sec.check("E[B_T^2] = var_hi T", mc_close(square.estimate, band.var_hi * T, square.stderr, k))
    sec.check("E[B_T^2] attained at constant-hi", square.argmax == "constant-hi")
    sec.check("E[-B_T^2] = -var_lo T", mc_close(neg_square.estimate, -band.var_lo * T, neg_square.stderr, k))
    sec.check("E[-B_T^2] attained at constant-lo", neg_square.argmax == "constant-lo")
    sec.check(
        "B_T centred under every control",
        all(mc_close(linear.means[lbl], 0.0, linear.stderrs[lbl], k + 1.0) for lbl in linear.means),
    )

    grid = cfg.grid.space_grid(band, T)
    pde = gpde.conditional_g_expectation(
        build_terminal("quad-convex", 1), TimePartition.uniform(T, 1), 0, band, grid, safety=cfg.grid.dt_safety
    ).value
    sec.record(pde_square=pde)
    sec.check("Monte-Carlo agrees with the PDE value", mc_close(square.estimate, pde, square.stderr, k, tol.gheat))

    rng = np.random.default_rng(cfg.seed)
    shift, scale = rng.uniform(-1, 1), rng.uniform(0.5, 2.0)
    xi = {lbl: np.sin(v) for lbl, v in b_T.items()}
    eta = {lbl: np.cos(3 * v) for lbl, v in b_T.items()}
    e_xi = UpperExpectation.from_samples(xi).estimate
    e_eta = UpperExpectation.from_samples(eta).estimate
    e_sum = UpperExpectation.from_samples({lbl: xi[lbl] + eta[lbl] for lbl in xi}).estimate
    e_const = UpperExpectation.from_samples({lbl: np.full_like(v, shift) for lbl, v in b_T.items()}).estimate
    e_scaled = UpperExpectation.from_samples({lbl: scale * v for lbl, v in xi.items()}).estimate
    sec.check("subadditive", e_sum <= e_xi + e_eta + 1e-12)
    sec.check("constant preserving", abs(e_const - shift) <= 1e-12)
    sec.check("positively homogeneous", abs(e_scaled - scale * e_xi) <= 1e-12 * max(1.0, abs(e_xi)))
    e_abs = UpperExpectation.from_samples({lbl: np.abs(v) for lbl, v in b_T.items()}).estimate
    e_sqrt = UpperExpectation.from_samples({lbl: np.sqrt(np.abs(v)) for lbl, v in b_T.items()}).estimate
    sec.check("concave modulus: E[w(xi)] <= w(E[xi])", e_sqrt <= math.sqrt(e_abs) + 1e-12)


def check_qv_band(report: RunReport, ws: Workspace) -> None:
    sec = report.section("qv_band")
    violations = sum(qv_band_violations(b, ws.config.band) for b in ws.bundles)
    sec.record(violations=violations)
    sec.check("quadratic variation increments inside the band", violations == 0)


def check_integrals(report: RunReport, ws: Workspace) -> None:
    k = ws.config.tolerances.mc_sigmas
    sec = report.section("integrals")
    isometry, centred, linear = True, True, True
    for b in ws.bundles:
        eta = np.sin(b.B)
        theta = np.cos(b.B)
        I = ito_integral(eta, b)[:, -1]
        Q = qv_integral(eta**2, b)[:, -1]
        diff = I**2 - Q
        isometry &= mc_close(float(np.mean(diff)), 0.0, float(np.std(diff, ddof=1) / math.sqrt(len(b))), k + 1.0)
        centred &= mc_close(float(np.mean(I)), 0.0, float(np.std(I, ddof=1) / math.sqrt(len(b))), k + 1.0)
        lhs = ito_integral(2.5 * eta + theta, b)
        rhs = 2.5 * ito_integral(eta, b) + ito_integral(theta, b)
        linear &= bool(np.allclose(lhs, rhs, rtol=1e-12, atol=1e-12))
    sec.tolerance(mc_sigmas=k + 1.0)
    sec.check("Ito isometry per control", isometry)
    sec.check("Ito integral centred per control", centred)
    sec.check("integral linear pathwise", linear)


def check_residual(report: RunReport, ws: Workspace) -> None:
    cfg, ac = ws.config, ws.config.analysis
    family = family_of(cfg, dt=ac.residual_dt, paths_per_control=ac.residual_paths, seed_offset=2)
    study = residual_refinement(ws.cascade, simulate_family(family), ac.residual_factors)
    sec = report.section("residual")
    sec.given(dts=study.dts, paths_per_control=ac.residual_paths, scenarios=study.scenarios)
    sec.record(max_residuals=study.max_residuals, mean_residuals=study.mean_residuals)
    sec.tolerance(residual=cfg.tolerances.residual)
    sec.check("max residual nonincreasing under refinement", study.nonincreasing(RESIDUAL_FLOOR))
    sec.check("finest residual within tolerance", study.max_residuals[-1] <= cfg.tolerances.residual)


def check_bmo(report: RunReport, ws: Workspace) -> None:
    cfg, ac = ws.config, ws.config.analysis
    times = grid_eval_times(ws.bundles[0].times, ac.bmo_times)
    sec = report.section("bmo")
    unit = bmo_norm(1.0, ws.bundles, times, n_buckets=ac.bmo_buckets)
    expected = cfg.band.var_hi * cfg.horizon
    sec.tolerance(relative=cfg.tolerances.bmo_relative)
    sec.record(unit_z=unit.value, unit_z_expected=expected, unit_z_argmax=list(unit.argmax))
    sec.check("constant Z = 1 gives var_hi T", abs(unit.value - expected) <= cfg.tolerances.bmo_relative * expected)
    cas_bmo = bmo_norm([b.Z for b in ws.paths.blocks], ws.paths.bundles, times, n_buckets=ac.bmo_buckets)
    sec.record(cascade_z=cas_bmo.value, cascade_z_argmax=list(cas_bmo.argmax), small_buckets=cas_bmo.small_buckets)
    if cas_bmo.small_buckets:
        sec.warn(f"{cas_bmo.small_buckets} conditional buckets hold fewer than 20 paths")
    sec.notes.append(unit.note)


def check_girsanov(report: RunReport, ws: Workspace) -> None:
    k = ws.config.tolerances.mc_sigmas
    sec = report.section("girsanov")
    means, qv_equal, centred, excluded = {}, True, True, 0
    samples = []
    for b in ws.bundles:
        dol = doleans_exponential(1.0, b)
        excluded += dol.excluded
        e_T = dol.terminal
        ok = np.isfinite(e_T)
        means[b.label] = float(np.mean(e_T[ok]))
        se = float(np.std(e_T[ok], ddof=1) / math.sqrt(ok.sum()))
        centred &= mc_close(means[b.label], 1.0, se, k)
        samples.append((b, e_T - 1.0))
        shifted = girsanov_shift(b, 1.0)
        qv_equal &= bool(np.array_equal(shifted.qv, b.qv))
        m, m_se = tilted_mean_stderr(shifted.B[:, -1], e_T)
        centred &= mc_close(m, 0.0, m_se, k + 1.0)
    up = upper_expectation_of(samples)
    down = upper_expectation_of([(b, -v) for b, v in samples])
    sec.record(doleans_means=means, upper_minus_one=up.estimate, upper_one_minus=down.estimate, excluded=excluded)
    sec.tolerance(mc_sigmas=k)
    sec.check("shift preserves quadratic variation exactly", qv_equal)
    sec.check("E(Z)_T mean 1 and tilted B_T centred per control", centred)
    sec.check(
        "E(Z) is a symmetric G-martingale",
        mc_close(up.estimate, 0.0, up.stderr, k + 1.0) and mc_close(down.estimate, 0.0, down.stderr, k + 1.0),
    )


def check_tilt(report: RunReport, ws: Workspace) -> None:
    eps = ws.config.tolerances.martingale
    sec = report.section("tilt")
    sec.tolerance(martingale=eps)
    _, const_paths = ws.constant_case
    const = decreasing_martingale_under_tilt(const_paths)
    sec.record(constant_driver=const.estimate, constant_driver_argmax=const.argmax)
    sec.check("constant driver: tilted sup of K_T = 0", const.passed(eps))
    tilt = decreasing_martingale_under_tilt(ws.paths)
    sec.record(configured=tilt.estimate, configured_argmax=tilt.argmax, weighted_means=tilt.weighted_means)
    sec.check("K_T <= 0 on every path", tilt.max_terminal_K <= eps)
    if tilt.estimate < -eps:
        sec.notes.append("the finite control family does not attain the tilted supremum for this driver")
    plain = decreasing_martingale_under_tilt(const_paths, tilt=0.0)
    sec.check("zero tilt reduces to the plain G-martingale check", plain.passed(eps))


def check_linearization(report: RunReport, ws: Workspace) -> None:
    cfg = ws.config
    eps = cfg.analysis.linearization_eps
    sec = report.section("linearization")
    sec.given(eps=eps)
    shifted = solve_cascade(ws.f, gcore.shifted_terminal(ws.phi, 0.1), ws.partition, cfg.band, cfg.grid)
    other = build_solution_paths(shifted, ws.bundles)
    lin = linearization_coefficients(ws.paths, other, ws.f, eps, ws.f)
    sec.record(violations=lin.violations, worst_ratios=lin.worst_ratios)
    sec.check("coefficient bounds hold pointwise", lin.bounds_hold)

    alpha, n = 0.5, ws.partition.n_intervals
    f_lin = build_generator("linear-y", n, {"alpha": alpha})
    runs = []
    for value in (0.0, 1.0):
        cas = solve_cascade(f_lin, build_terminal("constant", n, {"value": value}), ws.partition, cfg.band, cfg.grid)
        runs.append(build_solution_paths(cas, ws.bundles))
    lin = linearization_coefficients(runs[1], runs[0], f_lin, eps)
    far = [np.abs(b1.Y - b0.Y) > 2 * eps for b1, b0 in zip(runs[1].blocks, runs[0].blocks)]
    err = max(float(np.max(np.abs(a[m] - alpha), initial=0.0)) for a, m in zip(lin.a_hat, far))
    sec.record(linear_a_error=err)
    sec.check("a-hat equals the y-slope of a linear generator", err <= 1e-9)


def check_stability(report: RunReport, ws: Workspace) -> None:
    cfg, tol = ws.config, ws.config.tolerances
    deltas = cfg.analysis.stability_deltas
    for kind in ("terminal", "generator"):
        sweep = stability_sweep(
            ws.f, ws.phi, ws.partition, cfg.band, cfg.grid, ws.bundles, deltas, kind, cfg.analysis.linearization_eps
        )
        sec = report.section(f"stability_{kind}")
        sec.given(deltas=deltas)
        sec.record(
            sup_y_gaps=[r.sup_y_gap for r in sweep.reports],
            z_gaps=[r.z_gap for r in sweep.reports],
            ceilings=[r.ceiling for r in sweep.reports],
            ratios=[r.ratio for r in sweep.reports],
        )
        sec.tolerance(stability=tol.stability)
        sec.check("sup-Y gap monotone in the perturbation", sweep.y_monotone())
        sec.check("Z gap monotone in the perturbation", sweep.z_monotone())
        sec.check("sup-Y gap decays at least proportionally", sweep.proportional())
        sec.check("sup-Y gap within the explicit ceiling", sweep.within_ceiling(tol.stability))

    cas, paths = ws.constant_case
    delta = deltas[0]
    c = 0.3
    n = cas.n_intervals
    bumped = solve_cascade(
        gcore.shifted_generator(build_generator("constant", n, {"c": c}), delta),
        cas.terminal,
        cas.partition,
        cfg.band,
        cfg.grid,
    )
    gap = stability_gap(StabilityRun(cas, paths), StabilityRun(bumped, build_solution_paths(bumped, ws.bundles)))
    expected = cfg.band.var_hi * delta * cfg.horizon
    sec = report.section("stability_closed_form")
    sec.record(sup_y_gap=gap.sup_y_gap, expected=expected)
    sec.check("constant-driver shift moves Y by var_hi delta T", abs(gap.sup_y_gap - expected) <= tol.cascade_y0)


def check_tower(report: RunReport, ws: Workspace) -> None:
    cfg, tol = ws.config, ws.config.tolerances
    band, T = cfg.band, cfg.horizon
    partition = TimePartition.uniform(T, 2)
    grid = cfg.grid.space_grid(band, T)
    sec = report.section("tower")
    sec.tolerance(gheat=tol.gheat)
    for preset in ("product", cfg.terminal.preset):
        phi = build_terminal(preset, 2, cfg.terminal.params if preset == cfg.terminal.preset else None)
        kw = dict(param_nodes=cfg.grid.param_nodes, safety=cfg.grid.dt_safety)
        direct = gpde.conditional_g_expectation(phi, partition, 0, band, grid, **kw).value
        inner = gpde.conditional_g_expectation(phi, partition, 1, band, grid, **kw)
        outer_phi = TerminalSpec(phi=inner, n_vars=1, bound=phi.bound, lipschitz=phi.lipschitz, name=f"E1[{phi.name}]")
        first = TimePartition(times=(0.0, partition.times[1]))
        tower = gpde.conditional_g_expectation(outer_phi, first, 0, band, grid, **kw).value
        sec.record(**{f"{preset}_direct": direct, f"{preset}_tower": tower})
        sec.check(f"{preset}: E[E_t1[phi]] = E[phi]", abs(direct - tower) <= tol.gheat)


def check_apriori(report: RunReport, ws: Workspace) -> None:
    cfg, tol, ac = ws.config, ws.config.tolerances, ws.config.analysis
    sec = report.section("apriori")
    ap = apriori_report(ws.paths, ac.k_moments, ws.phi.is_bounded, ac.bmo_times, ac.bmo_buckets)
    doubled = family_of(cfg, paths_per_control=2 * cfg.scenarios.paths_per_control, seed_offset=3)
    ref = apriori_report(
        build_solution_paths(ws.cascade, doubled), ac.k_moments, ws.phi.is_bounded, ac.bmo_times, ac.bmo_buckets
    )
    agreement = compare_apriori(ap, ref, tol.mc_sigmas, rel=0.1)
    sec.record(
        sup_abs_y=ap.sup_y,
        bmo=ap.bmo.value,
        k_moments={f"{p:g}": m.estimate for p, m in ap.k_moments.items()},
        doubled_sup_abs_y=ref.sup_y,
        doubled_bmo=ref.bmo.value,
        agreement=agreement,
    )
    sec.notes.append(ap.bmo.note)
    sec.check("a priori quantities finite", ap.finite)
    if ws.phi.is_bounded:
        sec.check("stable under doubling the path count", all(agreement.values()))
    else:
        sec.warn(f"terminal {ws.phi.name} is unbounded; doubling comparison skipped for sup|Y|")

    _, paths = ws.constant_case
    c, band, T = 0.3, cfg.band, cfg.horizon
    const = apriori_report(paths, [1.0], True, ac.bmo_times, ac.bmo_buckets)
    expected_k = c * (band.var_hi - band.var_lo) * T
    sec.record(constant_sup_abs_y=const.sup_y, constant_k1=const.k_moments[1.0].estimate)
    sec.check("constant driver: sup|Y| = var_hi c T", abs(const.sup_y - band.var_hi * c * T) <= tol.cascade_y0)
    sec.check("constant driver: E|K_T| = c (var_hi - var_lo) T", abs(const.k_moments[1.0].estimate - expected_k) <= tol.k_extreme)


SECTIONS = (
    ("g_function", check_g_function),
    ("ledger", check_ledger),
    ("gheat", check_gheat),
    ("upper_expectation", check_upper_expectation),
    ("qv_band", check_qv_band),
    ("integrals", check_integrals),
    ("cascade", check_cascade),
    ("residual", check_residual),
    ("bmo", check_bmo),
    ("girsanov", check_girsanov),
    ("tilt", check_tilt),
    ("linearization", check_linearization),
    ("stability", check_stability),
    ("tower", check_tower),
    ("apriori", check_apriori),
)


def run(config: ExperimentConfig, out_dir: Path | None = None) -> RunReport:
    report = new_report("verify", config)
    ws = Workspace(config)
    for toggle, check in SECTIONS:
        if getattr(config.analysis, toggle):
            logger.info("verify: %s", toggle)
            check(report, ws)
    return report
