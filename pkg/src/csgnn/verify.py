"""Property-suite runner backing the `verify` CLI command.

Each suite draws its own randomness from one seed, reports a worst-case slack,
and is either asserted (affects the exit code) or informational. The
`fault_adjacency_step_scale` override multiplies the contraction suite's step
size past its bound, for fault-injection tests of the harness itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dynamics, equivariant, graph, network, training
from .dynamics import LayerParams, Parameterization
from .equivariant import AdjacencyStepConfig, EquivariantCoeffs
from .graph import Graph, PerturbationBudget
from .network import CoupledLayer, NetworkParams

PASS = "PASS"
FAIL = "FAIL"
REPORT = "REPORT"


@dataclass
class CheckResult:
    check_id: str
    status: str
    trials: int
    worst: float
    note: str = ""

    @property
    def asserted(self) -> bool:
        return self.status != REPORT


def _scaled(n: int, scale: float) -> int:
    return max(10, int(round(n * scale)))


def _random_coeffs(rng, alpha_shift: float = 0.0) -> EquivariantCoeffs:
    return EquivariantCoeffs(k=rng.standard_normal(8),
                             alpha=-abs(rng.standard_normal()) - alpha_shift)


def _margin_coeffs(rng, slope: float) -> EquivariantCoeffs:
    """Coefficients inside the slope-uniform nonexpansiveness regime."""
    alpha = -abs(rng.standard_normal()) - 0.5
    cap = slope * (-alpha) / (1.0 - slope) if slope < 1.0 else np.inf
    k = rng.standard_normal(8)
    k *= (0.2 + 0.7 * rng.random()) * min(cap, 10.0) / np.abs(k).sum()
    return EquivariantCoeffs(k=k, alpha=alpha)


def _sym_binary(rng, n: int, p: float = 0.4) -> np.ndarray:
    upper = np.triu(rng.random((n, n)) < p, k=1)
    return (upper | upper.T).astype(float)


# --- individual suites ---------------------------------------------------------

def check_metric_l0_l1_binary(rng, trials: int) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(1, 11))
        a = (rng.random((n, n)) < 0.5).astype(float)
        b = (rng.random((n, n)) < 0.5).astype(float)
        worst = max(worst, abs(graph.l0_distance(a, b) - graph.l1_vec_distance(a, b)))
    status = PASS if worst == 0.0 else FAIL
    return CheckResult("metric_l0_l1_binary_agreement", status, trials, worst)


def check_metric_l1_lower_bound(rng, trials: int) -> CheckResult:
    worst = -np.inf
    for _ in range(trials):
        n = int(rng.integers(1, 9))
        a = rng.standard_normal((n, n))
        b = np.where(rng.random((n, n)) < 0.3, a, rng.standard_normal((n, n)))
        diff = np.abs(a - b)
        changed = diff[diff > 0]
        bound = changed.size * changed.min() if changed.size else 0.0
        worst = max(worst, bound - graph.l1_vec_distance(a, b))
    status = PASS if worst <= 1e-12 else FAIL
    return CheckResult("metric_l1_lower_bound", status, trials, worst)


def check_permutation_composition(rng, trials: int) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 9))
        g = Graph(adjacency=rng.standard_normal((n, n)), features=rng.standard_normal((n, 2)),
                  labels=rng.integers(0, 3, n))
        p = graph.Permutation(rng.permutation(n))
        q = graph.Permutation(rng.permutation(n))
        lhs = graph.permute_graph(graph.permute_graph(g, p), q)
        rhs = graph.permute_graph(g, q.after(p))
        worst = max(worst, float(np.abs(lhs.adjacency - rhs.adjacency).max()),
                    float(np.abs(lhs.features - rhs.features).max()))
    status = PASS if worst == 0.0 else FAIL
    return CheckResult("graph_permutation_composition", status, trials, worst)


def check_adjacency_l1_contraction(rng, trials: int, step_scale: float = 1.0) -> CheckResult:
    worst = -np.inf
    for _ in range(trials):
        n = int(rng.integers(3, 9))
        coeffs = _random_coeffs(rng)
        h = equivariant.max_step_adjacency(coeffs) * step_scale
        a = rng.standard_normal((n, n))
        b = rng.standard_normal((n, n))
        d_in = graph.l1_vec_distance(a, b)
        d_out = graph.l1_vec_distance(
            equivariant.adjacency_step_unchecked(a, coeffs, h),
            equivariant.adjacency_step_unchecked(b, coeffs, h))
        worst = max(worst, d_out - d_in)
    status = PASS if worst <= 1e-9 else FAIL
    note = f"step scale {step_scale:g}" if step_scale != 1.0 else ""
    return CheckResult("adjacency_l1_contraction", status, trials, worst, note)


def check_adjacency_equivariance(rng, trials: int) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 9))
        coeffs = _random_coeffs(rng)
        cfg = AdjacencyStepConfig(coeffs=coeffs, h=equivariant.max_step_adjacency(coeffs))
        a = rng.standard_normal((n, n))
        perm = rng.permutation(n)
        pm = np.zeros((n, n))
        pm[np.arange(n), perm] = 1.0
        lhs = equivariant.adjacency_step(pm @ a @ pm.T, cfg)
        rhs = pm @ equivariant.adjacency_step(a, cfg) @ pm.T
        scale = max(1.0, float(np.abs(rhs).max()))
        worst = max(worst, float(np.abs(lhs - rhs).max()) / scale)
    status = PASS if worst <= 1e-10 else FAIL
    return CheckResult("adjacency_equivariance", status, trials, worst)


def check_adjacency_symmetry(rng, trials: int) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 9))
        coeffs = _random_coeffs(rng)
        cfg = AdjacencyStepConfig(coeffs=coeffs, h=equivariant.max_step_adjacency(coeffs))
        a = rng.standard_normal((n, n))
        a = a + a.T
        out = equivariant.adjacency_step(a, cfg)
        worst = max(worst, float(np.abs(out - out.T).max()))
    status = PASS if worst <= 1e-12 else FAIL
    return CheckResult("adjacency_symmetry_preservation", status, trials, worst)


def check_equivariant_linearity(rng, trials: int) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 8))
        coeffs = _random_coeffs(rng)
        a = rng.standard_normal((n, n))
        b = rng.standard_normal((n, n))
        s, t = rng.standard_normal(2)
        lhs = equivariant.equivariant_linear(s * a + t * b, coeffs)
        rhs = (s * equivariant.equivariant_linear(a, coeffs)
               + t * equivariant.equivariant_linear(b, coeffs))
        scale = max(1.0, float(np.abs(rhs).max()))
        worst = max(worst, float(np.abs(lhs - rhs).max()) / scale)
    status = PASS if worst <= 1e-10 else FAIL
    return CheckResult("equivariant_map_linearity", status, trials, worst)


def check_tmatrix_consistency(rng, trials: int) -> CheckResult:
    worst = 0.0
    per_n = max(1, trials // 4)
    count = 0
    for n in (2, 3, 4, 5):
        for _ in range(per_n):
            coeffs = _random_coeffs(rng)
            t = equivariant.build_T(coeffs, n)
            a = rng.standard_normal((n, n))
            err = float(np.abs(equivariant.vec(equivariant.equivariant_linear(a, coeffs))
                               - t @ equivariant.vec(a)).max())
            worst = max(worst, err)
            count += 1
    status = PASS if worst <= 1e-10 else FAIL
    return CheckResult("tmatrix_vectorization_consistency", status, count, worst)


def check_tmatrix_norm_bound(rng, trials: int) -> CheckResult:
    worst = -np.inf
    for _ in range(trials):
        n = int(rng.integers(2, 7))
        coeffs = _random_coeffs(rng)
        t = equivariant.build_T(coeffs, n)
        s = t - coeffs.k1 * np.eye(n * n)
        worst = max(worst, equivariant.operator_l1_norm(s) - float(np.abs(coeffs.k).sum()))
    status = PASS if worst <= 1e-12 else FAIL
    return CheckResult("tmatrix_l1_norm_bound", status, trials, worst)


def _probe_suite(rng, trials: int, sampler) -> tuple:
    worst = 0.0
    violations = 0
    done = 0
    attempts = 0
    while done < trials and attempts < 50 * trials:
        attempts += 1
        coeffs = sampler()
        n = int(rng.integers(3, 7))
        a = rng.standard_normal((n, n))
        h = equivariant.max_step_adjacency(coeffs)
        try:
            val = equivariant.jacobian_l1_probe_unchecked(a, coeffs, h)
        except ValueError:
            continue
        done += 1
        worst = max(worst, val)
        if val > 1.0 + 1e-6:
            violations += 1
    return done, worst, violations

def check_jacobian_probe_margin_regime(rng, trials: int, slope: float = 0.1) -> CheckResult:
    done, worst, violations = _probe_suite(rng, trials, lambda: _margin_coeffs(rng, slope))
    status = PASS if violations == 0 and done == trials else FAIL
    return CheckResult("adjacency_jacobian_probe_margin_regime", status, done, worst,
                       "coefficients restricted to slope * (-alpha) >= (1-slope) * sum|k|")


def check_jacobian_probe_unconstrained(rng, trials: int) -> CheckResult:
    done, worst, violations = _probe_suite(rng, trials, lambda: _random_coeffs(rng))
    note = (f"{violations}/{done} smooth points exceed 1+1e-6: the l1 step bound is "
            "not pointwise sufficient once the activation derivative varies "
            "(see slope_uniform_margin); informational only")
    return CheckResult("adjacency_jacobian_probe_unconstrained", REPORT, done, worst, note)


def check_feature_adjointness(rng, trials: int) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 9))
        c = int(rng.integers(1, 6))
        a = rng.standard_normal((n, n))
        f = rng.standard_normal((n, c))
        o = rng.standard_normal((n, n, c))
        lhs = float((dynamics.graph_gradient(a, f).values * o).sum())
        rhs = float((f * dynamics.graph_gradient_adjoint(a, dynamics.EdgeTensor(o))).sum())
        worst = max(worst, abs(lhs - rhs) / max(1.0, abs(rhs)))
    status = PASS if worst <= 1e-10 else FAIL
    return CheckResult("feature_gradient_adjointness", status, trials, worst)


def check_feature_contraction(rng, trials: int) -> CheckResult:
    worst = -np.inf
    for _ in range(trials):
        n = int(rng.integers(2, 8))
        c = int(rng.integers(1, 5))
        lam = 0.2 + 2.0 * rng.random()
        params = LayerParams(h=1.0, parameterization=Parameterization.LEARN_W,
                             W=rng.standard_normal((n, n)), K=lam * np.eye(c))
        a = rng.standard_normal((n, n))
        h = dynamics.max_feature_step(a, params)
        params = LayerParams(h=h, parameterization=Parameterization.LEARN_W,
                             W=params.W, K=params.K)
        f = rng.standard_normal((n, c))
        df = rng.standard_normal((n, c))
        moved = dynamics.feature_step(f + df, a, params)
        base = dynamics.feature_step(f, a, params)
        worst = max(worst, float(np.linalg.norm(moved - base) - np.linalg.norm(df)))
    status = PASS if worst <= 1e-9 else FAIL
    return CheckResult("feature_frobenius_contraction", status, trials, worst)


def check_energy_monotonicity(rng, trials: int) -> CheckResult:
    worst = -np.inf
    for _ in range(trials):
        n = int(rng.integers(2, 8))
        c = int(rng.integers(1, 5))
        b = rng.standard_normal((c, c))
        k = b @ b.T + 0.05 * np.eye(c)  # positive definite
        params = LayerParams(h=1.0, parameterization=Parameterization.LEARN_K, K=k)
        a = rng.standard_normal((n, n))
        h = dynamics.max_feature_step(a, params)
        params = LayerParams(h=h, parameterization=Parameterization.LEARN_K, K=k)
        f = rng.standard_normal((n, c))
        e0 = dynamics.energy(a, f, None, params.leaky_slope)
        e1 = dynamics.energy(a, dynamics.feature_step(f, a, params), None, params.leaky_slope)
        worst = max(worst, e1 - e0)
    status = PASS if worst <= 1e-9 else FAIL
    return CheckResult("feature_energy_monotonicity", status, trials, worst)


def check_constant_row_fixed_point(rng, trials: int) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 8))
        c = int(rng.integers(1, 4))
        a = _sym_binary(rng, n)
        f = np.tile(rng.standard_normal((1, c)), (n, 1))
        params = LayerParams(h=0.7, parameterization=Parameterization.LEARN_K,
                             K=rng.standard_normal((c, c)))
        worst = max(worst, float(np.abs(dynamics.feature_step(f, a, params) - f).max()))
    status = PASS if worst <= 1e-12 else FAIL
    return CheckResult("feature_constant_row_fixed_point", status, trials, worst)


def check_feature_step_equivariance(rng, trials: int) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 8))
        c = int(rng.integers(1, 4))
        params = LayerParams(h=0.3, parameterization=Parameterization.LEARN_K,
                             K=rng.standard_normal((c, c)))
        a = rng.standard_normal((n, n))
        f = rng.standard_normal((n, c))
        perm = rng.permutation(n)
        pm = np.zeros((n, n))
        pm[np.arange(n), perm] = 1.0
        lhs = dynamics.feature_step(pm @ f, pm @ a @ pm.T, params)
        rhs = pm @ dynamics.feature_step(f, a, params)
        scale = max(1.0, float(np.abs(rhs).max()))
        worst = max(worst, float(np.abs(lhs - rhs).max()) / scale)
    status = PASS if worst <= 1e-10 else FAIL
    return CheckResult("feature_step_equivariance", status, trials, worst)


def _contractive_trial(rng, slope: float = 0.1):
    """One random coupled configuration inside both provable regimes, its clean
    embedded state, and a budgeted perturbation."""
    n = int(rng.integers(4, 8))
    c = int(rng.integers(2, 5))
    depth = int(rng.integers(1, 4))
    eps_feat = rng.random()
    eps_adj = 0.05 + rng.random()
    f0 = rng.standard_normal((n, c))
    a0 = _sym_binary(rng, n)

    df = rng.standard_normal((n, c))
    df *= eps_feat / max(np.linalg.norm(df), 1e-12)
    da = rng.standard_normal((n, n))
    da = da + da.T
    da *= eps_adj / np.abs(da).sum()

    layers = []
    f_clean, a_clean = f0, a0
    for _ in range(depth):
        lam = 0.3 + 1.7 * rng.random()
        w = rng.standard_normal((n, n)) / np.sqrt(n)
        coeffs = _margin_coeffs(rng, slope)
        base = LayerParams(h=1.0, parameterization=Parameterization.LEARN_W,
                           W=w, K=lam * np.eye(c), leaky_slope=slope)
        h = 0.9 * min(equivariant.max_step_adjacency(coeffs),
                      dynamics.max_feature_step(a_clean, base, l1_radius=eps_adj))
        feature = LayerParams(h=h, parameterization=Parameterization.LEARN_W,
                              W=w, K=lam * np.eye(c), leaky_slope=slope)
        adjacency = AdjacencyStepConfig(coeffs=coeffs, h=min(h, equivariant.max_step_adjacency(coeffs)),
                                        leaky_slope=slope)
        layers.append(CoupledLayer(feature=feature, adjacency=adjacency))
        f_clean = dynamics.feature_step(f_clean, a_clean, feature)
        a_clean = equivariant.adjacency_step(a_clean, adjacency)
    budget = PerturbationBudget(
        eps_feat=float(np.linalg.norm(df)),
        eps_adj=float(np.abs(da).sum()),
    )
    return f0, a0, df, da, layers, budget


def check_expansivity_bound(rng, trials: int) -> CheckResult:
    worst = -np.inf
    for _ in range(trials):
        f0, a0, df, da, layers, budget = _contractive_trial(rng)
        fs, as_ = network.evolve(f0, a0, layers)
        fs_p, as_p = network.evolve(f0 + df, a0 + da, layers)
        measured = network.weighted_distance(1.0, 1.0, (fs[-1], as_[-1]), (fs_p[-1], as_p[-1]))
        lips = [network.lipschitz_upper(fs[l], layers[l].feature,
                                        float(np.abs(as_[l]).max()) + budget.eps_adj)
                for l in range(len(layers))]
        bound = network.expansivity_bound([ly.feature.h for ly in layers], lips, budget)
        worst = max(worst, measured - bound)
    status = PASS if worst <= 1e-7 else FAIL
    return CheckResult("coupled_expansivity_bound", status, trials, worst)


def check_coupled_weighted_contraction(rng, trials: int):
    """Appendix-style weighted-distance decrease across one full layer, as an
    empirical report: searches the weight grid for the smallest pair making the
    distance shrink on at least 95% of trials."""
    cases = []
    for _ in range(trials):
        f0, a0, df, da, layers, _ = _contractive_trial(rng)
        layer = layers[0]
        f1, a1 = dynamics.feature_step(f0, a0, layer.feature), equivariant.adjacency_step(a0, layer.adjacency)
        f1p = dynamics.feature_step(f0 + 0.1 * df, a0 + 0.1 * da, layer.feature)
        a1p = equivariant.adjacency_step(a0 + 0.1 * da, layer.adjacency)
        cases.append(((f0, a0), (f0 + 0.1 * df, a0 + 0.1 * da), (f1, a1), (f1p, a1p)))
    grid = [10.0 ** j for j in range(-3, 4)]
    best = None
    best_rate = 0.0
    failures = []
    for m1 in grid:
        for m2 in grid:
            ok = 0
            fails = []
            for idx, (s0, s0p, s1, s1p) in enumerate(cases):
                before = network.weighted_distance(m1, m2, s0, s0p)
                after = network.weighted_distance(m1, m2, s1, s1p)
                if after <= before + 1e-12:
                    ok += 1
                else:
                    fails.append((idx, before, after))
            rate = ok / len(cases)
            if rate > best_rate:
                best_rate, best, failures = rate, (m1, m2), fails
            if rate >= 0.95:
                note = f"m1={m1:g}, m2={m2:g} shrink the distance on {rate:.1%} of layers"
                return CheckResult("coupled_weighted_contraction", REPORT, trials,
                                   1.0 - rate, note), []
    note = (f"no grid pair reached 95%; best m1={best[0]:g}, m2={best[1]:g} "
            f"at {best_rate:.1%}")
    return CheckResult("coupled_weighted_contraction", REPORT, trials, 1.0 - best_rate, note), failures


def check_gradient_finite_difference(rng, trials: int) -> CheckResult:
    from .gradcheck import max_gradient_rel_error
    worst = 0.0
    for _ in range(trials):
        worst = max(worst, max_gradient_rel_error(rng))
    status = PASS if worst <= 1e-5 else FAIL
    return CheckResult("gradient_finite_difference", status, trials, worst)


# --- the runner ------------------------------------------------------------------

def run_all(seed: int = 0, overrides: dict = None, trials_scale: float = 1.0):
    """Run every suite; returns (results, failure dumps)."""
    overrides = overrides or {}
    step_scale = float(overrides.get("fault_adjacency_step_scale", 1.0))
    trials_scale = float(overrides.get("trials_scale", trials_scale))
    rng = np.random.default_rng(seed)
    results = []
    results.append(check_metric_l0_l1_binary(rng, _scaled(1000, trials_scale)))
    results.append(check_metric_l1_lower_bound(rng, _scaled(500, trials_scale)))
    results.append(check_permutation_composition(rng, _scaled(200, trials_scale)))
    results.append(check_adjacency_l1_contraction(rng, _scaled(1000, trials_scale), step_scale))
    results.append(check_adjacency_equivariance(rng, _scaled(1000, trials_scale)))
    results.append(check_adjacency_symmetry(rng, _scaled(1000, trials_scale)))
    results.append(check_equivariant_linearity(rng, _scaled(300, trials_scale)))
    results.append(check_tmatrix_consistency(rng, _scaled(200, trials_scale)))
    results.append(check_tmatrix_norm_bound(rng, _scaled(200, trials_scale)))
    results.append(check_jacobian_probe_margin_regime(rng, _scaled(100, trials_scale)))
    results.append(check_jacobian_probe_unconstrained(rng, _scaled(100, trials_scale)))
    results.append(check_feature_adjointness(rng, _scaled(500, trials_scale)))
    results.append(check_feature_contraction(rng, _scaled(1000, trials_scale)))
    results.append(check_energy_monotonicity(rng, _scaled(1000, trials_scale)))
    results.append(check_constant_row_fixed_point(rng, _scaled(200, trials_scale)))
    results.append(check_feature_step_equivariance(rng, _scaled(500, trials_scale)))
    results.append(check_expansivity_bound(rng, _scaled(200, trials_scale)))
    coupled, failures = check_coupled_weighted_contraction(rng, _scaled(100, trials_scale))
    results.append(coupled)
    results.append(check_gradient_finite_difference(rng, max(2, int(round(5 * trials_scale)))))
    return results, failures


def render_report(results: list) -> str:
    lines = ["check                                        status  trials      worst-slack"]
    for r in results:
        lines.append(f"{r.check_id:<44} {r.status:<7} {r.trials:<11} {r.worst:.3e}")
        if r.note:
            lines.append(f"    {r.note}")
    n_fail = sum(1 for r in results if r.status == FAIL)
    n_pass = sum(1 for r in results if r.status == PASS)
    n_rep = sum(1 for r in results if r.status == REPORT)
    lines.append(f"summary: {n_pass} passed, {n_fail} failed, {n_rep} informational")
    return "\n".join(lines) + "\n"


def all_passed(results: list) -> bool:
    return all(r.status != FAIL for r in results)
