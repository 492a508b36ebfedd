"""The checks behind each ``urnlab-run`` subcommand."""
from __future__ import annotations

import math
from fractions import Fraction
from functools import partial
from itertools import accumulate

import numpy as np
from loguru import logger

from urnlab.analysis import (
    a_series_closed_form_table,
    a_series_recursive,
    b_series_closed_form_table,
    b_series_recursive,
    conditional_covariance_mc,
    coupling_tv,
    growth_bound_check,
    local_time_variance_check,
    mc_series_estimate,
    regime_for,
    write_series_csv,
)
from urnlab.bmc import bmc_exact_law, bmc_run, write_trace_csv as write_bmc_trace_csv
from urnlab.check_executor import Check, RunContext
from urnlab.kernel import (
    STATIONARY_TOL_GENERATOR,
    ErgodicityCertificate,
    ExplicitKernel,
    Kernel,
    check_doeblin,
    decay_rate,
    fit_ergodicity_certificate,
    stationary_distribution,
    stationary_residual,
)
from urnlab.measure import SparseMeasure, format_measure
from urnlab.models import ExperimentConfig
from urnlab.rrt import ROOT, RecursiveTree, grow_rrt, write_tree
from urnlab import starwalk
from urnlab.seeding import map_replicas, replica_rng
from urnlab.settings import get_settings
from urnlab.urn import (
    UrnTrace,
    expected_draw_law,
    normalized_config,
    urn_exact_law,
    urn_init,
    urn_run,
    write_summary_json,
    write_trace_csv,
)

FLOAT_TV_TOL = 1e-10
RHO_MATCH_TOL = 0.01
GENERATOR_STATE_COUNT = 16


def _check_sets(config: ExperimentConfig, kernel: Kernel) -> tuple[list[int], list[int]]:
    k = kernel.num_colors
    default = list(range(k if k is not None else GENERATOR_STATE_COUNT))
    return config.check_states or default, config.check_colors or default


def _stationary_tol(config: ExperimentConfig, kernel: Kernel) -> float:
    return config.tol if isinstance(kernel, ExplicitKernel) else max(config.tol, STATIONARY_TOL_GENERATOR)


def _stationary(config: ExperimentConfig, kernel: Kernel, ctx: RunContext) -> SparseMeasure:
    tol = _stationary_tol(config, kernel)
    pi = stationary_distribution(kernel, tol=tol)
    residual = stationary_residual(kernel, pi)
    ctx.record("stationary_residual", residual <= tol, residual=residual, tol=tol)
    ctx.write_json("stationary.json", {"pi": pi.to_json(), "residual": residual, "kernel_digest": kernel.digest()})
    return pi


def _certificate(config: ExperimentConfig, kernel: Kernel, pi: SparseMeasure, ctx: RunContext) -> ErgodicityCertificate:
    states, colors = _check_sets(config, kernel)
    cert = fit_ergodicity_certificate(kernel, states, colors, config.fit_horizon, pi=pi)
    ctx.record("certificate_dominates", cert.dominates(), C=cert.C, rho=cert.rho)
    rate = decay_rate(kernel)
    if rate is not None and rate > 0 and cert.fitted_points >= 2:
        ctx.record("rho_matches_decay_rate", abs(cert.rho - rate) <= RHO_MATCH_TOL, rho=cert.rho, decay_rate=rate)
    ctx.write_json("certificate.json", cert.to_json())
    return cert


def _urn_replica(
    kernel: Kernel, u0: SparseMeasure, steps: int, master_seed: int, index: int, rng: np.random.Generator
) -> UrnTrace:
    return urn_run(urn_init(u0, kernel), steps, rng, seed=master_seed, replica=index)


class UrnRunCheck(Check):
    name = "urn-run"

    def validate_config(self, config: ExperimentConfig) -> tuple[bool, str]:
        if config.steps < 1:
            return False, "urn-run needs steps >= 1"
        return True, "ok"

    def run(self, config: ExperimentConfig, ctx: RunContext) -> None:
        kernel, u0 = config.build_kernel(), config.initial_measure()
        v = config.target_color
        pi = _stationary(config, kernel, ctx)
        logger.info(f"Running {config.replicas} urn replicas of {config.steps} steps from U_0 = {format_measure(u0)}")
        replica = partial(_urn_replica, kernel, u0, config.steps, config.master_seed)
        traces = map_replicas(replica, config.master_seed, config.replicas, config.workers)
        t0 = float(u0.total_mass)
        l1 = [normalized_config(tr.final_state).l1_distance(pi) for tr in traces]
        local = [abs(tr.local_time(v) / config.steps - float(pi[v])) for tr in traces]
        drift = max(abs(float(tr.final_state.config.total_mass) - (config.steps + t0)) for tr in traces)
        ctx.record("l1_single", l1[0] < config.l1_threshold, l1=l1[0], threshold=config.l1_threshold)
        ctx.record("local_time_single", local[0] < config.l1_threshold, error=local[0], color=v)
        if config.replicas > 1:
            ctx.record("l1_median", float(np.median(l1)) < config.median_threshold, median=float(np.median(l1)))
            ctx.record(
                "local_time_median", float(np.median(local)) < config.median_threshold, median=float(np.median(local))
            )
        ctx.record("mass_conservation", drift <= 1e-9 * (config.steps + t0), max_drift=drift)
        ctx.record("counting_identity", all(sum(tr.local_times.values()) == len(tr.draws) for tr in traces))

        ctx.add_artifact(write_trace_csv(traces[0], ctx.path("urn_trace.csv"), ctx.meta))
        ctx.add_artifact(write_summary_json(traces[0], ctx.path("urn_summary.json"), ctx.meta))
        ctx.write_json("urn_replicas.json", {"l1": l1, "local_time_error": local})


class CouplingCheck(Check):
    name = "coupling-check"

    def validate_config(self, config: ExperimentConfig) -> tuple[bool, str]:
        cap = get_settings().exact_horizon_cap
        if config.horizon > cap:
            return False, f"horizon {config.horizon} exceeds the enumeration cap {cap}"
        return True, "ok"

    def run(self, config: ExperimentConfig, ctx: RunContext) -> None:
        kernel, u0 = config.build_kernel(), config.initial_measure()
        t = u0.total_mass
        records = {}
        for h in range(config.horizon + 1):
            urn_law = urn_exact_law(u0, kernel, h)
            bmc_law = bmc_exact_law(t, kernel, u0, h)
            tv = coupling_tv(urn_law, bmc_law)
            exact = isinstance(tv, Fraction)
            ctx.record(f"tv_horizon_{h}", tv == 0 if exact else tv <= FLOAT_TV_TOL, tv_distance=float(tv), exact=exact)
            records[str(h)] = {"tv_distance": float(tv), "urn_law": urn_law.to_json(), "bmc_law": bmc_law.to_json()}
        totals = abs(float(urn_law.total()) - 1.0), abs(float(bmc_law.total()) - 1.0)
        ctx.record("normalization", max(totals) <= 1e-12, urn=totals[0], bmc=totals[1])
        gap = max(
            expected_draw_law(u0, kernel, k).l1_distance(urn_law.marginal(k)) for k in range(config.horizon + 1)
        )
        ctx.record("mean_recursion_marginals", gap <= FLOAT_TV_TOL, max_l1=gap)
        ctx.write_json("coupling.json", records)
        rng = replica_rng(config.master_seed, 0)
        sample = bmc_run(grow_rrt(t, config.horizon, rng), kernel, u0, rng)
        ctx.add_artifact(write_bmc_trace_csv(sample, ctx.path("bmc_trace.csv"), ctx.meta))


class Lemma31Check(Check):
    name = "lemma31-check"

    def validate_config(self, config: ExperimentConfig) -> tuple[bool, str]:
        if config.tree_size < 1:
            return False, "tree_size must be at least 1"
        return True, "ok"

    def run(self, config: ExperimentConfig, ctx: RunContext) -> None:
        kernel, u0 = config.build_kernel(), config.initial_measure()
        v = config.target_color
        t = u0.total_mass
        cert = _certificate(config, kernel, _stationary(config, kernel, ctx), ctx)
        reports = []
        for i in range(config.trees):
            rng = replica_rng(config.master_seed, i)
            tree = grow_rrt(t, config.tree_size, rng)
            ctx.add_artifact(write_tree(tree, ctx.path(f"trees/tree_{i}.txt"), ctx.meta))
            for _ in range(config.pairs_per_tree):
                u, w = sorted(int(x) for x in rng.choice(len(tree), size=2, replace=False))
                rep = conditional_covariance_mc(tree, kernel, u0, u, w, v, config.samples, rng, cert)
                reports.append({"tree": i, **rep.to_json()})
        ctx.record("covariance_bound", all(r["within_bound"] for r in reports), pairs=len(reports))

        chain = RecursiveTree.from_parents(t, [ROOT, 0])
        rep = conditional_covariance_mc(
            chain, kernel, u0, 0, 1, v, config.samples, replica_rng(config.master_seed, config.trees), cert
        )
        if rep.exact is not None:
            ctx.record("chain_oracle", abs(rep.mc_estimate - rep.exact) <= 3 * rep.standard_error + 1e-12, **rep.to_json())
        ctx.write_json("lemma31.json", {"certificate": cert.to_json(), "reports": reports, "chain": rep.to_json()})


class Lemma32Check(Check):
    name = "lemma32-check"

    def validate_config(self, config: ExperimentConfig) -> tuple[bool, str]:
        if not config.r_values or not config.t_values:
            return False, "r_values and t_values must be nonempty"
        return True, "ok"

    def run(self, config: ExperimentConfig, ctx: RunContext) -> None:
        n_max = config.n_max
        results = []
        for r in config.r_values:
            for t in config.t_values:
                a, b = a_series_recursive(r, t, n_max), b_series_recursive(r, t, n_max)
                a_arr, b_arr = np.asarray(a.values), np.asarray(b.values)
                gap_a = float(np.max(np.abs(a_series_closed_form_table(r, t, n_max) - a_arr) / a_arr))
                gap_b = float(np.max(np.abs(b_series_closed_form_table(r, t, n_max) - b_arr) / b_arr))
                ctx.record(f"closed_form_A r={r} t={t}", gap_a < 1e-9, max_relative_gap=gap_a)
                ctx.record(f"closed_form_B r={r} t={t}", gap_b < 1e-9, max_relative_gap=gap_b)
                entry = {"r": r, "t": t, "gap_a": gap_a, "gap_b": gap_b}
                if n_max >= 1000:
                    for series, regime in ((a, "A"), (b, regime_for(r))):
                        growth = growth_bound_check(series, regime)
                        ctx.record(f"growth_{regime} r={r} t={t}", growth.bounded, **growth.to_json())
                        entry[f"growth_{regime}"] = growth.to_json()
                ctx.add_artifact(write_series_csv(a, b, ctx.path(f"series_r{r}_t{t}.csv"), ctx.meta))
                results.append(entry)

        if 0.5 in config.r_values and 1.0 in config.t_values:
            a1, b1 = a_series_recursive(0.5, 1.0, 1)[1], b_series_recursive(0.5, 1.0, 1)[1]
            ctx.record("spot_values", math.isclose(a1, 0.875) and math.isclose(b1, 2.75), A_1=a1, B_1=b1)

        estimates = []
        if config.replicas >= 100:
            r, t = config.r_values[0], config.t_values[0]
            a, b = a_series_recursive(r, t, max(config.mc_points)), b_series_recursive(r, t, max(config.mc_points))
            for i, n in enumerate(config.mc_points):
                est = mc_series_estimate(r, t, n, config.replicas, replica_rng(config.master_seed, i))
                ok = abs(est.a_hat - a[n]) <= 3 * est.a_se + 1e-12 and abs(est.b_hat - b[n]) <= 3 * est.b_se + 1e-12
                ctx.record(f"monte_carlo n={n}", ok, A_n=a[n], B_n=b[n], **est.to_json())
                estimates.append(est.to_json())
        ctx.write_json("lemma32.json", {"series": results, "monte_carlo": estimates})


class VarianceCheck(Check):
    name = "variance-check"

    def validate_config(self, config: ExperimentConfig) -> tuple[bool, str]:
        if config.replicas < 1000:
            return False, "variance-check needs at least 1000 replicas"
        if not config.checkpoints:
            return False, "checkpoints must be nonempty"
        return True, "ok"

    def run(self, config: ExperimentConfig, ctx: RunContext) -> None:
        kernel, u0 = config.build_kernel(), config.initial_measure()
        cert = _certificate(config, kernel, _stationary(config, kernel, ctx), ctx)
        report = local_time_variance_check(
            kernel,
            u0,
            config.target_color,
            sorted(config.checkpoints),
            config.replicas,
            replica_rng(config.master_seed, 0),
            cert,
            workers=config.workers,
        )
        ratios = [p.ratio for p in report.points]
        ctx.record("variance_ratio_bounded", max(ratios) <= 2 * ratios[0], ratios=ratios)
        ctx.write_json("variance.json", report.to_json())
        rows = ((p.n, p.j_hat, p.b_sqrt_rho, p.b_rho, p.ratio, p.bound) for p in report.points)
        ctx.write_csv("variance.csv", ["n", "J_n", "B_n_sqrt_rho", "B_n_rho", "ratio", "bound"], rows)


class StarWalkCheck(Check):
    name = "starwalk-run"

    def validate_config(self, config: ExperimentConfig) -> tuple[bool, str]:
        if config.steps < 1:
            return False, "starwalk-run needs steps >= 1"
        return True, "ok"

    def run(self, config: ExperimentConfig, ctx: RunContext) -> None:
        kernel, delta0 = config.build_kernel(), config.initial_measure()
        pi = _stationary(config, kernel, ctx)
        limits = starwalk.star_limits(pi)
        n, tol = config.steps, config.limit_tolerance
        grid = {n, *(int(10**e) for e in np.arange(1, math.log10(2 * n) + 1e-9, 0.25))}
        trace = starwalk.star_walk_run(
            starwalk.star_walk_init(delta0, kernel),
            2 * n,
            replica_rng(config.master_seed, 0),
            checkpoints=grid,
            seed=config.master_seed,
        )
        sigma_ratio = trace.sigma(n) / (n + 1)
        ctx.record("sigma_limit", abs(sigma_ratio - float(limits.sigma_limit)) < tol, value=sigma_ratio, limit=float(limits.sigma_limit))
        rate = trace.m(n) / (n + 1)
        ctx.record("update_rate_limit", abs(rate - float(limits.update_rate)) < tol, value=rate, limit=float(limits.update_rate))
        weights, delta = trace.snapshots[n], float(delta0.total_mass)
        for j, pj in pi:
            if pj >= 0.05:
                value = float(weights[j]) / (n + delta)
                limit = float(limits.weight_limits[j])
                ctx.record(f"weight_limit_{j}", abs(value - limit) < tol, value=value, limit=limit)

        tilde = list(accumulate(1 if y == 1 else 0 for y in trace.y_increments))
        identity = all(trace.sigma(k) == tilde[k - 1] + 2 * (k - tilde[k - 1]) for k in range(1, len(tilde) + 1))
        ctx.record("sigma_identity", identity, updates=len(tilde))
        ctx.record("m_of_sigma", all(trace.m(s) == k for k, s in enumerate(trace.update_times, start=1)))
        self._coupling(config, kernel, delta0, ctx)

        vertices = [j for j, _ in pi][:10]
        ctx.add_artifact(starwalk.write_series_csv(trace, ctx.path("starwalk_series.csv"), vertices, ctx.meta))
        ctx.write_json(
            "starwalk.json",
            {
                "steps": 2 * n,
                "updates": len(trace.update_times),
                "sigma_ratio": sigma_ratio,
                "limits": {
                    "sigma": float(limits.sigma_limit),
                    "update_rate": float(limits.update_rate),
                    "weights": limits.weight_limits.to_json(),
                },
            },
        )

    def _coupling(self, config: ExperimentConfig, kernel: Kernel, delta0: SparseMeasure, ctx: RunContext) -> None:
        """Replay the walk's update draws as an urn on the same stream; both must agree bit for bit."""
        index = 1
        walk = starwalk.star_walk_run(
            starwalk.star_walk_init(delta0, kernel), 2 * config.coupling_steps, replica_rng(config.master_seed, index)
        )
        updates = len(walk.update_times)
        urn = urn_run(urn_init(delta0, kernel), updates, replica_rng(config.master_seed, index))
        same_draws = urn.draws == walk.update_colors
        same_config = urn.final_state.config == walk.final_state.weights
        loops = walk.sigma_tilde(updates)
        ctx.record(
            "coupling_bit_exact",
            same_draws and same_config and loops == urn.local_time(0),
            updates=updates,
            same_draws=same_draws,
            same_config=same_config,
        )


class ErgodicityFitCheck(Check):
    name = "ergodicity-fit"

    def validate_config(self, config: ExperimentConfig) -> tuple[bool, str]:
        return True, "ok"

    def run(self, config: ExperimentConfig, ctx: RunContext) -> None:
        kernel = config.build_kernel()
        pi = _stationary(config, kernel, ctx)
        _certificate(config, kernel, pi, ctx)
        states, _ = _check_sets(config, kernel)
        witness = check_doeblin(kernel, config.doeblin_n0, states)
        ctx.record("doeblin", witness.holds, epsilon=float(witness.epsilon), n0=witness.n0)
        ctx.write_json(
            "doeblin.json",
            {"epsilon": float(witness.epsilon), "nu": witness.nu.to_json(), "n0": witness.n0, "check_states": list(states)},
        )


CHECKS: dict[str, type[Check]] = {
    cls.name: cls
    for cls in (UrnRunCheck, CouplingCheck, Lemma31Check, Lemma32Check, VarianceCheck, StarWalkCheck, ErgodicityFitCheck)
}
