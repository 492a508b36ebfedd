"""Growth series over random recursive trees, covariance and local-time variance checks.

``A_n(r) = E sum_u r^{d(u)}`` and ``B_n(r) = E sum_{u,w} r^{d(u,w)}`` over the
non-root vertices of ``T_n``. Both satisfy first-order linear recursions with
closed forms in Gamma ratios, evaluated here in log space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import partial
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from loguru import logger
from scipy.special import gammaln, logsumexp

from urnlab.bmc import bmc_sample_colors, bmc_vertex_marginal
from urnlab.errors import HorizonMismatch, MissingCertificate, RegimeMismatch
from urnlab.kernel import ErgodicityCertificate, ExplicitKernel, Kernel, n_step_row
from urnlab.measure import SparseMeasure, Weight
from urnlab.reporting import Meta, write_csv
from urnlab.rrt import ROOT, RecursiveTree, grow_rrt_batch, tree_depth, tree_lca
from urnlab.seeding import map_replicas
from urnlab.urn import SequenceLaw, urn_init, urn_run

REGIMES = ("A", "B-high", "B-half", "B-low")
MIN_SERIES_LENGTH = 1000
MIN_COVARIANCE_SAMPLES = 10_000
MIN_VARIANCE_REPLICAS = 1000


@dataclass(frozen=True)
class GrowthSeries:
    kind: str
    r: float
    t: float
    values: tuple[float, ...]

    def __getitem__(self, n: int) -> float:
        return self.values[n]

    def __len__(self) -> int:
        return len(self.values)

    @property
    def n_max(self) -> int:
        return len(self.values) - 1


def _check_rt(r: float, t: float) -> None:
    if not 0 < r < 1:
        raise ValueError(f"r must lie in (0, 1), got {r}")
    if t <= 0:
        raise ValueError(f"t must be positive, got {t}")


def a_series_recursive(r: float, t: float, n_max: int) -> GrowthSeries:
    """``A_0 = r``, ``A_n = (1 + r/(n+t)) A_{n-1} + t r/(n+t)``."""
    _check_rt(r, t)
    values = [r]
    for n in range(1, n_max + 1):
        values.append((1 + r / (n + t)) * values[-1] + t * r / (n + t))
    return GrowthSeries("A", r, t, tuple(values))


def _a_log_terms(r: float, t: float, n_max: int) -> np.ndarray:
    k = np.arange(n_max + 1)
    return gammaln(k + t) - gammaln(k + 1 + t + r)


def a_series_closed_form(r: float, t: float, n: int) -> float:
    _check_rt(r, t)
    log_sum = logsumexp(_a_log_terms(r, t, n))
    return float(r * t * math.exp(gammaln(n + 1 + t + r) - gammaln(n + 1 + t) + log_sum))


def a_series_closed_form_table(r: float, t: float, n_max: int) -> np.ndarray:
    """Closed-form ``A_0..A_{n_max}`` from running log-sum-exp prefix sums."""
    _check_rt(r, t)
    k = np.arange(n_max + 1)
    prefix = np.logaddexp.accumulate(_a_log_terms(r, t, n_max))
    return r * t * np.exp(gammaln(k + 1 + t + r) - gammaln(k + 1 + t) + prefix)


def b_series_recursive(r: float, t: float, n_max: int) -> GrowthSeries:
    """``B_n = (1 + 2r/(n+t)) B_{n-1} + 2rt A_{n-1}/(n+t) + 1`` with ``B_{-1} = A_{-1} = 0``."""
    a = a_series_recursive(r, t, n_max).values
    values = []
    prev_b, prev_a = 0.0, 0.0
    for n in range(n_max + 1):
        prev_b = (1 + 2 * r / (n + t)) * prev_b + 2 * r * t * prev_a / (n + t) + 1
        prev_a = a[n]
        values.append(prev_b)
    return GrowthSeries("B", r, t, tuple(values))


def b_series_closed_form_table(r: float, t: float, n_max: int) -> np.ndarray:
    """``B_n = sum_k c_k G(n)/G(k)`` with ``G(n) = Gamma(n+1+t+2r)/Gamma(n+1+t)`` and ``c_k = 1 + 2rt A_{k-1}/(k+t)``."""
    _check_rt(r, t)
    k = np.arange(n_max + 1)
    a_prev = np.concatenate(([0.0], a_series_closed_form_table(r, t, n_max)[:-1]))
    log_c = np.log1p(2 * r * t * a_prev / (k + t))
    terms = log_c + gammaln(k + 1 + t) - gammaln(k + 1 + t + 2 * r)
    prefix = np.logaddexp.accumulate(terms)
    return np.exp(gammaln(k + 1 + t + 2 * r) - gammaln(k + 1 + t) + prefix)


def b_series_closed_form(r: float, t: float, n: int) -> float:
    return float(b_series_closed_form_table(r, t, n)[n])


@dataclass(frozen=True)
class SeriesEstimate:
    r: float
    t: float
    n: int
    replicas: int
    a_hat: float
    a_se: float
    b_hat: float
    b_se: float

    def to_json(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in ("r", "t", "n", "replicas", "a_hat", "a_se", "b_hat", "b_se")}


def mc_series_estimate(
    r: float, t: float, n: int, replicas: int, rng: np.random.Generator, chunk: int = 10_000
) -> SeriesEstimate:
    """Sample means of ``sum_u r^{d(u)}`` and ``sum_{u,w} r^{d(u,w)}`` over grown trees."""
    _check_rt(r, t)
    if replicas < 100:
        raise ValueError(f"replicas must be at least 100, got {replicas}")
    a_parts, b_parts = [], []
    for lo in range(0, replicas, chunk):
        batch = grow_rrt_batch(t, n, min(chunk, replicas - lo), rng)
        a_parts.append(np.power(r, batch.depths).sum(axis=1))
        b_parts.append(np.power(r, batch.distance_matrices()).sum(axis=(1, 2)))
    a, b = np.concatenate(a_parts), np.concatenate(b_parts)
    root_n = math.sqrt(replicas)
    est = SeriesEstimate(
        r, t, n, replicas, float(a.mean()), float(a.std(ddof=1) / root_n), float(b.mean()), float(b.std(ddof=1) / root_n)
    )
    logger.debug(f"MC at n={n}: A={est.a_hat:.6g}±{est.a_se:.2g}, B={est.b_hat:.6g}±{est.b_se:.2g}")
    return est


def growth_normalizer(regime: str, r: float, n: np.ndarray) -> np.ndarray:
    if regime == "A":
        return n**r
    if regime == "B-high":
        return n ** (2 * r)
    if regime == "B-half":
        return n * np.log(n + 1)
    if regime == "B-low":
        return n.astype(float)
    raise ValueError(f"Unknown regime {regime!r}; expected one of {REGIMES}")


def regime_for(r: float) -> str:
    """The B-series regime matching ``r``."""
    if math.isclose(r, 0.5):
        return "B-half"
    return "B-high" if r > 0.5 else "B-low"


@dataclass(frozen=True)
class GrowthBoundReport:
    regime: str
    r: float
    t: float
    n_range: tuple[int, int]
    sup_ratio: float
    median_ratio: float
    top_decade_max: float
    ratios: tuple[float, ...] = field(repr=False)

    @property
    def bounded(self) -> bool:
        return self.top_decade_max <= 2 * self.median_ratio

    def to_json(self) -> dict[str, Any]:
        return {
            "regime": self.regime,
            "r": self.r,
            "t": self.t,
            "n_range": list(self.n_range),
            "sup_ratio": self.sup_ratio,
            "median_ratio": self.median_ratio,
            "top_decade_max": self.top_decade_max,
            "bounded": self.bounded,
        }


def growth_bound_check(series: GrowthSeries, regime: str, n_min: int = 10) -> GrowthBoundReport:
    """Ratios ``values[n] / normalizer(n)`` over ``n in [n_min, n_max]``."""
    if regime not in REGIMES:
        raise ValueError(f"Unknown regime {regime!r}; expected one of {REGIMES}")
    if (regime == "A") != (series.kind == "A"):
        raise RegimeMismatch(series.r, regime)
    if regime != "A" and regime != regime_for(series.r):
        raise RegimeMismatch(series.r, regime)
    if series.n_max < MIN_SERIES_LENGTH:
        raise ValueError(f"Series must reach n >= {MIN_SERIES_LENGTH}, got n_max={series.n_max}")
    n = np.arange(n_min, series.n_max + 1)
    ratios = np.asarray(series.values[n_min:]) / growth_normalizer(regime, series.r, n)
    top = ratios[n >= series.n_max // 10]
    return GrowthBoundReport(
        regime,
        series.r,
        series.t,
        (n_min, series.n_max),
        float(ratios.max()),
        float(np.median(ratios)),
        float(top.max()),
        tuple(ratios.tolist()),
    )


@dataclass(frozen=True)
class CovarianceReport:
    u: int
    w: int
    v: int
    lca: int
    mc_estimate: float
    standard_error: float
    bound: float
    samples: int
    exact: float | None = None

    @property
    def within_bound(self) -> bool:
        return self.mc_estimate <= self.bound + 3 * self.standard_error

    def to_json(self) -> dict[str, Any]:
        return {
            "u": self.u,
            "w": self.w,
            "v": self.v,
            "lca": self.lca,
            "mc_estimate": self.mc_estimate,
            "standard_error": self.standard_error,
            "bound": self.bound,
            "samples": self.samples,
            "exact": self.exact,
            "within_bound": self.within_bound,
        }


def conditional_covariance_exact(
    tree: RecursiveTree, kernel: Kernel, u0: SparseMeasure, u: int, w: int, v: int, mass_tol: float = 1e-12
) -> Weight:
    """``Cov(1{W_u=v}, 1{W_w=v})`` on a fixed tree by conditioning on the color of ``L(u, w)``.

    Vertices in different subtrees of the root color independently, so the
    covariance vanishes when ``L`` is the root.
    """
    if ROOT in (u, w):
        raise ValueError("The root carries no color")
    pu = bmc_vertex_marginal(tree, kernel, u0, u, mass_tol)[v]
    pw = bmc_vertex_marginal(tree, kernel, u0, w, mass_tol)[v]
    lca = tree_lca(tree, u, w)
    if lca == ROOT:
        return pu * 0
    law = bmc_vertex_marginal(tree, kernel, u0, lca, mass_tol)
    du = tree_depth(tree, u) - tree_depth(tree, lca)
    dw = tree_depth(tree, w) - tree_depth(tree, lca)
    joint: Weight = pu * 0
    for s, ps in law:
        joint += ps * n_step_row(kernel, s, du, mass_tol)[v] * n_step_row(kernel, s, dw, mass_tol)[v]
    return joint - pu * pw


def conditional_covariance_mc(
    tree: RecursiveTree,
    kernel: Kernel,
    u0: SparseMeasure,
    u: int,
    w: int,
    v: int,
    samples: int,
    rng: np.random.Generator,
    certificate: ErgodicityCertificate | None = None,
) -> CovarianceReport:
    """Monte Carlo covariance of the two indicators over BMC colorings of the fixed tree.

    The bound is ``2 C rho^{max(d(u,L), d(w,L))}`` from the certificate.
    """
    if certificate is None:
        raise MissingCertificate()
    if ROOT in (u, w):
        raise ValueError("The root carries no color")
    if samples < MIN_COVARIANCE_SAMPLES:
        raise ValueError(f"samples must be at least {MIN_COVARIANCE_SAMPLES}, got {samples}")
    colors = bmc_sample_colors(tree, kernel, u0, samples, rng)
    x = (colors[:, u] == v).astype(float)
    y = (colors[:, w] == v).astype(float)
    prod = (x - x.mean()) * (y - y.mean())
    estimate = float(prod.sum() / (samples - 1))
    se = float(prod.std(ddof=1) / math.sqrt(samples))
    lca = tree_lca(tree, u, w)
    gap = max(tree_depth(tree, u), tree_depth(tree, w)) - tree_depth(tree, lca)
    bound = 2 * certificate.C * certificate.rho**gap
    exact = None
    if isinstance(kernel, ExplicitKernel):
        exact = float(conditional_covariance_exact(tree, kernel, u0, u, w, v))
    return CovarianceReport(u, w, v, lca, estimate, se, bound, samples, exact)


@dataclass(frozen=True)
class VariancePoint:
    n: int
    j_hat: float
    b_sqrt_rho: float
    b_rho: float
    ratio: float
    bound: float

    def to_json(self) -> dict[str, Any]:
        return {k: getattr(self, k) for k in ("n", "j_hat", "b_sqrt_rho", "b_rho", "ratio", "bound")}


@dataclass(frozen=True)
class VarianceReport:
    v: int
    replicas: int
    C: float
    rho: float
    calibration: float
    points: tuple[VariancePoint, ...]
    summability_partial_sum: float

    def to_json(self) -> dict[str, Any]:
        return {
            "v": self.v,
            "replicas": self.replicas,
            "C": self.C,
            "rho": self.rho,
            "calibration": self.calibration,
            "points": [p.to_json() for p in self.points],
            "summability_partial_sum": self.summability_partial_sum,
        }


def _local_time_counts(
    kernel: Kernel, u0: SparseMeasure, v: int, checkpoints: tuple[int, ...], index: int, rng: np.random.Generator
) -> np.ndarray:
    """``N_{n,v}`` (draws of ``v`` among ``Z_0..Z_n``) at every checkpoint ``n``."""
    trace = urn_run(urn_init(u0, kernel), max(checkpoints) + 1, rng, seed=index)
    hits = np.cumsum(np.asarray(trace.draws) == v)
    return hits[list(checkpoints)]


def local_time_variance_check(
    kernel: Kernel,
    u0: SparseMeasure,
    v: int,
    n: int | Sequence[int],
    replicas: int,
    rng: np.random.Generator,
    certificate: ErgodicityCertificate | None = None,
    calibration_window: Iterable[int] = range(1, 11),
    workers: int = 1,
) -> VarianceReport:
    """Sample variance ``J_n`` of the local time of ``v`` against ``B_n(sqrt(rho))``.

    The constant in front of ``B_n(sqrt(rho))`` is calibrated as the largest
    ``J_n / B_n(sqrt(rho))`` over a small-``n`` window of the same runs.
    """
    if certificate is None:
        raise MissingCertificate()
    if replicas < MIN_VARIANCE_REPLICAS:
        raise ValueError(f"replicas must be at least {MIN_VARIANCE_REPLICAS}, got {replicas}")
    targets = (n,) if isinstance(n, int) else tuple(n)
    if not targets or min(targets) < 0:
        raise ValueError(f"Checkpoints must be nonnegative, got {targets}")
    window = tuple(calibration_window)
    checkpoints = tuple(sorted(set(targets) | set(window)))
    t = float(u0.total_mass)
    master_seed = int(rng.integers(2**63))
    logger.info(f"Running {replicas} urn replicas to n={max(checkpoints)} for local times of color {v}")
    counts = np.array(map_replicas(partial(_local_time_counts, kernel, u0, v, checkpoints), master_seed, replicas, workers))
    j_hat = dict(zip(checkpoints, counts.var(axis=0, ddof=1).tolist()))

    rho = certificate.rho
    b_sqrt = b_series_recursive(math.sqrt(rho), t, max(checkpoints)).values
    b_rho = b_series_recursive(rho, t, max(checkpoints)).values
    calibration = max((j_hat[m] / b_sqrt[m] for m in window), default=0.0)
    points = tuple(
        VariancePoint(m, j_hat[m], b_sqrt[m], b_rho[m], j_hat[m] / b_sqrt[m], calibration * b_sqrt[m]) for m in targets
    )
    partial_sum = math.fsum(j_hat[m] / (m + 1) ** 3 for m in targets)
    return VarianceReport(v, replicas, certificate.C, rho, calibration, points, partial_sum)


def coupling_tv(urn_law: SequenceLaw, bmc_law: SequenceLaw) -> Weight:
    """Total variation distance; exact when both laws are rational."""
    if urn_law.horizon != bmc_law.horizon:
        raise HorizonMismatch(urn_law.horizon, bmc_law.horizon)
    keys = set(urn_law.atoms) | set(bmc_law.atoms)
    if urn_law.is_exact and bmc_law.is_exact:
        zero = Fraction(0)
        return sum((abs(urn_law.atoms.get(k, zero) - bmc_law.atoms.get(k, zero)) for k in keys), zero) / 2
    return 0.5 * math.fsum(abs(float(urn_law.atoms.get(k, 0.0)) - float(bmc_law.atoms.get(k, 0.0))) for k in keys)


def write_series_csv(a: GrowthSeries, b: GrowthSeries, path: Path, meta: Meta | None = None) -> Path:
    """Columns ``n, A_n, B_n, ratio`` where ratio is ``B_n`` over its regime normalizer (blank at n=0)."""
    regime = regime_for(b.r)
    rows = []
    for n, (an, bn) in enumerate(zip(a.values, b.values)):
        ratio = float(bn / growth_normalizer(regime, b.r, np.array(n))) if n else ""
        rows.append((n, an, bn, ratio))
    return write_csv(path, ["n", "A_n", "B_n", "ratio"], rows, meta)
