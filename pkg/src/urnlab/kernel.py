"""Balanced replacement matrices over countable colors.

A kernel is either an explicit finite row table or a generator that produces the
row of any color on demand. Generator rows may have infinite support; they are
truncated with the discarded mass reported alongside the row.
"""
from __future__ import annotations

import hashlib
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np
from loguru import logger

from urnlab.errors import (
    KernelError,
    NegativeEntry,
    NoConvergence,
    NoDecay,
    NonStochasticRow,
    TruncationOverflow,
    UnknownGenerator,
)
from urnlab.measure import SparseMeasure, Weight, exact_sum, parse_weight
from urnlab.settings import get_settings

ROW_SUM_TOL = 1e-12
SIM_ROW_TOL = 1e-15
CERTIFICATE_FLOOR = 1e-14
FALLBACK_RHO = 0.5
STATIONARY_TOL_FINITE = 1e-10
STATIONARY_TOL_GENERATOR = 1e-8

GENERATOR_SAMPLE_STATES = (*range(16), 31, 64, 100, 1000)


class FloatRow(NamedTuple):
    colors: tuple[int, ...]
    weights: tuple[float, ...]
    tail: float


class Kernel(ABC):
    kind: str

    @abstractmethod
    def row_with_tail(self, u: int, mass_tol: float = SIM_ROW_TOL) -> tuple[SparseMeasure, float]:
        """Return row ``u`` and the mass discarded by truncation (at most ``mass_tol``)."""

    @property
    @abstractmethod
    def num_colors(self) -> int | None:
        """Number of colors for finite kernels, ``None`` for open-ended ones."""

    @abstractmethod
    def row_is_finite(self, u: int) -> bool:
        pass

    @abstractmethod
    def describe(self) -> str:
        """Kernel file text for this kernel."""

    @property
    @abstractmethod
    def is_exact(self) -> bool:
        pass

    def row(self, u: int, mass_tol: float = SIM_ROW_TOL) -> SparseMeasure:
        return self.row_with_tail(u, mass_tol)[0]

    def float_row(self, u: int, mass_tol: float = SIM_ROW_TOL) -> FloatRow:
        """Float copy of row ``u`` with its discarded tail mass, cached per (color, tolerance)."""
        cache: dict[tuple[int, float], FloatRow] = self.__dict__.setdefault("_float_rows", {})
        hit = cache.get((u, mass_tol))
        if hit is None:
            row, tail = self.row_with_tail(u, mass_tol)
            row = row.as_float()
            hit = cache[(u, mass_tol)] = FloatRow(row.colors, row.weights, tail)  # type: ignore[arg-type]
        return hit

    def sim_row(self, u: int) -> FloatRow:
        return self.float_row(u, SIM_ROW_TOL)

    def digest(self) -> str:
        return hashlib.sha256(self.describe().encode()).hexdigest()[:16]


class ExplicitKernel(Kernel):
    kind = "explicit-finite"

    def __init__(self, rows: Sequence[SparseMeasure]):
        self.rows = tuple(rows)

    @property
    def num_colors(self) -> int:
        return len(self.rows)

    @property
    def is_exact(self) -> bool:
        return all(r.is_exact for r in self.rows)

    def row_with_tail(self, u: int, mass_tol: float = SIM_ROW_TOL) -> tuple[SparseMeasure, float]:
        if not 0 <= u < len(self.rows):
            raise KernelError(f"Color {u} is outside the {len(self.rows)}-color kernel")
        return self.rows[u], 0.0

    def row_is_finite(self, u: int) -> bool:
        return True

    @cached_property
    def matrix(self) -> np.ndarray:
        k = len(self.rows)
        out = np.zeros((k, k))
        for u, r in enumerate(self.rows):
            for v, w in r:
                out[u, v] = float(w)
        return out

    def describe(self) -> str:
        lines = [f"kernel explicit {len(self.rows)}"]
        for u, r in enumerate(self.rows):
            lines.extend(f"{u} {v} {w}" for v, w in r)
        return "\n".join(lines) + "\n"


class GeneratorKernel(Kernel):
    kind = "generator"
    name: str

    @property
    def num_colors(self) -> None:
        return None

    @abstractmethod
    def params(self) -> dict[str, Any]:
        pass

    def describe(self) -> str:
        parts = []
        for key, value in self.params().items():
            if isinstance(value, (list, tuple)):
                value = ",".join(str(x) for x in value)
            parts.append(f"{key}={value}")
        return f"kernel generator {self.name} {' '.join(parts)}\n"


class ResetChainKernel(GeneratorKernel):
    """From ``u``: with probability epsilon redraw from Geometric(p) on {0,1,...}, else move to ``u+1``."""

    name = "reset-chain"

    def __init__(self, epsilon: Weight, nu_geometric_p: Weight):
        if not 0 < epsilon <= 1:
            raise KernelError(f"epsilon must lie in (0, 1], got {epsilon}")
        if not 0 < nu_geometric_p <= 1:
            raise KernelError(f"nu_geometric_p must lie in (0, 1], got {nu_geometric_p}")
        self.epsilon, self.p = _coerce_weights((epsilon, nu_geometric_p))

    def params(self) -> dict[str, Any]:
        return {"epsilon": self.epsilon, "nu_geometric_p": self.p}

    @property
    def is_exact(self) -> bool:
        return isinstance(self.epsilon, Fraction) and isinstance(self.p, Fraction)

    def row_is_finite(self, u: int) -> bool:
        return self.p == 1

    def geometric_cutoff(self, mass_tol: float) -> int:
        """Smallest K with epsilon * (1-p)^K <= mass_tol."""
        q = 1 - float(self.p)
        if q == 0:
            return 1
        if mass_tol <= 0:
            raise KernelError("Generator rows with infinite support need mass_tol > 0")
        return max(1, math.ceil(math.log(mass_tol / float(self.epsilon)) / math.log(q)))

    def row_with_tail(self, u: int, mass_tol: float = SIM_ROW_TOL) -> tuple[SparseMeasure, float]:
        if u < 0:
            raise KernelError(f"Color {u} is negative")
        eps, p = self.epsilon, self.p
        q = 1 - p
        cutoff = self.geometric_cutoff(mass_tol)
        entries: dict[int, Weight] = {k: eps * p * q**k for k in range(cutoff)}
        entries[u + 1] = entries.get(u + 1, 0) + (1 - eps)
        tail = float(eps * q**cutoff)
        return SparseMeasure.from_mapping(entries), tail

    def nu(self, mass_tol: float = SIM_ROW_TOL) -> SparseMeasure:
        cutoff = self.geometric_cutoff(mass_tol)
        return SparseMeasure.from_mapping({k: self.p * (1 - self.p) ** k for k in range(cutoff)})


class StarWalkKernel(GeneratorKernel):
    """Row 0 is ``p``; every other row sends all mass to color 0."""

    name = "star-walk"

    def __init__(self, p: Sequence[Weight]):
        if not p:
            raise KernelError("star-walk needs a nonempty p vector")
        for j, pj in enumerate(p):
            if pj < 0:
                raise NegativeEntry(0, j)
        total = exact_sum(p)
        if abs(float(total) - 1.0) > ROW_SUM_TOL:
            raise NonStochasticRow(0, total)
        self.p = _coerce_weights(p)

    def params(self) -> dict[str, Any]:
        return {"p": self.p}

    @property
    def is_exact(self) -> bool:
        return all(isinstance(x, Fraction) for x in self.p)

    def row_is_finite(self, u: int) -> bool:
        return True

    def row_with_tail(self, u: int, mass_tol: float = SIM_ROW_TOL) -> tuple[SparseMeasure, float]:
        if u < 0:
            raise KernelError(f"Color {u} is negative")
        if u == 0:
            return SparseMeasure.from_mapping(dict(enumerate(self.p))), 0.0
        one: Weight = Fraction(1) if self.is_exact else 1.0
        return SparseMeasure.point_mass(0, one), 0.0


def _coerce_weights(values: Iterable[Weight]) -> tuple[Weight, ...]:
    values = tuple(values)
    if all(isinstance(v, (Fraction, int)) and not isinstance(v, bool) for v in values):
        return tuple(Fraction(v) for v in values)
    return tuple(float(v) for v in values)


GENERATORS: dict[str, Callable[..., GeneratorKernel]] = {
    "reset-chain": ResetChainKernel,
    "star-walk": StarWalkKernel,
}


def _check_row(u: int, row: Mapping[int, Weight] | Iterable[tuple[int, Weight]], tail: float = 0.0) -> SparseMeasure:
    items = list(row.items() if isinstance(row, Mapping) else row)
    for v, w in items:
        if w < 0:
            raise NegativeEntry(u, v)
    measure = SparseMeasure.from_mapping(items)
    total = measure.total_mass
    if abs(float(total) + tail - 1.0) > ROW_SUM_TOL:
        raise NonStochasticRow(u, total)
    return measure


def build_kernel(spec: Sequence[Sequence[Weight]] | Mapping[int, Mapping[int, Weight]] | str) -> Kernel:
    """Build and validate a kernel from dense rows, a row mapping, or kernel file text."""
    if isinstance(spec, str):
        return parse_kernel_text(spec)
    if isinstance(spec, Mapping):
        k = max(spec.keys(), default=-1) + 1
        rows = [_check_row(u, spec.get(u, {})) for u in range(k)]
    else:
        rows = [_check_row(u, enumerate(r)) for u, r in enumerate(spec)]
    k = len(rows)
    for u, r in enumerate(rows):
        if r.colors and r.colors[-1] >= k:
            raise KernelError(f"Row {u} puts mass on color {r.colors[-1]} outside the {k}-color kernel")
    return ExplicitKernel(rows)


def build_generator(name: str, **params: Any) -> GeneratorKernel:
    try:
        factory = GENERATORS[name]
    except KeyError:
        raise UnknownGenerator(name) from None
    try:
        kernel = factory(**params)
    except TypeError as e:
        raise KernelError(f"Bad parameters for generator {name!r}: {e}") from None
    for u in GENERATOR_SAMPLE_STATES:
        row, tail = kernel.row_with_tail(u, SIM_ROW_TOL)
        _check_row(u, row, tail)
    return kernel


def _parse_param(value: str) -> Any:
    if "," in value:
        return [parse_weight(x) for x in value.split(",") if x.strip()]
    return parse_weight(value)


def generator_from_strings(name: str, raw: Mapping[str, str]) -> GeneratorKernel:
    """Build a generator from ``key=value`` strings; comma lists become vectors."""
    params = {key: _parse_param(value) for key, value in raw.items()}
    if name == "star-walk" and "p" in params and not isinstance(params["p"], list):
        params["p"] = [params["p"]]
    return build_generator(name, **params)


def parse_kernel_text(text: str) -> Kernel:
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise KernelError("Empty kernel description")
    header = lines[0].split()
    if len(header) < 3 or header[0] != "kernel":
        raise KernelError(f"Bad kernel header: {lines[0]!r}")
    if header[1] == "explicit":
        k = int(header[2])
        table: dict[int, dict[int, Weight]] = {u: {} for u in range(k)}
        for ln in lines[1:]:
            u_s, v_s, w_s = ln.split()
            u, v = int(u_s), int(v_s)
            if not (0 <= u < k and 0 <= v < k):
                raise KernelError(f"Entry ({u}, {v}) outside the {k}-color kernel")
            table[u][v] = table[u].get(v, Fraction(0)) + parse_weight(w_s)
        return build_kernel(table)
    if header[1] == "generator":
        raw: dict[str, str] = {}
        for token in header[3:]:
            key, sep, value = token.partition("=")
            if not sep:
                raise KernelError(f"Expected key=value, got {token!r}")
            raw[key] = value
        return generator_from_strings(header[2], raw)
    raise KernelError(f"Unknown kernel kind {header[1]!r}")


def read_kernel_file(path: str | Path) -> Kernel:
    return parse_kernel_text(Path(path).read_text())


def _prune(entries: dict[int, float], budget: float) -> tuple[dict[int, float], float]:
    """Drop the smallest entries whose combined mass stays within ``budget``."""
    if budget <= 0 or not entries:
        return entries, 0.0
    dropped = 0.0
    for color, weight in sorted(entries.items(), key=lambda cw: cw[1]):
        if dropped + weight > budget:
            break
        dropped += weight
        del entries[color]
    return entries, dropped


def push_forward(
    measure: SparseMeasure,
    kernel: Kernel,
    mass_tol: float = 0.0,
    support_cap: int | None = None,
) -> tuple[SparseMeasure, float]:
    """One application ``measure @ R``; returns the result and the discarded mass.

    Exact measures over exact finite kernels propagate without truncation.
    """
    cap = support_cap or get_settings().max_support
    if measure.is_exact and kernel.is_exact and all(kernel.row_is_finite(c) for c in measure.colors):
        acc: dict[int, Weight] = {}
        for c, w in measure:
            for v, rw in kernel.row(c):
                acc[v] = acc.get(v, Fraction(0)) + w * rw
        if len(acc) > cap:
            raise TruncationOverflow(len(acc), cap)
        return SparseMeasure.from_mapping(acc), 0.0
    row_tol = max(mass_tol / 2, SIM_ROW_TOL)
    out: dict[int, float] = {}
    discarded = 0.0
    for c, w in measure:
        colors, weights, tail = kernel.float_row(c, row_tol)
        wf = float(w)
        for v, rw in zip(colors, weights):
            out[v] = out.get(v, 0.0) + wf * rw
        discarded += wf * tail
    out, pruned = _prune(out, mass_tol / 2)
    if len(out) > cap:
        raise TruncationOverflow(len(out), cap)
    return SparseMeasure.from_mapping(out), discarded + pruned


def propagate(measure: SparseMeasure, kernel: Kernel, steps: int, mass_tol: float = 1e-12) -> tuple[SparseMeasure, float]:
    """``measure @ R^steps`` with a total truncation budget of ``mass_tol`` per unit mass."""
    if steps < 0:
        raise ValueError(f"steps must be nonnegative, got {steps}")
    if isinstance(kernel, ExplicitKernel) and not (measure.is_exact and kernel.is_exact):
        vec = np.zeros(kernel.num_colors)
        for c, w in measure:
            vec[c] = float(w)
        for _ in range(steps):
            vec = vec @ kernel.matrix
        return SparseMeasure.from_mapping({int(c): float(vec[c]) for c in np.flatnonzero(vec)}), 0.0
    step_tol = mass_tol / steps if steps else 0.0
    discarded = 0.0
    for _ in range(steps):
        measure, lost = push_forward(measure, kernel, step_tol)
        discarded += lost
    return measure, discarded


def n_step_row(kernel: Kernel, u: int, n: int, mass_tol: float = 1e-12) -> SparseMeasure:
    """Row ``u`` of ``R^n``; generator truncation discards at most ``mass_tol``."""
    if not 0 < mass_tol <= 0.01:
        raise ValueError(f"mass_tol must lie in (0, 0.01], got {mass_tol}")
    one: Weight = Fraction(1) if kernel.is_exact else 1.0
    row, _ = propagate(SparseMeasure.point_mass(u, one), kernel, n, mass_tol)
    return row


def _dense_stationary(kernel: ExplicitKernel, tol: float, max_iter: int) -> np.ndarray:
    k = kernel.num_colors
    P = kernel.matrix
    pi = np.full(k, 1.0 / k)
    # Iterate past tol so that the returned vector, not just its residual, is accurate.
    target = max(tol * 1e-3, 4 * k * np.finfo(float).eps)
    residual = math.inf
    for it in range(1, max_iter + 1):
        nxt = pi @ P
        nxt /= nxt.sum()
        residual = float(np.abs(nxt - pi).sum())
        pi = nxt
        if residual <= target:
            logger.debug(f"Power iteration converged after {it} iterations (residual {residual:.3e})")
            return pi
    if residual <= tol:
        return pi
    raise NoConvergence(max_iter, residual)


def _generator_stationary(kernel: Kernel, tol: float, support_cap: int, max_iter: int) -> SparseMeasure:
    size = 16
    pi = {c: 1.0 / size for c in range(size)}
    residual = math.inf
    for it in range(1, max_iter + 1):
        current = SparseMeasure.from_mapping(pi)
        nxt_measure, _ = push_forward(current, kernel, 0.0, support_cap)
        nxt = nxt_measure.to_dict()
        outside = math.fsum(w for c, w in nxt.items() if c >= size)
        if outside > tol / 10:
            size = max(2 * size, max(nxt) + 1)
            if size > support_cap:
                raise TruncationOverflow(size, support_cap)
            logger.debug(f"Expanding stationary support to {size} colors at iteration {it}")
        else:
            nxt = {c: w for c, w in nxt.items() if c < size}
        residual = math.fsum(abs(nxt.get(c, 0.0) - pi.get(c, 0.0)) for c in set(nxt) | set(pi)) + (
            outside if outside <= tol / 10 else 0.0
        )
        total = math.fsum(nxt.values())
        pi = {c: w / total for c, w in nxt.items()}
        if residual <= tol and outside <= tol / 10:
            logger.debug(f"Generator power iteration converged after {it} iterations on {size} colors")
            return SparseMeasure.from_mapping(pi)
    raise NoConvergence(max_iter, residual)


def stationary_distribution(
    kernel: Kernel,
    tol: float | None = None,
    support_cap: int | None = None,
    max_iter: int = 1_000_000,
) -> SparseMeasure:
    """Solve ``pi R = pi`` by power iteration from the uniform distribution."""
    cap = support_cap or get_settings().max_support
    if isinstance(kernel, ExplicitKernel):
        pi = _dense_stationary(kernel, tol or STATIONARY_TOL_FINITE, max_iter)
        return SparseMeasure.from_mapping({c: float(w) for c, w in enumerate(pi) if w > 0})
    return _generator_stationary(kernel, tol or STATIONARY_TOL_GENERATOR, cap, max_iter)


def stationary_residual(kernel: Kernel, pi: SparseMeasure) -> float:
    """``||pi R - pi||_1`` including any mass the kernel moves off ``pi``'s support."""
    image, lost = push_forward(pi.as_float(), kernel, 0.0)
    return image.l1_distance(pi.as_float()) + lost


@dataclass(frozen=True)
class ErgodicityCertificate:
    C: float
    rho: float
    n_range: tuple[int, int]
    sup_errors: tuple[float, ...]
    check_states: tuple[int, ...] = ()
    check_colors: tuple[int, ...] = ()
    fitted_points: int = 0

    def bound(self, n: int) -> float:
        return self.C * self.rho**n

    def dominates(self) -> bool:
        lo, _ = self.n_range
        return all(e <= self.bound(lo + i) for i, e in enumerate(self.sup_errors))

    def to_json(self) -> dict[str, Any]:
        return {
            "C": self.C,
            "rho": self.rho,
            "n_range": list(self.n_range),
            "sup_errors": list(self.sup_errors),
            "check_states": list(self.check_states),
            "check_colors": list(self.check_colors),
            "fitted_points": self.fitted_points,
        }


def decay_rate(kernel: Kernel) -> float | None:
    """Known geometric rate of ``R^n -> pi``, or ``None`` when there is no closed form.

    Explicit kernels use the second largest eigenvalue modulus; the reset chain
    decays at ``1 - epsilon``.
    """
    if isinstance(kernel, ExplicitKernel):
        moduli = np.sort(np.abs(np.linalg.eigvals(kernel.matrix)))[::-1]
        return float(moduli[1]) if len(moduli) > 1 else 0.0
    if isinstance(kernel, ResetChainKernel):
        return 1 - float(kernel.epsilon)
    return None


def sup_errors(
    kernel: Kernel,
    pi: SparseMeasure,
    check_states: Iterable[int],
    check_colors: Iterable[int],
    n_max: int,
    mass_tol: float = 1e-12,
) -> list[float]:
    """``e_n = max_{u,v} |R^n(u,v) - pi_v|`` over the checked pairs, for ``n = 1..n_max``."""
    colors = sorted(set(check_colors))
    target = [float(pi[v]) for v in colors]
    one: Weight = 1.0
    rows = {u: SparseMeasure.point_mass(u, one) for u in sorted(set(check_states))}
    errors = []
    step_tol = mass_tol / n_max
    for _ in range(n_max):
        worst = 0.0
        for u in rows:
            rows[u], _ = (
                propagate(rows[u], kernel, 1) if isinstance(kernel, ExplicitKernel) else push_forward(rows[u], kernel, step_tol)
            )
            worst = max(worst, max(abs(float(rows[u][v]) - t) for v, t in zip(colors, target)))
        errors.append(worst)
    return errors


def fit_ergodicity_certificate(
    kernel: Kernel,
    check_states: Iterable[int],
    check_colors: Iterable[int],
    n_max: int,
    pi: SparseMeasure | None = None,
    mass_tol: float = 1e-12,
) -> ErgodicityCertificate:
    """Fit ``(C, rho)`` with ``|R^n(u,v) - pi_v| <= C rho^n`` on the checked pairs."""
    states, colors = tuple(sorted(set(check_states))), tuple(sorted(set(check_colors)))
    if n_max < 4:
        raise ValueError(f"n_max must be at least 4, got {n_max}")
    if not states or not colors:
        raise ValueError("State and color sets must be nonempty")
    pi = pi if pi is not None else stationary_distribution(kernel)
    errors = sup_errors(kernel, pi, states, colors, n_max, mass_tol)
    first, last = errors[0], errors[-1]
    if first > CERTIFICATE_FLOOR and last > first / 2:
        raise NoDecay(first, last)
    points = [(n, math.log(e)) for n, e in enumerate(errors, start=1) if e > CERTIFICATE_FLOOR]
    if len(points) >= 2:
        ns, logs = np.array(points).T
        slope, _ = np.polyfit(ns, logs, 1)
        rho = float(math.exp(slope))
        if rho >= 1:
            raise NoDecay(first, last)
    else:
        rho = FALLBACK_RHO
    log_c = max((math.log(e) - n * math.log(rho) for n, e in enumerate(errors, start=1) if e > 0), default=-math.inf)
    C = max(math.exp(log_c) if log_c > -math.inf else 0.0, CERTIFICATE_FLOOR)
    cert = ErgodicityCertificate(C, rho, (1, n_max), tuple(errors), states, colors, len(points))
    while not cert.dominates():
        C *= 1 + 1e-12
        cert = ErgodicityCertificate(C, rho, (1, n_max), tuple(errors), states, colors, len(points))
    logger.info(f"Fitted certificate C={C:.6g}, rho={rho:.6g} from {len(points)} points over n=1..{n_max}")
    return cert


@dataclass(frozen=True)
class DoeblinWitness:
    epsilon: Weight
    nu: SparseMeasure
    n0: int
    check_states: tuple[int, ...] = field(default=())

    @property
    def holds(self) -> bool:
        return self.epsilon > 0


def _row_minorization(kernel: Kernel, n0: int, states: tuple[int, ...], mass_tol: float) -> DoeblinWitness:
    rows = [n_step_row(kernel, u, n0, mass_tol) for u in states]
    common = set(rows[0].colors)
    for r in rows[1:]:
        common &= set(r.colors)
    infimum = {v: min(r[v] for r in rows) for v in common}
    epsilon = exact_sum(infimum.values()) if infimum else 0.0
    if epsilon <= 0:
        return DoeblinWitness(0.0, SparseMeasure.empty(), n0, states)
    nu: dict[int, Weight] = {}
    for v, low in infimum.items():
        value = low / epsilon
        if not isinstance(value, Fraction):
            while epsilon * value > low:
                value = math.nextafter(value, 0.0)
        nu[v] = value
    return DoeblinWitness(epsilon, SparseMeasure.from_mapping(nu), n0, states)


def check_doeblin(kernel: Kernel, n0: int, check_states: Iterable[int], mass_tol: float = 1e-12) -> DoeblinWitness:
    """Certify ``R^{n0}(u, .) >= epsilon * nu`` on the checked states; ``epsilon == 0`` means unverified.

    The infimum over truncated rows loses the truncated tail, so the reset chain
    also gets its analytic witness: every row resets to ``nu`` with probability
    epsilon, hence ``R^{n0} >= epsilon * nu R^{n0-1}``. The larger epsilon wins.
    """
    if n0 < 1:
        raise ValueError(f"n0 must be at least 1, got {n0}")
    states = tuple(sorted(set(check_states)))
    if not states:
        raise ValueError("State set must be nonempty")
    witness = _row_minorization(kernel, n0, states, mass_tol)
    if isinstance(kernel, ResetChainKernel) and kernel.epsilon >= witness.epsilon:
        nu, _ = propagate(kernel.nu(mass_tol), kernel, n0 - 1, mass_tol)
        witness = DoeblinWitness(kernel.epsilon, nu, n0, states)
    return witness
