"""Balanced urn process: simulation and exact enumeration of the draw sequence.

At time ``n`` the urn holds ``U_n`` with total mass ``n + t``. A color ``z`` is
drawn with probability ``U_n(z) / (n + t)`` and row ``R_z`` is added.
"""
from __future__ import annotations

import bisect
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import chain
from pathlib import Path
from typing import Any, Iterator, Mapping

import numpy as np
from loguru import logger

from urnlab.errors import HorizonTooLarge, InfiniteSupportReachable, KernelError, UrnLabError, ZeroMass
from urnlab.kernel import FloatRow, Kernel, push_forward
from urnlab.measure import SparseMeasure, Weight, draw_color
from urnlab.reporting import Meta, write_csv, write_json
from urnlab.settings import get_settings

MASS_TOL = 1e-9


class ConfigAccumulator:
    """Mutable float configuration used by the simulators.

    Colors stay sorted so the cumulative scan in ``draw`` visits them in color
    order; two accumulators fed the same rows in the same order are bit-identical.
    """

    __slots__ = ("colors", "weights", "index", "total")

    def __init__(self, measure: SparseMeasure):
        m = measure.as_float()
        self.colors: list[int] = list(m.colors)
        self.weights: list[float] = [float(w) for w in m.weights]
        self.index = {c: i for i, c in enumerate(self.colors)}
        self.total = float(m.total_mass)

    def draw(self, nominal_total: float, uniform: float) -> int:
        return draw_color(self.colors, self.weights, nominal_total, uniform)

    def add_row(self, row: FloatRow) -> None:
        for v, w in zip(row.colors, row.weights):
            i = self.index.get(v)
            if i is None:
                i = bisect.bisect_left(self.colors, v)
                self.colors.insert(i, v)
                self.weights.insert(i, w)
                for j in range(i, len(self.colors)):
                    self.index[self.colors[j]] = j
            else:
                self.weights[i] += w
            self.total += w

    def to_measure(self) -> SparseMeasure:
        return SparseMeasure.from_mapping(zip(self.colors, self.weights))


class UniformStream:
    """Uniform variates pulled from ``rng`` in blocks; values match successive ``rng.random()`` calls."""

    def __init__(self, rng: np.random.Generator, block: int = 4096):
        self.rng = rng
        self.block = block
        self._buffer: list[float] = []
        self._pos = 0

    def next(self) -> float:
        if self._pos == len(self._buffer):
            self._buffer = self.rng.random(self.block).tolist()
            self._pos = 0
        u = self._buffer[self._pos]
        self._pos += 1
        return u


@dataclass(frozen=True)
class UrnState:
    config: SparseMeasure
    t0: Weight
    steps: int
    kernel: Kernel = field(compare=False, repr=False)

    @property
    def total_mass(self) -> Weight:
        return self.steps + self.t0


@dataclass(frozen=True)
class UrnTrace:
    draws: tuple[int, ...]
    local_times: dict[int, int]
    final_state: UrnState
    seed: int | None = None
    replica: int | None = None

    def local_time(self, v: int, n: int | None = None) -> int:
        """Number of draws of ``v`` among the first ``n`` draws (all draws by default)."""
        if n is None:
            return self.local_times.get(v, 0)
        return sum(1 for z in self.draws[:n] if z == v)

    def summary(self) -> dict[str, Any]:
        state = self.final_state
        return {
            "steps": state.steps,
            "t0": float(state.t0),
            "seed": self.seed,
            "replica": self.replica,
            "kernel_digest": state.kernel.digest(),
            "local_times": {str(v): c for v, c in sorted(self.local_times.items())},
            "normalized_config": normalized_config(state).to_json(),
        }


@dataclass(frozen=True)
class SequenceLaw:
    horizon: int
    atoms: Mapping[tuple[int, ...], Weight]

    def __iter__(self) -> Iterator[tuple[tuple[int, ...], Weight]]:
        return iter(self.atoms.items())

    @property
    def is_exact(self) -> bool:
        return all(isinstance(p, Fraction) for p in self.atoms.values())

    def total(self) -> Weight:
        if self.is_exact:
            return sum(self.atoms.values(), Fraction(0))
        return math.fsum(float(p) for p in self.atoms.values())

    def marginal(self, k: int) -> SparseMeasure:
        """Law of the ``k``-th coordinate."""
        if not 0 <= k <= self.horizon:
            raise ValueError(f"k must lie in [0, {self.horizon}], got {k}")
        out: dict[int, Weight] = {}
        for path, p in self.atoms.items():
            out[path[k]] = out.get(path[k], 0) + p
        return SparseMeasure.from_mapping(out)

    def to_json(self) -> dict[str, Any]:
        return {
            "horizon": self.horizon,
            "atoms": {",".join(map(str, path)): float(p) for path, p in self.atoms.items()},
        }


def check_mass(config_total: float, expected: float, what: str = "Urn") -> None:
    if abs(config_total - expected) > MASS_TOL * max(1.0, expected):
        raise UrnLabError(f"{what} mass drifted to {config_total!r}, expected {expected!r}")


def urn_init(u0: SparseMeasure, kernel: Kernel) -> UrnState:
    if u0.total_mass <= 0:
        raise ZeroMass()
    k = kernel.num_colors
    if k is not None and u0.colors[-1] >= k:
        raise KernelError(f"Initial color {u0.colors[-1]} is outside the {k}-color kernel")
    return UrnState(u0, u0.total_mass, 0, kernel)


def urn_draw(state: UrnState, rng: np.random.Generator) -> int:
    cfg = state.config
    return draw_color(cfg.colors, [float(w) for w in cfg.weights], float(state.total_mass), float(rng.random()))


def urn_step(state: UrnState, rng: np.random.Generator) -> tuple[UrnState, int]:
    z = urn_draw(state, rng)
    config = SparseMeasure.from_mapping(chain(state.config, state.kernel.row(z)))
    new_state = UrnState(config, state.t0, state.steps + 1, state.kernel)
    if get_settings().debug_checks:
        check_mass(float(config.total_mass), float(new_state.total_mass))
    return new_state, z


def urn_run(
    state: UrnState, n_steps: int, rng: np.random.Generator, seed: int | None = None, replica: int | None = None
) -> UrnTrace:
    """Run ``n_steps`` draws; consumes exactly ``n_steps`` uniforms from ``rng``."""
    if n_steps < 0:
        raise ValueError(f"n_steps must be nonnegative, got {n_steps}")
    if n_steps == 0:
        return UrnTrace((), {}, state, seed, replica)
    acc = ConfigAccumulator(state.config)
    kernel = state.kernel
    t0 = float(state.t0)
    base = state.steps
    debug = get_settings().debug_checks
    draws = []
    for k, u in enumerate(rng.random(n_steps).tolist()):
        z = acc.draw(base + k + t0, u)
        acc.add_row(kernel.sim_row(z))
        draws.append(z)
        if debug:
            check_mass(acc.total, base + k + 1 + t0)
    final = UrnState(acc.to_measure(), state.t0, base + n_steps, kernel)
    local_times = dict(sorted(Counter(draws).items()))
    logger.debug(f"Urn ran {n_steps} steps, {len(local_times)} distinct colors drawn")
    return UrnTrace(tuple(draws), local_times, final, seed, replica)


def normalized_config(state: UrnState) -> SparseMeasure:
    cfg = state.config
    if cfg.is_exact and isinstance(state.t0, Fraction):
        return cfg.scaled(1 / (state.steps + state.t0))
    return cfg.as_float().scaled(1.0 / float(state.total_mass))


def urn_exact_law(u0: SparseMeasure, kernel: Kernel, horizon: int) -> SequenceLaw:
    """Law of ``(Z_0, ..., Z_horizon)`` by walking every color sequence.

    Rational inputs give a rational law; anything else is enumerated in floats.
    """
    cap = get_settings().exact_horizon_cap
    if horizon < 0:
        raise ValueError(f"horizon must be nonnegative, got {horizon}")
    if horizon > cap:
        raise HorizonTooLarge(horizon, cap)
    if u0.total_mass <= 0:
        raise ZeroMass()
    exact = u0.is_exact and kernel.is_exact
    start = u0 if exact else u0.as_float()
    t = start.total_mass
    one: Weight = Fraction(1) if exact else 1.0
    rows: dict[int, SparseMeasure] = {}

    def row(c: int) -> SparseMeasure:
        if c not in rows:
            if not kernel.row_is_finite(c):
                raise InfiniteSupportReachable(c)
            r = kernel.row(c)
            rows[c] = r if exact else r.as_float()
        return rows[c]

    atoms: dict[tuple[int, ...], Weight] = {}
    stack: list[tuple[tuple[int, ...], dict[int, Weight], Weight]] = [((), start.to_dict(), one)]
    while stack:
        path, config, prob = stack.pop()
        denom = len(path) + t
        for z, w in config.items():
            p = prob * w / denom
            new_path = path + (z,)
            if len(path) == horizon:
                atoms[new_path] = p
                continue
            nxt = dict(config)
            for v, rw in row(z):
                nxt[v] = nxt.get(v, 0) + rw
            stack.append((new_path, nxt, p))
    logger.debug(f"Enumerated {len(atoms)} urn sequences at horizon {horizon}")
    return SequenceLaw(horizon, dict(sorted(atoms.items())))


def expected_draw_law(u0: SparseMeasure, kernel: Kernel, n: int, mass_tol: float = 1e-12) -> SparseMeasure:
    """``P(Z_n = .) = E[U_n] / (n + t)`` from the mean recursion ``E[U_{k+1}] = E[U_k] + E[U_k] R / (k + t)``."""
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    if u0.total_mass <= 0:
        raise ZeroMass()
    exact = u0.is_exact and kernel.is_exact
    mean = u0 if exact else u0.as_float()
    t = mean.total_mass
    for k in range(n):
        image, _ = push_forward(mean.scaled(1 / (k + t)), kernel, mass_tol / n)
        mean = SparseMeasure.from_mapping(chain(mean, image))
    return mean.scaled(1 / (n + t))


def write_trace_csv(trace: UrnTrace, path: Path, meta: Meta | None = None) -> Path:
    return write_csv(path, ["step", "drawn_color"], enumerate(trace.draws), meta)


def write_summary_json(trace: UrnTrace, path: Path, meta: Meta | None = None) -> Path:
    return write_json(path, trace.summary(), meta)
