"""Vertex-reinforced walk on the infinite star with a loop at the center ``v_0``.

From ``v_0`` the walker picks ``v_j`` with probability proportional to the
current weights; ``j = 0`` means taking the loop. From any leaf it returns to
``v_0``. Every arrival at ``v_0`` is an update time: the row ``alpha_j`` of the
vertex just left is added to the weights. A loop update takes one step (Y=1),
an excursion through a leaf takes two (Y=2).
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np
from loguru import logger

from urnlab.errors import KernelError, NonStochasticRow, ZeroMass
from urnlab.kernel import GENERATOR_SAMPLE_STATES, ROW_SUM_TOL, Kernel
from urnlab.measure import SparseMeasure, Weight, draw_color
from urnlab.reporting import Meta, write_csv
from urnlab.settings import get_settings
from urnlab.urn import ConfigAccumulator, UniformStream, check_mass

CENTER = 0


@dataclass(frozen=True)
class StarWalkState:
    weights: SparseMeasure
    position: int
    step: int
    updates: int
    alpha_rows: Kernel = field(compare=False, repr=False)
    delta0: SparseMeasure = field(repr=False)
    last_update: int = 0

    @property
    def delta(self) -> Weight:
        return self.delta0.total_mass

    @property
    def total_weight(self) -> float:
        """Nominal weight mass ``delta + updates``."""
        return float(self.delta) + self.updates


@dataclass(frozen=True)
class WalkTrace:
    positions: tuple[int, ...]
    update_times: tuple[int, ...]
    y_increments: tuple[int, ...]
    update_colors: tuple[int, ...]
    snapshots: dict[int, SparseMeasure]
    final_state: StarWalkState
    seed: int | None = None

    def m(self, n: int) -> int:
        """``m(n) = #{k >= 1 : sigma_k <= n}``, the number of updates by time ``n``."""
        return bisect.bisect_right(self.update_times, n)

    def sigma(self, k: int) -> int:
        if k == 0:
            return 0
        return self.update_times[k - 1]

    def sigma_tilde(self, k: int) -> int:
        """Loop updates among the first ``k`` updates."""
        return sum(1 for y in self.y_increments[:k] if y == 1)


class StarLimits(NamedTuple):
    sigma_limit: Weight
    weight_limits: SparseMeasure
    update_rate: Weight


def _validate_rows(kernel: Kernel) -> None:
    k = kernel.num_colors
    for u in range(k) if k is not None else GENERATOR_SAMPLE_STATES:
        row, tail = kernel.row_with_tail(u)
        if abs(float(row.total_mass) + tail - 1.0) > ROW_SUM_TOL:
            raise NonStochasticRow(u, row.total_mass)


def star_walk_init(delta0: SparseMeasure, alpha_rows: Kernel) -> StarWalkState:
    if delta0.total_mass <= 0:
        raise ZeroMass("initial weight measure")
    _validate_rows(alpha_rows)
    k = alpha_rows.num_colors
    if k is not None and delta0.colors[-1] >= k:
        raise KernelError(f"Vertex {delta0.colors[-1]} has weight but no alpha row")
    return StarWalkState(delta0, CENTER, 0, 0, alpha_rows, delta0)


def star_walk_step(state: StarWalkState, rng: np.random.Generator) -> tuple[StarWalkState, int]:
    """One time step; a uniform is consumed only when leaving the center."""
    if state.position == CENTER:
        w = state.weights
        j = draw_color(w.colors, [float(x) for x in w.weights], state.total_weight, float(rng.random()))
        if j != CENTER:
            return StarWalkState(
                state.weights, j, state.step + 1, state.updates, state.alpha_rows, state.delta0, state.last_update
            ), j
    else:
        j = state.position
    acc = ConfigAccumulator(state.weights)
    acc.add_row(state.alpha_rows.sim_row(j))
    if get_settings().debug_checks:
        check_mass(acc.total, state.total_weight + 1, "Star walk")
    new = StarWalkState(
        acc.to_measure(), CENTER, state.step + 1, state.updates + 1, state.alpha_rows, state.delta0, state.step + 1
    )
    return new, CENTER


def star_walk_run(
    state: StarWalkState,
    n_steps: int,
    rng: np.random.Generator,
    checkpoints: Iterable[int] = (),
    seed: int | None = None,
) -> WalkTrace:
    """Run ``n_steps`` time steps, snapshotting the weights at the requested times.

    Uniforms come from the same stream discipline as ``urn_run``, so the draws
    at update times reproduce an urn run on the same generator.
    """
    if n_steps < 0:
        raise ValueError(f"n_steps must be nonnegative, got {n_steps}")
    wanted = {c for c in checkpoints if state.step <= c <= state.step + n_steps}
    acc = ConfigAccumulator(state.weights)
    stream = UniformStream(rng)
    kernel = state.alpha_rows
    delta = float(state.delta)
    debug = get_settings().debug_checks
    position, updates, last = state.position, state.updates, state.last_update
    positions = [position]
    update_times: list[int] = []
    ys: list[int] = []
    colors: list[int] = []
    snapshots: dict[int, SparseMeasure] = {}
    if state.step in wanted:
        snapshots[state.step] = acc.to_measure()
    for time in range(state.step + 1, state.step + n_steps + 1):
        if position == CENTER:
            j = acc.draw(delta + updates, stream.next())
        else:
            j = position
        if position == CENTER and j != CENTER:
            position = j
        else:
            acc.add_row(kernel.sim_row(j))
            updates += 1
            if debug:
                check_mass(acc.total, delta + updates, "Star walk")
            update_times.append(time)
            ys.append(time - last)
            colors.append(j)
            last = time
            position = CENTER
        positions.append(position)
        if time in wanted:
            snapshots[time] = acc.to_measure()
    final = StarWalkState(acc.to_measure(), position, state.step + n_steps, updates, kernel, state.delta0, last)
    logger.debug(f"Star walk ran {n_steps} steps with {len(update_times)} updates")
    return WalkTrace(tuple(positions), tuple(update_times), tuple(ys), tuple(colors), snapshots, final, seed)


def star_limits(pi: SparseMeasure) -> StarLimits:
    """``sigma_n/(n+1) -> 2 - pi_0``, ``Delta_{n,j}/(n+delta) -> pi_j/(2 - pi_0)`` and ``m(n)/(n+1) -> 1/(2 - pi_0)``."""
    sigma = 2 - pi[CENTER]
    return StarLimits(sigma, pi.scaled(1 / sigma), 1 / sigma)


def write_series_csv(trace: WalkTrace, path: Path, vertices: Iterable[int], meta: Meta | None = None) -> Path:
    """Per checkpoint ``n``: ``sigma_n/(n+1)``, ``m(n)/(n+1)`` and ``Delta_{n,j}/(n+delta)``."""
    vertices = list(vertices)
    delta = float(trace.final_state.delta)
    rows = []
    for n in sorted(trace.snapshots):
        sigma_ratio = trace.sigma(n) / (n + 1) if n <= len(trace.update_times) else ""
        weights = trace.snapshots[n]
        rows.append([n, sigma_ratio, trace.m(n) / (n + 1), *(float(weights[j]) / (n + delta) for j in vertices)])
    return write_csv(path, ["n", "sigma_ratio", "update_rate", *(f"weight_{j}" for j in vertices)], rows, meta)
