"""Branching Markov chain on a weighted random recursive tree.

Children of the root draw their color from ``U_0 / t``; any other vertex draws
from the kernel row of its parent's color. The root itself holds the placeholder
state, which is never a color and never stored.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from loguru import logger

from urnlab.errors import HorizonTooLarge, InfiniteSupportReachable, UnknownVertex, ZeroMass
from urnlab.kernel import ExplicitKernel, Kernel, propagate
from urnlab.measure import SparseMeasure, Weight, draw_color
from urnlab.reporting import Meta, write_csv
from urnlab.rrt import ROOT, RecursiveTree, enumerate_rrt, tree_depth
from urnlab.settings import get_settings
from urnlab.urn import SequenceLaw


@dataclass(frozen=True)
class BMCTrace:
    tree: RecursiveTree
    colors: tuple[int, ...]

    def color(self, u: int) -> int:
        if u == ROOT:
            raise UnknownVertex(u)
        return self.colors[u]


def bmc_run(tree: RecursiveTree, kernel: Kernel, u0: SparseMeasure, rng: np.random.Generator) -> BMCTrace:
    """Color every vertex in index order, one uniform per vertex."""
    if u0.total_mass <= 0:
        raise ZeroMass()
    start = u0.as_float()
    start_weights = list(start.weights)
    t = float(start.total_mass)
    colors: list[int] = []
    for parent, u in zip(tree.parents, rng.random(len(tree)).tolist()):
        if parent == ROOT:
            colors.append(draw_color(start.colors, start_weights, t, u))
        else:
            row = kernel.sim_row(colors[parent])
            colors.append(draw_color(row.colors, row.weights, 1.0, u))
    return BMCTrace(tree, tuple(colors))


def _cdf_table(kernel: ExplicitKernel, u0: SparseMeasure) -> tuple[np.ndarray, np.ndarray, np.ndarray, int]:
    k = kernel.num_colors
    cdf = np.cumsum(kernel.matrix, axis=1)
    last = np.array([kernel.row(u).colors[-1] for u in range(k)])
    start = np.zeros(k)
    for c, w in u0.as_float():
        start[c] = w
    start_cdf = np.cumsum(start) / float(u0.total_mass)
    return cdf, last, start_cdf, u0.colors[-1]


def bmc_sample_colors(
    tree: RecursiveTree,
    kernel: Kernel,
    u0: SparseMeasure,
    samples: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """``samples`` independent BMC colorings of one tree, shape ``(samples, len(tree))``.

    Explicit kernels sample all replicas vertex by vertex from a dense CDF table;
    generator kernels fall back to repeated ``bmc_run``.
    """
    if u0.total_mass <= 0:
        raise ZeroMass()
    if not isinstance(kernel, ExplicitKernel):
        return np.array([bmc_run(tree, kernel, u0, rng).colors for _ in range(samples)], dtype=np.int64).reshape(
            samples, len(tree)
        )
    cdf, last, start_cdf, start_last = _cdf_table(kernel, u0)
    out = np.empty((samples, len(tree)), dtype=np.int64)
    for j, parent in enumerate(tree.parents):
        u = rng.random(samples)
        if parent == ROOT:
            drawn = np.searchsorted(start_cdf, u, side="right")
            out[:, j] = np.minimum(drawn, start_last)
        else:
            pc = out[:, parent]
            drawn = (u[:, None] >= cdf[pc]).sum(axis=1)
            out[:, j] = np.minimum(drawn, last[pc])
    return out


def bmc_vertex_marginal(
    tree: RecursiveTree,
    kernel: Kernel,
    u0: SparseMeasure,
    u: int,
    mass_tol: float = 1e-12,
) -> SparseMeasure:
    """Law of ``W_u``: a vertex at depth ``d`` sees ``d - 1`` kernel steps from ``U_0 / t``."""
    if u == ROOT:
        raise ValueError("The root carries no color")
    d = tree_depth(tree, u)
    if u0.total_mass <= 0:
        raise ZeroMass()
    marginal, _ = propagate(u0.normalized(), kernel, d - 1, mass_tol)
    return marginal


def bmc_exact_law(t: Weight, kernel: Kernel, u0: SparseMeasure, horizon: int) -> SequenceLaw:
    """Law of ``(W_0, ..., W_horizon)`` mixed over every recursive tree of that size."""
    cap = get_settings().exact_horizon_cap
    if horizon < 0:
        raise ValueError(f"horizon must be nonnegative, got {horizon}")
    if horizon > cap:
        raise HorizonTooLarge(horizon, cap)
    if u0.total_mass <= 0:
        raise ZeroMass()
    if abs(float(t) - float(u0.total_mass)) > 1e-12 * float(t):
        raise ValueError(f"Root weight {t} must equal the initial mass {u0.total_mass}")
    exact = u0.is_exact and kernel.is_exact and isinstance(t, (int, Fraction))
    start = (u0 if exact else u0.as_float()).normalized()
    rows: dict[int, SparseMeasure] = {}

    def row(c: int) -> SparseMeasure:
        if c not in rows:
            if not kernel.row_is_finite(c):
                raise InfiniteSupportReachable(c)
            r = kernel.row(c)
            rows[c] = r if exact else r.as_float()
        return rows[c]

    atoms: dict[tuple[int, ...], Weight] = {}
    for tree, tree_prob in enumerate_rrt(t if exact else float(t), horizon):
        parents = tree.parents
        stack: list[tuple[tuple[int, ...], Weight]] = [((), tree_prob)]
        while stack:
            path, prob = stack.pop()
            j = len(path)
            if j == len(parents):
                atoms[path] = atoms.get(path, 0) + prob
                continue
            law = start if parents[j] == ROOT else row(path[parents[j]])
            for z, w in law:
                stack.append((path + (z,), prob * w))
    logger.debug(f"Enumerated {len(atoms)} BMC color sequences at horizon {horizon}")
    return SequenceLaw(horizon, dict(sorted(atoms.items())))


def write_trace_csv(trace: BMCTrace, path: Path, meta: Meta | None = None) -> Path:
    tree = trace.tree
    rows = ((j, p, d, c) for j, (p, d, c) in enumerate(zip(tree.parents, tree.depths, trace.colors)))
    return write_csv(path, ["vertex_index", "parent_index", "depth", "color"], rows, meta)
