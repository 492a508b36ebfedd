"""Weighted random recursive trees.

The root ``o`` carries weight ``t``, every other vertex weight 1. Vertex ``w_k``
attaches to ``o`` with probability ``t / (k + t)`` and to each ``w_i`` (``i < k``)
with probability ``1 / (k + t)``. Vertices are numbered ``0..n``; ``ROOT`` (-1)
stands for ``o``.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from pathlib import Path

import numpy as np
from loguru import logger

from urnlab.errors import HorizonTooLarge, UnknownVertex
from urnlab.measure import Weight
from urnlab.reporting import Meta, meta_comment
from urnlab.settings import get_settings

ROOT = -1


@dataclass(frozen=True, eq=False)
class RecursiveTree:
    """Append-only tree; ``attach`` on the newest snapshot shares the parent and depth lists."""

    root_weight: Weight
    _parents: list[int]
    _depths: list[int]
    size: int

    @classmethod
    def empty(cls, root_weight: Weight) -> RecursiveTree:
        if root_weight <= 0:
            raise ValueError(f"Root weight must be positive, got {root_weight}")
        return cls(root_weight, [], [], 0)

    @classmethod
    def from_parents(cls, root_weight: Weight, parents: list[int] | tuple[int, ...]) -> RecursiveTree:
        tree = cls.empty(root_weight)
        for p in parents:
            tree = tree.attach(p)
        return tree

    @property
    def parents(self) -> tuple[int, ...]:
        return tuple(self._parents[: self.size])

    @property
    def depths(self) -> tuple[int, ...]:
        return tuple(self._depths[: self.size])

    @property
    def n(self) -> int:
        """Index of the newest vertex, so the tree is ``T_n``."""
        return self.size - 1

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, RecursiveTree):
            return NotImplemented
        return self.root_weight == other.root_weight and self.parents == other.parents

    def __hash__(self) -> int:
        return hash((self.root_weight, self.parents))

    def parent(self, u: int) -> int:
        self._check(u)
        if u == ROOT:
            raise UnknownVertex(u)
        return self._parents[u]

    def attach(self, parent: int) -> RecursiveTree:
        if not ROOT <= parent < self.size:
            raise ValueError(f"Vertex {self.size} cannot attach to {parent}: parents must be older vertices or the root")
        depth = 1 if parent == ROOT else self._depths[parent] + 1
        if len(self._parents) == self.size:
            parents, depths = self._parents, self._depths
        else:
            parents, depths = self._parents[: self.size], self._depths[: self.size]
        parents.append(parent)
        depths.append(depth)
        return RecursiveTree(self.root_weight, parents, depths, self.size + 1)

    def children(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {ROOT: []}
        for j in range(self.size):
            out.setdefault(j, [])
            out[self._parents[j]].append(j)
        return out

    def _check(self, u: int) -> None:
        if not ROOT <= u < self.size:
            raise UnknownVertex(u)


@dataclass(frozen=True)
class TreeBatch:
    """Many trees of the same size as ``(replicas, n + 1)`` parent and depth arrays."""

    root_weight: float
    parents: np.ndarray
    depths: np.ndarray

    @property
    def replicas(self) -> int:
        return self.parents.shape[0]

    def tree(self, i: int) -> RecursiveTree:
        return RecursiveTree.from_parents(self.root_weight, self.parents[i].tolist())

    def ancestor_table(self) -> np.ndarray:
        """``anc[r, j, k]`` is the ancestor of ``w_j`` at depth ``k + 1`` in tree ``r``, or -1 below ``w_j``."""
        reps, size = self.parents.shape
        max_depth = int(self.depths.max()) if size else 0
        anc = np.full((reps, size, max_depth), -1, dtype=np.int32)
        rows = np.arange(reps)
        for j in range(size):
            p = self.parents[:, j]
            inherited = anc[rows, np.maximum(p, 0)]
            anc[:, j] = np.where((p == ROOT)[:, None], -1, inherited)
            anc[rows, j, self.depths[:, j] - 1] = j
        return anc

    def distance_matrices(self, chunk_bytes: int = 50_000_000) -> np.ndarray:
        """Pairwise graph distances ``d(w_i, w_j)`` for every tree, shape ``(replicas, n + 1, n + 1)``."""
        anc = self.ancestor_table()
        reps, size, depth = anc.shape
        out = np.empty((reps, size, size), dtype=np.int32)
        chunk = max(1, chunk_bytes // max(1, size * size * depth))
        for lo in range(0, reps, chunk):
            a = anc[lo : lo + chunk]
            shared = ((a[:, :, None, :] == a[:, None, :, :]) & (a[:, :, None, :] >= 0)).sum(axis=3)
            d = self.depths[lo : lo + chunk]
            out[lo : lo + chunk] = d[:, :, None] + d[:, None, :] - 2 * shared
        return out


def _attach_index(uniform: float, k: int, t: float) -> int:
    """Map a uniform variate to a parent of ``w_k``: ``[0, t)`` is the root, then one unit per vertex."""
    x = uniform * (k + t)
    if x < t:
        return ROOT
    return min(int(x - t), k - 1)


def grow_rrt(t: Weight, n: int, rng: np.random.Generator) -> RecursiveTree:
    """Grow ``T_n`` (vertices ``w_0..w_n``); ``w_0`` always joins the root."""
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    tree = RecursiveTree.empty(t).attach(ROOT)
    tf = float(t)
    for k, u in enumerate(rng.random(n).tolist(), start=1):
        tree = tree.attach(_attach_index(u, k, tf))
    return tree


def grow_rrt_batch(t: float, n: int, replicas: int, rng: np.random.Generator) -> TreeBatch:
    """Grow ``replicas`` independent copies of ``T_n`` at once."""
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    if t <= 0:
        raise ValueError(f"Root weight must be positive, got {t}")
    t = float(t)
    parents = np.full((replicas, n + 1), ROOT, dtype=np.int32)
    depths = np.ones((replicas, n + 1), dtype=np.int32)
    rows = np.arange(replicas)
    for k in range(1, n + 1):
        x = rng.random(replicas) * (k + t)
        idx = np.minimum(np.floor(x - t), k - 1).astype(np.int32)
        to_root = x < t
        parents[:, k] = np.where(to_root, ROOT, idx)
        depths[:, k] = np.where(to_root, 1, depths[rows, np.maximum(idx, 0)] + 1)
    return TreeBatch(t, parents, depths)


def tree_depth(tree: RecursiveTree, u: int) -> int:
    tree._check(u)
    return 0 if u == ROOT else tree._depths[u]


def tree_lca(tree: RecursiveTree, u: int, w: int) -> int:
    """Lowest common ancestor: lift the deeper vertex to equal depth, then lift both."""
    du, dw = tree_depth(tree, u), tree_depth(tree, w)
    parents = tree._parents
    while du > dw:
        u, du = parents[u], du - 1
    while dw > du:
        w, dw = parents[w], dw - 1
    while u != w:
        u, w = parents[u], parents[w]
    return u


def tree_distance(tree: RecursiveTree, u: int, w: int) -> int:
    return tree_depth(tree, u) + tree_depth(tree, w) - 2 * tree_depth(tree, tree_lca(tree, u, w))


def enumerate_rrt(t: Weight, n: int) -> list[tuple[RecursiveTree, Weight]]:
    """Every ``T_n`` with its probability; exact when ``t`` is rational."""
    cap = get_settings().tree_enum_cap
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    if n > cap:
        raise HorizonTooLarge(n, cap)
    if t <= 0:
        raise ValueError(f"Root weight must be positive, got {t}")
    tw: Weight = Fraction(t) if isinstance(t, (int, Fraction)) else float(t)
    choices = [[ROOT, *range(k)] for k in range(1, n + 1)]
    out = []
    for assignment in product(*choices):
        prob: Weight = Fraction(1) if isinstance(tw, Fraction) else 1.0
        for k, p in enumerate(assignment, start=1):
            prob *= (tw if p == ROOT else 1) / (k + tw)
        out.append((RecursiveTree.from_parents(tw, [ROOT, *assignment]), prob))
    logger.debug(f"Enumerated {len(out)} recursive trees of size {n + 1}")
    return out


def format_tree(tree: RecursiveTree, meta: Meta | None = None) -> str:
    lines = [meta_comment(meta)] if meta else []
    lines.append(f"# root_weight {tree.root_weight}")
    lines.extend(f"{j} {p}" for j, p in enumerate(tree.parents))
    return "\n".join(lines) + "\n"


def write_tree(tree: RecursiveTree, path: Path, meta: Meta | None = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_tree(tree, meta))
    return path
