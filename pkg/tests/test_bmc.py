import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strategies import exact_kernels, initial_measures
from urnlab.analysis import coupling_tv
from urnlab.bmc import bmc_exact_law, bmc_run, bmc_sample_colors, bmc_vertex_marginal, write_trace_csv
from urnlab.errors import UnknownVertex
from urnlab.kernel import build_kernel
from urnlab.measure import parse_measure
from urnlab.rrt import ROOT, RecursiveTree, grow_rrt
from urnlab.urn import urn_exact_law

CHAIN = RecursiveTree.from_parents(1, [ROOT, 0])
STAR = RecursiveTree.from_parents(1, [ROOT, ROOT])


def test_chain_flip_is_deterministic(flip, rng):
    trace = bmc_run(CHAIN, flip, parse_measure("0:1"), rng)
    assert trace.colors == (0, 1)
    with pytest.raises(UnknownVertex):
        trace.color(ROOT)


def test_identity_kernel_keeps_the_color(identity2, rng):
    tree = grow_rrt(1, 30, rng)
    trace = bmc_run(tree, identity2, parse_measure("1:1"), rng)
    assert set(trace.colors) == {1}


def test_colors_follow_parent_rows(two_state, rng):
    tree = grow_rrt(2, 40, rng)
    trace = bmc_run(tree, two_state, parse_measure("0:1,1:1"), rng)
    assert len(trace.colors) == 41
    assert all(c in (0, 1) for c in trace.colors)


def test_star_children_are_independent(two_state):
    colors = bmc_sample_colors(STAR, two_state, parse_measure("0:1/2,1:1/2"), 40_000, np.random.default_rng(3))
    both = np.mean((colors[:, 0] == 0) & (colors[:, 1] == 0))
    assert np.mean(colors[:, 0] == 0) == pytest.approx(0.5, abs=0.02)
    assert both == pytest.approx(0.25, abs=0.02)


def test_sampled_depth_two_frequency(two_state):
    colors = bmc_sample_colors(CHAIN, two_state, parse_measure("0:1"), 40_000, np.random.default_rng(9))
    assert np.all(colors[:, 0] == 0)
    assert np.mean(colors[:, 1] == 0) == pytest.approx(0.9, abs=0.01)


def test_sampler_handles_generator_kernels(star, rng):
    colors = bmc_sample_colors(CHAIN, star, parse_measure("0:1"), 50, rng)
    assert colors.shape == (50, 2)
    assert set(colors[:, 0].tolist()) == {0}


def test_vertex_marginals(two_state):
    tree = RecursiveTree.from_parents(1, [ROOT, 0, 1])
    u0 = parse_measure("0:1")
    assert bmc_vertex_marginal(tree, two_state, u0, 0).to_dict() == {0: Fraction(1)}
    assert bmc_vertex_marginal(tree, two_state, u0, 1).to_dict() == {0: Fraction(9, 10), 1: Fraction(1, 10)}
    assert bmc_vertex_marginal(tree, two_state, u0, 2).to_dict() == {0: Fraction(83, 100), 1: Fraction(17, 100)}
    with pytest.raises(ValueError):
        bmc_vertex_marginal(tree, two_state, u0, ROOT)


def test_run_frequencies_match_vertex_marginals(two_state):
    tree = RecursiveTree.from_parents(1, [ROOT, 0, 1, 0, ROOT])
    u0 = parse_measure("0:1/4,1:3/4")
    runs = 100_000
    rng = np.random.default_rng(77)
    colors = np.array([bmc_run(tree, two_state, u0, rng).colors for _ in range(runs)])
    for u in range(len(tree)):
        p = float(bmc_vertex_marginal(tree, two_state, u0, u)[0])
        assert abs(np.mean(colors[:, u] == 0) - p) <= 3 * math.sqrt(p * (1 - p) / runs)


def test_deep_marginal_approaches_stationary(two_state):
    tree = RecursiveTree.from_parents(1, [ROOT, *range(39)])
    marginal = bmc_vertex_marginal(tree, two_state, parse_measure("0:1"), 39)
    assert float(marginal[0]) == pytest.approx(2 / 3, abs=(2 / 3) * 0.7**39 + 1e-12)


def test_exact_law_flip(flip):
    law = bmc_exact_law(1, flip, parse_measure("0:1"), 1)
    assert dict(law.atoms) == {(0, 0): Fraction(1, 2), (0, 1): Fraction(1, 2)}


def test_exact_law_identity(identity2):
    law = bmc_exact_law(1, identity2, parse_measure("0:1"), 2)
    assert dict(law.atoms) == {(0, 0, 0): Fraction(1)}


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_exact_law_normalizes_for_random_kernels(data):
    kernel = data.draw(exact_kernels())
    u0 = data.draw(initial_measures(kernel.num_colors))
    law = bmc_exact_law(u0.total_mass, kernel, u0, data.draw(st.integers(0, 3)))
    assert law.total() == 1


def test_exact_law_needs_matching_root_weight(two_state):
    with pytest.raises(ValueError):
        bmc_exact_law(2, two_state, parse_measure("0:1"), 1)


@pytest.mark.parametrize(
    ("kernel_name", "u0", "horizon"),
    [
        ("flip", "0:1", 3),
        ("identity2", "0:1/2,1:1/2", 3),
        ("two_state", "0:1", 4),
        ("two_state", "0:1,1:1", 3),
        ("two_state", "1:1/2", 4),
        ("mixing", "0:1/4,1:1/4", 2),
    ],
)
def test_urn_and_tree_laws_agree(request, kernel_name, u0, horizon):
    kernel = request.getfixturevalue(kernel_name)
    m = parse_measure(u0)
    urn_law = urn_exact_law(m, kernel, horizon)
    bmc_law = bmc_exact_law(m.total_mass, kernel, m, horizon)
    assert coupling_tv(urn_law, bmc_law) == 0


def test_three_color_laws_agree():
    third = Fraction(1, 3)
    kernel = build_kernel([[0, Fraction(1, 2), Fraction(1, 2)], [third, third, third], [1, 0, 0]])
    m = parse_measure("0:1,2:1")
    assert coupling_tv(urn_exact_law(m, kernel, 3), bmc_exact_law(m.total_mass, kernel, m, 3)) == 0


def test_float_laws_agree():
    kernel = build_kernel([[0.9, 0.1], [0.2, 0.8]])
    m = parse_measure("0:1")
    tv = coupling_tv(urn_exact_law(m, kernel, 3), bmc_exact_law(1.0, kernel, m, 3))
    assert tv <= 1e-10


def test_trace_csv(two_state, rng, tmp_path):
    trace = bmc_run(CHAIN, two_state, parse_measure("0:1"), rng)
    lines = write_trace_csv(trace, tmp_path / "bmc.csv").read_text().splitlines()
    assert lines[0] == "vertex_index,parent_index,depth,color"
    assert lines[1] == "0,-1,1,0"
