import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strategies import exact_kernels, initial_measures
from urnlab.errors import HorizonTooLarge, InfiniteSupportReachable, KernelError, ZeroMass
from urnlab.kernel import FloatRow, build_kernel, stationary_distribution
from urnlab.measure import SparseMeasure, parse_measure
from urnlab.settings import get_settings
from urnlab.urn import (
    ConfigAccumulator,
    UniformStream,
    expected_draw_law,
    normalized_config,
    urn_draw,
    urn_exact_law,
    urn_init,
    urn_run,
    urn_step,
    write_summary_json,
    write_trace_csv,
)


def test_init_records_mass(two_state):
    state = urn_init(parse_measure("0:1"), two_state)
    assert state.t0 == 1
    assert state.steps == 0
    assert urn_init(parse_measure("0:0.5,1:0.5"), two_state).t0 == 1


def test_init_zero_mass(two_state):
    with pytest.raises(ZeroMass):
        urn_init(SparseMeasure.empty(), two_state)


def test_init_color_outside_kernel(two_state):
    with pytest.raises(KernelError):
        urn_init(parse_measure("5:1"), two_state)


def test_draw_point_mass(two_state, rng):
    state = urn_init(parse_measure("0:1"), two_state)
    assert all(urn_draw(state, rng) == 0 for _ in range(100))


@pytest.mark.parametrize(("u0", "p0"), [("0:1,1:1", 1 / 2), ("0:2,1:1", 2 / 3)])
def test_draw_frequencies(two_state, u0, p0):
    state = urn_init(parse_measure(u0), two_state)
    rng = np.random.default_rng(7)
    draws = 100_000
    hits = sum(urn_draw(state, rng) == 0 for _ in range(draws))
    sigma = (p0 * (1 - p0) / draws) ** 0.5
    assert abs(hits / draws - p0) <= 3 * sigma


def test_step_flip(flip, rng):
    state, z = urn_step(urn_init(parse_measure("0:1"), flip), rng)
    assert z == 0
    assert state.config.to_dict() == {0: 1, 1: 1}
    assert state.total_mass == 2


def test_step_identity_reinforces(identity2, rng):
    state, z = urn_step(urn_init(parse_measure("0:1"), identity2), rng)
    assert z == 0
    assert state.config.to_dict() == {0: 2}


def test_step_debug_mass_check(two_state, monkeypatch):
    monkeypatch.setenv("URNLAB_DEBUG_CHECKS", "true")
    state = urn_init(parse_measure("0:1/3,1:2/3"), two_state)
    rng = np.random.default_rng(1)
    for _ in range(20):
        before = state.config.total_mass
        state, _ = urn_step(state, rng)
        assert state.config.total_mass == before + 1


def test_run_zero_steps(two_state, rng):
    state = urn_init(parse_measure("0:1"), two_state)
    trace = urn_run(state, 0, rng)
    assert trace.draws == ()
    assert trace.final_state is state


def test_run_flip_first_draw(flip, rng):
    trace = urn_run(urn_init(parse_measure("0:1"), flip), 1, rng)
    assert trace.draws == (0,)


def test_run_counts_and_mass(two_state, rng):
    trace = urn_run(urn_init(parse_measure("0:1"), two_state), 2000, rng, seed=5)
    assert sum(trace.local_times.values()) == 2000
    assert float(trace.final_state.config.total_mass) == pytest.approx(2001, rel=1e-12)
    assert trace.local_time(0, 10) == sum(1 for z in trace.draws[:10] if z == 0)
    assert trace.summary()["seed"] == 5


def test_run_consumes_one_uniform_per_step(two_state):
    state = urn_init(parse_measure("0:1"), two_state)
    a, b = np.random.default_rng(3), np.random.default_rng(3)
    urn_run(state, 37, a)
    b.random(37)
    assert a.random() == b.random()


def test_run_matches_repeated_steps(two_state):
    state = urn_init(parse_measure("0:1"), two_state)
    trace = urn_run(state, 50, np.random.default_rng(11))
    rng = np.random.default_rng(11)
    draws = []
    for _ in range(50):
        state, z = urn_step(state, rng)
        draws.append(z)
    assert tuple(draws) == trace.draws


def test_run_is_deterministic(two_state):
    state = urn_init(parse_measure("0:1"), two_state)
    first = urn_run(state, 500, np.random.default_rng(99))
    second = urn_run(state, 500, np.random.default_rng(99))
    assert first.draws == second.draws
    assert first.final_state.config == second.final_state.config


def test_normalized_config():
    kernel = build_kernel([[Fraction(1, 2), Fraction(1, 2)], [Fraction(1, 2), Fraction(1, 2)]])
    state = urn_init(parse_measure("0:1"), kernel)
    assert normalized_config(state).to_dict() == {0: 1}
    state, _ = urn_step(state, np.random.default_rng(0))
    assert normalized_config(state).to_dict() == {0: Fraction(3, 4), 1: Fraction(1, 4)}


def test_accumulator_inserts_in_color_order():
    acc = ConfigAccumulator(parse_measure("3:1"))
    acc.add_row(FloatRow((0, 5), (0.25, 0.75), 0.0))
    acc.add_row(FloatRow((3,), (1.0,), 0.0))
    assert acc.colors == [0, 3, 5]
    assert acc.weights == [0.25, 2.0, 0.75]
    assert acc.total == 3.0
    assert acc.draw(3.0, 0.0) == 0


def test_uniform_stream_matches_generator():
    stream = UniformStream(np.random.default_rng(4), block=8)
    expected = np.random.default_rng(4).random(20).tolist()
    assert [stream.next() for _ in range(20)] == expected


def test_exact_law_flip(flip):
    law = urn_exact_law(parse_measure("0:1"), flip, 1)
    assert dict(law.atoms) == {(0, 0): Fraction(1, 2), (0, 1): Fraction(1, 2)}
    assert law.is_exact


def test_exact_law_identity(identity2):
    law = urn_exact_law(parse_measure("0:1"), identity2, 1)
    assert dict(law.atoms) == {(0, 0): Fraction(1)}


@pytest.mark.parametrize("horizon", [0, 1, 2, 3, 4])
def test_exact_law_sums_to_one(two_state, horizon):
    law = urn_exact_law(parse_measure("0:1/2,1:3/2"), two_state, horizon)
    assert law.total() == 1


@settings(max_examples=40, deadline=None)
@given(st.data())
def test_exact_law_normalizes_for_random_kernels(data):
    kernel = data.draw(exact_kernels())
    u0 = data.draw(initial_measures(kernel.num_colors))
    law = urn_exact_law(u0, kernel, data.draw(st.integers(0, 3)))
    assert law.total() == 1
    assert all(p > 0 for _, p in law)


def test_exact_law_float_mode():
    kernel = build_kernel([[0.9, 0.1], [0.2, 0.8]])
    law = urn_exact_law(parse_measure("0:1"), kernel, 3)
    assert not law.is_exact
    assert law.total() == pytest.approx(1.0, abs=1e-12)


def test_exact_law_horizon_cap(two_state, monkeypatch):
    with pytest.raises(HorizonTooLarge):
        urn_exact_law(parse_measure("0:1"), two_state, 7)
    monkeypatch.setenv("URNLAB_EXACT_HORIZON_CAP", "2")
    get_settings.cache_clear()
    with pytest.raises(HorizonTooLarge):
        urn_exact_law(parse_measure("0:1"), two_state, 3)


def test_exact_law_refuses_infinite_rows(reset_chain):
    with pytest.raises(InfiniteSupportReachable):
        urn_exact_law(parse_measure("0:1"), reset_chain, 2)


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_mean_recursion_matches_exact_marginals(two_state, k):
    u0 = parse_measure("0:1,1:1/2")
    law = urn_exact_law(u0, two_state, 3)
    assert expected_draw_law(u0, two_state, k).to_dict() == law.marginal(k).to_dict()


def test_writers(two_state, rng, tmp_path):
    trace = urn_run(urn_init(parse_measure("0:1"), two_state), 5, rng, seed=1, replica=3)
    csv_path = write_trace_csv(trace, tmp_path / "trace.csv")
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "step,drawn_color"
    assert len(lines) == 6
    summary = write_summary_json(trace, tmp_path / "summary.json", {"master_seed": 1}).read_text()
    assert '"seed": 1' in summary
    assert '"replica": 3' in summary
    assert '"master_seed": 1' in summary



def test_simulated_draws_match_exact_law(two_state):
    u0 = parse_measure("0:1/3,1:2/3")
    horizon, replicas = 3, 100_000
    rng = np.random.default_rng(31)
    draws = np.array([urn_run(urn_init(u0, two_state), horizon + 1, rng).draws for _ in range(replicas)])
    law = urn_exact_law(u0, two_state, horizon)
    for k in range(horizon + 1):
        p = float(law.marginal(k)[0])
        assert abs(np.mean(draws[:, k] == 0) - p) <= 3 * math.sqrt(p * (1 - p) / replicas)

@pytest.mark.slow
def test_long_run_approaches_stationary(two_state):
    pi = stationary_distribution(two_state)
    trace = urn_run(urn_init(parse_measure("0:1"), two_state), 100_000, np.random.default_rng(2024))
    assert normalized_config(trace.final_state).l1_distance(pi) < 0.02
    assert abs(trace.local_time(0) / 100_000 - 2 / 3) < 0.02


@pytest.mark.slow
def test_long_run_reset_chain(reset_chain):
    pi = stationary_distribution(reset_chain, tol=1e-8)
    trace = urn_run(urn_init(parse_measure("0:1"), reset_chain), 100_000, np.random.default_rng(2024))
    assert normalized_config(trace.final_state).l1_distance(pi) < 0.05
