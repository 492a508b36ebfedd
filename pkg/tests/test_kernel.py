import pickle
from fractions import Fraction

import pytest
from hypothesis import given

from strategies import stochastic_rows
from urnlab.errors import (
    KernelError,
    NegativeEntry,
    NoDecay,
    NonStochasticRow,
    TruncationOverflow,
    UnknownGenerator,
)
from urnlab.kernel import (
    ExplicitKernel,
    build_generator,
    build_kernel,
    check_doeblin,
    decay_rate,
    fit_ergodicity_certificate,
    generator_from_strings,
    n_step_row,
    parse_kernel_text,
    propagate,
    read_kernel_file,
    stationary_distribution,
    stationary_residual,
)
from urnlab.measure import SparseMeasure


def test_doubly_stochastic_kernel_is_valid():
    kernel = build_kernel([[0.5, 0.5], [0.5, 0.5]])
    assert isinstance(kernel, ExplicitKernel)
    assert kernel.num_colors == 2
    assert not kernel.is_exact


def test_row_sum_violation():
    with pytest.raises(NonStochasticRow) as info:
        build_kernel([[0.9, 0.2], [0.2, 0.8]])
    assert info.value.u == 0
    assert info.value.total == pytest.approx(1.1)


def test_negative_entry():
    with pytest.raises(NegativeEntry):
        build_kernel([[1.5, -0.5], [0.0, 1.0]])


def test_row_mass_outside_kernel():
    with pytest.raises(KernelError):
        build_kernel({0: {2: 1.0}})


def test_kernel_file_is_exact(two_state):
    assert two_state.is_exact
    assert two_state.row(0)[1] == Fraction(1, 10)


def test_kernel_file_rejects_out_of_range_entry():
    with pytest.raises(KernelError):
        parse_kernel_text("kernel explicit 2\n0 2 1\n1 1 1\n")


def test_describe_parses_back(two_state, tmp_path):
    path = tmp_path / "k.kernel"
    path.write_text(two_state.describe())
    assert read_kernel_file(path).rows == two_state.rows


def test_reset_chain_rows(reset_chain):
    row, tail = reset_chain.row_with_tail(5, 1e-12)
    assert tail <= 1e-12
    assert float(row.total_mass) + tail == pytest.approx(1.0, abs=1e-12)
    assert row[6] >= Fraction(7, 10)
    assert not reset_chain.row_is_finite(5)


def test_reset_chain_bad_epsilon():
    with pytest.raises(KernelError):
        build_generator("reset-chain", epsilon=0, nu_geometric_p=0.5)


def test_unknown_generator():
    with pytest.raises(UnknownGenerator):
        build_generator("nope")


def test_generator_bad_parameter_name():
    with pytest.raises(KernelError):
        build_generator("reset-chain", eps=0.3, nu_geometric_p=0.5)


def test_star_walk_from_strings():
    kernel = generator_from_strings("star-walk", {"p": "0.5,0.3,0.2"})
    assert kernel.is_exact
    assert kernel.row(0).to_dict() == {0: Fraction(1, 2), 1: Fraction(3, 10), 2: Fraction(1, 5)}
    assert kernel.row(2).to_dict() == {0: Fraction(1)}


def test_generator_kernel_text(reset_chain):
    parsed = parse_kernel_text(reset_chain.describe())
    assert parsed.digest() == reset_chain.digest()


def test_float_row_cache_survives_pickle(reset_chain):
    before = reset_chain.sim_row(3)
    clone = pickle.loads(pickle.dumps(reset_chain))
    assert clone.sim_row(3) == before


def test_n_step_row_examples(two_state):
    assert n_step_row(two_state, 0, 1).to_dict() == {0: Fraction(9, 10), 1: Fraction(1, 10)}
    assert n_step_row(two_state, 0, 2).to_dict() == {0: Fraction(83, 100), 1: Fraction(17, 100)}
    assert n_step_row(two_state, 3, 0).to_dict() == {3: Fraction(1)}


def test_n_step_row_float_kernel():
    kernel = build_kernel([[0.9, 0.1], [0.2, 0.8]])
    row = n_step_row(kernel, 0, 2)
    assert row[0] == pytest.approx(0.83)
    assert row[1] == pytest.approx(0.17)


def test_n_step_row_tracks_truncation(reset_chain):
    row = n_step_row(reset_chain, 0, 3, mass_tol=1e-9)
    assert 1 - 1e-9 <= float(row.total_mass) <= 1 + 1e-12


def test_n_step_row_rejects_loose_tolerance(two_state):
    with pytest.raises(ValueError):
        n_step_row(two_state, 0, 2, mass_tol=0.5)


def test_support_cap(reset_chain, monkeypatch):
    monkeypatch.setenv("URNLAB_MAX_SUPPORT", "10")
    with pytest.raises(TruncationOverflow):
        n_step_row(reset_chain, 0, 2, mass_tol=1e-12)


def test_stationary_two_state(two_state):
    pi = stationary_distribution(two_state)
    assert pi[0] == pytest.approx(2 / 3, abs=1e-9)
    assert pi[1] == pytest.approx(1 / 3, abs=1e-9)
    assert stationary_residual(two_state, pi) <= 1e-10


def test_stationary_mixing(mixing):
    pi = stationary_distribution(mixing)
    assert pi.to_dict() == {0: 0.5, 1: 0.5}


def test_stationary_star_walk(star):
    pi = stationary_distribution(star)
    assert pi[0] == pytest.approx(2 / 3, abs=1e-7)
    assert pi[1] == pytest.approx(0.2, abs=1e-7)


def test_stationary_reset_chain(reset_chain):
    pi = stationary_distribution(reset_chain)
    assert float(pi.total_mass) == pytest.approx(1.0)
    assert stationary_residual(reset_chain, pi) <= 1e-7


def test_certificate_two_state(two_state):
    cert = fit_ergodicity_certificate(two_state, [0, 1], [0, 1], 30)
    assert cert.rho == pytest.approx(0.7, abs=0.01)
    assert cert.C == pytest.approx(2 / 3, rel=0.05)
    assert cert.dominates()
    assert cert.sup_errors[0] == pytest.approx(2 / 3 * 0.7)


def test_certificate_exact_mixing_falls_back(mixing):
    cert = fit_ergodicity_certificate(mixing, [0, 1], [0, 1], 10)
    assert cert.rho == 0.5
    assert cert.C == pytest.approx(1e-14)
    assert cert.dominates()


def test_certificate_periodic_kernel(flip):
    with pytest.raises(NoDecay):
        fit_ergodicity_certificate(flip, [0, 1], [0, 1], 20)


def test_certificate_needs_horizon(two_state):
    with pytest.raises(ValueError):
        fit_ergodicity_certificate(two_state, [0, 1], [0, 1], 3)


def test_doeblin_two_state(two_state):
    witness = check_doeblin(two_state, 1, [0, 1])
    assert witness.holds
    assert witness.epsilon == Fraction(3, 10)
    assert witness.nu.to_dict() == {0: Fraction(2, 3), 1: Fraction(1, 3)}


def test_doeblin_reset_chain(reset_chain):
    witness = check_doeblin(reset_chain, 1, range(8))
    assert witness.epsilon == Fraction(3, 10)
    assert float(witness.nu.total_mass) == pytest.approx(1.0)
    assert witness.nu.to_dict()[0] == Fraction(1, 2)


def test_doeblin_periodic_fails(flip):
    witness = check_doeblin(flip, 1, [0, 1])
    assert not witness.holds
    assert witness.nu == SparseMeasure.empty()


@given(stochastic_rows())
def test_built_rows_sum_to_one(rows):
    kernel = build_kernel(rows)
    assert all(kernel.row(u).total_mass == 1 for u in range(kernel.num_colors))


@pytest.mark.parametrize("m,n", [(1, 1), (1, 2), (2, 3), (0, 4)])
def test_chapman_kolmogorov_exact(two_state, m, n):
    for u in (0, 1):
        pushed, tail = propagate(n_step_row(two_state, u, m), two_state, n)
        assert tail == 0
        assert pushed.to_dict() == n_step_row(two_state, u, m + n).to_dict()


@pytest.mark.parametrize("u", [0, 2, 5])
def test_chapman_kolmogorov_reset_chain(reset_chain, u):
    pushed, _ = propagate(n_step_row(reset_chain, u, 2, mass_tol=1e-13), reset_chain, 2, mass_tol=1e-13)
    direct = n_step_row(reset_chain, u, 4, mass_tol=1e-13)
    assert pushed.l1_distance(direct) <= 1e-10


@pytest.mark.parametrize("n0", [1, 2])
def test_doeblin_bound_holds_pointwise_two_state(two_state, n0):
    witness = check_doeblin(two_state, n0, [0, 1])
    assert witness.holds
    for u in witness.check_states:
        row = n_step_row(two_state, u, n0)
        assert all(row[v] >= witness.epsilon * w for v, w in witness.nu)


def test_doeblin_bound_holds_pointwise_reset_chain(reset_chain):
    witness = check_doeblin(reset_chain, 1, range(8))
    for u in witness.check_states:
        row = reset_chain.row(u, 1e-15)
        assert all(row[v] >= witness.epsilon * w for v, w in witness.nu)


def test_decay_rate_two_state(two_state):
    assert decay_rate(two_state) == pytest.approx(0.7)


def test_decay_rate_reset_chain(reset_chain):
    assert decay_rate(reset_chain) == pytest.approx(0.7)


def test_decay_rate_unknown_for_star(star):
    assert decay_rate(star) is None
