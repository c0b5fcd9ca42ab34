import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gkpsense.errors import ZeroProbability
from gkpsense.fock import HilbertConfig, L, displace_state, fidelity, qubit_projectors
from gkpsense.sbs import (
    BIT_E,
    BIT_G,
    REFINED_FIT,
    SIMPLE_FIT,
    ProbFitParams,
    SbsParams,
    autonomous_round,
    averaged_subround,
    cd_amplitudes,
    conditioned_subround,
    fit_probability_model,
    kraus_analytic,
    kraus_numeric,
    kraus_second_order,
    kraus_set,
    next_gauge,
    predicted_mean_probability,
    prepare_qunaught,
    round_schedule,
    sbs_unitary,
    stabilizer_expectation,
    subround_schedule,
)

deltas = st.floats(0.22, 0.45)
quads = st.sampled_from("qp")
gauges = st.tuples(st.integers(0, 1), st.integers(0, 1))


def test_params_validation_and_derived_values():
    p = SbsParams(0.3)
    assert p.s == pytest.approx(np.sinh(0.09)) and p.c == pytest.approx(np.cosh(0.09))
    assert p.t == pytest.approx(p.s / p.c)
    assert SbsParams(0.3, (1, 0)).nu("q") == -1 and SbsParams(0.3, (1, 0)).nu("p") == 1
    for bad in (dict(delta=0.0), dict(delta=1.2), dict(gauge=(2, 0))):
        with pytest.raises(ValueError):
            SbsParams(**bad)
    with pytest.raises(ValueError):
        cd_amplitudes(p, "x")


def test_gauge_bookkeeping():
    assert round_schedule((0, 0)) == [("q", 0), ("p", 1)]
    assert next_gauge(next_gauge((0, 1))) == (0, 1)
    assert subround_schedule(2, (0, 0)) == [("q", 0), ("p", 1), ("q", 1), ("p", 0)]


@given(deltas, quads, gauges)
@settings(max_examples=12, deadline=None)
def test_kraus_completeness(delta, quad, gauge):
    params = SbsParams(delta, gauge, HilbertConfig(50))
    kg, ke = kraus_numeric(params, quad)
    np.testing.assert_allclose(kg.conj().T @ kg + ke.conj().T @ ke, np.eye(50), atol=1e-10)


@given(deltas, quads, gauges)
@settings(max_examples=12, deadline=None)
def test_numeric_and_analytic_kraus_agree_away_from_cutoff(delta, quad, gauge):
    params = SbsParams(delta, gauge, HilbertConfig(80))
    for kn, ka in zip(kraus_numeric(params, quad), kraus_analytic(params, quad)):
        assert np.linalg.norm((kn - ka)[:, :40], 2) < 1e-8


def test_second_order_kraus_error_scales_as_delta_fourth(small_state):
    params = SbsParams(0.25, (0, 0), HilbertConfig(60))
    psi = np.linalg.eigh(prepare_qunaught(params))[1][:, -1]
    for quad in "qp":
        for k, k2 in zip(kraus_numeric(params, quad), kraus_second_order(params, quad)):
            assert np.linalg.norm((k - k2) @ psi) < 5 * 0.25 ** 4


def test_feedback_reproduces_qubit_reset(small, small_state):
    # outcome-averaged measured subround == full unitary with the qubit traced out
    dim = small.dim
    plus = qubit_projectors()["plus"]
    rho_in = displace_state(small_state, 0.2 - 0.1j)
    for quad in "qp":
        u = sbs_unitary(small, quad)
        full = u @ np.kron(np.outer(plus, plus.conj()), rho_in) @ u.conj().T
        traced = full[:dim, :dim] + full[dim:, dim:]
        np.testing.assert_allclose(averaged_subround(rho_in, quad, small), traced, atol=1e-12)


def test_kraus_set_is_cached_and_frozen(small):
    ks = kraus_set(small, "q")
    assert ks is kraus_set(small, "q")
    with pytest.raises(ValueError):
        ks.full[0][0, 0] = 0


def test_undisplaced_qunaught_reads_g_with_probability_half(small, small_state):
    # p_g = (1 + nu C sin(0)) / 2 from the single-subround model
    for quad in "qp":
        out = conditioned_subround(small_state, BIT_G, quad, small)
        assert out.weight == pytest.approx(0.5, abs=1e-9)
        assert np.trace(out.post_state).real == pytest.approx(1.0)


def test_conditioned_weights_sum_to_one(small, small_state):
    rho = displace_state(small_state, 0.3)
    w = [conditioned_subround(rho, b, "q", small).weight for b in (BIT_G, BIT_E)]
    assert sum(w) == pytest.approx(1.0, abs=1e-12)


def test_zero_probability_is_reported(small):
    with pytest.raises(ZeroProbability):
        conditioned_subround(np.zeros((small.dim, small.dim)), BIT_G, "q", small)


def test_prepared_state_is_a_two_round_fixed_point(small, small_state):
    one = autonomous_round(small_state, small)
    two = autonomous_round(one, small.with_gauge(next_gauge(small.gauge)))
    assert fidelity(two, small_state) > 1 - 1e-6
    # a single round lands in the other gauge class
    assert fidelity(one, small_state) < 1e-2


def test_prepared_state_stabilizers(small_state, small):
    tq, tp = stabilizer_expectation(small_state, small)
    assert tq.real >= 0.999 and tp.real >= 0.999


def test_prepare_returns_independent_copies(small):
    a = prepare_qunaught(small)
    a[0, 0] = 7
    assert prepare_qunaught(small)[0, 0] != 7


def test_model_probability_first_round_closed_form():
    p = SbsParams(0.3)
    x0 = 0.37
    ref = 0.5 + 0.5 * np.exp(-0.4 * 0.09) * np.sin(L * p.c * x0)
    for fit, model in ((SIMPLE_FIT, "simple"), (REFINED_FIT, "refined")):
        assert predicted_mean_probability(x0, 1, p, fit, model) == pytest.approx(ref, abs=1e-15)


@given(st.floats(-L / 4, L / 4), st.integers(1, 30))
@settings(max_examples=40, deadline=None)
def test_refined_model_reduces_to_simple_without_a3(x0, t):
    p = SbsParams(0.3)
    fit = ProbFitParams(0.4, 1.3, 0.0)
    assert predicted_mean_probability(x0, t, p, fit, "refined") == pytest.approx(
        predicted_mean_probability(x0, t, p, fit, "simple"), abs=1e-14)


def test_model_fit_recovers_synthetic_constants():
    p = SbsParams(0.3)
    truth = ProbFitParams(0.4, 1.5, 0.3)
    rounds = np.arange(1, 31)
    data = [predicted_mean_probability(L / 4, t, p, truth, "refined") for t in rounds]
    fit = fit_probability_model(L / 4, rounds, data, p)
    assert fit.a2 == pytest.approx(1.5, abs=1e-6) and fit.a3 == pytest.approx(0.3, abs=1e-6)


def test_unknown_model_rejected():
    with pytest.raises(ValueError):
        predicted_mean_probability(0.1, 3, SbsParams(0.3), REFINED_FIT, "other")
