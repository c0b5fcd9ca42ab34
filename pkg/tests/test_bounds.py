import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gkpsense.bounds import (
    COHERENT_HETERODYNE_TOTAL_MSE,
    bounds_table,
    gaussian_limit_total_mse,
    holevo_upper_mse,
    holevo_upper_sensitivity,
    qcrb_total_mse,
    sensitivity_quantum_limit,
    tmsv_equivalent_db,
    tmsv_photons,
    tmsv_squeezing,
    tmsv_total_mse,
    uhlmann_ratio,
)
from gkpsense.errors import Infeasible

photons = st.floats(0, 50)


def test_hand_values():
    assert qcrb_total_mse(2) == pytest.approx(0.2)
    assert sensitivity_quantum_limit(2) == pytest.approx(1 / np.sqrt(10))
    assert uhlmann_ratio(1) == pytest.approx(1 / 12)
    assert holevo_upper_mse(1) == pytest.approx(1 / 3 * 13 / 12)
    assert holevo_upper_sensitivity(0) == pytest.approx(np.sqrt(1.25 / 2))
    assert COHERENT_HETERODYNE_TOTAL_MSE == 2.0


def test_vacuum_probe_reaches_heterodyne_level():
    # the coherent baseline is the r=0 flat-prior TMSV value
    assert tmsv_total_mse(0.0) == COHERENT_HETERODYNE_TOTAL_MSE


@given(photons)
def test_bound_ordering(n):
    assert holevo_upper_mse(n) >= qcrb_total_mse(n)
    assert holevo_upper_sensitivity(n) >= sensitivity_quantum_limit(n)
    assert sensitivity_quantum_limit(n) ** 2 == pytest.approx(qcrb_total_mse(n) / 2)


@given(photons, photons)
def test_bounds_decrease_with_photons(a, b):
    lo, hi = sorted((a, b))
    assert qcrb_total_mse(hi) <= qcrb_total_mse(lo)
    assert holevo_upper_mse(hi) <= holevo_upper_mse(lo)


def test_negative_photons_rejected():
    with pytest.raises(ValueError):
        qcrb_total_mse(-0.1)


def test_gaussian_limit_branches():
    assert gaussian_limit_total_mse(0.5) == pytest.approx(0.25)
    assert gaussian_limit_total_mse(2.0) == pytest.approx(8 / 5)
    # the two branches meet at sigma = 1
    assert gaussian_limit_total_mse(1 - 1e-12) == pytest.approx(gaussian_limit_total_mse(1.0))
    with pytest.raises(ValueError):
        gaussian_limit_total_mse(0)


def test_tmsv_formula():
    r, s = 0.7, 0.4
    sq = np.exp(-2 * r)
    assert tmsv_total_mse(r, s) == pytest.approx(2 * sq * s * s / (sq + s * s))
    assert tmsv_photons(r) == pytest.approx(2 * np.sinh(r) ** 2)
    assert tmsv_photons(r, both_modes=False) == pytest.approx(np.sinh(r) ** 2)


@given(st.floats(0.0, 3.0), st.one_of(st.none(), st.floats(0.2, 3.0)))
@settings(max_examples=60)
def test_tmsv_squeezing_inverts_total_mse(r, sigma):
    target = tmsv_total_mse(r, sigma)
    assert tmsv_squeezing(target, sigma) == pytest.approx(r, abs=1e-7)


def test_tmsv_db():
    # flat prior, target 2 e^{-2r} with e^{2r} = 10 is 10 dB
    assert tmsv_equivalent_db(0.2) == pytest.approx(10.0)


def test_tmsv_infeasible_targets():
    with pytest.raises(Infeasible):
        tmsv_squeezing(0.5, sigma=0.5)
    with pytest.raises(Infeasible):
        tmsv_squeezing(3.0)
    with pytest.raises(Infeasible):
        tmsv_squeezing(-1.0)


def test_table_rows():
    names = [k for k, _ in bounds_table(5.0, 0.4)]
    assert names[0] == "qcrb_total_mse" and names[-1] == "gaussian_limit_total_mse"
    assert len(bounds_table(5.0)) == len(names) - 1
