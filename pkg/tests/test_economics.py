import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from iovfl import contracts as ct
from iovfl.economics import FreshnessParams, model_value, net_social_welfare, net_vsp_profit

# a=1, b=0.1, chi=0.8, t=10: 0.8*exp(-1), evaluated with 30-digit arithmetic
DECAYED_VALUE = 0.29430355293715385728


def instance(seed, N=3, J=4):
    rng = np.random.default_rng(seed)
    menus, prof, costs = ct.random_instance(rng, N, J, 250.0)
    return menus, prof, costs, ct.solve_payment_proportions(menus, prof)


def test_model_value_examples():
    assert model_value(0.7, 0, FreshnessParams(2.0, 0.3)) == pytest.approx(1.4)
    assert model_value(0.0, 12, FreshnessParams()) == 0.0
    assert model_value(0.8, 10, FreshnessParams(1.0, 0.1)) == pytest.approx(DECAYED_VALUE, abs=1e-15)


def test_model_value_validation():
    with pytest.raises(ValueError):
        model_value(1.2, 0)
    with pytest.raises(ValueError):
        model_value(0.5, -1)
    with pytest.raises(ValueError):
        FreshnessParams(a=0.0)


@settings(max_examples=200, deadline=None)
@given(chi=st.floats(0.01, 1), t=st.integers(0, 100), b=st.floats(1e-3, 1), k=st.floats(0, 1))
def test_value_decreasing_in_round_and_linear_in_accuracy(chi, t, b, k):
    p = FreshnessParams(1.0, b)
    assert model_value(chi, t + 1, p) < model_value(chi, t, p)
    assert model_value(k * chi, t, p) == pytest.approx(k * model_value(chi, t, p), rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("seed", range(5))
def test_net_profit_reductions(seed):
    menus, prof, costs, props = instance(seed)
    Z, P = ct.stack_menus(menus)
    for j in range(prof.J):
        assert net_vsp_profit(j, menus, props, prof, 1.0) == pytest.approx(
            ct.vsp_profit(j, props.rho[j], Z[j], P[j], prof), abs=1e-12)
        assert net_vsp_profit(j, menus, props, prof, 0.0) == pytest.approx(-ct.cost(props.rho[j], P[j]))
        assert net_social_welfare(j, menus, props, prof, costs, 1.0) == pytest.approx(
            ct.social_welfare(j, menus, props, costs, prof), abs=1e-12)
        sv = ct.actual_sv_profits(j, menus, props, costs).sum()
        for omega in (0.0, 0.3, 0.9):
            assert net_social_welfare(j, menus, props, prof, costs, omega) == pytest.approx(
                net_vsp_profit(j, menus, props, prof, omega) + sv, abs=1e-9)


def test_net_social_welfare_zero_proportions():
    menus, prof, costs, props = instance(1)
    zero = ct.PaymentProportions(np.zeros_like(props.rho))
    assert net_social_welfare(0, menus, zero, prof, costs, 0.7) == 0.0


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 1000), lo=st.floats(0, 1), hi=st.floats(0, 1))
def test_net_profit_monotone_in_value(seed, lo, hi):
    lo, hi = min(lo, hi), max(lo, hi)
    menus, prof, _, props = instance(seed % 20)
    j = prof.true_row
    assert net_vsp_profit(j, menus, props, prof, hi) >= net_vsp_profit(j, menus, props, prof, lo) - 1e-12


def test_interior_peak_for_saturating_accuracy():
    # accuracy saturating as 1 - exp(-t/3): the freshness-weighted value rises, then decays
    p = FreshnessParams()
    values = [model_value(1 - math.exp(-(t + 1) / 3), t, p) for t in range(30)]
    peak = int(np.argmax(values))
    assert 0 < peak < 29
