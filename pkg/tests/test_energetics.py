import math

import mpmath
import pytest
from hypothesis import given, strategies as st

from chimera.energetics import (
    EnergeticsParams,
    efficiency_report,
    energy_hns,
    eta_linear,
    log2_energy_vn,
    log2_eta,
    parse_base,
)


def test_n16_base2_is_exactly_14():
    # 2^16 / log2(16) = 2^16 / 4 = 2^14
    assert log2_eta(EnergeticsParams(16)) == 14.0


@given(st.integers(2, 60), st.sampled_from(["2", "e", "10"]), st.floats(0.1, 10), st.floats(0.1, 10))
def test_log_domain_agrees_with_linear(n, base, k, kp):
    p = EnergeticsParams(n, k=k, k_prime=kp, log_base=base)
    assert log2_eta(p) == pytest.approx(math.log2(eta_linear(p)), rel=1e-12, abs=1e-12)


@given(st.integers(2, 5000), st.sampled_from(["2", "e", "10"]))
def test_log2_eta_matches_extended_precision(n, base):
    mpmath.mp.dps = 50
    b = {"2": mpmath.mpf(2), "e": mpmath.e, "10": mpmath.mpf(10)}[base]
    oracle = n - mpmath.log(mpmath.log(n, b), 2)
    assert log2_eta(EnergeticsParams(n, log_base=base)) == pytest.approx(float(oracle), rel=1e-13)


def test_e_switch_cancels():
    a = EnergeticsParams(100, e_switch=1e-15)
    b = EnergeticsParams(100, e_switch=3.0)
    assert log2_eta(a) == log2_eta(b)
    assert log2_energy_vn(b) == pytest.approx(100 + math.log2(3.0))
    assert energy_hns(b) == pytest.approx(3.0 * math.log2(100))


def test_linear_overflows_for_large_n():
    with pytest.raises(OverflowError):
        eta_linear(EnergeticsParams(10_000))


def test_report_for_headline_case():
    rep = efficiency_report(EnergeticsParams(10_000, log_base="e"))
    assert rep["log2_eta"] == pytest.approx(10_000 - math.log2(math.log(10_000)), rel=1e-14)
    assert rep["log10_eta"] == pytest.approx(rep["log2_eta"] * math.log10(2))
    assert rep["headline_eta"] == 1e4 and rep["headline_log10_eta"] == 4.0
    assert rep["discrepancy_orders_of_magnitude"] == pytest.approx(rep["log10_eta"] - 4.0)
    assert not rep["consistent_with_headline"]
    assert "orders of magnitude" in rep["note"]
    assert rep["log_base"] == "e"


def test_validation():
    with pytest.raises(ValueError):
        EnergeticsParams(1)
    with pytest.raises(ValueError):
        EnergeticsParams(10, k=0.0)
    with pytest.raises(ValueError):
        parse_base("3")
    assert parse_base(10) == 10.0
