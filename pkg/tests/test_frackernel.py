import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roughva.exceptions import KernelDomainError, SOEConstructionError, UnsupportedKernelError
from roughva.frackernel import KernelSpec, build_soe, fractional_kernel, verification_grid


def stirling_gamma(x):
    """Gamma via upward shift and the Stirling series (independent oracle)."""
    shift = 1.0
    while x < 30:
        shift *= x
        x += 1.0
    series = 1 + 1 / (12 * x) + 1 / (288 * x**2) - 139 / (51840 * x**3) - 571 / (2488320 * x**4)
    return math.sqrt(2 * math.pi / x) * (x / math.e) ** x * series / shift


def test_stirling_oracle_sane():
    assert stirling_gamma(5.0) == pytest.approx(24.0, rel=1e-10)
    assert stirling_gamma(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-10)


def test_kernel_unit_at_half():
    assert fractional_kernel(1.0, KernelSpec(0.5)) == 1.0


# 4**0.25 / Gamma(1.25) is 1.560249 (frozen from the oracle below)
@pytest.mark.parametrize("t, H, expected", [(1.0, 0.75, 1.103263), (4.0, 0.75, 1.560249)])
def test_kernel_values(t, H, expected):
    oracle = t ** (H - 0.5) / stirling_gamma(H + 0.5)
    assert oracle == pytest.approx(expected, abs=1e-6)
    assert fractional_kernel(t, KernelSpec(H)) == pytest.approx(oracle, rel=1e-9)


def test_kernel_domain_errors():
    with pytest.raises(KernelDomainError):
        fractional_kernel(0.0, KernelSpec(0.1))
    with pytest.raises(KernelDomainError):
        fractional_kernel(-1.0, KernelSpec(0.7))
    with pytest.raises(KernelDomainError):
        KernelSpec(1.0)
    # bounded at the origin above one half
    assert fractional_kernel(0.0, KernelSpec(0.7)) == 0.0


@given(st.floats(0.01, 0.49), st.floats(0.51, 0.99))
@settings(max_examples=30, deadline=None)
def test_kernel_monotone_in_lag(h_rough, h_smooth):
    t = np.geomspace(1e-3, 50, 200)
    assert np.all(np.diff(fractional_kernel(t, KernelSpec(h_rough))) < 0)
    assert np.all(np.diff(fractional_kernel(t, KernelSpec(h_smooth))) > 0)
    assert np.all(fractional_kernel(t, KernelSpec(h_rough)) > 0)


def test_kernel_at_ten_years_increases_with_hurst():
    vals = [fractional_kernel(10.0, KernelSpec(H)) for H in (0.55, 0.65, 0.75, 0.85, 0.95)]
    assert np.all(np.diff(vals) > 0)


@pytest.mark.parametrize("H", [0.0286, 0.05, 0.1])
def test_soe_certificate(H):
    soe = build_soe(KernelSpec(H), 1 / 12, 20.0, 1e-3)
    grid = verification_grid(1 / 12, 20.0)
    assert grid.size >= 9_000
    exact = fractional_kernel(grid, KernelSpec(H))
    err = np.max(np.abs(soe.kernel(grid) - exact) / exact)
    assert err <= 1e-3
    assert soe.verify()
    assert soe.relative_error() == pytest.approx(soe.achieved_error, rel=1e-9)
    assert np.all(np.diff(soe.nodes) > 0)
    assert np.all(soe.nodes >= 0)


def test_soe_tighter_tolerance_needs_more_nodes():
    spec = KernelSpec(0.1)
    loose = build_soe(spec, 1 / 12, 20.0, 1e-2)
    tight = build_soe(spec, 1 / 12, 20.0, 1e-4)
    assert tight.n_exp > loose.n_exp
    assert tight.relative_error() <= 1e-4


def test_soe_node_growth_is_logarithmic():
    spec = KernelSpec(0.1)
    counts = [build_soe(spec, 1 / 12, T, 1e-3).n_exp for T in (5.0, 10.0, 20.0, 40.0)]
    # each doubling of T/h adds at most a couple of dyadic intervals
    assert all(b - a <= 8 for a, b in zip(counts[:-1], counts[1:]))


def test_soe_rejects_smooth_kernel():
    with pytest.raises(UnsupportedKernelError):
        build_soe(KernelSpec(0.7), 1 / 12, 20.0, 1e-3)


def test_soe_reports_achieved_error_when_budget_too_small():
    with pytest.raises(SOEConstructionError) as info:
        build_soe(KernelSpec(0.1), 1 / 12, 20.0, 1e-12, order=2, max_order=2)
    assert info.value.achieved_error > 1e-12


def test_soe_csv_roundtrip(tmp_path):
    soe = build_soe(KernelSpec(0.0286), 1 / 12, 20.0, 1e-3)
    path = tmp_path / "soe.csv"
    soe.to_csv(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 1], soe.nodes)
    np.testing.assert_array_equal(data[:, 2], soe.weights)


def test_soe_build_is_fast():
    t0 = time.perf_counter()
    build_soe(KernelSpec(0.0286), 1 / 12, 20.0, 1e-3)
    assert time.perf_counter() - t0 < 1.0
