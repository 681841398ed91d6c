import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roughva.exceptions import InputError
from roughva.frackernel import KernelSpec, fractional_kernel
from roughva.grid import TimeGrid
from roughva.mortality import (
    LifeTable,
    MortalityParams,
    calibrate_mortality,
    model_survival_at_years,
    read_life_table,
    realized_survival,
    simulate_mortality,
    solve_riccati_psi,
    survival_curve,
    survival_probability,
    synthetic_life_table,
)
from roughva.noise import draw_noise

BASE = MortalityParams()


def test_defaults():
    assert (BASE.hurst, BASE.lam, BASE.sigma) == (0.703932, 0.047780, 0.005023)
    with pytest.raises(InputError):
        MortalityParams(hurst=0.4)
    with pytest.raises(InputError):
        MortalityParams(mu_x=0.0)


@pytest.mark.parametrize("scheme", ["product", "trapezoid"])
def test_psi_constant_forcing_closed_form(scheme):
    p = BASE.replace(lam=0.0, sigma=0.0)
    g = TimeGrid(20.0, 240)
    psi = solve_riccati_psi(p, g, scheme=scheme)
    exact = -g.times ** (p.hurst + 0.5) / math.gamma(p.hurst + 1.5)
    tol = 1e-12 if scheme == "product" else 5e-3
    np.testing.assert_allclose(psi, exact, atol=tol * np.max(np.abs(exact)))


def test_psi_zero_forcing():
    np.testing.assert_array_equal(solve_riccati_psi(BASE, TimeGrid(5.0, 60), eta=0.0), 0.0)


def test_psi_nonpositive_and_refinement():
    g = TimeGrid(20.0, 240)
    psi = solve_riccati_psi(BASE, g)
    assert np.all(psi <= 0)
    fine = solve_riccati_psi(BASE, g.refine())
    assert abs(fine[-1] - psi[-1]) / abs(psi[-1]) < 1e-4
    p1 = survival_probability(BASE, psi, g).p[-1]
    p2 = survival_probability(BASE, fine, g.refine()).p[-1]
    assert abs(p2 - p1) / p1 < 1e-4


def test_survival_constant_force():
    p = BASE.replace(lam=0.0, sigma=0.0)
    g = TimeGrid(20.0, 240)
    curve = survival_curve(p, g)
    np.testing.assert_allclose(curve.p, np.exp(-p.mu_x * g.times), rtol=1e-13)
    assert curve.p[0] == 1.0


def test_survival_curve_shape():
    curve = survival_curve(BASE, TimeGrid(40.0, 480))
    assert curve.p[0] == 1.0
    assert np.all(np.diff(curve.p) <= 0)
    assert np.all((curve.p > 0) & (curve.p <= 1))
    assert np.all(np.diff(curve.Y) <= 0)


def test_simulation_degenerate_cases():
    g = TimeGrid(10.0, 120)
    noise = draw_noise(4, g, 0.0, seed=1)
    mu = simulate_mortality(BASE.replace(lam=0.0, sigma=0.0), g, noise)
    np.testing.assert_array_equal(mu, BASE.mu_x)


@pytest.mark.parametrize("scheme", ["product", "trapezoid"])
def test_deterministic_volterra_matches_picard(scheme):
    p = BASE.replace(lam=0.3, sigma=0.0)
    g = TimeGrid(10.0, 120)
    mu = simulate_mortality(p, g, draw_noise(1, g, 0.0, seed=1), scheme=scheme)[0]
    # Picard iteration with an independently written quadrature of the same rule
    H, h, N = p.hurst, g.h, g.N
    x = np.full(N + 1, p.mu_x)
    for _ in range(200):
        new = np.empty_like(x)
        for n in range(N + 1):
            if scheme == "trapezoid":
                u = g.times[: n + 1]
                w = np.full(n + 1, h)
                if n:
                    w[0] = w[-1] = h / 2
                kern = np.where(g.times[n] - u > 0, (g.times[n] - u) ** (H - 0.5), 0.0) / math.gamma(H + 0.5)
                conv = np.sum(w * kern * x[: n + 1])
            else:
                conv = 0.0
                for k in range(n):
                    # exact kernel moments over [t_k, t_k+1] for the linear interpolant
                    a, b = g.times[n] - g.times[k + 1], g.times[n] - g.times[k]
                    m0 = (b ** (H + 0.5) - a ** (H + 0.5)) / (H + 0.5)
                    m1 = (b ** (H + 1.5) - a ** (H + 1.5)) / (H + 1.5)
                    # f(u) linear in lag l = t_n - u: f = x_k + (x_{k+1}-x_k)(b - l)/h
                    conv += (x[k] * (m1 - a * m0) + x[k + 1] * (b * m0 - m1)) / h
                conv /= math.gamma(H + 0.5)
            new[n] = p.mu_x + p.lam * conv
        if np.max(np.abs(new - x)) < 1e-15:
            break
        x = new
    np.testing.assert_allclose(mu, x, rtol=1e-6)


def test_realized_survival():
    g = TimeGrid(5.0, 60)
    mu = np.full((2, g.N + 1), 0.02)
    q, P = realized_survival(mu, g)
    np.testing.assert_allclose(q, math.exp(-0.02 * g.h), rtol=1e-15)
    np.testing.assert_allclose(P, np.exp(-0.02 * g.times)[None, :].repeat(2, 0), rtol=1e-12)
    q0, _ = realized_survival(np.zeros((1, g.N + 1)), g)
    assert np.all(q0 == 1.0)
    rng = np.random.default_rng(0)
    path = np.abs(rng.normal(0.02, 0.01, (1, g.N + 1)))
    _, P = realized_survival(path, g)
    trap = np.sum(0.5 * g.h * (path[0, 1:] + path[0, :-1]))
    assert P[0, -1] == pytest.approx(math.exp(-trap), rel=1e-13)


def test_transform_vs_monte_carlo_age30():
    p = MortalityParams.calibrated_age30()
    g = TimeGrid(20.0, 240)
    M = 2**13
    mu = simulate_mortality(p, g, draw_noise(M, g, 0.0, seed=17))
    _, P = realized_survival(mu, g)
    curve = survival_curve(p, g)
    for year in (5, 10, 20):
        n = 12 * year
        se = P[:, n].std(ddof=1) / math.sqrt(M)
        assert abs(P[:, n].mean() - curve.p[n]) <= 3 * max(se, 1e-12)


def test_life_table_validation(tmp_path):
    LifeTable(np.array([60, 61, 62]), np.array([100.0, 90.0, 80.0]))
    with pytest.raises(InputError):
        LifeTable(np.array([60, 62]), np.array([100.0, 90.0]))
    with pytest.raises(InputError):
        LifeTable(np.array([60, 61]), np.array([100.0, 110.0]))
    bad = tmp_path / "bad.csv"
    bad.write_text("age,l\n60,100\n61,abc\n")
    with pytest.raises(InputError, match="row 3"):
        read_life_table(bad)
    good = tmp_path / "good.csv"
    good.write_text("age,l\n60,100\n61,99\n62,97.5\n")
    t = read_life_table(good)
    np.testing.assert_allclose(t.survival_from(60, 2), [0.99, 0.975])


def test_calibration_constant_force():
    ages = 60 + np.arange(31)
    table = LifeTable(ages, 1e5 * np.exp(-0.02 * np.arange(31)))
    res = calibrate_mortality(table, 60, 30, BASE)
    assert res.mse < 1e-10
    assert res.params.sigma < 1e-3 and res.params.lam < 1e-2


@pytest.mark.slow
def test_calibration_round_trip():
    table = synthetic_life_table(BASE, 41)
    res = calibrate_mortality(table, 60, 40, BASE.replace(hurst=0.65, lam=0.03, sigma=0.01), mu_x=BASE.mu_x)
    for name in ("hurst", "lam", "sigma"):
        assert getattr(res.params, name) == pytest.approx(getattr(BASE, name), rel=0.05)
    assert res.mse < 1e-8
    report = res.report()
    assert set(report["residuals"]) == set(range(61, 101))


def test_log_ratio_initial_intensity_is_biased():
    # the fixed mu_x = -ln(l_{x+1}/l_x) averages the first year's intensity
    table = synthetic_life_table(BASE, 5)
    assert table.initial_intensity(60) > BASE.mu_x
    assert table.initial_intensity(60) == pytest.approx(BASE.mu_x, rel=0.05)


@given(st.floats(0.51, 0.95))
@settings(max_examples=10, deadline=None)
def test_model_survival_decreasing_in_time(H):
    p = model_survival_at_years(BASE.replace(hurst=H), 10, steps_per_year=6)
    assert np.all(np.diff(p) < 0) and np.all(p < 1)


def test_kernel_value_grows_with_mortality_hurst():
    vals = [fractional_kernel(10.0, KernelSpec(H)) for H in (0.55, 0.65, 0.75, 0.85, 0.95)]
    assert np.all(np.diff(vals) > 0)
