"""Fractional calculus on grids: power rules are exact for piecewise-linear
data, the derivative inverts the integral, and the inverse kernel operator
matches its closed form away from the origin."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbmflow import (
    GridFn1D,
    TimeGrid,
    circulant_fbm,
    frac_derivative_left,
    frac_integral_left,
    girsanov_weight,
    kh_inverse_ac,
    make_drift,
    volterra_fbm,
)

GRID512 = TimeGrid(0.0, 1.0, 512)


def test_integral_of_zero_is_zero():
    f = GridFn1D(GRID512, np.zeros(513))
    out = frac_integral_left(f, 0.37)
    assert np.array_equal(out.values, np.zeros(513))


def test_integral_power_rule_constant():
    # I^0.5[1](x) = x^0.5 / Gamma(1.5); the rule integrates linear data
    # exactly, so this holds to rounding
    f = GridFn1D(GRID512, np.ones(513))
    out = frac_integral_left(f, 0.5)
    target = GRID512.nodes ** 0.5 / math.gamma(1.5)
    assert np.allclose(out.values, target, atol=5e-15)
    assert out.values[-1] == pytest.approx(1.1283791670955126, abs=1e-14)


def test_integral_power_rule_linear():
    # I^0.5[y](x) = x^1.5 / Gamma(2.5)
    f = GridFn1D(GRID512, GRID512.nodes.copy())
    out = frac_integral_left(f, 0.5)
    target = GRID512.nodes ** 1.5 / math.gamma(2.5)
    assert np.allclose(out.values, target, atol=5e-15)
    assert out.values[-1] == pytest.approx(0.7522527780636751, abs=1e-14)


@given(alpha=st.floats(0.1, 0.9), slope=st.floats(-3.0, 3.0),
       offset=st.floats(0.0, 2.0))
@settings(max_examples=25, deadline=None)
def test_integral_power_rules_hold_for_affine_data(alpha, slope, offset):
    grid = TimeGrid(0.0, 1.0, 64)
    f = GridFn1D(grid, offset + slope * grid.nodes)
    out = frac_integral_left(f, alpha)
    x = grid.nodes
    target = (offset * x ** alpha / math.gamma(alpha + 1)
              + slope * x ** (alpha + 1) / math.gamma(alpha + 2))
    assert np.allclose(out.values, target, atol=1e-12)


def test_integral_rejects_alpha_outside_unit_interval():
    f = GridFn1D(GRID512, np.ones(513))
    for alpha in (0.0, 1.0, -0.2, 1.7):
        with pytest.raises(ValueError):
            frac_integral_left(f, alpha)
    with pytest.raises(ValueError):
        frac_integral_left(f, 0.5, a=0.25)


def test_derivative_of_power_alpha_is_constant():
    # D^alpha[x^alpha] = Gamma(alpha+1), the classical power rule
    alpha = 0.4
    f = GridFn1D(GRID512, GRID512.nodes ** alpha)
    out = frac_derivative_left(f, alpha)
    target = math.gamma(alpha + 1.0)
    inner = out.values[GRID512.nodes >= 0.1]
    assert np.max(np.abs(inner - target)) < 2e-3


def test_derivative_inverts_integral_on_sine():
    grid = TimeGrid(0.0, 1.0, 1024)
    f = GridFn1D(grid, np.sin(grid.nodes))
    rt = frac_derivative_left(frac_integral_left(f, 0.5), 0.5)
    assert np.max(np.abs(rt.values - f.values)) < 5e-4


def test_derivative_diverges_at_origin_for_nonzero_start():
    f = GridFn1D(GRID512, np.ones(513))
    out = frac_derivative_left(f, 0.3)
    assert out.values[0] == np.inf


def test_semigroup_property_on_smooth_data():
    # I^0.3 I^0.4 = I^0.7; the composed rule sees an x^0.3 cusp at the
    # origin, so the first nodes converge slowly while the interior is sharp
    grid = TimeGrid(0.0, 1.0, 1024)
    f = GridFn1D(grid, np.cos(2.0 * grid.nodes))
    once = frac_integral_left(frac_integral_left(f, 0.3), 0.4)
    direct = frac_integral_left(f, 0.7)
    err = np.abs(once.values - direct.values)
    assert err[grid.nodes >= 0.1].max() < 1e-4
    coarse = TimeGrid(0.0, 1.0, 256)
    fc = GridFn1D(coarse, np.cos(2.0 * coarse.nodes))
    err_c = np.abs(frac_integral_left(frac_integral_left(fc, 0.3), 0.4).values
                   - frac_integral_left(fc, 0.7).values).max()
    assert err.max() < err_c


# --- inverse kernel operator ---------------------------------------------------


@pytest.mark.parametrize("H", [0.1, 0.25, 0.4])
def test_kh_inverse_of_identity_function(H):
    # phi(s) = s has phi' = 1 and the closed form
    # psi(s) = Gamma(3/2-H)/Gamma(2-2H) * s^(1/2-H); the quadrature is not
    # exact for the fractional-power integrand, so only the interior is held
    # to a tight tolerance
    phi = GridFn1D(GRID512, GRID512.nodes.copy())
    psi = kh_inverse_ac(phi, H)
    s = GRID512.nodes
    target = math.gamma(1.5 - H) / math.gamma(2.0 - 2.0 * H) * s[1:] ** (0.5 - H)
    rel = np.abs(psi.values[1:] - target) / target
    assert rel[s[1:] >= 0.05].max() < 5e-3
    assert rel[s[1:] >= 0.2].max() < 1e-3


def test_kh_inverse_rejects_bad_H_and_grid():
    phi = GridFn1D(GRID512, GRID512.nodes.copy())
    with pytest.raises(ValueError):
        kh_inverse_ac(phi, 0.5)
    shifted = TimeGrid(0.5, 1.0, 8)
    with pytest.raises(ValueError):
        kh_inverse_ac(GridFn1D(shifted, np.zeros(9)), 0.25)


# --- change-of-measure weight --------------------------------------------------


def test_girsanov_weight_is_one_for_zero_drift():
    path = volterra_fbm(0.25, 1, TimeGrid(0.0, 1.0, 64), seed=3)
    w = girsanov_weight(make_drift("zero"), path, 0.25)
    assert w.weight == 1.0
    assert w.log_weight == 0.0


def test_girsanov_weight_is_positive_and_logged():
    path = volterra_fbm(0.25, 1, TimeGrid(0.0, 1.0, 128), seed=3)
    b = make_drift("bump", amp=0.5)
    w = girsanov_weight(b, path, 0.25)
    assert w.weight > 0
    assert w.log_weight == pytest.approx(math.log(w.weight), rel=1e-12)


def test_girsanov_weight_needs_wiener_increments():
    path = circulant_fbm(0.25, 1, TimeGrid(0.0, 1.0, 64), seed=3)
    with pytest.raises(ValueError, match="wiener_increments"):
        girsanov_weight(make_drift("zero"), path, 0.25)


def test_girsanov_mean_is_unbiased_at_coarse_resolution():
    # the weight at node j must depend on increments strictly before j;
    # any lookahead shows up as a mean shifted off 1 that refinement does
    # not cure, so even a coarse grid catches it
    grid = TimeGrid(0.0, 1.0, 64)
    b = make_drift("bump", amp=0.5)
    w = np.array([girsanov_weight(b, volterra_fbm(0.25, 1, grid, seed), 0.25).weight
                  for seed in range(400)])
    se = w.std(ddof=1) / math.sqrt(w.size)
    assert abs(w.mean() - 1.0) <= 4.0 * se
