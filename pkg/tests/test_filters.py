import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from zakotfs.filters import (
    GAUSSIAN_NO_EXPANSION_ALPHA,
    FilterFactor,
    MatchedFilter,
    PulseShapingFilter,
    filter_from_spec,
    gaussian_alpha_for_expansion,
    gaussian_containment,
    gaussian_matched_rx,
)
from zakotfs.lattice import ModulationParams

P = ModulationParams(8, 8, 15e3)


def envelope(y, x, half=0.5):
    """Running maximum of |y| over a window of +-half (grid units of x)."""
    step = x[1] - x[0]
    r = int(round(half / step))
    a = np.abs(y)
    pad = np.pad(a, r, mode="edge")
    return np.array([pad[i: i + 2 * r + 1].max() for i in range(a.size)])


@pytest.mark.parametrize(
    "factor,W",
    [
        (FilterFactor("gaussian", GAUSSIAN_NO_EXPANSION_ALPHA), 8.0),
        (FilterFactor("gaussian", 0.4), 12.0),
        (FilterFactor("rrc", 0.25), 2000.0),
        (FilterFactor("rrc", 0.5), 400.0),
    ],
)
def test_unit_energy_time_domain(factor, W):
    e, tail = factor.energy_dd(W, step=0.005)
    assert tail < 1e-8
    assert abs(e - 1) < 1e-6


def test_sinc_energy_with_tail_bound():
    # sinc tails decay like 1/x^2 in energy; the bound is the honest check
    f = FilterFactor("sinc")
    W = 4000.0
    e, tail = f.energy_dd(W, step=0.01)
    assert e <= 1 + 1e-6
    assert 1 - e <= tail + 1e-6
    assert f.energy_spectral() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("kind,param", [("sinc", 0.0), ("rrc", 0.2), ("rrc", 0.9), ("gaussian", 1.584), ("gaussian", 5.0)])
def test_spectral_energy(kind, param):
    assert FilterFactor(kind, param).energy_spectral() == pytest.approx(1.0, abs=1e-10)


def test_sinc_zero_crossing_and_peak():
    f = PulseShapingFilter.sinc(P)
    assert abs(f.eval_tx(1 / P.B, 0.0)) < 1e-14
    assert f.eval_tx(0.0, 0.0) == pytest.approx(np.sqrt(P.B * P.T))


def test_rrc_limit_is_sinc():
    x = np.linspace(-40, 40, 8001)
    assert np.max(np.abs(FilterFactor("rrc", 0.0).value(x) - np.sinc(x))) < 1e-9
    rrc = PulseShapingFilter.rrc(P, 0.0, 0.0)
    sinc = PulseShapingFilter.sinc(P)
    tau = x[:200] / P.B
    nu = x[100:300] / P.T
    assert np.max(np.abs(rrc.eval_tx(tau, nu) - sinc.eval_tx(tau, nu))) < 1e-6 * np.sqrt(P.B * P.T)


@pytest.mark.parametrize("beta", [0.1, 0.25, 0.5])
def test_rrc_singular_points_continuous(beta):
    f = FilterFactor("rrc", beta)
    for x0 in (0.0, 1 / (4 * beta), -1 / (4 * beta)):
        xs = x0 + np.array([-3e-4, -1e-4, -1e-6, 0.0, 1e-6, 1e-4, 3e-4])
        v = f.value(xs)
        assert np.all(np.isfinite(v))
        assert np.max(np.abs(np.diff(v))) < 5e-3


def test_rrc_matches_spectral_definition():
    f = FilterFactor("rrc", 0.3)
    x = np.linspace(-6, 6, 37)
    ref = [integrate.quad(lambda s, xx=xx: f.spectrum(s) * np.cos(2 * np.pi * s * xx), -0.65, 0.65, limit=200,
                          points=[-0.35, 0.35])[0] for xx in x]
    assert np.max(np.abs(f.value(x) - np.array(ref))) < 1e-9


def test_localization_ordering_envelope():
    # pointwise ordering fails at sinc zero crossings; compare envelopes
    x = np.arange(2.0, 11.0 + 1e-9, 0.1)
    g = FilterFactor("gaussian", GAUSSIAN_NO_EXPANSION_ALPHA).value(x)
    r = FilterFactor("rrc", 0.056).value(x)
    s = FilterFactor("sinc").value(x)
    eg, er, es = envelope(g, x), envelope(r, x), envelope(s, x)
    sel = (x >= 3 - 1e-9) & (x <= 10 + 1e-9)
    assert np.all(eg[sel] < er[sel])
    assert np.all(er[sel] < es[sel])


def test_localization_pointwise_gaussian_below_both():
    x = np.arange(3.0, 10.0 + 1e-9, 0.1)
    g = np.abs(FilterFactor("gaussian", GAUSSIAN_NO_EXPANSION_ALPHA).value(x))
    nz = np.abs(np.sinc(x)) > 1e-12
    assert np.all(g[nz] < np.abs(FilterFactor("rrc", 0.056).value(x))[nz])
    assert np.all(g[nz] < np.abs(np.sinc(x))[nz])


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-0.4, 0.4), b=st.floats(-6, 6))
def test_xcorr_closed_form_vs_quadrature(a, b):
    for f in (FilterFactor("sinc"), FilterFactor("rrc", 0.3), FilterFactor("gaussian", 1.584)):
        q = f.xcorr_quad(a, np.array([b]))[0]
        assert abs(f.xcorr(a, b) - q) < 1e-10


def test_autocorr_integer_lags_matches_closed_form():
    for f in (FilterFactor("sinc"), FilterFactor("rrc", 0.2), FilterFactor("gaussian", 2.0)):
        u = np.arange(-20, 21)
        assert np.max(np.abs(f.autocorr_integer_lags(20) - f.xcorr(0.0, u.astype(float)))) < 1e-10


def test_matched_filter_involution():
    f = PulseShapingFilter.gaussian(P, 1.2, 2.3)
    tau = np.linspace(-3, 3, 13) / P.B
    nu = np.linspace(-2, 2, 13) / P.T
    mm = MatchedFilter(MatchedFilter(f))
    assert np.max(np.abs(mm(tau, nu) - f.eval_tx(tau, nu))) < 1e-9 * np.sqrt(P.B * P.T)


def test_gaussian_matched_closed_form():
    f = PulseShapingFilter.gaussian(P)
    tau = np.linspace(-2, 2, 9) / P.B
    nu = np.linspace(-2, 2, 9) / P.T
    assert np.max(np.abs(f.matched_rx()(tau, nu) - gaussian_matched_rx(f, tau, nu))) < 1e-9 * np.sqrt(P.B * P.T)


def test_expansion_accounting():
    s = PulseShapingFilter.sinc(P)
    assert (s.T_prime, s.B_prime) == (P.T, P.B)
    r = PulseShapingFilter.rrc(P, 0.1, 0.25)
    assert r.T_prime == pytest.approx(1.25 * P.T) and r.B_prime == pytest.approx(1.1 * P.B)
    g = PulseShapingFilter.gaussian_preset(P, 1.6, 1.0)
    assert g.T_prime == pytest.approx(1.6 * P.T)
    assert g.doppler_factor.param == pytest.approx(GAUSSIAN_NO_EXPANSION_ALPHA * 1.6**2)


@pytest.mark.parametrize("expand", [1.0, 1.25, 1.6])
def test_gaussian_alpha_solver_containment(expand):
    at, an = gaussian_alpha_for_expansion(expand, expand)
    assert at == pytest.approx(an)
    assert gaussian_containment(an, expand) == pytest.approx(0.99, abs=1e-6)
    # the containment extent of the resulting filter reproduces the request
    f = PulseShapingFilter.gaussian(P, at, an)
    assert f.T_prime / P.T == pytest.approx(expand, rel=1e-9)


def test_filter_spec_grammar():
    assert filter_from_spec({"kind": "sinc"}, P).kind == "sinc"
    assert filter_from_spec({"kind": "rrc", "beta_tau": 0.1, "beta_nu": 0.2}, P).doppler_factor.param == 0.2
    assert filter_from_spec({"kind": "gaussian", "alpha_tau": 2.0}, P).delay_factor.param == 2.0
    assert filter_from_spec({"kind": "gaussian", "expand_T": 1.25}, P).T_prime == pytest.approx(1.25 * P.T)
    with pytest.raises(ValueError):
        filter_from_spec({"kind": "hamming"}, P)
    with pytest.raises(ValueError):
        FilterFactor("rrc", 1.5)
    with pytest.raises(ValueError):
        FilterFactor("gaussian", -1.0)
