import numpy as np
import pytest

from zakotfs.channel import PhysicalChannel, sample_veha
from zakotfs.effective import noise_covariance_gaussian
from zakotfs.filters import PulseShapingFilter
from zakotfs.lattice import ModulationParams, QuasiPeriodicGrid
from zakotfs.tdoracle import (
    TdGrid,
    TdSignal,
    apply_channel_td,
    carrier_waveform,
    demodulate,
    empirical_noise_covariance,
    end_to_end_check,
    energy_identity_check,
    filtered_lattice_pulse,
    inverse_zak,
    lattice_response,
    modulate,
    td_energy_ratio,
    zak,
)

P = ModulationParams(8, 8, 15e3)


def random_frame(rng, p=P):
    return QuasiPeriodicGrid(p, (rng.standard_normal((p.M, p.N)) + 1j * rng.standard_normal((p.M, p.N))) / np.sqrt(2))


@pytest.fixture(scope="module")
def gauss():
    f = PulseShapingFilter.gaussian(P)
    return f, TdGrid.for_filter(f, 8)


# ---------------------------------------------------------------------------
# Zak pair
# ---------------------------------------------------------------------------
def test_zak_round_trip_and_parseval(gauss):
    f, grid = gauss
    s = modulate(f, random_frame(np.random.default_rng(0)), grid)
    Z = zak(s, grid)
    back = inverse_zak(Z, grid)
    assert np.max(np.abs(back.samples - s.samples)) < 1e-6 * np.max(np.abs(s.samples))
    e_dd = np.sum(np.abs(Z) ** 2) / grid.rate * f.params.nu_p / grid.periods
    assert e_dd == pytest.approx(s.energy(), rel=1e-6)


def test_zak_is_quasi_periodic_and_linear(gauss):
    f, grid = gauss
    rng = np.random.default_rng(1)
    a, b = modulate(f, random_frame(rng), grid), modulate(f, random_frame(rng), grid)
    za, zb = zak(a, grid), zak(b, grid)
    ab = TdSignal(a.samples + 2j * b.samples, a.rate, a.t0)
    assert np.allclose(zak(ab, grid), za + 2j * zb, atol=1e-12 * np.abs(za).max())
    with pytest.raises(ValueError):
        zak(TdSignal(a.samples[:-1], a.rate, a.t0), grid)


def test_inverse_zak_of_delta_pulse_is_impulse_train():
    # one Zak-domain delay sample set to a constant: an impulse train at n tau_p
    f = PulseShapingFilter.sinc(P)
    grid = TdGrid(P, 4, 16)
    Z = np.zeros((grid.per_period, grid.periods), complex)
    Z[0, :] = 1.0
    s = inverse_zak(Z, grid).samples
    nz = np.flatnonzero(np.abs(s) > 1e-12)
    assert np.all(np.mod(nz, grid.per_period) == 0)
    assert nz.size == 1  # a flat Doppler profile keeps only n = 0
    del f


# ---------------------------------------------------------------------------
# carriers
# ---------------------------------------------------------------------------
def test_gaussian_carrier_structure(gauss):
    f, grid = gauss
    s = np.abs(carrier_waveform(P, f, 0, 0, grid).samples)
    peaks = s[:: grid.per_period]
    n = np.round(grid.t[:: grid.per_period] / P.tau_p).astype(int)
    centre = np.flatnonzero(n == 0)[0]
    # local maxima at the pulse positions and a monotone envelope either side
    for j in range(centre - 3, centre + 4):
        i = j * grid.per_period
        assert s[i] >= s[i - 1] and s[i] >= s[i + 1]
    assert np.all(np.diff(peaks[: centre + 1]) >= -1e-15)
    assert np.all(np.diff(peaks[centre:]) <= 1e-15)


@pytest.mark.parametrize("kind", ["gaussian", "sinc", "rrc"])
def test_carrier_unit_energy(kind):
    f = {
        "gaussian": PulseShapingFilter.gaussian(P),
        "sinc": PulseShapingFilter.sinc(P),
        "rrc": PulseShapingFilter.rrc(P, 0.1, 0.2),
    }[kind]
    grid = TdGrid.for_filter(f, 8)
    for k, l in [(0, 0), (3, 5)]:
        assert carrier_waveform(P, f, k, l, grid).energy() == pytest.approx(1.0, abs=1e-3)
    with pytest.raises(ValueError):
        carrier_waveform(P, f, P.M, 0, grid)


def test_zero_doppler_carrier_has_real_weights(gauss):
    f, grid = gauss
    s = carrier_waveform(P, f, 2, 0, grid).samples[2 * grid.oversample:: grid.per_period]
    assert np.max(np.abs(s.imag)) < 1e-12 * np.abs(s).max()
    assert np.all(s.real > -1e-12 * np.abs(s).max())


@pytest.mark.parametrize("kl", [(0, 0), (3, 5), (7, 1)])
def test_dual_construction(gauss, kl):
    f, grid = gauss
    Z = zak(carrier_waveform(P, f, *kl, grid), grid)
    ref = filtered_lattice_pulse(f, grid, *kl)
    assert np.max(np.abs(Z - ref)) < 1e-6 * np.abs(ref).max()


# ---------------------------------------------------------------------------
# channel
# ---------------------------------------------------------------------------
def test_channel_identity_and_integer_shift(gauss):
    f, grid = gauss
    s = modulate(f, random_frame(np.random.default_rng(2)), grid)
    assert np.array_equal(apply_channel_td(s, PhysicalChannel.identity()).samples, s.samples)
    r = apply_channel_td(s, PhysicalChannel.from_arrays([1.0], [5 / grid.rate], [0.0]))
    assert np.allclose(r.samples[5:], s.samples[:-5], atol=1e-14)


def test_fractional_delay_matches_band_limited_shift(gauss):
    f, grid = gauss
    s = modulate(f, random_frame(np.random.default_rng(3)), grid)
    tau = 0.37 / grid.rate
    r = apply_channel_td(s, PhysicalChannel.from_arrays([1.0], [tau], [0.0])).samples
    F = np.fft.fftfreq(grid.n_samples, 1 / grid.rate)
    exact = np.fft.ifft(np.fft.fft(s.samples) * np.exp(-2j * np.pi * F * tau))
    assert np.max(np.abs(r - exact)) < 1e-6 * np.abs(s.samples).max()


def test_awgn_level(gauss):
    f, grid = gauss
    s = TdSignal(np.zeros(grid.n_samples, complex), grid.rate, grid.t0)
    r = apply_channel_td(s, PhysicalChannel.identity(), N0=2.0, rng=0).samples
    assert np.mean(np.abs(r) ** 2) / grid.rate == pytest.approx(2.0, rel=0.05)


# ---------------------------------------------------------------------------
# end to end
# ---------------------------------------------------------------------------
def test_delta_channel_gaussian(gauss):
    f, grid = gauss
    res = end_to_end_check(P, f, PhysicalChannel.identity(), random_frame(np.random.default_rng(4)), grid=grid)
    assert res.max_err < 1e-5


def test_zero_input_gives_zero_output(gauss):
    f, grid = gauss
    res = end_to_end_check(P, f, sample_veha(815.0, 1.0, 0), QuasiPeriodicGrid.zeros(P), grid=grid)
    assert not np.any(res.y_td_path) and not np.any(res.y_discrete_path)


def test_veha_fractional_delays_gaussian(gauss):
    f, grid = gauss
    ch = sample_veha(815.0, 1.0, 5)
    assert np.any(np.mod(ch.delays * grid.rate, 1) > 1e-3)
    res = end_to_end_check(P, f, ch, random_frame(np.random.default_rng(5)), grid=grid)
    assert res.max_err < 1e-5


def test_lattice_form_agrees_with_sampled_chain(gauss):
    f, grid = gauss
    ch = sample_veha(3000.0, 2.0, 6)
    x = random_frame(np.random.default_rng(6))
    sampled = demodulate(apply_channel_td(modulate(f, x, grid), ch), f, grid)
    assert np.max(np.abs(lattice_response(f, ch, x) - sampled)) < 1e-6


def test_sinc_delta_channel():
    f = PulseShapingFilter.sinc(P)
    res = end_to_end_check(P, f, PhysicalChannel.identity(), random_frame(np.random.default_rng(7)))
    assert res.max_err < 1e-3


def test_rrc_veha():
    f = PulseShapingFilter.rrc(P, 0.12, 0.25)
    res = end_to_end_check(P, f, sample_veha(815.0, 1.0, 8), random_frame(np.random.default_rng(8)))
    assert res.max_err < 1e-4


def test_chain_is_linear(gauss):
    f, grid = gauss
    rng = np.random.default_rng(9)
    ch = sample_veha(815.0, 1.0, 9)
    a, b = random_frame(rng), random_frame(rng)
    ya = end_to_end_check(P, f, ch, a, grid=grid).y_td_path
    yb = end_to_end_check(P, f, ch, b, grid=grid).y_td_path
    yab = end_to_end_check(P, f, ch, a + b * 3.0, grid=grid).y_td_path
    assert np.max(np.abs(yab - ya - 3 * yb)) < 1e-10


# ---------------------------------------------------------------------------
# energy and noise
# ---------------------------------------------------------------------------
def test_single_pilot_energy(gauss):
    f, _ = gauss
    x = np.zeros((1, 8, 8), complex)
    x[0, 4, 4] = 1.0
    assert td_energy_ratio(f, x) == pytest.approx(1.0, abs=1e-2)
    assert np.real(modulate(f, 2 * x).energy()[0]) == pytest.approx(4 * modulate(f, x).energy()[0], rel=1e-12)


def test_qpsk_frame_energy(gauss):
    f, _ = gauss
    rng = np.random.default_rng(10)
    frames = (np.sign(rng.standard_normal((20, 8, 8))) + 1j * np.sign(rng.standard_normal((20, 8, 8)))) / np.sqrt(2)
    assert energy_identity_check(f, frames) < 3e-2


def test_noise_covariance_small_monte_carlo(gauss):
    f, _ = gauss
    R = noise_covariance_gaussian(P, f, 1.0).R
    Re = empirical_noise_covariance(f, 1.0, draws=10_000, rng=0)
    # Frobenius error of a 1e4-draw estimate is about sqrt(tr(R)^2 / (draws ||R||^2))
    expected = np.sqrt(np.real(np.trace(R)) ** 2 / 10_000) / np.linalg.norm(R)
    assert np.linalg.norm(Re - R) / np.linalg.norm(R) < 1.5 * expected
