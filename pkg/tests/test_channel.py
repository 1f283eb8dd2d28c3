import numpy as np
import pytest

from zakotfs.channel import (
    VEH_A,
    PhysicalChannel,
    channel_from_spec,
    channel_spreads,
    sample_veha,
)


def test_profile_relative_powers():
    p = VEH_A.powers
    assert p.sum() == pytest.approx(1.0, abs=1e-15)
    assert p[1] / p[0] == pytest.approx(10 ** -0.1, rel=1e-12)
    assert p[5] / p[0] == pytest.approx(10 ** -2.0, rel=1e-12)


def test_sample_shape_and_delays():
    ch = sample_veha(815.0, 1.0, 3)
    assert len(ch) == 6
    np.testing.assert_allclose(ch.delays, VEH_A.delays)
    assert np.all(np.abs(ch.dopplers) <= 815.0)
    ch2 = sample_veha(815.0, 2.5, 3)
    np.testing.assert_allclose(ch2.delays, 2.5 * VEH_A.delays)


def test_zero_doppler():
    assert np.all(sample_veha(0.0, 1.0, 1).dopplers == 0)


def test_seed_determinism_bitwise():
    a, b = sample_veha(815.0, 1.0, 11), sample_veha(815.0, 1.0, 11)
    assert a == b
    assert sample_veha(815.0, 1.0, 12) != a


def test_empirical_gain_normalization():
    rng = np.random.default_rng(2024)
    total = np.array([np.sum(np.abs(sample_veha(815.0, 1.0, rng).gains) ** 2) for _ in range(100_000)])
    assert abs(total.mean() - 1) < 0.01


def test_spreads():
    assert channel_spreads(sample_veha(815.0, 1.0, 0))[0] == pytest.approx(2.51e-6)
    assert channel_spreads(PhysicalChannel.identity()) == (0.0, 0.0)
    ch = PhysicalChannel.from_arrays(np.ones(6), VEH_A.delays, 815.0 * np.cos(np.linspace(0, np.pi, 6)))
    assert channel_spreads(ch)[1] == pytest.approx(2 * 815.0)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        sample_veha(-1.0)
    with pytest.raises(ValueError):
        sample_veha(1.0, 0.0)
    with pytest.raises(ValueError):
        PhysicalChannel(())
    with pytest.raises(ValueError):
        PhysicalChannel.from_arrays([1.0], [-1e-6], [0.0])


def test_channel_from_spec():
    ch = channel_from_spec({"fixed_paths": [{"gain_re": 0.5, "delay": 1e-6, "doppler": 100.0}]})
    assert ch.gains[0] == 0.5 and ch.delays[0] == 1e-6 and ch.dopplers[0] == 100.0
    assert channel_from_spec({"model": "veha", "nu_max_hz": 100.0}, 4) == sample_veha(100.0, 1.0, 4)
    with pytest.raises(ValueError):
        channel_from_spec({"model": "eva"})
