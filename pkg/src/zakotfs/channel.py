"""Doubly-spread physical channel and Veh-A sampling."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np


@dataclass(frozen=True)
class ChannelPath:
    """One propagation path: complex gain, delay (s) and Doppler shift (Hz)."""

    gain: complex
    delay: float
    doppler: float

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError(f"path delay must be nonnegative, got {self.delay}")


@dataclass(frozen=True)
class PhysicalChannel:
    """Spreading function ``sum_i h_i delta(tau - tau_i) delta(nu - nu_i)``."""

    paths: Tuple[ChannelPath, ...]

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        if not self.paths:
            raise ValueError("a channel needs at least one path")

    @classmethod
    def from_arrays(cls, gains, delays, dopplers) -> "PhysicalChannel":
        return cls(
            tuple(
                ChannelPath(complex(g), float(t), float(v))
                for g, t, v in zip(np.atleast_1d(gains), np.atleast_1d(delays), np.atleast_1d(dopplers))
            )
        )

    @classmethod
    def identity(cls) -> "PhysicalChannel":
        return cls((ChannelPath(1.0 + 0j, 0.0, 0.0),))

    @property
    def gains(self) -> np.ndarray:
        return np.array([p.gain for p in self.paths], dtype=complex)

    @property
    def delays(self) -> np.ndarray:
        return np.array([p.delay for p in self.paths], dtype=float)

    @property
    def dopplers(self) -> np.ndarray:
        return np.array([p.doppler for p in self.paths], dtype=float)

    def __len__(self) -> int:
        return len(self.paths)


@dataclass(frozen=True)
class VehAProfile:
    """ITU Vehicular-A power-delay profile."""

    delays_us: Tuple[float, ...] = (0.0, 0.31, 0.71, 1.09, 1.73, 2.51)
    rel_powers_dB: Tuple[float, ...] = (0.0, -1.0, -9.0, -10.0, -15.0, -20.0)

    @property
    def powers(self) -> np.ndarray:
        """Mean-square path gains normalized to unit total."""
        p = 10.0 ** (np.asarray(self.rel_powers_dB) / 10.0)
        return p / p.sum()

    @property
    def delays(self) -> np.ndarray:
        return np.asarray(self.delays_us) * 1e-6

    @property
    def max_delay(self) -> float:
        return float(self.delays.max())


VEH_A = VehAProfile()


def sample_veha(
    nu_max: float,
    delay_scale: float = 1.0,
    rng_seed=None,
    profile: VehAProfile = VEH_A,
    gains=None,
) -> PhysicalChannel:
    """Draw a Veh-A channel.

    Gains are circular complex Gaussian with the profile's normalized
    powers; Doppler shifts are ``nu_max cos(theta_i)`` with i.i.d. uniform
    angles. ``rng_seed`` may be an int, a SeedSequence or a Generator.
    Passing ``gains`` holds the path gains fixed and only redraws angles.
    """
    if nu_max < 0:
        raise ValueError("nu_max must be nonnegative")
    if delay_scale <= 0:
        raise ValueError("delay_scale must be positive")
    rng = np.random.default_rng(rng_seed)
    p = profile.powers
    P = len(p)
    if gains is None:
        z = rng.standard_normal(P) + 1j * rng.standard_normal(P)
        gains = np.sqrt(p / 2) * z
    theta = rng.uniform(0.0, 2 * np.pi, P)
    return PhysicalChannel.from_arrays(gains, profile.delays * delay_scale, nu_max * np.cos(theta))


def channel_spreads(ch: PhysicalChannel) -> Tuple[float, float]:
    """``(max tau - min tau, max nu - min nu)`` over the paths."""
    d, v = ch.delays, ch.dopplers
    return float(d.max() - d.min()), float(v.max() - v.min())


def channel_from_spec(spec: dict, rng_seed=None) -> PhysicalChannel:
    """Channel from a config mapping (``model = "veha"`` or explicit ``fixed_paths``)."""
    fixed = spec.get("fixed_paths")
    if fixed:
        return PhysicalChannel.from_arrays(
            [complex(p.get("gain_re", 1.0), p.get("gain_im", 0.0)) for p in fixed],
            [float(p.get("delay", 0.0)) for p in fixed],
            [float(p.get("doppler", 0.0)) for p in fixed],
        )
    model = str(spec.get("model", "veha")).lower()
    if model != "veha":
        raise ValueError(f"unsupported channel model {model!r}")
    return sample_veha(float(spec.get("nu_max_hz", 815.0)), float(spec.get("delay_scale", 1.0)), rng_seed)
