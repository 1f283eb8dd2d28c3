"""Delay-Doppler lattice, quasi-periodic grids and discrete twisted convolution.

Index convention: ``k`` is the delay bin, ``l`` the Doppler bin and the
vectorised position of ``(k, l)`` is ``k * N + l``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Tuple

import numpy as np

_TWO_PI_J = 2j * np.pi


@dataclass(frozen=True)
class ModulationParams:
    """Lattice geometry of one Zak-OTFS subframe.

    Parameters
    ----------
    M : int
        Delay bins per delay period.
    N : int
        Doppler bins per Doppler period.
    nu_p : float
        Doppler period in Hz. The delay period is ``1 / nu_p``.
    """

    M: int
    N: int
    nu_p: float

    def __post_init__(self):
        if int(self.M) != self.M or int(self.N) != self.N:
            raise ValueError("M and N must be integers")
        if self.M < 1 or self.N < 1:
            raise ValueError(f"M and N must be >= 1, got M={self.M}, N={self.N}")
        if not np.isfinite(self.nu_p) or self.nu_p <= 0:
            raise ValueError(f"nu_p must be a positive frequency, got {self.nu_p}")
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "nu_p", float(self.nu_p))

    @classmethod
    def from_bandwidth(cls, M: int, N: int, B: float) -> "ModulationParams":
        return cls(M, N, B / M)

    @property
    def tau_p(self) -> float:
        return 1.0 / self.nu_p

    @property
    def B(self) -> float:
        return self.M * self.nu_p

    @property
    def T(self) -> float:
        return self.N * self.tau_p

    @property
    def MN(self) -> int:
        return self.M * self.N

    @property
    def delay_step(self) -> float:
        """Delay resolution ``tau_p / M`` in seconds."""
        return self.tau_p / self.M

    @property
    def doppler_step(self) -> float:
        """Doppler resolution ``nu_p / N`` in Hz."""
        return self.nu_p / self.N


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class QuasiPeriodicGrid:
    """Samples of a quasi-periodic DD signal on the fundamental domain.

    Only the ``M x N`` fundamental domain is stored; every other lattice
    point is obtained through :func:`qp_extend`.
    """

    params: ModulationParams
    samples: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.shape != (self.params.M, self.params.N):
            raise ValueError(
                f"samples must have shape {(self.params.M, self.params.N)}, got {s.shape}"
            )
        object.__setattr__(self, "samples", _frozen(s))

    @classmethod
    def zeros(cls, params: ModulationParams) -> "QuasiPeriodicGrid":
        return cls(params, np.zeros((params.M, params.N), dtype=complex))

    @classmethod
    def unit_pulse(cls, params: ModulationParams, k: int, l: int) -> "QuasiPeriodicGrid":
        """Canonical quasi-periodic pulse located at ``(k, l)`` of the fundamental domain."""
        x = np.zeros((params.M, params.N), dtype=complex)
        x[k, l] = 1.0
        return cls(params, x)

    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2))

    def __add__(self, other: "QuasiPeriodicGrid") -> "QuasiPeriodicGrid":
        _check_same_params(self.params, other.params)
        return QuasiPeriodicGrid(self.params, self.samples + other.samples)

    def __mul__(self, scalar) -> "QuasiPeriodicGrid":
        return QuasiPeriodicGrid(self.params, self.samples * scalar)

    __rmul__ = __mul__


def _check_same_params(a: ModulationParams, b: ModulationParams) -> None:
    if (a.M, a.N) != (b.M, b.N):
        raise ValueError(f"lattice mismatch: {(a.M, a.N)} vs {(b.M, b.N)}")


def qp_extend(g: QuasiPeriodicGrid, k, l):
    """Evaluate a quasi-periodic grid at arbitrary integer lattice points.

    ``x[k0 + n M, l0 + m N] = exp(j 2 pi n l0 / N) x[k0, l0]``; Doppler
    aliases carry no phase. Accepts scalars or broadcastable integer arrays.
    """
    M, N = g.params.M, g.params.N
    k = np.asarray(k)
    l = np.asarray(l)
    n, k0 = np.divmod(k, M)
    l0 = np.mod(l, N)
    out = np.exp(_TWO_PI_J * n * l0 / N) * g.samples[k0, l0]
    return out[()] if out.ndim == 0 else out


def vectorize(g: QuasiPeriodicGrid) -> np.ndarray:
    """Stack the fundamental domain into a length ``M*N`` vector, index ``k*N + l``."""
    return g.samples.reshape(-1).copy()


def devectorize(v, params: ModulationParams) -> QuasiPeriodicGrid:
    v = np.asarray(v)
    if v.ndim != 1 or v.size != params.MN:
        raise ValueError(f"expected a vector of length {params.MN}, got shape {v.shape}")
    return QuasiPeriodicGrid(params, v.reshape(params.M, params.N))


@dataclass(frozen=True, eq=False)
class DdTapSet:
    """Finite-support discrete DD filter (not quasi-periodic).

    Taps are stored densely on a rectangular window: ``values[i, j]`` is the
    tap at offset ``(k_origin + i, l_origin + j)``.
    """

    values: np.ndarray = field(repr=False)
    k_origin: int = 0
    l_origin: int = 0

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.size == 0:
            raise ValueError("tap window must be a non-empty 2-D array")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "k_origin", int(self.k_origin))
        object.__setattr__(self, "l_origin", int(self.l_origin))

    @classmethod
    def from_dict(cls, taps: Mapping[Tuple[int, int], complex]) -> "DdTapSet":
        if not taps:
            return cls(np.zeros((1, 1), dtype=complex))
        ks = [k for k, _ in taps]
        ls = [l for _, l in taps]
        k0, l0 = min(ks), min(ls)
        v = np.zeros((max(ks) - k0 + 1, max(ls) - l0 + 1), dtype=complex)
        for (k, l), c in taps.items():
            v[k - k0, l - l0] += c
        return cls(v, k0, l0)

    @property
    def k_offsets(self) -> np.ndarray:
        return self.k_origin + np.arange(self.values.shape[0])

    @property
    def l_offsets(self) -> np.ndarray:
        return self.l_origin + np.arange(self.values.shape[1])

    def __getitem__(self, key: Tuple[int, int]) -> complex:
        k, l = key
        i, j = k - self.k_origin, l - self.l_origin
        if 0 <= i < self.values.shape[0] and 0 <= j < self.values.shape[1]:
            return complex(self.values[i, j])
        return 0j

    def to_dict(self, threshold: float = 0.0) -> dict:
        """Nonzero taps as ``{(k, l): value}``; ``threshold`` is relative to the peak."""
        mag = np.abs(self.values)
        peak = mag.max()
        keep = mag > threshold * peak if peak > 0 else np.zeros_like(mag, bool)
        if threshold == 0.0:
            keep = mag > 0
        out = {}
        for i, j in zip(*np.nonzero(keep)):
            out[(int(self.k_origin + i), int(self.l_origin + j))] = complex(self.values[i, j])
        return out

    def energy(self) -> float:
        return float(np.sum(np.abs(self.values) ** 2))

    def trimmed(self, eps: float = 1e-8) -> "DdTapSet":
        """Smallest sub-window holding every tap above ``eps`` times the peak magnitude."""
        mag = np.abs(self.values)
        peak = mag.max()
        if peak == 0:
            return DdTapSet(np.zeros((1, 1), dtype=complex))
        rows = np.nonzero((mag >= eps * peak).any(axis=1))[0]
        cols = np.nonzero((mag >= eps * peak).any(axis=0))[0]
        sub = self.values[rows[0]: rows[-1] + 1, cols[0]: cols[-1] + 1]
        return DdTapSet(sub, self.k_origin + rows[0], self.l_origin + cols[0])


def twisted_convolve(h: DdTapSet, x: QuasiPeriodicGrid) -> QuasiPeriodicGrid:
    """Discrete twisted convolution of a finite filter with a quasi-periodic grid.

    ``y[k, l] = sum_{k', l'} h[k', l'] x[k - k', l - l'] exp(j 2 pi l' (k - k') / (M N))``

    The Doppler sum is folded modulo ``N`` and done as a circular convolution,
    one delay offset at a time.
    """
    p = x.params
    M, N = p.M, p.N
    k = np.arange(M)
    y = np.zeros((M, N), dtype=complex)
    b = h.l_offsets
    b_mod = np.mod(b, N)
    for i, a in enumerate(h.k_offsets):
        row = h.values[i]
        nz = row != 0
        if not nz.any():
            continue
        # x_qp[k - a, l'] for l' in [0, N): the delay alias phase only
        n, k0 = np.divmod(k - a, M)
        xa = x.samples[k0] * np.exp(_TWO_PI_J * np.outer(n, np.arange(N)) / N)
        # c[k, b] = h[a, b] exp(j 2 pi b (k - a) / (M N)), folded over b mod N
        c = row[nz][None, :] * np.exp(_TWO_PI_J * np.outer(k - a, b[nz]) / (M * N))
        folded = np.zeros((M, N), dtype=complex)
        np.add.at(folded, (slice(None), b_mod[nz]), c)
        y += np.fft.ifft(np.fft.fft(folded, axis=1) * np.fft.fft(xa, axis=1), axis=1)
    return QuasiPeriodicGrid(p, y)


def compose_taps(h1: DdTapSet, h2: DdTapSet, params: ModulationParams) -> DdTapSet:
    """Twisted convolution of two finite filters on the lattice (no periodisation).

    ``(h1 * h2)[k, l] = sum h1[k', l'] h2[k - k', l - l'] exp(j 2 pi l' (k - k') / (M N))``
    """
    MN = params.MN
    K = h1.values.shape[0] + h2.values.shape[0] - 1
    L = h1.values.shape[1] + h2.values.shape[1] - 1
    out = np.zeros((K, L), dtype=complex)
    ko, lo = h1.k_origin + h2.k_origin, h1.l_origin + h2.l_origin
    k_out = ko + np.arange(K)
    for (a, b), c in h1.to_dict().items():
        i, j = a + h2.k_origin - ko, b + h2.l_origin - lo
        rows = k_out[i: i + h2.values.shape[0]]
        phase = np.exp(_TWO_PI_J * b * (rows - a) / MN)[:, None]
        out[i: i + h2.values.shape[0], j: j + h2.values.shape[1]] += c * phase * h2.values
    return DdTapSet(out, ko, lo)


@lru_cache(maxsize=8)
def _hdd_indices(M: int, N: int):
    """Gather indices and phases mapping folded tap spectra onto ``H``."""
    A0g, B0g, Kg, Lg = np.meshgrid(np.arange(M), np.arange(N), np.arange(M), np.arange(N), indexing="ij")
    carry = (Kg + A0g) // M
    Kp = (Kg + A0g) % M
    Lp = (Lg + B0g) % N
    # flat index into F[a0, b0, l', k] of shape (M, N, N, M)
    gather = ((A0g * N + B0g) * N + Lp) * M + Kg
    phase = np.exp(_TWO_PI_J * B0g * Kg / (M * N)) * np.exp(-_TWO_PI_J * carry * Lp / N)
    rows = Kp * N + Lp
    cols = Kg * N + Lg
    for a in (gather, phase, rows, cols):
        a.setflags(write=False)
    return gather.ravel(), phase.ravel(), rows.ravel(), cols.ravel()


def build_Hdd(taps: DdTapSet, params: ModulationParams) -> np.ndarray:
    """Effective channel matrix ``H[k'N + l', kN + l]`` of the discrete I/O relation.

    Column ``kN + l`` equals ``vectorize(twisted_convolve(taps, unit_pulse(k, l)))``.
    All aliases present in the tap window are accounted for; the caller owns
    the choice of window. Taps are grouped by residue ``(a mod M, b mod N)``
    and the alias sums are evaluated with FFTs, so the cost is
    ``O(window + (MN)^2 log)`` rather than ``O(window * MN)``.
    """
    M, N = params.M, params.N
    a = taps.k_offsets
    b = taps.l_offsets
    a0, s = np.mod(a, M), np.floor_divide(a, M)
    b0, t = np.mod(b, N), np.floor_divide(b, N)
    # fold[a0, b0, s mod N, t mod M] = sum of taps h[a0 + M s, b0 + N t]
    fold = np.zeros((M, N, N, M), dtype=complex)
    A0, B0 = np.meshgrid(a0, b0, indexing="ij")
    S, Tt = np.meshgrid(np.mod(s, N), np.mod(t, M), indexing="ij")
    np.add.at(fold, (A0, B0, S, Tt), taps.values)
    # F[a0, b0, l', k] = sum_{s,t} h exp(-j 2 pi s l' / N) exp(j 2 pi t k / M)
    F = np.fft.fft(fold, axis=2)
    F = np.fft.ifft(F, axis=3) * M

    gather, phase, rows, cols = _hdd_indices(M, N)
    H = np.zeros((M * N, M * N), dtype=complex)
    H[rows, cols] = F.ravel()[gather] * phase
    return H
