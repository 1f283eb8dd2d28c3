"""Time-domain reference path.

Carriers are synthesized as ``w1(t) * [W2(t) x_{k,l}(t)]`` where ``x_{k,l}``
is the Zak pulse train, the channel is applied sample by sample with
band-limited fractional delays, and the receiver maps back to the DD domain
with a discrete Zak transform. Nothing here reuses the effective-channel
formulas, which is what makes it an oracle for them.

The DD-domain matched filter ``w_rx *s Z[r]`` is applied through its
time-domain factorization: it equals the Zak transform of
``W2*(t) (w1~ * r)(t)`` with ``w1~(t) = conj(w1(-t))``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import signal

from .channel import PhysicalChannel
from .effective import AMPLITUDE_FLOOR, effective_taps
from .filters import PulseShapingFilter
from .lattice import ModulationParams, QuasiPeriodicGrid, twisted_convolve

#: guard interval (in units of 1/B) around the subframe for algebraic tails
BANDLIMITED_PAD = 64
INTERP_TAPS = 64
KAISER_BETA = 12.0


@dataclass(frozen=True, eq=False)
class TdSignal:
    """Uniformly sampled baseband signal; the last axis is time.

    Leading axes (if any) index independent realizations.
    """

    samples: np.ndarray = field(repr=False)
    rate: float
    t0: float

    @property
    def span(self) -> float:
        return self.samples.shape[-1] / self.rate

    @property
    def t(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.shape[-1]) / self.rate

    def energy(self):
        return np.sum(np.abs(self.samples) ** 2, axis=-1) / self.rate


@dataclass(frozen=True)
class TdGrid:
    """Sampling plan shared by every signal of one oracle run.

    ``oversample`` samples per ``1/B`` (so lattice delays land on samples) and
    ``periods`` delay periods in total, centred on ``t = 0``. ``periods`` is
    also the number of Doppler samples per period in the Zak domain.
    """

    params: ModulationParams
    oversample: int
    periods: int

    @classmethod
    def for_filter(cls, f: PulseShapingFilter, oversample: int = 8, pad: Optional[float] = None) -> "TdGrid":
        """Smallest even period count covering the subframe plus filter tails."""
        p = f.params
        lo, hi = f.time_support()
        if pad is None:
            if f.kind == "gaussian":
                pad = np.sqrt(np.log(1 / AMPLITUDE_FLOOR) / f.delay_factor.param) + 1
            else:
                pad = BANDLIMITED_PAD
        half = max(-lo, hi) + pad / p.B + 2 * p.tau_p
        periods = 2 * int(np.ceil(half / p.tau_p))
        # Doppler samples must land on l nu_p / N
        periods = int(np.ceil(periods / p.N)) * p.N
        return cls(p, int(oversample), periods)

    @property
    def rate(self) -> float:
        return self.oversample * self.params.B

    @property
    def per_period(self) -> int:
        return self.oversample * self.params.M

    @property
    def n_samples(self) -> int:
        return self.periods * self.per_period

    @property
    def t0(self) -> float:
        return -(self.periods // 2) * self.params.tau_p

    @property
    def t(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_samples) / self.rate


# ---------------------------------------------------------------------------
# transmitter
# ---------------------------------------------------------------------------
def _pulse_weights(f: PulseShapingFilter, grid: TdGrid, x: np.ndarray) -> np.ndarray:
    """Impulse amplitudes at ``t_m = m / B`` for the whole grid, frame(s) ``x``.

    ``c[m] = sqrt(tau_p) W2(t_m) sum_l x[k, l] exp(j 2 pi n l / N)`` with
    ``m = k + n M``.
    """
    p = f.params
    M, N = p.M, p.N
    m0 = grid.t0 * p.B
    m = np.round(m0).astype(int) + np.arange(grid.periods * M)
    n, k = np.divmod(m, M)
    # sum_l x[k, l] e^{j 2 pi n l / N} = N ifft(x[k])[n mod N]
    X = np.fft.ifft(x, axis=-1) * N
    c = X[..., k, np.mod(n, N)] * np.sqrt(p.tau_p) * f.W2(m / p.B)
    return c


def _w1_response(f: PulseShapingFilter, grid: TdGrid) -> np.ndarray:
    """``W1`` on the DFT frequencies of the grid."""
    return f.W1(np.fft.fftfreq(grid.n_samples, 1 / grid.rate))


def _synthesize(f: PulseShapingFilter, grid: TdGrid, x) -> TdSignal:
    """``sum_m c_m w1(t - t_m)`` on the (periodic) grid, filtered in frequency.

    Multiplying the spectrum of the impulse train by ``W1`` is exact for
    band-limited factors and leaves no kernel truncation error; the grid is
    wide enough that the periodic images do not overlap the subframe.
    """
    c = _pulse_weights(f, grid, np.asarray(x, complex))
    up = np.zeros(c.shape[:-1] + (grid.n_samples,), dtype=complex)
    up[..., :: grid.oversample] = c
    s = np.fft.ifft(np.fft.fft(up, axis=-1) * _w1_response(f, grid), axis=-1) * grid.rate
    return TdSignal(s, grid.rate, grid.t0)


def carrier_waveform(
    p: ModulationParams, f: PulseShapingFilter, k: int, l: int, grid: Optional[TdGrid] = None
) -> TdSignal:
    """TD carrier of the DD lattice pulse at ``(k, l)``."""
    if not (0 <= k < p.M and 0 <= l < p.N):
        raise ValueError(f"({k}, {l}) is outside the fundamental domain")
    grid = grid or TdGrid.for_filter(f)
    x = np.zeros((p.M, p.N), dtype=complex)
    x[k, l] = 1.0
    return _synthesize(f, grid, x)


def modulate(f: PulseShapingFilter, x, grid: Optional[TdGrid] = None) -> TdSignal:
    """TD realization of a DD frame (or a stack of frames) ``x``."""
    grid = grid or TdGrid.for_filter(f)
    xs = x.samples if isinstance(x, QuasiPeriodicGrid) else np.asarray(x, complex)
    return _synthesize(f, grid, xs)


# ---------------------------------------------------------------------------
# Zak transform pair on the oversampled grid
# ---------------------------------------------------------------------------
def zak(s: TdSignal, grid: TdGrid) -> np.ndarray:
    """Discrete Zak transform ``Z[j, i] = sqrt(tau_p) sum_n s(tau_j + n tau_p) e^{-j 2 pi nu_i n tau_p}``.

    ``tau_j = j / rate`` for ``j < oversample M`` and ``nu_i = i nu_p / periods``.
    Returned with shape ``(..., oversample M, periods)``.
    """
    P, J = grid.periods, grid.per_period
    if s.samples.shape[-1] != P * J:
        raise ValueError("signal span does not match the grid")
    n0 = int(round(grid.t0 / grid.params.tau_p))
    blocks = s.samples.reshape(s.samples.shape[:-1] + (P, J))
    # sum over absolute period index n; fold to residues mod P for the DFT
    blocks = np.roll(blocks, n0 % P, axis=-2)
    Z = np.fft.fft(blocks, axis=-2) * np.sqrt(grid.params.tau_p)
    return np.swapaxes(Z, -1, -2)


def inverse_zak(Z: np.ndarray, grid: TdGrid) -> TdSignal:
    """Inverse of :func:`zak`: ``s(tau + n tau_p) = sqrt(tau_p) int_0^nu_p Z(tau, nu) e^{j 2 pi nu n tau_p} dnu``.

    The Doppler integral is the trapezoid rule on the ``periods`` samples,
    which is exact for signals spanning at most ``periods`` delay periods.
    """
    P, J = grid.periods, grid.per_period
    Z = np.asarray(Z)
    if Z.shape[-2:] != (J, P):
        raise ValueError(f"Zak array must end in shape {(J, P)}, got {Z.shape[-2:]}")
    n0 = int(round(grid.t0 / grid.params.tau_p))
    # int_0^nu_p ... dnu ~ (nu_p / P) sum_i ; nu_p sqrt(tau_p) = 1 / sqrt(tau_p)
    blocks = np.fft.ifft(np.swapaxes(Z, -1, -2), axis=-2) / np.sqrt(grid.params.tau_p)
    blocks = np.roll(blocks, -(n0 % P), axis=-2)
    return TdSignal(blocks.reshape(Z.shape[:-2] + (P * J,)), grid.rate, grid.t0)


def filtered_lattice_pulse(f: PulseShapingFilter, grid: TdGrid, k: int, l: int, alias_rings: int = 4) -> np.ndarray:
    """``w_tx *s x_{dd,k,l}`` sampled on the Zak grid (Gaussian-accurate).

    ``sum_{n,m} e^{j 2 pi n l / N} w(tau - tau_n, nu - nu_m) e^{j 2 pi (nu - nu_m) tau_n}``
    with ``tau_n = k tau_p / M + n tau_p`` and ``nu_m = l nu_p / N + m nu_p``.
    """
    p = f.params
    tau = np.arange(grid.per_period) / grid.rate
    nu = np.arange(grid.periods) * p.nu_p / grid.periods
    out = np.zeros((tau.size, nu.size), dtype=complex)
    lo, hi = f.time_support()
    n_range = np.arange(int(np.floor(lo / p.tau_p)) - 2, int(np.ceil(hi / p.tau_p)) + 3)
    for n in n_range:
        tn = k * p.tau_p / p.M + n * p.tau_p
        w1 = f.w1(tau - tn)
        if not np.any(np.abs(w1) > 0):
            continue
        for m in range(-alias_rings - int(np.ceil(hi / p.tau_p)) // p.N - 1, alias_rings + int(np.ceil(hi / p.tau_p)) // p.N + 2):
            vm = l * p.nu_p / p.N + m * p.nu_p
            w2 = f.w2(nu - vm) * np.exp(2j * np.pi * (nu - vm) * tn)
            out += np.exp(2j * np.pi * n * l / p.N) * np.outer(w1, w2)
    return out


# ---------------------------------------------------------------------------
# channel
# ---------------------------------------------------------------------------
def _fractional_delay(x: np.ndarray, delay_samples: float) -> np.ndarray:
    """``x(t - d)`` by integer shift plus a Kaiser-windowed sinc (``INTERP_TAPS`` taps)."""
    d_int = int(np.floor(delay_samples))
    frac = delay_samples - d_int
    if frac < 1e-12:
        h = np.zeros(1)
        h[0] = 1.0
        centre = 0
    else:
        half = INTERP_TAPS // 2
        j = np.arange(-half + 1, half + 1)
        h = np.sinc(j - frac) * np.kaiser(INTERP_TAPS, KAISER_BETA)
        h /= h.sum()  # unit DC gain removes the window's passband offset
        centre = half - 1
    y = signal.fftconvolve(x, h.reshape((1,) * (x.ndim - 1) + (-1,)), mode="full", axes=-1)
    y = y[..., centre: centre + x.shape[-1]]
    out = np.zeros_like(y)
    if d_int >= 0:
        out[..., d_int:] = y[..., : y.shape[-1] - d_int]
    else:
        out[..., :d_int] = y[..., -d_int:]
    return out


def apply_channel_td(
    s: TdSignal, ch: PhysicalChannel, N0: float = 0.0, rng=None
) -> TdSignal:
    """``r(t) = sum_i h_i s(t - tau_i) exp(j 2 pi nu_i (t - tau_i))`` plus optional AWGN of PSD ``N0``."""
    t = s.t0 + np.arange(s.samples.shape[-1]) / s.rate
    r = np.zeros_like(s.samples, dtype=complex)
    for h, ti, vi in zip(ch.gains, ch.delays, ch.dopplers):
        r += h * _fractional_delay(s.samples, ti * s.rate) * np.exp(2j * np.pi * vi * (t - ti))
    if N0 > 0:
        rng = np.random.default_rng(rng)
        sigma = np.sqrt(N0 * s.rate / 2)
        r = r + sigma * (rng.standard_normal(r.shape) + 1j * rng.standard_normal(r.shape))
    return TdSignal(r, s.rate, s.t0)


# ---------------------------------------------------------------------------
# receiver
# ---------------------------------------------------------------------------
def matched_filter_td(r: TdSignal, f: PulseShapingFilter, grid: TdGrid) -> TdSignal:
    """``W2*(t) (w1~ * r)(t)``, whose Zak transform is ``w_rx *s Z[r]``.

    The low-pass step multiplies the spectrum by ``conj(W1)``.
    """
    v = np.fft.ifft(np.fft.fft(r.samples, axis=-1) * np.conj(_w1_response(f, grid)), axis=-1)
    return TdSignal(v * np.conj(f.W2(grid.t)), r.rate, r.t0)


def sample_lattice(Z: np.ndarray, grid: TdGrid) -> np.ndarray:
    """Read ``(k tau_p / M, l nu_p / N)`` off a Zak-domain array."""
    p = grid.params
    return Z[..., :: grid.oversample, :: grid.periods // p.N]


def demodulate(r: TdSignal, f: PulseShapingFilter, grid: TdGrid) -> np.ndarray:
    """Received DD symbols ``y[k, l]`` (stacked if ``r`` is)."""
    return sample_lattice(zak(matched_filter_td(r, f, grid), grid), grid)


def lattice_response(f: PulseShapingFilter, ch: PhysicalChannel, x) -> np.ndarray:
    """Received DD symbols from the continuous-time chain, evaluated only where needed.

    The receiver reads ``W2*(t) v(t)`` at lattice instants ``t_j = j / B``
    only, with ``v = w1~ * r``. Each transmitted impulse ``c_m`` at ``t_m``
    reaches ``v(t_j)`` through one path as
    ``h c_m e^{j 2 pi nu t_m} A(t_j - t_m - tau, nu)``, where
    ``A(d, nu) = int conj(w1(u - d)) w1(u) e^{j 2 pi nu u} du`` is the delay
    factor's cross-ambiguity. The result is a finite double sum with no
    sampling, padding or interpolation, so band-limited filters are exact
    here where the sampled chain has to truncate algebraic tails.
    """
    p = f.params
    M, N, B = p.M, p.N, p.B
    xs = x.samples if isinstance(x, QuasiPeriodicGrid) else np.asarray(x, complex)
    lo, hi = f.time_support()
    m = np.arange(int(np.floor(lo * B)) - 1, int(np.ceil(hi * B)) + 2)
    n, k = np.divmod(m, M)
    X = np.fft.ifft(xs, axis=-1) * N
    tm = m / B
    c = X[k, np.mod(n, N)] * np.sqrt(p.tau_p) * f.W2(tm)
    v = np.zeros(m.size, dtype=complex)
    for h, ti, vi in zip(ch.gains, ch.delays, ch.dopplers):
        d = tm[:, None] - tm[None, :] - ti
        A = np.exp(2j * np.pi * vi * d) * f.delay_factor.xcorr(vi / B, B * d)
        v += h * (A * np.exp(2j * np.pi * vi * tm)[None, :]) @ c
    v *= np.conj(f.W2(tm))
    # Zak transform read at (k tau_p / M, l nu_p / N)
    y = np.zeros((M, N), dtype=complex)
    np.add.at(y, k, np.sqrt(p.tau_p) * v[:, None] * np.exp(-2j * np.pi * np.outer(n, np.arange(N)) / N))
    return y


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class EndToEndResult:
    y_td_path: np.ndarray = field(repr=False)
    y_discrete_path: np.ndarray = field(repr=False)
    max_err: float


def end_to_end_check(
    p: ModulationParams,
    f: PulseShapingFilter,
    ch: PhysicalChannel,
    x: QuasiPeriodicGrid,
    oversample: int = 8,
    rings: Optional[int] = None,
    grid: Optional[TdGrid] = None,
    method: str = "auto",
) -> EndToEndResult:
    """Compare the TD chain against ``twisted_convolve(h_eff, x)``.

    ``method="sampled"`` runs the oversampled waveform chain;
    ``method="lattice"`` uses :func:`lattice_response`. ``"auto"`` picks the
    sampled chain for Gaussian filters and the lattice form otherwise.
    ``rings`` sets the alias window of band-limited taps (default 32 for
    sinc, whose taps decay like ``1/k``, and 8 for RRC).
    """
    if rings is None:
        rings = 32 if f.kind == "sinc" else 8
    if method == "auto":
        method = "sampled" if f.kind == "gaussian" else "lattice"
    if method == "sampled":
        grid = grid or TdGrid.for_filter(f, oversample)
        y_td = demodulate(apply_channel_td(modulate(f, x, grid), ch), f, grid)
    elif method == "lattice":
        y_td = lattice_response(f, ch, x)
    else:
        raise ValueError(f"unknown method {method!r}")
    taps = effective_taps(ch, f, rings=None if f.kind == "gaussian" else rings)
    y_disc = twisted_convolve(taps, x).samples
    return EndToEndResult(y_td, y_disc, float(np.max(np.abs(y_td - y_disc))))


def energy_identity_check(f: PulseShapingFilter, frames, oversample: int = 8) -> float:
    """Relative gap between mean TD energy and mean DD energy over ``frames`` (shape ``(F, M, N)``)."""
    frames = np.asarray(frames, complex)
    grid = TdGrid.for_filter(f, oversample)
    e_td = modulate(f, frames, grid).energy()
    e_dd = np.sum(np.abs(frames) ** 2, axis=(-2, -1))
    return float(abs(np.mean(e_td) - np.mean(e_dd)) / np.mean(e_dd))


def td_energy_ratio(f: PulseShapingFilter, frames, oversample: int = 8) -> float:
    """``mean TD energy / mean DD energy`` over a stack of frames."""
    frames = np.asarray(frames, complex)
    grid = TdGrid.for_filter(f, oversample)
    return float(np.mean(modulate(f, frames, grid).energy()) / np.mean(np.sum(np.abs(frames) ** 2, axis=(-2, -1))))


def empirical_noise_covariance(
    f: PulseShapingFilter, N0: float, draws: int = 100_000, oversample: int = 8, rng=None, batch: int = 2000
) -> np.ndarray:
    """Sample covariance of DD noise: white TD noise -> matched filter -> Zak -> lattice."""
    p = f.params
    rng = np.random.default_rng(rng)
    grid = TdGrid.for_filter(f, oversample)
    acc = np.zeros((p.MN, p.MN), dtype=complex)
    done = 0
    sigma = np.sqrt(N0 * grid.rate / 2)
    while done < draws:
        b = min(batch, draws - done)
        w = sigma * (rng.standard_normal((b, grid.n_samples)) + 1j * rng.standard_normal((b, grid.n_samples)))
        y = demodulate(TdSignal(w, grid.rate, grid.t0), f, grid).reshape(b, p.MN)
        acc += y.T @ y.conj()
        done += b
    return acc / draws
