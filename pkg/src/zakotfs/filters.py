"""Factorizable delay-Doppler pulse shaping filters.

A transmit filter is ``w_tx(tau, nu) = w1(tau) w2(nu)`` with
``w1(tau) = sqrt(B) g1(B tau)`` and ``w2(nu) = sqrt(T) g2(T nu)``, where each
normalized factor ``g`` is a real, even, unit-energy function. Everything
below works in the normalized coordinates ``x`` (DD domain) and ``s``
(Fourier domain: ``f / B`` for the delay factor, ``t / T`` for the Doppler
factor), with ``G(s) = int g(x) exp(-j 2 pi s x) dx``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy import special

from .lattice import ModulationParams

#: alpha giving no time/bandwidth expansion in the reproduction runs
GAUSSIAN_NO_EXPANSION_ALPHA = 1.584
#: default energy fraction defining the effective duration / bandwidth
CONTAINMENT = 0.99

KINDS = ("sinc", "rrc", "gaussian")
_RRC_SINGULAR_WINDOW = 1e-4
_SQRT_HALF = float(np.sqrt(0.5))
_GAUSS_AMPLITUDE_FLOOR = 1e-10


@lru_cache(maxsize=64)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


def _interval_exp_integral(lo, hi, omega):
    """``int_lo^hi exp(j omega s) ds``, zero for empty intervals, stable at ``omega -> 0``."""
    width = np.clip(hi - lo, 0.0, None)
    mid = 0.5 * (hi + lo)
    return width * np.exp(1j * omega * mid) * np.sinc(omega * width / (2 * np.pi))


@dataclass(frozen=True)
class FilterFactor:
    """One normalized factor of a factorizable DD filter.

    ``kind`` is ``"sinc"``, ``"rrc"`` (``param`` = roll-off beta) or
    ``"gaussian"`` (``param`` = width alpha).
    """

    kind: str
    param: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "rrc" and not 0.0 <= self.param <= 1.0:
            raise ValueError(f"RRC roll-off must lie in [0, 1], got {self.param}")
        if self.kind == "gaussian" and not self.param > 0:
            raise ValueError(f"Gaussian alpha must be positive, got {self.param}")
        if self.kind == "sinc":
            object.__setattr__(self, "param", 0.0)
        object.__setattr__(self, "param", float(self.param))

    @property
    def beta(self) -> float:
        return self.param if self.kind == "rrc" else 0.0

    @property
    def is_bandlimited(self) -> bool:
        return self.kind != "gaussian"

    # -- DD domain -------------------------------------------------------
    def value(self, x):
        """Normalized factor ``g(x)``."""
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            a = self.param
            return (2 * a / np.pi) ** 0.25 * np.exp(-a * x**2)
        beta = self.beta
        if beta == 0.0:
            return np.sinc(x)
        return _rrc(x, beta)

    # -- Fourier domain ----------------------------------------------------
    def spectrum(self, s):
        """Fourier transform ``G(s)`` of the normalized factor (real, even)."""
        s = np.abs(np.asarray(s, dtype=float))
        if self.kind == "gaussian":
            a = self.param
            return (2 * np.pi / a) ** 0.25 * np.exp(-np.pi**2 * s**2 / a)
        beta = self.beta
        s1, s2 = (1 - beta) / 2, (1 + beta) / 2
        if beta == 0.0:
            # edge value chosen so that |G|^2 takes the midpoint of its jump;
            # lattice instants t / T = m / (M N) may miss 1/2 by an ulp
            edge = np.abs(s - 0.5) <= 1e-12
            return np.where(edge, _SQRT_HALF, np.where(s < 0.5, 1.0, 0.0))
        out = np.where(s < s1, 1.0, 0.0)
        ramp = (s >= s1) & (s <= s2)
        return np.where(ramp, np.cos(np.pi / (2 * beta) * (s - s1)), out)

    def spectral_support(self) -> Tuple[float, float]:
        """Interval outside which ``|G|`` is zero (or below 1e-10 of its peak)."""
        if self.kind == "gaussian":
            half = np.sqrt(self.param * np.log(1 / _GAUSS_AMPLITUDE_FLOOR)) / np.pi
            return -half, half
        return -(1 + self.beta) / 2, (1 + self.beta) / 2

    def spectral_breakpoints(self) -> np.ndarray:
        lo, hi = self.spectral_support()
        if self.kind == "gaussian" or self.beta == 0.0:
            return np.array([lo, hi])
        s1 = (1 - self.beta) / 2
        return np.array([lo, -s1, s1, hi])

    def _pieces(self):
        """``G`` as a list of ``(lo, hi, [(coef, omega), ...])`` exponential pieces."""
        beta = self.beta
        s1, s2 = (1 - beta) / 2, (1 + beta) / 2
        pieces = [(-s1, s1, [(1.0, 0.0)])]
        if beta > 0:
            w = np.pi / (2 * beta)
            ph = w * s1
            pieces.append((s1, s2, [(0.5 * np.exp(-1j * ph), w), (0.5 * np.exp(1j * ph), -w)]))
            pieces.append((-s2, -s1, [(0.5 * np.exp(1j * ph), w), (0.5 * np.exp(-1j * ph), -w)]))
        return pieces

    # -- spectral cross-correlation --------------------------------------
    def xcorr(self, a, b):
        """``X(a, b) = int G(s) G(s + a) exp(j 2 pi b s) ds`` in closed form.

        This single functional yields every integral of the matched cascade:
        the delay-factor autocorrelation is ``X(0, u)``.
        """
        a, b = np.broadcast_arrays(np.asarray(a, float), np.asarray(b, float))
        if self.kind == "gaussian":
            al = self.param
            return np.exp(-np.pi**2 * a**2 / (2 * al) - al * b**2 / 2 - 1j * np.pi * a * b)
        out = np.zeros(a.shape, dtype=complex)
        pieces = self._pieces()
        for lo, hi, terms in pieces:
            for lo2, hi2, terms2 in pieces:
                L = np.maximum(lo, lo2 - a)
                U = np.minimum(hi, hi2 - a)
                live = U > L
                if not live.any():
                    continue
                for c1, w1 in terms:
                    for c2, w2 in terms2:
                        coef = c1 * c2 * np.exp(1j * w2 * a)
                        out += np.where(
                            live, coef * _interval_exp_integral(L, U, w1 + w2 + 2 * np.pi * b), 0
                        )
        return out

    def xcorr_quad(self, a: float, b, oversample: int = 8):
        """Gauss-Legendre quadrature of :meth:`xcorr` for a scalar shift ``a``.

        Composite rule over the pieces of ``G(s) G(s + a)``; the node count per
        piece grows with ``oversample`` and with the number of oscillations of
        ``exp(j 2 pi b s)`` across it.
        """
        b = np.asarray(b, dtype=float)
        bp = np.union1d(self.spectral_breakpoints(), self.spectral_breakpoints() - a)
        lo = max(self.spectral_support()[0], self.spectral_support()[0] - a)
        hi = min(self.spectral_support()[1], self.spectral_support()[1] - a)
        bp = bp[(bp >= lo) & (bp <= hi)]
        bp = np.union1d(bp, [lo, hi]) if hi > lo else np.array([])
        out = np.zeros(b.shape, dtype=complex)
        bmax = float(np.max(np.abs(b))) if b.size else 0.0
        for s_lo, s_hi in zip(bp[:-1], bp[1:]):
            width = s_hi - s_lo
            if width <= 0:
                continue
            n = int(oversample * (8 + np.ceil(2 * bmax * width)))
            n = 1 << int(np.ceil(np.log2(n)))  # few distinct rules, all cached
            nodes, weights = _leggauss(n)
            s = 0.5 * (s_hi - s_lo) * nodes + 0.5 * (s_hi + s_lo)
            w = 0.5 * width * weights
            f = self.spectrum(s) * self.spectrum(s + a) * w
            out += np.exp(2j * np.pi * np.multiply.outer(b, s)) @ f
        return out

    def autocorr_integer_lags(self, max_lag: int, oversample: int = 8) -> np.ndarray:
        """``X(0, u)`` for integer ``u`` in ``[-max_lag, max_lag]`` by numerical quadrature.

        At integer lags ``X(0, u)`` is a Fourier coefficient of the 1-periodic
        function ``P(s) = sum_m |G(s + m)|^2``; the trapezoid rule on ``n``
        samples of ``P`` (an FFT) returns all of them at once, exact up to
        aliasing from lags beyond ``n / 2``.
        """
        n = 1 << int(np.ceil(np.log2(max(64 * oversample, 4 * max_lag + 2))))
        # midpoint nodes keep clear of the band edges of sinc/RRC spectra
        s = (np.arange(n) + 0.5) / n
        lo, hi = self.spectral_support()
        m = np.arange(int(np.floor(lo)) - 1, int(np.ceil(hi)) + 2)
        P = (self.spectrum(s[None, :] + m[:, None]) ** 2).sum(axis=0)
        c = np.fft.ifft(P)  # (1/n) sum_j P(s_j) exp(j 2 pi u j / n)
        u = np.arange(-max_lag, max_lag + 1)
        return c[np.mod(u, n)] * np.exp(1j * np.pi * u / n)

    # -- energy ----------------------------------------------------------
    def energy_spectral(self) -> float:
        """``int |G|^2`` by composite Gauss-Legendre over the spectral pieces."""
        return float(np.real(self.xcorr_quad(0.0, np.zeros(1), oversample=8)[0]))

    def energy_dd(self, half_width: float, step: float = 0.01) -> Tuple[float, float]:
        """Trapezoid ``int_{-W}^{W} g^2 dx`` and an upper bound on the discarded tail."""
        x = np.arange(-half_width, half_width + step / 2, step)
        e = float(np.trapezoid(self.value(x) ** 2, x))
        return e, self.tail_energy_bound(half_width)

    def tail_energy_bound(self, half_width: float) -> float:
        """Upper bound on ``int_{|x| > W} g(x)^2 dx``."""
        W = half_width
        if self.kind == "gaussian":
            a = self.param
            # int_W^inf sqrt(2a/pi) exp(-2 a x^2) = erfc(sqrt(2a) W) / 2, both sides
            return float(special.erfc(np.sqrt(2 * a) * W))
        if self.beta == 0.0:
            return 2.0 / (np.pi**2 * W)
        # |rrc(x)| <= (1 + 4 beta x) / (pi x (16 beta^2 x^2 - 1)) for x > 1/(4 beta)
        beta = self.beta
        if W <= 1 / (2 * beta):
            return 2.0 / (np.pi**2 * W) * (1 + 4 * beta * W) ** 2
        c = (1 + 4 * beta * W) / (16 * beta**2 * W**2 - 1)
        return float(2 * c**2 / (np.pi**2 * W))

    def containment_halfwidth(self, fraction: float = CONTAINMENT) -> float:
        """Half-width ``h`` of the centred interval holding ``fraction`` of ``int |G|^2``.

        The Fourier-side energy profile governs the subframe duration (Doppler
        factor) and bandwidth (delay factor).
        """
        if self.kind == "gaussian":
            # |G|^2 is Gaussian with variance alpha / (4 pi^2)
            z = special.ndtri(0.5 + fraction / 2)
            return float(z * np.sqrt(self.param) / (2 * np.pi))
        beta = self.beta
        if beta == 0.0:
            return fraction / 2
        s1 = (1 - beta) / 2
        flat = 1 - beta
        if fraction <= flat:
            return fraction / 2
        # energy of both ramps up to u: 2 * (u / 2 + beta sin(pi u / beta) / (2 pi))
        from scipy.optimize import brentq

        def excess(u):
            return u + beta / np.pi * np.sin(np.pi * u / beta) - (fraction - flat)

        u = brentq(excess, 0.0, beta)
        return s1 + u


def _rrc(x, beta):
    """Root raised cosine with removable singularities at 0 and +-1/(4 beta)."""
    x = np.asarray(x, dtype=float)
    num = (1 - beta) * np.sinc((1 - beta) * x) + (4 * beta / np.pi) * np.cos(np.pi * (1 + beta) * x)
    den = 1 - (4 * beta * x) ** 2
    near = np.abs(np.abs(x) - 1 / (4 * beta)) < _RRC_SINGULAR_WINDOW
    safe_den = np.where(near, 1.0, den)
    out = num / safe_den
    if np.any(near):
        out = np.where(near, _rrc_spectral(x, beta), out)
    return out


def _rrc_spectral(x, beta):
    """``int G(s) exp(j 2 pi s x) ds`` with exact piecewise exponential integrals."""
    factor = FilterFactor("rrc", beta)
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape, dtype=complex)
    for lo, hi, terms in factor._pieces():
        for c, w in terms:
            out += c * _interval_exp_integral(lo, hi, w + 2 * np.pi * x)
    return out.real


@dataclass(frozen=True)
class PulseShapingFilter:
    """Factorizable transmit filter ``w1(tau) w2(nu)`` bound to a lattice.

    ``T_prime`` and ``B_prime`` are the effective subframe duration and
    bandwidth used for SNR normalization and throughput.
    """

    delay_factor: FilterFactor
    doppler_factor: FilterFactor
    params: ModulationParams
    T_prime: Optional[float] = None
    B_prime: Optional[float] = None

    def __post_init__(self):
        if self.delay_factor.kind != self.doppler_factor.kind:
            raise ValueError("delay and Doppler factors must be of the same kind")
        if self.T_prime is None:
            object.__setattr__(self, "T_prime", self._extent(self.doppler_factor) * self.params.T)
        if self.B_prime is None:
            object.__setattr__(self, "B_prime", self._extent(self.delay_factor) * self.params.B)

    @staticmethod
    def _extent(factor: FilterFactor) -> float:
        if factor.kind == "gaussian":
            return 2 * factor.containment_halfwidth(CONTAINMENT)
        return 1.0 + factor.beta

    # -- constructors ----------------------------------------------------
    @classmethod
    def sinc(cls, params: ModulationParams) -> "PulseShapingFilter":
        return cls(FilterFactor("sinc"), FilterFactor("sinc"), params)

    @classmethod
    def rrc(cls, params: ModulationParams, beta_tau: float, beta_nu: float) -> "PulseShapingFilter":
        return cls(FilterFactor("rrc", beta_tau), FilterFactor("rrc", beta_nu), params)

    @classmethod
    def gaussian(
        cls,
        params: ModulationParams,
        alpha_tau: float = GAUSSIAN_NO_EXPANSION_ALPHA,
        alpha_nu: float = GAUSSIAN_NO_EXPANSION_ALPHA,
    ) -> "PulseShapingFilter":
        """Gaussian filter with explicit widths; ``T'``/``B'`` from 99% containment."""
        return cls(FilterFactor("gaussian", alpha_tau), FilterFactor("gaussian", alpha_nu), params)

    @classmethod
    def gaussian_preset(
        cls, params: ModulationParams, expand_T: float = 1.0, expand_B: float = 1.0
    ) -> "PulseShapingFilter":
        """Gaussian filter on the reproduction calibration.

        ``alpha = 1.584 * expand**2`` with ``T' = expand_T T`` and
        ``B' = expand_B B``; the no-expansion point is the 1.584 preset.
        """
        a0 = GAUSSIAN_NO_EXPANSION_ALPHA
        return cls(
            FilterFactor("gaussian", a0 * expand_B**2),
            FilterFactor("gaussian", a0 * expand_T**2),
            params,
            T_prime=expand_T * params.T,
            B_prime=expand_B * params.B,
        )

    @property
    def kind(self) -> str:
        return self.delay_factor.kind

    @property
    def spectral_efficiency(self) -> float:
        p = self.params
        return p.B * p.T / (self.B_prime * self.T_prime)

    # -- evaluation ------------------------------------------------------
    def w1(self, tau):
        B = self.params.B
        return np.sqrt(B) * self.delay_factor.value(B * np.asarray(tau, float))

    def w2(self, nu):
        T = self.params.T
        return np.sqrt(T) * self.doppler_factor.value(T * np.asarray(nu, float))

    def W1(self, f):
        """Fourier transform of ``w1`` (the transmit spectrum envelope)."""
        B = self.params.B
        return self.delay_factor.spectrum(np.asarray(f, float) / B) / np.sqrt(B)

    def W2(self, t):
        """Inverse Fourier transform of ``w2`` (the subframe time envelope)."""
        T = self.params.T
        return self.doppler_factor.spectrum(np.asarray(t, float) / T) / np.sqrt(T)

    def eval_tx(self, tau, nu):
        """``w_tx(tau, nu) = w1(tau) w2(nu)``."""
        return self.w1(tau) * self.w2(nu)

    def matched_rx(self) -> "MatchedFilter":
        return MatchedFilter(self)

    def time_support(self) -> Tuple[float, float]:
        """Interval carrying the subframe envelope ``W2`` (1e-10 floor for Gaussians)."""
        lo, hi = self.doppler_factor.spectral_support()
        return lo * self.params.T, hi * self.params.T


@dataclass(frozen=True)
class MatchedFilter:
    """Receive filter ``w_rx(tau, nu) = exp(j 2 pi nu tau) conj(w(-tau, -nu))``."""

    tx: object

    def __call__(self, tau, nu):
        tau = np.asarray(tau, float)
        nu = np.asarray(nu, float)
        return np.exp(2j * np.pi * nu * tau) * np.conj(self.tx.eval_tx(-tau, -nu))

    def eval_tx(self, tau, nu):
        return self(tau, nu)

    def matched_rx(self) -> "MatchedFilter":
        return MatchedFilter(self)


def gaussian_matched_rx(f: PulseShapingFilter, tau, nu):
    """Direct closed form of the matched Gaussian receive filter."""
    if f.kind != "gaussian":
        raise ValueError("closed-form matched filter requires a Gaussian filter")
    B, T = f.params.B, f.params.T
    at, an = f.delay_factor.param, f.doppler_factor.param
    tau = np.asarray(tau, float)
    nu = np.asarray(nu, float)
    return (
        (2 * at * B**2 / np.pi) ** 0.25
        * np.exp(-at * B**2 * tau**2)
        * np.exp(2j * np.pi * nu * tau)
        * (2 * an * T**2 / np.pi) ** 0.25
        * np.exp(-an * T**2 * nu**2)
    )


def gaussian_alpha_for_expansion(
    expand_T: float, expand_B: float, fraction: float = CONTAINMENT
) -> Tuple[float, float]:
    """Gaussian widths ``(alpha_tau, alpha_nu)`` for target expansions ``T'/T``, ``B'/B``.

    Closed-form inversion of the Gaussian containment equation
    ``2 z sqrt(alpha) / (2 pi) = expand`` with ``z`` the two-sided normal
    quantile of ``fraction``, cross-checked against quadrature of the energy
    profile.
    """
    if expand_T < 0.5 or expand_B < 0.5:
        raise ValueError("expansion ratios must be >= 0.5")
    z = special.ndtri(0.5 + fraction / 2)
    alpha_nu = (np.pi * expand_T / z) ** 2
    alpha_tau = (np.pi * expand_B / z) ** 2
    for alpha, expand in ((alpha_tau, expand_B), (alpha_nu, expand_T)):
        got = gaussian_containment(alpha, expand)
        if abs(got - fraction) > 1e-9:
            raise RuntimeError(
                f"containment cross-check failed: {got!r} vs {fraction!r} (alpha={alpha})"
            )
    return float(alpha_tau), float(alpha_nu)


def gaussian_containment(alpha: float, extent: float, nodes: int = 200) -> float:
    """Fraction of ``int |G|^2`` inside ``|s| <= extent / 2``, by Gauss-Legendre."""
    factor = FilterFactor("gaussian", alpha)
    x, w = np.polynomial.legendre.leggauss(nodes)
    h = extent / 2
    s = h * x
    return float(np.sum(w * h * factor.spectrum(s) ** 2))


def filter_from_spec(spec: dict, params: ModulationParams) -> PulseShapingFilter:
    """Build a filter from a config mapping.

    Grammar: ``kind`` in {sinc, rrc, gaussian}; rrc takes ``beta_tau`` and
    ``beta_nu``; gaussian takes either ``alpha_tau``/``alpha_nu`` or
    ``expand_T``/``expand_B`` (reproduction calibration).
    """
    kind = str(spec.get("kind", "")).lower()
    if kind == "sinc":
        return PulseShapingFilter.sinc(params)
    if kind == "rrc":
        return PulseShapingFilter.rrc(
            params, float(spec.get("beta_tau", 0.0)), float(spec.get("beta_nu", 0.0))
        )
    if kind == "gaussian":
        if "alpha_tau" in spec or "alpha_nu" in spec:
            return PulseShapingFilter.gaussian(
                params,
                float(spec.get("alpha_tau", GAUSSIAN_NO_EXPANSION_ALPHA)),
                float(spec.get("alpha_nu", GAUSSIAN_NO_EXPANSION_ALPHA)),
            )
        return PulseShapingFilter.gaussian_preset(
            params, float(spec.get("expand_T", 1.0)), float(spec.get("expand_B", 1.0))
        )
    raise ValueError(f"unknown filter kind {spec.get('kind')!r}; expected sinc, rrc or gaussian")
