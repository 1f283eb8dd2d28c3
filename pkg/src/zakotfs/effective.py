"""Effective DD channel, channel matrix, noise covariance and crystallization test.

The matched cascade ``w_rx *s h_phy *s w_tx`` factorizes path by path into a
delay integral and a Doppler integral. Writing them in the Fourier domain of
the normalized filter factors gives

    h_eff(tau, nu) = sum_i h_i exp(j 2 pi nu_i (tau - tau_i))
                     X1(nu_i / B, B (tau - tau_i)) X2(tau / T, (nu_i - nu) T)

with ``X(a, b) = int G(s) G(s + a) exp(j 2 pi b s) ds`` (see
:meth:`FilterFactor.xcorr`). For Gaussian factors this reduces to the
closed form in :func:`heff_gaussian_closed_form`.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Tuple, Union

import numpy as np

from .channel import PhysicalChannel, VehAProfile, VEH_A
from .filters import FilterFactor, PulseShapingFilter
from .lattice import DdTapSet, ModulationParams, build_Hdd

#: relative amplitude below which Gaussian tails are dropped
AMPLITUDE_FLOOR = 1e-10
#: default cap on alias rings for slowly decaying (band-limited) filters
DEFAULT_MAX_RINGS = 2
#: default energy fraction for effective spreads
DEFAULT_ETA = 0.99


def _gauss_halfwidth(alpha: float, floor: float = AMPLITUDE_FLOOR) -> float:
    """Normalized distance beyond which ``exp(-alpha x^2 / 2)`` is below ``floor``."""
    return float(np.sqrt(2 * np.log(1 / floor) / alpha))


# ---------------------------------------------------------------------------
# effective channel taps
# ---------------------------------------------------------------------------
def heff_gaussian_closed_form(ch: PhysicalChannel, f: PulseShapingFilter, k, l):
    """Effective channel taps of a matched Gaussian filter pair, in closed form.

    ``k`` and ``l`` broadcast against each other; the result has their
    broadcast shape.
    """
    if f.kind != "gaussian":
        raise ValueError(f"closed form needs a Gaussian filter, got {f.kind!r}")
    p = f.params
    B, T, M, N = p.B, p.T, p.M, p.N
    at, an = f.delay_factor.param, f.doppler_factor.param
    k, l = np.broadcast_arrays(np.asarray(k, float), np.asarray(l, float))
    tau = k * p.tau_p / M
    nu = l * p.nu_p / N
    out = np.zeros(k.shape, dtype=complex)
    for h, ti, vi in zip(ch.gains, ch.delays, ch.dopplers):
        mag = -0.5 * (at * B**2 * (ti - tau) ** 2 + an * T**2 * (vi - nu) ** 2)
        mag -= 0.5 * np.pi**2 * (vi**2 / (at * B**2) + tau**2 / (an * T**2))
        out += h * np.exp(mag) * np.exp(-1j * np.pi * (ti * vi - k * l / (N * M)))
    return out


def heff_continuous(ch: PhysicalChannel, f: PulseShapingFilter, tau, nu):
    """``h_eff(tau, nu)`` for any factorizable filter, via exact spectral integrals."""
    p = f.params
    B, T = p.B, p.T
    tau, nu = np.broadcast_arrays(np.asarray(tau, float), np.asarray(nu, float))
    out = np.zeros(tau.shape, dtype=complex)
    for h, ti, vi in zip(ch.gains, ch.delays, ch.dopplers):
        x1 = f.delay_factor.xcorr(vi / B, B * (tau - ti))
        x2 = f.doppler_factor.xcorr(tau / T, (vi - nu) * T)
        out += h * np.exp(2j * np.pi * vi * (tau - ti)) * x1 * x2
    return out


def tap_window(
    ch: PhysicalChannel, f: PulseShapingFilter, rings: int = DEFAULT_MAX_RINGS
) -> Tuple[np.ndarray, np.ndarray]:
    """Delay and Doppler offsets on which ``h_eff`` is kept.

    Gaussian filters: the path span widened until every dropped tap is below
    ``AMPLITUDE_FLOOR`` of the strongest possible tap. Band-limited filters
    decay algebraically, so the span is widened by ``rings`` full periods.
    """
    p = f.params
    kd = ch.delays * p.B
    ld = ch.dopplers * p.T
    if f.kind == "gaussian":
        wk = _gauss_halfwidth(f.delay_factor.param)
        wl = _gauss_halfwidth(f.doppler_factor.param)
        k = np.arange(int(np.floor(kd.min() - wk)), int(np.ceil(kd.max() + wk)) + 1)
        l = np.arange(int(np.floor(ld.min() - wl)), int(np.ceil(ld.max() + wl)) + 1)
        return k, l
    k = np.arange(int(np.floor(kd.min())) - rings * p.M, int(np.ceil(kd.max())) + rings * p.M + 1)
    l = np.arange(int(np.floor(ld.min())) - rings * p.N, int(np.ceil(ld.max())) + rings * p.N + 1)
    return k, l


def effective_taps(
    ch: PhysicalChannel,
    f: PulseShapingFilter,
    rings: Optional[int] = None,
    max_rings: int = DEFAULT_MAX_RINGS,
) -> DdTapSet:
    """Sampled effective channel ``h_eff[k, l]`` on its support window.

    For band-limited filters the window grows ring by ring (one delay and one
    Doppler period at a time) until the new ring's largest tap is below
    ``AMPLITUDE_FLOOR`` of the peak, or ``max_rings`` is reached. Passing
    ``rings`` fixes the window instead.
    """
    p = f.params
    if f.kind == "gaussian":
        k, l = tap_window(ch, f)
        K, L = np.meshgrid(k, l, indexing="ij")
        return DdTapSet(heff_gaussian_closed_form(ch, f, K, L), k[0], l[0])
    if rings is not None:
        k, l = tap_window(ch, f, rings)
        K, L = np.meshgrid(k, l, indexing="ij")
        vals = heff_continuous(ch, f, K * p.tau_p / p.M, L * p.nu_p / p.N)
        return DdTapSet(vals, k[0], l[0])
    taps = effective_taps(ch, f, rings=1)
    for r in range(2, max_rings + 1):
        wider = effective_taps(ch, f, rings=r)
        inner = np.zeros(wider.values.shape, bool)
        dk = taps.k_origin - wider.k_origin
        dl = taps.l_origin - wider.l_origin
        inner[dk: dk + taps.values.shape[0], dl: dl + taps.values.shape[1]] = True
        ring_max = np.abs(wider.values[~inner]).max()
        taps = wider
        if ring_max < AMPLITUDE_FLOOR * np.abs(wider.values).max():
            break
    return taps


def heff_numeric(
    ch: PhysicalChannel,
    f: PulseShapingFilter,
    oversample: int = 16,
    window: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    method: str = "auto",
) -> DdTapSet:
    """Effective channel by numerical quadrature of the matched cascade.

    The inner step ``h_phy *s w_tx`` is analytic (a sum of shifted, modulated
    copies of ``w_tx``). The outer twisted convolution with ``w_rx`` separates
    into a delay integral and a Doppler integral per path:

    ``"dd"``
        trapezoid rule in the DD domain with steps ``1 / (oversample B)`` and
        ``1 / (oversample T)`` over the window where the factors exceed
        1e-10 of their peak. Accurate for Gaussian factors; the algebraic
        tails of sinc/RRC cannot be truncated to tolerance.
    ``"spectral"``
        composite Gauss-Legendre over the compact Fourier support of the
        factors (node density scaled by ``oversample``). The natural choice
        for band-limited factors.
    ``"auto"``
        ``"dd"`` for Gaussian filters, ``"spectral"`` otherwise.
    """
    if oversample < 4:
        raise ValueError("oversample must be >= 4")
    if method == "auto":
        method = "dd" if f.kind == "gaussian" else "spectral"
    p = f.params
    k, l = window if window is not None else tap_window(ch, f)
    k = np.asarray(k)
    l = np.asarray(l)
    vals = np.zeros((k.size, l.size), dtype=complex)
    if method == "dd":
        for fac, scale in ((f.delay_factor, p.B), (f.doppler_factor, p.T)):
            W = _dd_halfwidth(fac)
            tail = fac.tail_energy_bound(W)
            if tail > 1e-7:
                raise ValueError(
                    f"DD quadrature window |x| <= {W:g} leaves tail energy {tail:.2e} "
                    f"for a {fac.kind} factor; use method='spectral'"
                )
        for h, ti, vi in zip(ch.gains, ch.delays, ch.dopplers):
            i1 = _dd_integral(f.delay_factor, k - ti * p.B, -vi / p.B, oversample)
            i2 = np.stack(
                [_dd_integral(f.doppler_factor, l - vi * p.T, kk / p.MN, oversample) for kk in k]
            )
            phase = np.exp(2j * np.pi * vi * (k * p.tau_p / p.M - ti))
            vals += h * (phase * i1)[:, None] * i2
    elif method == "spectral":
        for h, ti, vi in zip(ch.gains, ch.delays, ch.dopplers):
            i1 = f.delay_factor.xcorr_quad(vi / p.B, k - ti * p.B, oversample)
            i2 = np.stack(
                [f.doppler_factor.xcorr_quad(kk / p.MN, vi * p.T - l, oversample) for kk in k]
            )
            phase = np.exp(2j * np.pi * vi * (k * p.tau_p / p.M - ti))
            vals += h * (phase * i1)[:, None] * i2
    else:
        raise ValueError(f"unknown quadrature method {method!r}")
    return DdTapSet(vals, int(k[0]), int(l[0]))


def _dd_halfwidth(fac: FilterFactor) -> float:
    if fac.kind == "gaussian":
        return float(np.sqrt(np.log(1 / AMPLITUDE_FLOOR) / fac.param))
    return 40.0


def _dd_integral(fac: FilterFactor, shift, freq: float, oversample: int):
    """Trapezoid ``int g(x) g(shift - x) exp(j 2 pi freq x) dx`` for each shift."""
    W = _dd_halfwidth(fac)
    x = np.arange(-np.ceil(W * oversample), np.ceil(W * oversample) + 1) / oversample
    gx = fac.value(x) * np.exp(2j * np.pi * freq * x)
    shift = np.asarray(shift, float)
    integrand = gx[None, :] * fac.value(shift[:, None] - x[None, :])
    return np.trapezoid(integrand, x, axis=1)


# ---------------------------------------------------------------------------
# noise covariance
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class NoiseModel:
    """DD-domain noise covariance ``R = E[n n^H]`` for noise PSD ``N0``."""

    N0: float
    R: np.ndarray = field(repr=False)

    def __post_init__(self):
        R = np.array(self.R, dtype=complex)
        R.setflags(write=False)
        object.__setattr__(self, "R", R)

    def scaled(self, N0: float) -> "NoiseModel":
        """The same filter geometry at a different noise level."""
        if self.N0 == 0:
            raise ValueError("cannot rescale a zero-noise model")
        return NoiseModel(N0, self.R * (N0 / self.N0))

    def is_hermitian(self, tol: float = 1e-10) -> bool:
        norm = np.linalg.norm(self.R)
        return bool(np.max(np.abs(self.R - self.R.conj().T)) <= tol * max(norm, 1e-300))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.R + self.R.conj().T)).min())

    def is_psd(self, tol: float = 1e-8) -> bool:
        dmax = float(np.max(np.real(np.diag(self.R)))) if self.R.size else 0.0
        return self.min_eigenvalue() >= -tol * max(dmax, 0.0)

    def white(self) -> "NoiseModel":
        """White approximation ``mean(diag R) I``."""
        d = float(np.mean(np.real(np.diag(self.R))))
        return NoiseModel(self.N0, d * np.eye(self.R.shape[0]))


def _assemble_covariance(p: ModulationParams, weights, kernel, q: np.ndarray) -> np.ndarray:
    """``sum_{q1,q2} e^{-j2pi(l1 q1 - l2 q2)/N} a_{k1}[q1] C(k1-k2+(q1-q2)M) a_{k2}[q2]``.

    ``weights[k, iq]`` holds ``a_k[q]`` and ``kernel(u)`` the delay kernel at
    integer lag ``u``. Sums over ``q`` are folded modulo ``N`` and turned into
    Doppler indices with FFTs.
    """
    M, N = p.M, p.N
    Q = q.size
    # pad q to a multiple of N so the fold is a reshape
    pad = (-Q) % N
    qs = np.concatenate([q, q[-1] + 1 + np.arange(pad)])
    w = np.concatenate([weights, np.zeros((M, pad))], axis=1)
    shift = int(np.mod(qs[0], N))
    lags = np.arange(-(M - 1) - (qs.size - 1) * M, (M - 1) + (qs.size - 1) * M + 1)
    C = kernel(lags)
    c0 = -lags[0]
    qd = qs[:, None] - qs[None, :]
    R = np.zeros((M, N, M, N), dtype=complex)
    for k1 in range(M):
        k2 = np.arange(M)
        u = (k1 - k2)[:, None, None] + qd[None, :, :] * M
        A = w[k1][None, :, None] * C[u + c0] * w[:, None, :]
        # fold q1, q2 modulo N; position j corresponds to q = qs[0] + j
        A = A.reshape(M, -1, N, qs.size // N, N).sum(axis=(1, 3))
        A = np.roll(A, shift, axis=(1, 2))
        # sum_q1 e^{-j 2pi l1 q1 / N} ... sum_q2 e^{+j 2pi l2 q2 / N}
        F = np.fft.fft(np.fft.ifft(A, axis=2) * N, axis=1)
        R[k1] = F.transpose(1, 0, 2)
    return R.reshape(M * N, M * N)


def _q_range(p: ModulationParams, factor: FilterFactor, floor: float = AMPLITUDE_FLOOR):
    lo, hi = factor.spectral_support()
    if factor.kind == "gaussian":
        lo, hi = -np.sqrt(factor.param * np.log(1 / floor)) / np.pi, np.sqrt(factor.param * np.log(1 / floor)) / np.pi
    # t_{k,q} / T = (k + q M) / (M N)
    return np.arange(int(np.floor(lo * p.N)) - 1, int(np.ceil(hi * p.N)) + 1)


def noise_covariance_gaussian(p: ModulationParams, f: PulseShapingFilter, N0: float) -> NoiseModel:
    """Closed-form DD noise covariance for a matched Gaussian filter pair.

    The double sum over ``q1, q2`` grows ring by ring until the next ring
    adds less than 1e-10 of the accumulated magnitude.
    """
    if f.kind != "gaussian":
        raise ValueError(f"closed form needs a Gaussian filter, got {f.kind!r}")
    M, N = p.M, p.N
    at, an = f.delay_factor.param, f.doppler_factor.param
    tp_T = p.tau_p / p.T
    # largest single term of the ring |q| = Q is at most exp(-pi^2 tp_T^2 (Q - 1)^2 / an)
    Q = 1
    while np.exp(-np.pi**2 * tp_T**2 * (Q - 1) ** 2 / an) >= AMPLITUDE_FLOOR:
        Q += 1
    q = np.arange(-Q, Q + 1)
    k = np.arange(M)
    weights = np.exp(-np.pi**2 * tp_T**2 / an * (q[None, :] + k[:, None] / M) ** 2)
    u_scale = at * (p.B * p.tau_p / M) ** 2 / 2

    def kernel(u):
        return np.exp(-u_scale * u.astype(float) ** 2)

    R = _assemble_covariance(p, weights, kernel, q)
    return NoiseModel(N0, N0 * tp_T * np.sqrt(2 * np.pi / an) * R)


def noise_covariance_numeric(
    p: ModulationParams, f: PulseShapingFilter, N0: float, oversample: int = 8
) -> NoiseModel:
    """DD noise covariance for any factorizable matched filter pair.

    Uses the subframe envelope ``G2`` sampled on the Zak pulse-train
    positions and the delay-factor autocorrelation ``X1(0, u)`` at integer
    lags, evaluated by quadrature (node density set by ``oversample``).
    """
    if oversample < 4:
        raise ValueError("oversample must be >= 4")
    M, N = p.M, p.N
    q = _q_range(p, f.doppler_factor)
    k = np.arange(M)
    weights = f.doppler_factor.spectrum((k[:, None] + q[None, :] * M) / (M * N))

    def kernel(u):
        table = np.real(f.delay_factor.autocorr_integer_lags(int(np.abs(u).max()), oversample))
        return table[u + (table.size - 1) // 2]

    R = _assemble_covariance(p, weights, kernel, q)
    return NoiseModel(N0, N0 * (p.tau_p / p.T) * R)


def noise_covariance(p: ModulationParams, f: PulseShapingFilter, N0: float) -> NoiseModel:
    """Closed form for Gaussian filters, exact spectral kernel otherwise."""
    if f.kind == "gaussian":
        return noise_covariance_gaussian(p, f, N0)
    M, N = p.M, p.N
    q = _q_range(p, f.doppler_factor)
    k = np.arange(M)
    weights = f.doppler_factor.spectrum((k[:, None] + q[None, :] * M) / (M * N))

    def kernel(u):
        return np.real(f.delay_factor.xcorr(0.0, u.astype(float)))

    R = _assemble_covariance(p, weights, kernel, q)
    return NoiseModel(N0, N0 * (p.tau_p / p.T) * R)


# ---------------------------------------------------------------------------
# effective channel container
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class EffectiveChannel:
    taps: DdTapSet
    H: np.ndarray = field(repr=False)
    spreads: Tuple[float, float]

    @classmethod
    def build(
        cls, ch: PhysicalChannel, f: PulseShapingFilter, eta: float = DEFAULT_ETA, **kw
    ) -> "EffectiveChannel":
        taps = effective_taps(ch, f, **kw)
        H = build_Hdd(taps, f.params)
        chk = crystallization_check(taps, f.params, eta)
        return cls(taps, H, (chk.tau_ds, chk.nu_ds))


# ---------------------------------------------------------------------------
# crystallization
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class CrystallizationResult:
    satisfied: bool
    tau_ds: float
    nu_ds: float


def smallest_box(energy: np.ndarray, eta: float) -> Tuple[int, int]:
    """Side lengths (rows, cols) of the min-area axis-aligned box holding ``eta`` of the energy."""
    E = np.asarray(energy, float)
    total = E.sum()
    if total <= 0:
        return 0, 0
    K, L = E.shape
    S = np.zeros((K + 1, L + 1))
    S[1:, 1:] = E.cumsum(0).cumsum(1)
    target = eta * total * (1 - 1e-12)
    best = (K, L, K * L)
    for h in range(1, K + 1):
        # row-band sums for every band of height h: shape (K - h + 1, L + 1)
        band = S[h:, :] - S[:-h, :]
        lo, hi = 1, L
        if (band[:, L:] - band[:, :1]).max() < target:
            continue
        while lo < hi:
            mid = (lo + hi) // 2
            if (band[:, mid:] - band[:, : L + 1 - mid]).max() >= target:
                hi = mid
            else:
                lo = mid + 1
        if h * lo < best[2]:
            best = (h, lo, h * lo)
        if lo == 1:
            break
    return best[0], best[1]


def crystallization_check(
    obj: Union[DdTapSet, PhysicalChannel, np.ndarray],
    p: ModulationParams,
    eta: float = DEFAULT_ETA,
) -> CrystallizationResult:
    """Test ``tau_ds < tau_p`` and ``nu_ds < nu_p``.

    ``obj`` may be a tap set (spreads from the smallest box holding ``eta`` of
    the tap energy, in whole lattice cells), a nonnegative energy map on the
    lattice, or a physical channel (ideal filters: spreads of the paths).
    """
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    if isinstance(obj, PhysicalChannel):
        d, v = obj.delays, obj.dopplers
        tds, nds = float(d.max() - d.min()), float(v.max() - v.min())
    else:
        E = np.abs(obj.values) ** 2 if isinstance(obj, DdTapSet) else np.asarray(obj, float)
        h, w = smallest_box(E, eta)
        tds, nds = h * p.delay_step, w * p.doppler_step
    return CrystallizationResult(bool(tds < p.tau_p and nds < p.nu_p), tds, nds)


def expected_tap_energy(
    f: PulseShapingFilter,
    nu_max: float,
    delay_scale: float = 1.0,
    profile: VehAProfile = VEH_A,
    angles: int = 64,
    rings: int = DEFAULT_MAX_RINGS,
) -> np.ndarray:
    """Ensemble mean ``E|h_eff[k, l]|^2`` over Veh-A gains and Doppler angles.

    Gains are independent and zero-mean, so path contributions add in power;
    the uniform angle average uses a midpoint rule with ``angles`` nodes.
    """
    theta = (np.arange(angles) + 0.5) * 2 * np.pi / angles
    delays = profile.delays * delay_scale
    extreme = PhysicalChannel.from_arrays(
        np.ones(2), [delays.min(), delays.max()], [-nu_max, nu_max]
    )
    k, l = tap_window(extreme, f, rings)
    K, L = np.meshgrid(k, l, indexing="ij")
    p = f.params
    E = np.zeros(K.shape)
    for pw, tau in zip(profile.powers, delays):
        for th in theta:
            single = PhysicalChannel.from_arrays([1.0], [tau], [nu_max * np.cos(th)])
            if f.kind == "gaussian":
                v = heff_gaussian_closed_form(single, f, K, L)
            else:
                v = heff_continuous(single, f, K * p.tau_p / p.M, L * p.nu_p / p.N)
            E += pw * np.abs(v) ** 2 / angles
    return E


def dump_taps_csv(taps: DdTapSet, path, threshold: float = 0.0) -> None:
    """Write ``k, l, re, im, abs`` rows for every tap above ``threshold`` x peak."""
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "l", "re", "im", "abs"])
            for (k, l), v in sorted(taps.to_dict(threshold).items()):
                w.writerow([k, l, f"{v.real:.17g}", f"{v.imag:.17g}", f"{abs(v):.17g}"])
    except OSError as exc:
        raise OSError(f"cannot write tap dump to {path}: {exc}") from exc
