"""Pilot-embedded subframes, model-free channel estimation and MMSE detection."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator

from .effective import NoiseModel
from .lattice import DdTapSet, ModulationParams, QuasiPeriodicGrid, build_Hdd, qp_extend, vectorize

_SQRT_HALF = np.sqrt(0.5)


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SubframeLayout:
    """Partition of the fundamental domain into pilot, guard and data cells.

    The regions are boolean ``(M, N)`` masks; ``pilot`` is ``(k_p, l_p)``.
    """

    params: ModulationParams
    pilot: Tuple[int, int]
    pilot_mask: np.ndarray = field(repr=False)
    guard_mask: np.ndarray = field(repr=False)
    data_mask: np.ndarray = field(repr=False)
    delay_halfwidths: Tuple[int, int] = (0, 0)
    guard_width: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        shape = (self.params.M, self.params.N)
        masks = [np.asarray(m, bool) for m in (self.pilot_mask, self.guard_mask, self.data_mask)]
        for m in masks:
            if m.shape != shape:
                raise ValueError(f"region mask has shape {m.shape}, expected {shape}")
            m.setflags(write=False)
        count = sum(m.astype(int) for m in masks)
        if not np.all(count == 1):
            raise ValueError("pilot, guard and data regions must partition the grid")
        if not masks[0][self.pilot]:
            raise ValueError("pilot cell must lie in the pilot region")
        object.__setattr__(self, "pilot_mask", masks[0])
        object.__setattr__(self, "guard_mask", masks[1])
        object.__setattr__(self, "data_mask", masks[2])

    @property
    def n_data(self) -> int:
        return int(self.data_mask.sum())

    @property
    def pilot_region(self) -> set:
        return {tuple(map(int, c)) for c in np.argwhere(self.pilot_mask)}

    @property
    def guard_region(self) -> set:
        return {tuple(map(int, c)) for c in np.argwhere(self.guard_mask)}

    @property
    def data_region(self) -> set:
        return {tuple(map(int, c)) for c in np.argwhere(self.data_mask)}

    @property
    def data_index(self) -> np.ndarray:
        """Vector positions ``kN + l`` of the data cells, in increasing order."""
        return np.flatnonzero(self.data_mask.ravel())

    @property
    def observed_index(self) -> np.ndarray:
        """Vector positions outside the pilot region (rows kept for detection)."""
        return np.flatnonzero(~self.pilot_mask.ravel())

    @property
    def pilot_index(self) -> int:
        return self.pilot[0] * self.params.N + self.pilot[1]

    def estimation_offsets(self) -> Tuple[np.ndarray, np.ndarray]:
        """Delay and Doppler tap offsets readable from the pilot region."""
        left, right = self.delay_halfwidths
        k = np.arange(-left, right + 1)
        l = np.arange(self.params.N) - self.pilot[1]
        return k, l


def default_layout(
    p: ModulationParams,
    delay_halfwidths: Tuple[int, int] = (4, 9),
    guard_width=2,
    pilot: Optional[Tuple[int, int]] = None,
) -> SubframeLayout:
    """Pilot region of full Doppler span around ``(M/2, N/2)``, guards either side.

    ``delay_halfwidths = (left, right)`` are the pilot-region columns on each
    side of the pilot; ``guard_width`` columns (an int, or a ``(left, right)``
    pair) follow on each side and every remaining column carries data.
    """
    M, N = p.M, p.N
    left, right = (int(v) for v in delay_halfwidths)
    gl, gr = (int(guard_width), int(guard_width)) if np.ndim(guard_width) == 0 else (int(v) for v in guard_width)
    if min(left, right, gl, gr) < 0:
        raise ValueError("region widths must be nonnegative")
    if left + right + 1 + gl + gr > M:
        raise ValueError(f"pilot ({left}+{right}+1) and guard ({gl}+{gr}) columns exceed M={M}")
    kp, lp = pilot if pilot is not None else (M // 2, N // 2)
    col = np.full(M, 2)  # 0 pilot, 1 guard, 2 data
    col[np.mod(np.arange(kp - left, kp + right + 1), M)] = 0
    col[np.mod(np.arange(kp - left - gl, kp - left), M)] = 1
    col[np.mod(np.arange(kp + right + 1, kp + right + 1 + gr), M)] = 1
    cols = np.repeat(col[:, None], N, axis=1)
    return SubframeLayout(p, (kp, lp), cols == 0, cols == 1, cols == 2, (left, right), (gl, gr))


def layout_for_delay_spread(
    p: ModulationParams, tau_max: float, margin: int = 4, guard_width: int = 2, min_data_columns: int = 1
) -> SubframeLayout:
    """Layout sized for delays in ``[0, tau_max]``.

    The pilot region spans ``left = margin`` and ``right = ceil(tau_max B) +
    margin`` columns. The right guard has ``guard_width`` columns; the left
    guard adds the delay span, because data just left of the pilot region
    is pushed into it by up to ``tau_max``. When ``M`` is too small the
    guard shrinks first (down to one column plus the span), then the
    margins, until at least ``min_data_columns`` data columns remain.
    """
    span = int(np.ceil(tau_max * p.B - 1e-9))
    m, g = int(margin), int(guard_width)
    while (span + 2 * m + 1) + (span + 2 * g) + min_data_columns > p.M:
        if g > 1:
            g -= 1
        elif m > 0:
            m -= 1
        else:
            raise ValueError(f"delay span of {span} bins leaves no data columns at M={p.M}")
    return default_layout(p, (m, span + m), (g + span, g))


# ---------------------------------------------------------------------------
# powers and symbols
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class PowerConfig:
    """Data and pilot energies with the matching noise PSD.

    ``gamma_d = E_d / (N0 B' T')`` and ``gamma_p = E_p / (N0 B' T')``.
    """

    E_d: float
    E_p: float
    N0: float
    BT_prime: float

    def __post_init__(self):
        if min(self.E_d, self.E_p, self.N0) < 0 or self.BT_prime <= 0:
            raise ValueError("energies and N0 must be nonnegative and B'T' positive")

    @classmethod
    def from_db(cls, gamma_d_dB: float, pdr_dB: float, BT_prime: float, N0: float = 1.0) -> "PowerConfig":
        E_d = 10 ** (gamma_d_dB / 10) * N0 * BT_prime
        return cls(E_d, E_d * 10 ** (pdr_dB / 10), N0, BT_prime)

    @property
    def gamma_d(self) -> float:
        return self.E_d / (self.N0 * self.BT_prime) if self.N0 > 0 else np.inf

    @property
    def gamma_p(self) -> float:
        return self.E_p / (self.N0 * self.BT_prime) if self.N0 > 0 else np.inf

    @property
    def pdr(self) -> float:
        return self.E_p / self.E_d if self.E_d > 0 else np.inf


def qam4_modulate(bits) -> np.ndarray:
    """Gray-coded unit-energy 4-QAM: bit pairs ``(b0, b1)`` -> ``((1-2b0) + j(1-2b1)) / sqrt 2``."""
    b = np.asarray(bits, dtype=np.int8).reshape(-1, 2)
    return _SQRT_HALF * ((1 - 2 * b[:, 0]) + 1j * (1 - 2 * b[:, 1]))


def qam4_demodulate(symbols) -> np.ndarray:
    """Hard decisions back to bits (nearest constellation point)."""
    s = np.asarray(symbols)
    return np.stack([(s.real < 0), (s.imag < 0)], axis=1).astype(np.int8).ravel()


def qam4_slice(symbols) -> np.ndarray:
    """Nearest 4-QAM constellation point."""
    s = np.asarray(symbols)
    return _SQRT_HALF * (np.where(s.real < 0, -1.0, 1.0) + 1j * np.where(s.imag < 0, -1.0, 1.0))


def assemble_subframe(layout: SubframeLayout, power: PowerConfig, data_symbols) -> QuasiPeriodicGrid:
    """Pilot ``sqrt(E_p)`` at the pilot cell, ``sqrt(E_d/|I|) x_I`` on data cells, zeros elsewhere."""
    x_I = np.asarray(data_symbols, dtype=complex).ravel()
    if x_I.size != layout.n_data:
        raise ValueError(f"expected {layout.n_data} data symbols, got {x_I.size}")
    p = layout.params
    x = np.zeros(p.MN, dtype=complex)
    if layout.n_data:
        x[layout.data_index] = np.sqrt(power.E_d / layout.n_data) * x_I
    x[layout.pilot_index] = np.sqrt(power.E_p)
    return QuasiPeriodicGrid(p, x.reshape(p.M, p.N))


# ---------------------------------------------------------------------------
# estimation and detection
# ---------------------------------------------------------------------------
def estimate_heff(y: QuasiPeriodicGrid, layout: SubframeLayout, E_p: float) -> DdTapSet:
    """Model-free read-off of the effective channel from the pilot region.

    ``h[k', l'] = y[k_p + k', l_p + l'] exp(-j 2 pi l' k_p / (M N)) / sqrt(E_p)``
    """
    if E_p <= 0:
        raise ValueError("pilot energy must be positive")
    p = layout.params
    kp, lp = layout.pilot
    k, l = layout.estimation_offsets()
    K, L = np.meshgrid(k, l, indexing="ij")
    vals = qp_extend(y, kp + K, lp + L) * np.exp(-2j * np.pi * L * kp / p.MN) / np.sqrt(E_p)
    return DdTapSet(vals, int(k[0]), int(l[0]))


class MmseDetector:
    """Linear MMSE detector for the reduced system of one layout and noise model.

    The whitening factor of the reduced noise covariance depends only on the
    layout and the filter, so it is computed once here and reused per frame.
    """

    def __init__(self, layout: SubframeLayout, power: PowerConfig, noise: NoiseModel, white: bool = False):
        self.layout = layout
        self.power = power
        rows = layout.observed_index
        R = noise.white().R if white else noise.R
        R_red = R[np.ix_(rows, rows)]
        d = np.real(np.diag(R_red))
        self._scalar = None
        if np.allclose(R_red, np.diag(d), rtol=0, atol=1e-14 * max(d.max(), 1e-300)) and np.ptp(d) <= 1e-14 * d.max():
            self._scalar = float(d.mean())
        else:
            self._chol = linalg.cholesky(R_red, lower=True)
        self._rows = rows

    def whiten(self, A):
        if self._scalar is not None:
            return A / np.sqrt(self._scalar)
        return linalg.solve_triangular(self._chol, A, lower=True)

    def equalize(self, y: QuasiPeriodicGrid, H_hat: np.ndarray) -> np.ndarray:
        """Soft MMSE estimates of ``x_I`` (unit-energy symbol scale)."""
        lay, pw = self.layout, self.power
        if pw.E_d <= 0:
            return np.zeros(lay.n_data, dtype=complex)
        rows, cols = self._rows, lay.data_index
        yv = vectorize(y)[rows] - np.sqrt(pw.E_p) * H_hat[rows, lay.pilot_index]
        A = self.whiten(H_hat[np.ix_(rows, cols)])
        yw = self.whiten(yv)
        G = A.conj().T @ A
        G[np.diag_indices_from(G)] += lay.n_data / pw.E_d
        try:
            c = linalg.cho_factor(G, lower=True)
        except linalg.LinAlgError as exc:
            raise linalg.LinAlgError("MMSE normal matrix is not positive definite") from exc
        x_hat = linalg.cho_solve(c, A.conj().T @ yw)
        return x_hat / np.sqrt(pw.E_d / lay.n_data)

    def detect(self, y: QuasiPeriodicGrid, H_hat: np.ndarray) -> np.ndarray:
        return qam4_slice(self.equalize(y, H_hat))


def detect_mmse(
    y: QuasiPeriodicGrid,
    H_hat: np.ndarray,
    layout: SubframeLayout,
    power: PowerConfig,
    noise: NoiseModel,
    white: bool = False,
) -> np.ndarray:
    """One-shot MMSE detection; returns hard 4-QAM decisions for the data cells."""
    return MmseDetector(layout, power, noise, white).detect(y, H_hat)


class ZakOtfsReceiver(BaseEstimator):
    """Pilot-aided receiver in estimator form.

    ``fit(y)`` reads the effective channel off the pilot region of a received
    subframe and builds the channel matrix; ``predict(y)`` returns the
    detected data bits. ``covariance`` selects the exact noise covariance or
    its white approximation.
    """

    def __init__(self, layout=None, power=None, noise=None, covariance="exact"):
        self.layout = layout
        self.power = power
        self.noise = noise
        self.covariance = covariance

    def _grid(self, y):
        if isinstance(y, QuasiPeriodicGrid):
            return y
        return QuasiPeriodicGrid(self.layout.params, np.asarray(y).reshape(self.layout.params.M, -1))

    def fit(self, y, _=None):
        if self.covariance not in ("exact", "white"):
            raise ValueError("covariance must be 'exact' or 'white'")
        y = self._grid(y)
        self.taps_ = estimate_heff(y, self.layout, self.power.E_p)
        self.H_ = build_Hdd(self.taps_, self.layout.params)
        self.detector_ = MmseDetector(self.layout, self.power, self.noise, self.covariance == "white")
        return self

    def predict_symbols(self, y) -> np.ndarray:
        return self.detector_.detect(self._grid(y), self.H_)

    def predict(self, y) -> np.ndarray:
        return qam4_demodulate(self.predict_symbols(y))
