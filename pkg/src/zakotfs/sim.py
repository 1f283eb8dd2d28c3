"""Seeded Monte Carlo sweeps, effective throughput and CSV output.

Every trial runs the discrete DD link: draw a Veh-A channel, build the true
effective channel, assemble a pilot-embedded subframe, add DD noise with
the exact filter-dependent covariance, estimate the channel from the pilot
region and detect with MMSE. The random streams of trial ``t`` at sweep
point ``i`` come from ``SeedSequence([seed, i, t])`` and are shared by all
filters of the sweep, so filter comparisons use common random numbers.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import tomli
from scipy import linalg, stats

from .channel import VEH_A, sample_veha
from .effective import crystallization_check, effective_taps, expected_tap_energy, noise_covariance
from .filters import PulseShapingFilter, filter_from_spec
from .lattice import ModulationParams, build_Hdd, devectorize, vectorize
from .link import (
    MmseDetector,
    PowerConfig,
    SubframeLayout,
    assemble_subframe,
    estimate_heff,
    layout_for_delay_spread,
    qam4_demodulate,
    qam4_modulate,
)

log = logging.getLogger(__name__)

#: BER below which communication counts as reliable
RELIABLE_BER = 0.02

SWEEP_VARIABLES = ("nu_max_hz", "gamma_d_dB", "pdr_dB", "expand_T")

CSV_COLUMNS = (
    "label",
    "variable",
    "value",
    "ber",
    "errors",
    "bits",
    "failures",
    "throughput",
    "crystallized",
    "config_hash",
    "seed",
)

#: (M, N) operating points on the hyperbola M N = 1536 at fixed bandwidth
HYPERBOLA_ROWS = ((128, 12), (96, 16), (64, 24), (48, 32), (32, 48), (24, 64), (16, 96), (12, 128))
HYPERBOLA_BANDWIDTH = 480e3


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
def _default_config() -> dict:
    return {
        "modulation": {"M": 32, "N": 48, "nu_p_hz": 15e3},
        "filters": [{"label": "gaussian", "kind": "gaussian"}, {"label": "sinc", "kind": "sinc"}],
        "channel": {"model": "veha", "nu_max_hz": 815.0, "delay_scale": 1.0},
        "layout": {"margin": 4, "guard_width": 2},
        "power": {"gamma_d_dB": 25.0, "pdr_dB": 5.0},
        "receiver": {"perfect_csi": False, "covariance": "exact"},
        "sweep": {"variable": "nu_max_hz", "values": [815.0]},
        "trials": 200,
        "seed": 0,
        "workers": 1,
        "outputs": {"csv": ""},
    }


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description.

    ``raw`` is the full nested mapping (defaults merged with the file); the
    typed fields below are read from it.
    """

    raw: dict = field(repr=False)

    def __post_init__(self):
        r = self.raw
        sw = r["sweep"]
        if sw["variable"] not in SWEEP_VARIABLES:
            raise ValueError(f"sweep variable must be one of {SWEEP_VARIABLES}, got {sw['variable']!r}")
        vals = np.asarray(sw["values"], float)
        if vals.ndim != 1:
            raise ValueError("sweep values must be a flat list")
        if not np.all(np.isfinite(vals)):
            raise ValueError("sweep values must be finite")
        if np.any(np.diff(vals) < 0):
            raise ValueError("sweep values must be sorted")
        if int(r["trials"]) < 1:
            raise ValueError("trials must be >= 1")
        if int(r["workers"]) < 1:
            raise ValueError("workers must be >= 1")
        if not r["filters"]:
            raise ValueError("at least one filter is required")
        labels = [self._label(s) for s in r["filters"]]
        if len(set(labels)) != len(labels):
            raise ValueError(f"filter labels must be unique, got {labels}")
        if r["receiver"]["covariance"] not in ("exact", "white"):
            raise ValueError("receiver.covariance must be 'exact' or 'white'")
        for s in r["filters"]:
            filter_from_spec(s, self.params)  # validates the filter grammar

    @staticmethod
    def _label(spec: dict) -> str:
        return str(spec.get("label", spec.get("kind")))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(_merge(_default_config(), d))

    @classmethod
    def from_toml(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                d = tomli.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(d)

    def override(self, **kw) -> "ExperimentConfig":
        """Copy with top-level keys (``seed``, ``trials``, ...) or nested mappings replaced."""
        return ExperimentConfig(_merge(self.raw, {k: v for k, v in kw.items() if v is not None}))

    @property
    def params(self) -> ModulationParams:
        m = self.raw["modulation"]
        return ModulationParams(int(m["M"]), int(m["N"]), float(m["nu_p_hz"]))

    @property
    def trials(self) -> int:
        return int(self.raw["trials"])

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def workers(self) -> int:
        return int(self.raw["workers"])

    @property
    def variable(self) -> str:
        return self.raw["sweep"]["variable"]

    @property
    def values(self) -> Tuple[float, ...]:
        return tuple(float(v) for v in self.raw["sweep"]["values"])

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(self._label(s) for s in self.raw["filters"])

    def config_hash(self) -> str:
        """Short SHA-256 of the canonical JSON form (seed excluded)."""
        d = {k: v for k, v in self.raw.items() if k not in ("seed", "outputs", "workers")}
        blob = json.dumps(d, sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def point(self, value: float) -> "OperatingPoint":
        """Resolved link settings at one sweep value."""
        r = self.raw
        ch = dict(r["channel"])
        pw = dict(r["power"])
        specs = [dict(s) for s in r["filters"]]
        var = self.variable
        if var == "nu_max_hz":
            ch["nu_max_hz"] = value
        elif var in ("gamma_d_dB", "pdr_dB"):
            pw[var] = value
        elif var == "expand_T":
            specs = [_expand_spec(s, value) for s in specs]
        return OperatingPoint(
            params=self.params,
            filter_specs=tuple(specs),
            nu_max=float(ch["nu_max_hz"]),
            delay_scale=float(ch.get("delay_scale", 1.0)),
            gamma_d_dB=float(pw["gamma_d_dB"]),
            pdr_dB=float(pw["pdr_dB"]),
            margin=int(r["layout"]["margin"]),
            guard_width=int(r["layout"]["guard_width"]),
            perfect_csi=bool(r["receiver"]["perfect_csi"]),
            white=r["receiver"]["covariance"] == "white",
        )


def _expand_spec(spec: dict, expand_T: float) -> dict:
    """Filter spec at time expansion ``T'/T = expand_T`` with ``B' = B``."""
    s = dict(spec)
    kind = str(s.get("kind")).lower()
    if kind == "gaussian":
        s.pop("alpha_tau", None)
        s.pop("alpha_nu", None)
        s["expand_T"] = expand_T
        s["expand_B"] = 1.0
    elif kind == "rrc":
        s["beta_tau"] = 0.0
        s["beta_nu"] = expand_T - 1.0
    elif not math.isclose(expand_T, 1.0):
        raise ValueError(f"{kind} filter has no time expansion; got T'/T = {expand_T}")
    return s


@dataclass(frozen=True)
class OperatingPoint:
    params: ModulationParams
    filter_specs: Tuple[dict, ...]
    nu_max: float
    delay_scale: float
    gamma_d_dB: float
    pdr_dB: float
    margin: int = 4
    guard_width: int = 2
    perfect_csi: bool = False
    white: bool = False

    @property
    def tau_max(self) -> float:
        return VEH_A.max_delay * self.delay_scale

    def layout(self) -> SubframeLayout:
        return layout_for_delay_spread(self.params, self.tau_max, self.margin, self.guard_width)


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------
def binary_entropy(p) -> np.ndarray:
    """``H2(p)`` in bits with ``0 log 0 = 0``."""
    p = np.asarray(p, float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probability outside [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(p * np.log2(p) + (1 - p) * np.log2(1 - p))
    return np.where((p == 0) | (p == 1), 0.0, h)


def effective_throughput(ber: float, layout_or_n_data, B_prime: float, T_prime: float) -> float:
    """``2 |I| (1 - H2(ber)) / (B' T')`` in bits/s/Hz."""
    if not 0 <= ber <= 1:
        raise ValueError(f"ber must lie in [0, 1], got {ber}")
    n = layout_or_n_data.n_data if isinstance(layout_or_n_data, SubframeLayout) else int(layout_or_n_data)
    return float(2 * n * (1 - binary_entropy(ber)) / (B_prime * T_prime))


def binomial_interval(errors: int, bits: int, level: float = 0.95) -> Tuple[float, float]:
    """Clopper-Pearson interval for the BER."""
    if bits <= 0:
        return 0.0, 1.0
    a = (1 - level) / 2
    lo = 0.0 if errors == 0 else float(stats.beta.ppf(a, errors, bits - errors + 1))
    hi = 1.0 if errors == bits else float(stats.beta.ppf(1 - a, errors + 1, bits - errors))
    return lo, hi


@dataclass(frozen=True)
class SweepPoint:
    label: str
    variable: str
    value: float
    errors: int
    bits: int
    failures: int
    throughput: float
    crystallized: bool
    wall_time: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if not 0 <= self.errors <= self.bits:
            raise ValueError("errors must lie in [0, bits]")

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else 0.0

    def interval(self, level: float = 0.95) -> Tuple[float, float]:
        return binomial_interval(self.errors, self.bits, level)


@dataclass(frozen=True)
class SweepResult:
    points: Tuple[SweepPoint, ...]
    config_hash: str
    seed: int

    def select(self, label: str) -> List[SweepPoint]:
        return [p for p in self.points if p.label == label]

    def at(self, label: str, value: float) -> SweepPoint:
        for p in self.points:
            if p.label == label and math.isclose(p.value, value, rel_tol=1e-12, abs_tol=1e-12):
                return p
        raise KeyError(f"no point for {label!r} at {value}")


# ---------------------------------------------------------------------------
# one link realization
# ---------------------------------------------------------------------------
class LinkModel:
    """Per-(filter, operating point) quantities shared by all trials.

    Holds the layout, powers, Hermitian square root of the noise covariance
    and the MMSE detector (whose whitening factor is frame-invariant).
    """

    def __init__(self, f: PulseShapingFilter, op: OperatingPoint):
        self.filter = f
        self.op = op
        self.layout = op.layout()
        self.power = PowerConfig.from_db(op.gamma_d_dB, op.pdr_dB, f.B_prime * f.T_prime)
        noise = noise_covariance(f.params, f, self.power.N0)
        w, V = linalg.eigh(noise.R)
        self.noise_sqrt = (V * np.sqrt(np.clip(w, 0.0, None))) @ V.conj().T
        self.detector = MmseDetector(self.layout, self.power, noise, white=op.white)

    def run(self, ch, bits: np.ndarray, z: np.ndarray) -> int:
        """Bit errors of one frame given channel, data bits and white noise ``z``."""
        p = self.filter.params
        H = build_Hdd(effective_taps(ch, self.filter), p)
        x = assemble_subframe(self.layout, self.power, qam4_modulate(bits))
        y = devectorize(H @ vectorize(x) + self.noise_sqrt @ z, p)
        if self.op.perfect_csi:
            H_hat = H
        else:
            H_hat = build_Hdd(estimate_heff(y, self.layout, self.power.E_p), p)
        bits_hat = qam4_demodulate(self.detector.detect(y, H_hat))
        return int(np.count_nonzero(bits_hat != bits))


def trial_streams(seed: int, point: int, trial: int, n_bits: int, MN: int, op: OperatingPoint):
    """Channel, bits and unit white noise of one trial (shared by all filters)."""
    ss = np.random.SeedSequence([int(seed), int(point), int(trial)])
    ch_ss, bit_ss, noise_ss = ss.spawn(3)
    ch = sample_veha(op.nu_max, op.delay_scale, np.random.default_rng(ch_ss))
    bits = np.random.default_rng(bit_ss).integers(0, 2, n_bits, dtype=np.int8)
    g = np.random.default_rng(noise_ss)
    z = (g.standard_normal(MN) + 1j * g.standard_normal(MN)) * np.sqrt(0.5)
    return ch, bits, z


def _prescreen(f: PulseShapingFilter, op: OperatingPoint) -> bool:
    E = expected_tap_energy(f, op.nu_max, op.delay_scale)
    return crystallization_check(E, f.params).satisfied


_MODEL_CACHE: Dict[tuple, LinkModel] = {}


def _model(spec: dict, op: OperatingPoint) -> LinkModel:
    key = (json.dumps(spec, sort_keys=True), op.params, op.gamma_d_dB, op.pdr_dB, op.tau_max,
           op.margin, op.guard_width, op.perfect_csi, op.white)
    m = _MODEL_CACHE.get(key)
    if m is None:
        if len(_MODEL_CACHE) > 16:
            _MODEL_CACHE.clear()
        m = LinkModel(filter_from_spec(spec, op.params), op)
        _MODEL_CACHE[key] = m
    return m


def _run_trials(args) -> Tuple[np.ndarray, np.ndarray]:
    """Errors and failure flags for trials ``[t0, t1)`` of one point, every filter."""
    op, seed, point, t0, t1 = args
    models = [_model(s, op) for s in op.filter_specs]
    n_bits = 2 * models[0].layout.n_data
    MN = op.params.MN
    errs = np.zeros((len(models), t1 - t0), dtype=np.int64)
    fail = np.zeros((len(models), t1 - t0), dtype=bool)
    for j, t in enumerate(range(t0, t1)):
        ch, bits, z = trial_streams(seed, point, t, n_bits, MN, op)
        for i, m in enumerate(models):
            try:
                errs[i, j] = m.run(ch, bits, z)
            except (linalg.LinAlgError, FloatingPointError, ValueError) as exc:
                log.warning("trial %d at point %d failed for %s: %s", t, point, op.filter_specs[i], exc)
                fail[i, j] = True
    return errs, fail


def run_point(op: OperatingPoint, trials: int, seed: int, point: int = 0, workers: int = 1):
    """Per-filter ``(errors, bits, failures)`` at one operating point."""
    if workers <= 1:
        chunks = [_run_trials((op, seed, point, 0, trials))]
    else:
        edges = np.linspace(0, trials, min(workers, trials) + 1).astype(int)
        tasks = [(op, seed, point, int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(_run_trials, tasks))
    errs = np.concatenate([c[0] for c in chunks], axis=1)
    fail = np.concatenate([c[1] for c in chunks], axis=1)
    n_bits = 2 * op.layout().n_data
    out = []
    for i in range(len(op.filter_specs)):
        ok = ~fail[i]
        out.append((int(errs[i, ok].sum()), int(ok.sum()) * n_bits, int(fail[i].sum())))
    return out


def run_ber_sweep(cfg: ExperimentConfig, prescreen: bool = True) -> SweepResult:
    """BER (and throughput) of every configured filter at every sweep value.

    ``crystallized`` comes from the crystallization test on the ensemble-mean
    tap energy; ``prescreen=False`` skips it and reports ``False``.
    """
    points: List[SweepPoint] = []
    for i, value in enumerate(cfg.values):
        op = cfg.point(value)
        t = time.perf_counter()
        res = run_point(op, cfg.trials, cfg.seed, i, cfg.workers)
        wall = time.perf_counter() - t
        lay = op.layout()
        for label, spec, (e, b, nf) in zip(cfg.labels, op.filter_specs, res):
            f = filter_from_spec(spec, op.params)
            ber = e / b if b else 0.0
            points.append(
                SweepPoint(
                    label=label,
                    variable=cfg.variable,
                    value=float(value),
                    errors=e,
                    bits=b,
                    failures=nf,
                    throughput=effective_throughput(ber, lay, f.B_prime, f.T_prime),
                    crystallized=_prescreen(f, op) if prescreen else False,
                    wall_time=wall,
                )
            )
            log.info("%s %s=%g BER=%.3e (%d/%d)", label, cfg.variable, value, ber, e, b)
    return SweepResult(tuple(points), cfg.config_hash(), cfg.seed)


# ---------------------------------------------------------------------------
# hyperbola study
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class HyperbolaRow:
    M: int
    N: int
    label: str
    nu_p: float
    nu_max: float
    tau_max: float
    errors: int
    bits: int
    failures: int
    crystallized: bool

    @property
    def ber(self) -> float:
        return self.errors / self.bits if self.bits else 0.0

    @property
    def reliable(self) -> bool:
        return self.ber < RELIABLE_BER


def hyperbola_point(M: int, N: int, B: float = HYPERBOLA_BANDWIDTH) -> Tuple[ModulationParams, float, float]:
    """``(params, nu_max, delay_scale)`` of one hyperbola row.

    ``nu_p = B / M``, ``nu_max = nu_p / 2 - 1 kHz`` and ``tau_max = 0.1 / nu_max``
    (Veh-A delays scaled to that maximum).
    """
    p = ModulationParams(M, N, B / M)
    nu_max = p.nu_p / 2 - 1000.0
    tau_max = 0.1 / nu_max
    return p, nu_max, tau_max / VEH_A.max_delay


def run_hyperbola_study(
    trials: int,
    seed: int = 0,
    filters: Sequence[dict] = ({"label": "sinc", "kind": "sinc"}, {"label": "gaussian", "kind": "gaussian"}),
    rows: Sequence[Tuple[int, int]] = HYPERBOLA_ROWS,
    gamma_d_dB: float = 25.0,
    pdr_dB: float = 5.0,
    workers: int = 1,
    margin: int = 4,
    guard_width: int = 2,
) -> List[HyperbolaRow]:
    """Reliability verdicts along ``M N = 1536`` at fixed bandwidth."""
    out = []
    for i, (M, N) in enumerate(rows):
        p, nu_max, scale = hyperbola_point(M, N)
        op = OperatingPoint(p, tuple(dict(s) for s in filters), nu_max, scale, gamma_d_dB, pdr_dB, margin, guard_width)
        res = run_point(op, trials, seed, i, workers)
        for spec, (e, b, nf) in zip(filters, res):
            f = filter_from_spec(spec, p)
            row = HyperbolaRow(M, N, str(spec.get("label", spec["kind"])), p.nu_p, nu_max, op.tau_max, e, b, nf,
                               _prescreen(f, op))
            log.info("(%d,%d) %s BER=%.3e crystallized=%s", M, N, row.label, row.ber, row.crystallized)
            out.append(row)
    return out


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------
def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def emit_csv(result: SweepResult, path) -> Path:
    """Write one row per sweep point with the columns of ``CSV_COLUMNS``.

    Floats carry 17 significant digits; wall time is left out so reruns are
    byte-identical.
    """
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for pt in result.points:
                w.writerow(
                    [_fmt(v) for v in (pt.label, pt.variable, pt.value, pt.ber, pt.errors, pt.bits, pt.failures,
                                       pt.throughput, pt.crystallized, result.config_hash, result.seed)]
                )
    except OSError as exc:
        raise OSError(f"cannot write CSV {path}: {exc}") from exc
    return path


HYPERBOLA_COLUMNS = ("M", "N", "label", "nu_p", "nu_max", "tau_max", "ber", "errors", "bits", "failures",
                     "reliable", "crystallized", "seed")


def emit_hyperbola_csv(rows: Sequence[HyperbolaRow], path, seed: int) -> Path:
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HYPERBOLA_COLUMNS)
            for r in rows:
                w.writerow([_fmt(v) for v in (r.M, r.N, r.label, r.nu_p, r.nu_max, r.tau_max, r.ber, r.errors,
                                              r.bits, r.failures, r.reliable, r.crystallized, seed)])
    except OSError as exc:
        raise OSError(f"cannot write CSV {path}: {exc}") from exc
    return path
