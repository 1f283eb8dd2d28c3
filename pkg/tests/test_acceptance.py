"""Acceptance criteria 1-10, one PASS/FAIL line each.

The Monte Carlo criteria run at their stated trial counts and take tens of
minutes in total on one core. The hyperbola study (criterion 5) runs its
50-trial reduced mode unless ``ZAKOTFS_FULL_HYPERBOLA=1`` is set, which
switches to 200 trials per row.
"""
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from zakotfs import sim
from zakotfs.channel import PhysicalChannel, sample_veha
from zakotfs.effective import heff_gaussian_closed_form, heff_numeric, noise_covariance_gaussian, noise_covariance_numeric
from zakotfs.filters import PulseShapingFilter
from zakotfs.lattice import ModulationParams, QuasiPeriodicGrid
from zakotfs.link import PowerConfig, assemble_subframe, layout_for_delay_spread, qam4_modulate
from zakotfs.tdoracle import empirical_noise_covariance, end_to_end_check, td_energy_ratio

P8 = ModulationParams(8, 8, 15e3)
TESTS = Path(__file__).parent


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return emit


def sweep(filters, variable, values, trials=200, **over):
    raw = {"filters": filters, "sweep": {"variable": variable, "values": values}, "trials": trials, "seed": 0}
    raw.update(over)
    return sim.run_ber_sweep(sim.ExperimentConfig.from_dict(raw), prescreen=False)


def fmt(pt):
    lo, hi = pt.interval()
    return f"{pt.label}@{pt.value:g}: BER {pt.ber:.3e} [{lo:.2e}, {hi:.2e}] ({pt.errors}/{pt.bits})"


GAUSS = {"label": "gaussian", "kind": "gaussian"}
SINC = {"label": "sinc", "kind": "sinc"}


def test_criterion_1_closed_form_effective_channel(report):
    t = time.perf_counter()
    f = PulseShapingFilter.gaussian(P8)
    worst = 0.0
    for seed in range(10):
        ch = sample_veha(815.0, 1.0, seed)
        num = heff_numeric(ch, f, oversample=16)
        K, L = np.meshgrid(num.k_offsets, num.l_offsets, indexing="ij")
        worst = max(worst, float(np.max(np.abs(heff_gaussian_closed_form(ch, f, K, L) - num.values))))
    dt = time.perf_counter() - t
    ok = worst < 1e-6 and dt < 60
    report(1, ok, f"max |closed form - numeric| = {worst:.2e} over 10 draws ({dt:.1f} s)")
    assert ok


def test_criterion_2_noise_covariance(report):
    t = time.perf_counter()
    f = PulseShapingFilter.gaussian(P8)
    nm = noise_covariance_gaussian(P8, f, 1.0)
    R = nm.R
    a = nm.is_hermitian() and nm.is_psd()
    Re = empirical_noise_covariance(f, 1.0, draws=100_000, rng=0)
    b = float(np.linalg.norm(Re - R) / np.linalg.norm(R))
    Rn = noise_covariance_numeric(P8, f, 1.0).R
    c = float(np.linalg.norm(Rn - R) / np.linalg.norm(R))
    dt = time.perf_counter() - t
    ok = a and b < 0.03 and c < 1e-5 and dt < 300
    report(2, ok, f"(a) Hermitian+PSD={a}, min eig {nm.min_eigenvalue():.2e}; (b) empirical {b:.2%}; "
                  f"(c) numeric {c:.2e} ({dt:.1f} s)")
    assert ok


def test_criterion_3_dual_path(report):
    t = time.perf_counter()
    rng = np.random.default_rng(0)
    x = QuasiPeriodicGrid(P8, (rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))) / np.sqrt(2))
    ch = sample_veha(815.0, 1.0, 0)
    errs = {}
    for f, tol in ((PulseShapingFilter.gaussian(P8), 1e-5), (PulseShapingFilter.sinc(P8), 1e-3)):
        for name, c in (("delta", PhysicalChannel.identity()), ("veh-a", ch)):
            errs[(f.kind, name)] = (end_to_end_check(P8, f, c, x).max_err, tol)
    dt = time.perf_counter() - t
    ok = all(e < tol for e, tol in errs.values()) and dt < 120
    detail = ", ".join(f"{k}/{n} {e:.2e} (<{tol:g})" for (k, n), (e, tol) in errs.items())
    report(3, ok, f"{detail} ({dt:.1f} s)")
    assert ok


def test_criterion_4_energy_identity(report):
    lay = layout_for_delay_spread(P8, 2.51e-6)
    ratios = {}
    for f in (PulseShapingFilter.gaussian(P8), PulseShapingFilter.sinc(P8), PulseShapingFilter.rrc(P8, 0.1, 0.1)):
        pw = PowerConfig(1.0, 10**0.5, 1.0, f.B_prime * f.T_prime)
        g = np.random.default_rng(0)
        frames = np.stack(
            [assemble_subframe(lay, pw, qam4_modulate(g.integers(0, 2, 2 * lay.n_data))).samples for _ in range(100)]
        )
        ratios[f.kind] = td_energy_ratio(f, frames, oversample=8)
    ok = all(0.99 <= r <= 1.01 for r in ratios.values())
    report(4, ok, "mean TD / mean DD energy over 100 frames: " + ", ".join(f"{k} {v:.4f}" for k, v in ratios.items()))
    assert ok


def test_criterion_5_hyperbola_pattern(report):
    trials = 200 if os.environ.get("ZAKOTFS_FULL_HYPERBOLA") == "1" else 50
    rows = sim.run_hyperbola_study(trials, seed=0)
    want = {"sinc": [True] * 5 + [False] * 3, "gaussian": [True] * 8}
    got = {lab: [r.reliable for r in rows if r.label == lab] for lab in want}
    ok = got == want
    bers = "; ".join(f"{lab} " + " ".join(f"{r.ber:.1e}" for r in rows if r.label == lab) for lab in want)
    report(5, ok, f"{trials} trials/row, verdicts {got} (want {want}); BER {bers}")
    assert ok


def test_criterion_6_doppler_ordering(report):
    res = sweep([GAUSS, SINC], "nu_max_hz", [1000.0, 4000.0])
    ok = True
    parts = []
    for v in (1000.0, 4000.0):
        g, s = res.at("gaussian", v), res.at("sinc", v)
        ok &= g.ber < s.ber and g.interval()[1] < s.interval()[0]
        parts += [fmt(g), fmt(s)]
    report(6, ok, "; ".join(parts))
    assert ok


def test_criterion_7_error_floor(report):
    res = sweep([GAUSS, SINC], "gamma_d_dB", [30.0, 40.0], channel={"nu_max_hz": 815.0})
    s30, s40 = res.at("sinc", 30.0), res.at("sinc", 40.0)
    g30, g40 = res.at("gaussian", 30.0), res.at("gaussian", 40.0)
    floor = s40.ber * 3 >= s30.ber and s30.ber > 0
    no_floor = g40.ber < 0.2 * g30.ber
    ok = floor and no_floor
    report(7, ok, f"sinc floor={floor}, gaussian no-floor={no_floor}; " + "; ".join(map(fmt, (s30, s40, g30, g40))))
    assert ok


def test_criterion_8_pilot_power_u_shape(report):
    res = sweep([GAUSS, SINC], "pdr_dB", [0.0, 5.0, 15.0], channel={"nu_max_hz": 815.0})
    s = {v: res.at("sinc", v) for v in (0.0, 5.0, 15.0)}
    g = {v: res.at("gaussian", v) for v in (0.0, 5.0, 15.0)}
    u = s[15.0].ber > min(s[0.0].ber, s[5.0].ber)
    flat = g[15.0].ber <= 1.5 * g[5.0].ber
    ok = u and flat
    report(8, ok, f"sinc U={u}, gaussian flat={flat}; " + "; ".join(fmt(p) for p in (*s.values(), *g.values())))
    assert ok


def test_criterion_9_property_suites(report):
    nodes = [
        "test_lattice.py::test_twisted_convolve_matches_direct_sum",
        "test_lattice.py::test_twisted_convolve_associativity",
        "test_filters.py::test_unit_energy_time_domain",
        "test_filters.py::test_sinc_energy_with_tail_bound",
        "test_filters.py::test_localization_ordering_envelope",
        "test_lattice.py::test_build_hdd_column_oracle",
        "test_link.py::test_estimator_exact_recovery_contained_support",
        "test_link.py::test_mmse_identity_channel_exact",
        "test_sim.py::test_csv_golden_and_byte_identical",
    ]
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *[str(TESTS / n) for n in nodes]],
        capture_output=True, text=True, cwd=TESTS.parent,
    )
    ok = proc.returncode == 0
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr.strip()[-200:]
    report(9, ok, f"{len(nodes)} property suites: {tail}")
    assert ok


def test_criterion_10_throughput_ordering(report):
    rrc = {"label": "rrc", "kind": "rrc", "beta_tau": 0.0, "beta_nu": 0.0}
    res = sweep([GAUSS, rrc], "expand_T", [1.0, 1.25, 1.6], channel={"nu_max_hz": 6000.0})
    ok = True
    parts = []
    for v in (1.0, 1.25, 1.6):
        g, r = res.at("gaussian", v), res.at("rrc", v)
        ok &= g.throughput >= r.throughput
        parts.append(f"T'/T={v:g}: gaussian {g.throughput:.4f} (BER {g.ber:.2e}) vs rrc {r.throughput:.4f} (BER {r.ber:.2e})")
    report(10, ok, "; ".join(parts))
    assert ok
