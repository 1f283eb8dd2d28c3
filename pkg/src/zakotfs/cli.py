"""Command line front end: ``zakotfs <subcommand> --config FILE [--seed S] [--trials T] [--out PATH]``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import sim
from .channel import sample_veha
from .effective import (
    effective_taps,
    heff_gaussian_closed_form,
    heff_numeric,
    noise_covariance,
    noise_covariance_gaussian,
    noise_covariance_numeric,
)
from .filters import PulseShapingFilter, filter_from_spec
from .lattice import ModulationParams, QuasiPeriodicGrid

log = logging.getLogger("zakotfs")

_DEFAULT_AXES = {
    "pdr-sweep": ("pdr_dB", [0.0, 5.0, 10.0, 15.0]),
    "snr-sweep": ("gamma_d_dB", [20.0, 25.0, 30.0, 35.0, 40.0]),
    "throughput": ("expand_T", [1.0, 1.25, 1.6]),
}


def _load(args) -> sim.ExperimentConfig:
    cfg = sim.ExperimentConfig.from_toml(args.config) if args.config else sim.ExperimentConfig.from_dict({})
    return cfg.override(seed=args.seed, trials=args.trials, workers=args.workers)


def _with_axis(cfg: sim.ExperimentConfig, command: str) -> sim.ExperimentConfig:
    """Force the sweep variable of a dedicated subcommand (keep file values if they match)."""
    var, default = _DEFAULT_AXES[command]
    if cfg.variable == var:
        return cfg
    return cfg.override(sweep={"variable": var, "values": default})


def _out(args, name: str) -> Path:
    return Path(args.out) if args.out else Path(name)


def _sweep(args, command: str) -> int:
    cfg = _load(args)
    if command in _DEFAULT_AXES:
        cfg = _with_axis(cfg, command)
    res = sim.run_ber_sweep(cfg)
    path = sim.emit_csv(res, _out(args, f"{command}.csv"))
    for p in res.points:
        print(f"{p.label:>12s} {p.variable}={p.value:g}  BER={p.ber:.4e}  throughput={p.throughput:.4f}")
    print(f"wrote {path}")
    return 0


def _heff(args) -> int:
    cfg = _load(args)
    op = cfg.point(cfg.values[0])
    ch = sample_veha(op.nu_max, op.delay_scale, np.random.default_rng(cfg.seed))
    path = _out(args, "heff.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "k", "l", "re", "im", "abs"])
        for label, spec in zip(cfg.labels, op.filter_specs):
            taps = effective_taps(ch, filter_from_spec(spec, op.params))
            for (k, l), v in sorted(taps.to_dict(threshold=1e-6).items()):
                w.writerow([label, k, l, format(v.real, ".17g"), format(v.imag, ".17g"), format(abs(v), ".17g")])
    print(f"wrote {path}")
    return 0


def _covariance(args) -> int:
    cfg = _load(args)
    p = cfg.params
    path = _out(args, "covariance.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "dimension", "hermitian", "min_eigenvalue", "trace", "offdiag_fraction"])
        for label, spec in zip(cfg.labels, cfg.raw["filters"]):
            nm = noise_covariance(p, filter_from_spec(spec, p), 1.0)
            R = nm.R
            off = np.linalg.norm(R - np.diag(np.diag(R))) / np.linalg.norm(R)
            w.writerow([label, R.shape[0], int(nm.is_hermitian()), format(nm.min_eigenvalue(), ".17g"),
                        format(float(np.trace(R).real), ".17g"), format(float(off), ".17g")])
            print(f"{label:>12s} hermitian={nm.is_hermitian()} min_eig={nm.min_eigenvalue():.3e} offdiag={off:.3e}")
    print(f"wrote {path}")
    return 0


def _hyperbola(args) -> int:
    cfg = _load(args)
    rows = sim.run_hyperbola_study(
        cfg.trials,
        cfg.seed,
        filters=cfg.raw["filters"],
        gamma_d_dB=float(cfg.raw["power"]["gamma_d_dB"]),
        pdr_dB=float(cfg.raw["power"]["pdr_dB"]),
        workers=cfg.workers,
    )
    for r in rows:
        verdict = "reliable" if r.reliable else "unreliable"
        print(f"({r.M:3d},{r.N:3d}) {r.label:>10s} BER={r.ber:.4e} {verdict:>10s} crystallized={r.crystallized}")
    path = sim.emit_hyperbola_csv(rows, _out(args, "hyperbola.csv"), cfg.seed)
    print(f"wrote {path}")
    return 0


def _validate(args) -> int:
    """Fast oracle checks at (M, N) = (8, 8); nonzero exit on any failure."""
    from .tdoracle import end_to_end_check

    p = ModulationParams(8, 8, 15e3)
    f = PulseShapingFilter.gaussian(p)
    rng = np.random.default_rng(args.seed or 0)
    checks = []
    ch = sample_veha(815.0, 1.0, rng)
    k = np.arange(-8, 9)
    K, L = np.meshgrid(k, k, indexing="ij")
    num = heff_numeric(ch, f, window=(k, k))
    err = float(np.max(np.abs(heff_gaussian_closed_form(ch, f, K, L) - num.values)))
    checks.append(("closed-form vs numeric effective channel", err, 1e-6))
    Rc = noise_covariance_gaussian(p, f, 1.0).R
    Rn = noise_covariance_numeric(p, f, 1.0).R
    checks.append(("closed-form vs numeric noise covariance", float(np.linalg.norm(Rc - Rn) / np.linalg.norm(Rc)), 1e-5))
    x = QuasiPeriodicGrid(p, (rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))) / np.sqrt(2))
    checks.append(("time-domain vs discrete I/O relation", end_to_end_check(p, f, ch, x).max_err, 1e-5))
    ok = True
    for name, err, tol in checks:
        passed = err < tol
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name}: {err:.3e} (tolerance {tol:g})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="zakotfs", description="Zak-OTFS link-level simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [
        ("heff", "dump effective-channel taps of one channel draw"),
        ("covariance", "summarize the DD noise covariance of each filter"),
        ("ber-sweep", "BER over the configured sweep axis"),
        ("pdr-sweep", "BER versus pilot-to-data ratio"),
        ("snr-sweep", "BER versus data SNR"),
        ("throughput", "effective throughput versus time expansion"),
        ("hyperbola", "reliability verdicts along M N = 1536"),
        ("validate", "fast oracle checks"),
    ]:
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=str, default=None, help="TOML experiment file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--trials", type=int, default=None)
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--out", type=str, default=None, help="output CSV path")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command in ("ber-sweep", "pdr-sweep", "snr-sweep", "throughput"):
            return _sweep(args, args.command)
        return {"heff": _heff, "covariance": _covariance, "hyperbola": _hyperbola, "validate": _validate}[
            args.command
        ](args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"zakotfs: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
