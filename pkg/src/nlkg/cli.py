"""Command-line driver.

Exit codes: 0 success, 2 validation failure, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import lab as L
from .config import ConfigError, RunConfig, dumps, load_config, write_resolved
from .evolution import FateKind
from .ground_state import NewtonDivergence, ShootingError, fmt, load_or_build
from .linearized import spectral_data
from .radial import BoundaryGuardError, GridMismatchError, RadialGrid

log = logging.getLogger("nlkg")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
_NUMERICAL = (ShootingError, NewtonDivergence, FloatingPointError, L.BisectionError,
              L.NoEjectionError, L.ThresholdError, np.linalg.LinAlgError, ArithmeticError)
_VALIDATION = (ConfigError, BoundaryGuardError, GridMismatchError, ValueError)


def _out(key: str, value) -> None:
    if isinstance(value, (float, np.floating)):
        value = fmt(float(value))
    print(f"{key} = {value}")


# ------------------------------------------------------------------ setup

def _override(cfg: RunConfig, a) -> RunConfig:
    if a.r_max is not None:
        cfg.grid.r_max = a.r_max
    if a.n is not None:
        cfg.grid.n = a.n
    if a.dt is not None:
        cfg.integrator.dt_max = a.dt
    if a.out is not None:
        cfg.output_dir = a.out
    if a.cache is not None:
        cfg.cache = a.cache
    if a.seed is not None:
        cfg.seed = a.seed
    if getattr(a, "T", None) is not None:
        cfg.horizons.T = a.T
    cfg.experiment.name = a.command
    return cfg.validate()


def _lab(cfg: RunConfig, bs_m: int = 0) -> L.Lab:
    gs = load_or_build(RadialGrid(cfg.grid.r_max, cfg.grid.n), cfg.cache)
    return L.Lab(gs, spectral_data(gs, bs_m=bs_m), cfg.params(), cfg.step_control(),
                 cfg.horizons.sample_every)


def _datum(lab: L.Lab, a):
    if a.data == "aQ":
        return lab.scaled(a.a)
    return lab.datum(a.lam, a.lamdot, sigma=a.sigma)


def _descriptor(a) -> dict:
    if a.data == "aQ":
        return {"data": "aQ", "a": a.a}
    return {"data": "mode", "lam": a.lam, "lamdot": a.lamdot, "sigma": a.sigma}


# ------------------------------------------------------------------ commands

def cmd_ground_state(cfg, a, out: Path) -> int:
    gs = load_or_build(RadialGrid(cfg.grid.r_max, cfg.grid.n), cfg.cache, refresh=a.refresh)
    _out("JQ", gs.JQ)
    _out("q0", gs.q0)
    _out("residual", gs.residual)
    _out("l4Q", gs.l4Q)
    return EXIT_OK


def cmd_spectrum(cfg, a, out: Path) -> int:
    gs = load_or_build(RadialGrid(cfg.grid.r_max, cfg.grid.n), cfg.cache)
    sp = spectral_data(gs, bs_m=a.bs_m)
    _out("k", sp.k)
    _out("n_neg", sp.n_neg)
    for i, v in enumerate(sp.bs_top, 1):
        _out(f"bs_{i}", float(v))
    if sp.gap_ok:
        print("BS gap: OK (second eigenvalue < 0.98)")
    else:
        print("BS gap: FAIL")
    (out / "spectrum.json").write_text(dumps({"k": sp.k, "n_neg": sp.n_neg,
                                              "bs_top": list(map(float, sp.bs_top)),
                                              "gap_ok": bool(sp.gap_ok)}))
    return EXIT_OK if sp.gap_ok and sp.n_neg == 1 else EXIT_NUMERICAL


def cmd_evolve(cfg, a, out: Path) -> int:
    lab = _lab(cfg)
    rec = lab.evolve(_datum(lab, a), cfg.horizons.T, a.direction, with_virial=a.virial)
    rec.meta.update(_descriptor(a))
    rec.write(out, a.stem)
    _out("fate", rec.fate.kind.value)
    _out("samples", len(rec.samples))
    _out("max_energy_drift", rec.max_energy_drift())
    return EXIT_OK


def cmd_classify(cfg, a, out: Path) -> int:
    lab = _lab(cfg)
    res = L.classify_nine(_datum(lab, a), cfg.horizons.T, lab, _descriptor(a))
    _out("backward", res.backward.kind.value)
    _out("forward", res.forward.kind.value)
    _out("set_index", res.set_index)
    (out / "classify.json").write_text(dumps(res.to_dict()))
    return EXIT_OK


def cmd_witnesses(cfg, a, out: Path) -> int:
    lab = _lab(cfg)
    specs = [w for w in L.witness_specs(lab, a.theta) if not a.only or w.index in a.only]
    if a.two_resolutions:
        fine = lab.refined(cfg.cache)
        items = L.parallel_map(lambda w: L.verify_witness(w, lab, fine, cfg.horizons.T, a.window),
                               specs, a.threads)
        rows = [it.to_dict() for it in items]
        ok = all(it.agree for it in items)
    else:
        items = L.parallel_map(lambda w: L.build_witness(w, lab, cfg.horizons.T, a.window),
                               specs, a.threads)
        rows = [dict(it.to_dict(), index=it.spec.index) for it in items]
        ok = all(it.result.set_index == it.spec.index for it in items)
    for r in rows:
        d = r.get("fine", r)
        print(f"set {r['index']}: {d['backward']['kind']} / {d['forward']['kind']} "
              f"-> {d['set_index']}")
    (out / "witnesses.json").write_text(dumps({"theta": a.theta, "witnesses": rows, "all_ok": ok}))
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_portrait(cfg, a, out: Path) -> int:
    lab = _lab(cfg)
    P = L.phase_portrait(lab, a.extent, a.n_side, cfg.horizons.T, a.threads)
    if a.refine:
        L.refine_boundary(lab, P, cfg.horizons.T, threads=a.threads)
    P.write(out / "portrait.txt")
    slope, icpt = P.boundary_slope()
    _out("k", lab.k)
    _out("boundary_slope", slope)
    _out("boundary_intercept", icpt)
    (out / "portrait.json").write_text(dumps({"k": lab.k, "slope": slope, "intercept": icpt,
                                              "n_side": a.n_side,
                                              "refined": None if P.refined is None
                                              else P.refined.tolist()}))
    return EXIT_OK


def cmd_threshold(cfg, a, out: Path) -> int:
    lab = _lab(cfg)
    signs = [1, -1] if a.sign == "both" else [1 if a.sign == "+" else -1]
    summary = []
    for sg in signs:
        W = L.construct_threshold_W(lab, sg, a.s, cfg.horizons.T)
        name = "Wplus" if sg > 0 else "Wminus"
        W.backward.write(out, f"{name}_backward")
        W.forward.write(out, f"{name}_forward")
        _out(f"{name}.forward", W.forward.fate.kind.value)
        _out(f"{name}.backward_rate", W.backward_rate)
        summary.append({"sign": sg, "s": W.s, "c": W.c, "forward": W.forward.fate.kind.value,
                        "backward_rate": W.backward_rate, "k": lab.k})
    (out / "threshold.json").write_text(dumps(summary))
    return EXIT_OK


def cmd_audit(cfg, a, out: Path) -> int:
    lab = _lab(cfg)
    rng = np.random.default_rng(cfg.seed)
    rep = L.one_pass_ensemble(lab, a.samples, rng, cfg.horizons.T, a.threads)
    k = lab.k
    fits = []
    for amp in (a.mode_amplitude, -a.mode_amplitude):
        rec = lab.evolve(lab.datum(amp, amp * k), cfg.horizons.T)
        f = L.ejection_audit(rec, lab.p, lab.spec)
        fits.append({"amplitude": amp, "rate": f.rate, "k": k, "rel_error": f.rel_error,
                     "s_sign": f.s_sign, "k_margin": f.k_margin, "ok": f.ok})
    _out("ensemble", rep.n_total)
    _out("exited", rep.n_exited)
    _out("returns", rep.n_returns)
    _out("sign_flips", rep.n_sign_flips)
    for f in fits:
        _out(f"ejection_rate[{f['amplitude']:+g}]", f["rate"])
    (out / "audit.json").write_text(dumps({
        "seed": cfg.seed, "rng": "numpy PCG64 (default_rng)", "n_total": rep.n_total,
        "n_exited": rep.n_exited, "n_returns": rep.n_returns, "n_sign_flips": rep.n_sign_flips,
        "fates": rep.fates, "ejection": fits}))
    ok = rep.ok and all(f["ok"] for f in fits)
    return EXIT_OK if ok else EXIT_NUMERICAL


COMMANDS = {"ground-state": cmd_ground_state, "spectrum": cmd_spectrum, "evolve": cmd_evolve,
            "classify": cmd_classify, "witnesses": cmd_witnesses, "portrait": cmd_portrait,
            "threshold": cmd_threshold, "audit": cmd_audit}


# ------------------------------------------------------------------ parser

def _add_datum(p):
    p.add_argument("--data", choices=("aQ", "mode"), default="aQ")
    p.add_argument("--a", type=float, default=1.0, help="scale for --data aQ")
    p.add_argument("--lam", type=float, default=0.0)
    p.add_argument("--lamdot", type=float, default=0.0)
    p.add_argument("--sigma", type=int, choices=(1, -1), default=1)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", help="output directory")
    common.add_argument("--cache", help="ground-state cache directory")
    common.add_argument("--r-max", type=float, dest="r_max")
    common.add_argument("--n", type=int)
    common.add_argument("--dt", type=float, help="dt_max")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = argparse.ArgumentParser(prog="nlkg", description="Radial cubic Klein-Gordon laboratory")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ground-state", parents=[common], help="build or refresh the Q cache")
    p.add_argument("--refresh", action="store_true")
    p = sub.add_parser("spectrum", parents=[common], help="k, n_neg and Birman-Schwinger gap")
    p.add_argument("--bs-m", type=int, default=4, dest="bs_m")
    p = sub.add_parser("evolve", parents=[common], help="evolve one datum")
    _add_datum(p)
    p.add_argument("--T", type=float)
    p.add_argument("--direction", choices=("forward", "backward"), default="forward")
    p.add_argument("--virial", action="store_true", help="record the virial column")
    p.add_argument("--stem", default="trajectory")
    p = sub.add_parser("classify", parents=[common], help="fate pair and set index of a datum")
    _add_datum(p)
    p.add_argument("--T", type=float)
    p = sub.add_parser("witnesses", parents=[common], help="one datum per set")
    p.add_argument("--T", type=float)
    p.add_argument("--theta", type=float, default=0.1)
    p.add_argument("--window", type=float, default=1e-12)
    p.add_argument("--only", type=int, nargs="*")
    p.add_argument("--two-resolutions", action="store_true", dest="two_resolutions")
    p = sub.add_parser("portrait", parents=[common], help="(lambda, lamdot) fate map")
    p.add_argument("--T", type=float)
    p.add_argument("--n-side", type=int, default=41, dest="n_side")
    p.add_argument("--extent", type=float)
    p.add_argument("--refine", action="store_true", help="bisect boundary crossings")
    p = sub.add_parser("threshold", parents=[common], help="threshold solutions W+-")
    p.add_argument("--T", type=float)
    p.add_argument("--sign", choices=("+", "-", "both"), default="both")
    p.add_argument("--s", type=float, default=1e-4)
    p = sub.add_parser("audit", parents=[common], help="one-pass ensemble and ejection fits")
    p.add_argument("--T", type=float)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--mode-amplitude", type=float, default=0.02, dest="mode_amplitude")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    ap = build_parser()
    try:
        a = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_VALIDATION if e.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(a.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _override(load_config(a.config), a)
        if a.threads < 1:
            raise ConfigError("--threads must be >= 1")
        out = Path(cfg.output_dir)
        write_resolved(cfg, out)
        return COMMANDS[a.command](cfg, a, out)
    except _NUMERICAL as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except _VALIDATION as e:
        print(f"validation failure: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"i/o failure: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
