"""Command-line runner: simulate, sweep, ensemble and structure verification."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import os
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import dynamics as dyn
from . import ensemble as ens
from . import measure as ms
from . import models as mdl
from . import snapshot
from . import spectral as sp
from .config import ConfigError, RunConfig, config_hash, parse_config, serialize
from .measure import FAIL, INCONCLUSIVE, PASS, Verdict

# series name -> CSV columns
SERIES = {
    "energy_vs_t": ("t", "mean_l2sq", "stderr"),
    "balance_residual": ("t", "residual", "stderr", "raw_residual", "raw_stderr", "scale"),
    "identity_vs_alpha": ("alpha", "N", "estimate", "target", "stderr", "z"),
    "complement_vs_i": ("i", "complement", "members", "total"),
    "structure": ("model", "check", "violation"),
}


def workers() -> int:
    try:
        return max(1, int(os.environ.get("IMLAB_WORKERS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    items = list(items)
    n = min(workers(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _observables(cfg: RunConfig) -> list:
    obs = [ms.ObservableSpec("l2sq"), ms.ObservableSpec("G")]
    checks = cfg["experiment.checks"]
    if "second_balance" in checks:
        obs.append(ms.ObservableSpec("dh_a"))
    if "moments" in checks:
        obs.append(ms.ObservableSpec("moment", m=1))
    return obs


def bounded_observables(em: ms.EmpiricalMeasure) -> list:
    """Three bounded observables scaled to the reservoir: clipped H^4, clipped H^1, one cosine window."""
    batch = ms._reservoir_batch(em)
    h4 = np.asarray(sp.norm(batch, sp.H(4)))
    h1 = np.asarray(sp.norm(batch, sp.H(1)))
    c0 = batch.coeffs[..., 0, 0] if batch.kind == "vector" else batch.coeffs[..., 0]
    scale = float(np.std(c0.real)) or 1.0
    return [ms.ObservableSpec("clipped_norm", s=4.0, cap=float(np.median(h4)) or 1.0),
            ms.ObservableSpec("clipped_norm", s=1.0, cap=float(np.median(h1)) or 1.0),
            ms.ObservableSpec("cos_window", index=0, part="re", scale=scale)]


# ---------------------------------------------------------------------------
# experiments


def _balance_run(cfg: RunConfig, model, diss, noise, alpha):
    e = cfg.values["experiment"]
    icfg = replace(cfg.integrator(), dt_max=e["balance_dt"])
    basis = mdl.basis_for(model, cfg.N)
    bn = dyn.bind_noise(noise, model.kind, basis)
    u0 = sp.zeros(model.kind, basis, (cfg["run.paths"],))
    traj = dyn.stochastic_path(model, diss, bn, alpha, u0, (0.0, e["balance_horizon"]), icfg,
                               observables={"l2sq": sp.l2_sq}, stream=1)
    res = dyn.ito_balance_residual(dyn.IDENTITY, traj)
    return traj, res


def balance_verdict(res: dyn.BalanceResidual, alpha: float, A0: float, rel: float = 0.05) -> Verdict:
    """Largest residual relative to ``alpha A0 t`` over the last three quarters of the run."""
    t = res.times
    sel = t >= 0.25 * t[-1]
    ref_scale = alpha * A0 * t[sel]
    ratio = np.abs(res.mean[sel]) / np.where(ref_scale > 0, ref_scale, 1.0)
    worst = float(np.max(ratio)) if ratio.size else math.inf
    if A0 == 0:
        worst = float(np.max(np.abs(res.mean)))
    return Verdict("ito_energy_balance", 0.0, worst, float(res.stderr[-1]), f"<= {rel:.0%} of alpha*A0*t",
                   PASS if worst <= rel else FAIL, "Ito formula for |u|^2 along the damped forced flow",
                   {"paths": res.paths, "t_final": float(t[-1]), "residual_final": float(res.mean[-1]),
                    "raw_residual_final": float(res.raw_mean[-1])})


def run_simulate(cfg: RunConfig, out: Path):
    model, diss, noise = cfg.model(), cfg.diss(), cfg.noise()
    alpha = cfg["experiment.alpha"]
    checks = cfg["experiment.checks"]
    em = ms.estimate_stationary(model, diss, noise, alpha, cfg.budget(), _observables(cfg), cfg.integrator())
    verdicts, series = [], {}
    if "identity" in checks:
        verdicts.append(ms.stationary_identity_check(em))
        v = verdicts[-1]
        series["identity_vs_alpha"] = [[alpha, cfg.N, v.estimate, v.target, v.stderr, v.details["z"]]]
    if "tail" in checks:
        verdicts.append(ms.tail_check(em))
    if "no_atom" in checks:
        verdicts.append(ms.abs_continuity_histogram(em))
    if "second_balance" in checks:
        try:
            verdicts.append(ms.second_balance_check(em, model))
        except mdl.CapabilityError as exc:
            verdicts.append(Verdict("second_balance", 0.0, math.nan, math.nan, "3sigma & 10%",
                                    INCONCLUSIVE, "second invariant", {"reason": str(exc)}))
    if "moments" in checks:
        w = ms.window_stability(em, "l2sq")
        d = abs(w["half_mean"] - w["full_mean"])
        tol = 3.0 * math.hypot(w["half_stderr"], w["full_stderr"])
        verdicts.append(Verdict("window_stability", w["full_mean"], w["half_mean"], w["half_stderr"],
                                "3sigma", PASS if d <= tol else FAIL,
                                "averages unchanged when the window doubles", w))
    if "invariance" in checks:
        if em.reservoir:
            verdicts.extend(ms.invariance_test(em, model, cfg["experiment.invariance_t"],
                                               bounded_observables(em), cfg.integrator()))
        else:
            verdicts.append(Verdict("invariance", 0.0, math.nan, math.nan, "3sigma", INCONCLUSIVE,
                                    "flow map invariance", {"reason": "empty reservoir"}))
    if "balance" in checks:
        traj, res = _balance_run(cfg, model, diss, noise, alpha)
        verdicts.append(balance_verdict(res, alpha, em.A0))
        l2 = traj.observables["l2sq"]
        P = l2.shape[1]
        se = np.std(l2, axis=1, ddof=1) / math.sqrt(P) if P > 1 else np.zeros(l2.shape[0])
        series["energy_vs_t"] = np.column_stack([traj.times, l2.mean(axis=1), se]).tolist()
        series["balance_residual"] = np.column_stack(
            [res.times, res.mean, res.stderr, res.raw_mean, res.raw_stderr, res.scale]).tolist()
    if not em.usable:
        verdicts.append(Verdict("integration", 0.0, math.nan, math.nan, "finite", FAIL,
                                "stochastic integration", {"error": em.provenance.get("error")}))
    _write_measure_files(em, out)
    return verdicts, series, {"measure": em.provenance}


def _write_measure_files(em: ms.EmpiricalMeasure, out: Path) -> None:
    names = list(em.batch_values)
    with open(out / "batch_means.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["batch", "path", *names])
        nb, P = em.batch_values[names[0]].shape
        for b in range(nb):
            for p in range(P):
                w.writerow([b, p, *(repr(float(em.batch_values[n][b, p])) for n in names)])
    if em.reservoir:
        rdir = out / "reservoir"
        rdir.mkdir(exist_ok=True)
        for k, u in enumerate(em.reservoir):
            snapshot.save(u, rdir / f"snap_{k:05d}.imlb")


SWEEP_BOUNDED = (ms.ObservableSpec("clipped_norm", s=0.0, cap=1.0),
                 ms.ObservableSpec("cos_window", index=0, part="re", scale=1.0))


def run_sweep(cfg: RunConfig, out: Path):
    model, diss, noise = cfg.model(), cfg.diss(), cfg.noise()
    Ns = cfg["experiment.Ns"] or (cfg.N,)
    plan = ms.SweepPlan(model, diss, noise, tuple(cfg["experiment.alphas"]), tuple(Ns),
                        replace(cfg.budget(), reservoir=0), tuple(_observables(cfg)) + SWEEP_BOUNDED)
    res = ms.sweep(plan, cfg.integrator())
    verdicts, rows = [], []
    for a, N, em, err in res.points:
        if em is None or not em.usable:
            verdicts.append(Verdict(f"point[alpha={a},N={N}]", 0.0, math.nan, math.nan, "usable",
                                    FAIL, "sweep point", {"error": err}))
            continue
        v = ms.stationary_identity_check(em)
        v.check = f"stationary_identity[alpha={a},N={N}]"
        verdicts.append(v)
        rows.append([a, N, v.estimate, v.target, v.stderr, v.details["z"]])
    verdicts.extend(res.trends)
    return verdicts, {"identity_vs_alpha": rows}, {}


def run_ensemble(cfg: RunConfig, out: Path):
    model, diss, noise = cfg.model(), cfg.diss(), cfg.noise()
    icfg = cfg.integrator()
    e = cfg.values["ensemble"]
    em = ms.estimate_stationary(model, diss, noise, cfg["experiment.alpha"], cfg.budget(),
                                _observables(cfg), icfg)
    c_T = e["c_T"] if e["c_T"] is not None else ens.calibrate_c_T(model, cfg.N, icfg, seed=cfg["run.seed"])
    i_list = sorted(e["i_list"])
    spec = ens.EnsembleSpec(i=i_list[-1], r=e["r"], diss=diss, j_max=e["j_max"], c_T=c_T,
                            both_directions=e["both_directions"])
    hv = ens.ensemble_harvest(em, spec, model, i_list, icfg)
    ref = "orbit-controlled ensembles exhaust the measure as i grows"
    verdicts = []
    if hv.total == 0:
        verdicts.append(Verdict("ensemble_coverage", 0.9, math.nan, math.nan, ">=90%", INCONCLUSIVE,
                                ref, {"reason": "empty reservoir"}))
        return verdicts, {"complement_vs_i": []}, {"c_T": c_T}
    top = i_list[-1]
    cov = 1.0 - hv.complement[top]
    verdicts.append(Verdict(f"ensemble_coverage[i={top}]", 0.9, cov, 0.0, ">=90%",
                            PASS if cov >= 0.9 else FAIL, ref, {"total": hv.total, "c_T": c_T}))
    verdicts.append(Verdict("complement_nonincreasing", 0.0, 0.0, 0.0, "monotone in i",
                            PASS if hv.nonincreasing() else FAIL, ref,
                            {str(i): hv.complement[i] for i in i_list}))
    idx = hv.members[top]
    if idx:
        batch = em.reservoir[0].with_coeffs(np.stack([em.reservoir[k].coeffs for k in idx]))
        grid = np.linspace(0.0, math.exp(spec.j_max), 41)
        v = ens.slow_growth_check(batch, spec, model, grid, icfg, membership=_sub_membership(hv, top, idx))
        verdicts.append(v)
    rows = [[i, hv.complement[i], len(hv.members[i]), hv.total] for i in i_list]
    return verdicts, {"complement_vs_i": rows}, {"c_T": c_T, "measure": em.provenance}


def _sub_membership(hv, i, idx):
    m = hv.membership[i]
    sel = np.asarray(idx)
    return ens.MembershipResult(m.member[sel], [m.first_violation[k] for k in idx],
                                m.max_ratio[sel], m.diverged[sel])


def _verify_one(args):
    name, trials, seed = args
    return mdl.verify_structure(mdl.MODEL_NAMES[name](), trials=trials, seed=seed)


def run_verify(cfg: RunConfig, out: Path):
    names = list(cfg["verify.models"])
    reps = _pmap(_verify_one, [(n, cfg["verify.trials"], cfg["run.seed"]) for n in names])
    verdicts, rows = [], []
    for name, rep in zip(names, reps):
        for chk, val in rep.violations.items():
            rows.append([name, chk, val])
            verdicts.append(Verdict(f"{chk}[{name}]", 0.0, val, 0.0, f"<= {rep.tol:g} relative",
                                    PASS if val <= rep.tol else FAIL,
                                    "algebraic identities of the bilinear form",
                                    {"N": rep.N, "trials": rep.trials, "model": rep.model}))
    return verdicts, {"structure": rows}, {}


RUNNERS = {"simulate": run_simulate, "sweep": run_sweep, "ensemble": run_ensemble, "verify": run_verify}


# ---------------------------------------------------------------------------
# reports


def emit_plots_data(report: dict, out_dir, names=None) -> list[Path]:
    """Write one CSV per series; series absent from the report get a header-only file."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = list(SERIES) if names is None else list(names)
    paths = []
    for name in names:
        if name not in SERIES:
            raise KeyError(f"unknown series {name!r}; known: {', '.join(SERIES)}")
        rows = report.get("series", {}).get(name, [])
        p = out_dir / f"{name}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SERIES[name])
            for r in rows:
                w.writerow([repr(x) if isinstance(x, float) else x for x in r])
        paths.append(p)
    return paths


def exit_code(verdicts: list[dict], strict: bool = False) -> int:
    bad = {FAIL, INCONCLUSIVE} if strict else {FAIL}
    return 1 if any(v["status"] in bad for v in verdicts) else 0


def execute(cfg: RunConfig, out_dir, strict: bool = False) -> tuple[dict, int]:
    """Run the configured experiment, write report and data files, return (report, exit code)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    verdicts, series, extra = RUNNERS[cfg.kind](cfg, out)
    vd = [v.as_dict() for v in verdicts]
    report = {
        "kind": cfg.kind,
        "config_hash": config_hash(cfg),
        "config": ms._clean(cfg.values),
        "verdicts": vd,
        "series": ms._clean(series),
        "extra": ms._clean(extra),
        "provenance": {"package_version": __version__, "python": platform.python_version(),
                       "numpy": np.__version__, "scipy": scipy.__version__, "seed": cfg["run.seed"],
                       "workers": workers(), "started": started, "finished": _now()},
    }
    (out / "config.ini").write_text(serialize(cfg))
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    emit_plots_data(report, out)
    return report, exit_code(vd, strict)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="imlab", description="Invariant-measure experiments on Galerkin-truncated "
                                                         "conservative models.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp_):
        sp_.add_argument("--config", type=Path, help="INI configuration file")
        sp_.add_argument("--seed", type=int, help="override run.seed")
        sp_.add_argument("--out", type=Path, default=Path("imlab_out"), help="output directory")
        sp_.add_argument("--paths", type=int, help="override run.paths")
        sp_.add_argument("--strict", action="store_true", help="treat INCONCLUSIVE verdicts as failures")
        sp_.add_argument("--allow-singular", action="store_true", help="permit gSQG exponents above 1/2")

    for name in ("simulate", "sweep", "ensemble"):
        common(sub.add_parser(name, help=f"run a {name} experiment"))
    v = sub.add_parser("verify", help="randomized structure checks of the bilinear forms")
    v.add_argument("target", choices=["structure"])
    common(v)
    return p


def load_config(args) -> RunConfig:
    kind = args.command
    text = args.config.read_text() if args.config else ""
    if args.allow_singular and "allow_singular" not in text:
        text = _inject(text, "model", "allow_singular", "true")
    cfg = parse_config(text, kind=kind)
    over = {}
    if args.seed is not None:
        over["run.seed"] = args.seed
    if args.paths is not None:
        over["run.paths"] = args.paths
    return cfg.with_overrides(**over) if over else cfg


def _inject(text: str, section: str, key: str, value: str) -> str:
    header = f"[{section}]"
    if header in text:
        return text.replace(header, f"{header}\n{key} = {value}", 1)
    return text + f"\n{header}\n{key} = {value}\n"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read configuration: {exc}", file=sys.stderr)
        return 2
    report, code = execute(cfg, args.out, strict=args.strict)
    for v in report["verdicts"]:
        print(f"{v['status']:<13} {v['check']}  estimate={v['estimate']}  target={v['target']}")
    print(f"report: {Path(args.out) / 'report.json'}")
    return code


if __name__ == "__main__":
    sys.exit(main())
