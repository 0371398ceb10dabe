"""Command-line front end: ``analyze``, ``sweep``, ``simulate`` and ``verify``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .energetics import (BALANCE_KAPPA, EnergeticsError, balance_check, comparison_table,
                         distribution_factors, energy_report, identity_suite, write_distribution_csv,
                         write_report_csv, write_reports_json)
from .linmodel import (dump_matrices, finite_difference_jacobians, jacobian_fd_error,
                       jacobian_identities, linearize)
from .modal import eig_modes, phasors, select_em_modes, track, write_mode_table
from .ringdown import (EstimationError, SimulationError, estimate_mode, model_comparison,
                       parse_disturbance, simulate)
from .steady import (InitializationError, PowerFlowError, SweepPlan, equilibrium_residual,
                     operating_point, run_sweep, write_sweep_csv)
from .sysdata import SystemFileError, builtin_system_path, file_digest, load_system

log = logging.getLogger("oscenergy")

OUT_ENV = "OSCENERGY_OUT"
DEFAULT_OUT = "oscenergy_out"


class ConfigError(ValueError):
    pass


@dataclass
class Tolerances:
    identity: float = 1e-8
    balance: float = BALANCE_KAPPA   # multiples of zeta
    table: float = 0.10
    fd: float = 1e-6
    equilibrium: float = 1e-8

    def check(self) -> None:
        for k, v in asdict(self).items():
            if not v > 0:
                raise ConfigError(f"tolerance {k} must be positive, got {v}")


@dataclass
class RunConfig:
    command: str
    system: str
    model: str = "simplified"
    f_range: tuple[float, float] = (0.1, 3.0)
    zeta_max: float = 0.1
    exciter_set: str | None = None
    sweep: str | None = None
    disturbance: str | None = None
    out: str = DEFAULT_OUT
    tol: Tolerances = field(default_factory=Tolerances)
    seed: int = 20240101
    extra: dict = field(default_factory=dict)


@dataclass
class Step:
    name: str
    status: str
    residual: float | None = None
    threshold: float | None = None
    seconds: float = 0.0
    detail: str = ""


class RunManifest:
    """Per-run record of inputs, resolved config and check outcomes."""

    def __init__(self, cfg: RunConfig, system_path: Path):
        self.cfg = cfg
        self.system_path = system_path
        self.steps: list[Step] = []
        self.files: list[str] = []

    def add(self, name, status, residual=None, threshold=None, seconds=0.0, detail="") -> Step:
        st = Step(name, status, _f(residual), _f(threshold), round(float(seconds), 4), detail)
        self.steps.append(st)
        log.info("%-58s %-13s %s", name, status,
                 "" if residual is None else f"{residual:.3e} (<= {threshold:.3e})" if threshold else f"{residual:.4g}")
        return st

    @property
    def passed(self) -> bool:
        return all(s.status in ("PASS", "INFO") for s in self.steps)

    def to_dict(self) -> dict:
        cfg = asdict(self.cfg)
        cfg["f_range"] = list(self.cfg.f_range)
        return {
            "tool": "oscenergy", "version": __version__,
            "input": {"path": str(self.system_path), "sha256": file_digest(self.system_path)},
            "config": cfg,
            "summary": {"passed": self.passed, "n_checks": len(self.steps),
                        "n_failed": sum(s.status not in ("PASS", "INFO") for s in self.steps)},
            "steps": [asdict(s) for s in self.steps],
            "files": sorted(self.files),
        }

    def write(self, out: Path) -> Path:
        path = out / "manifest.json"
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
        # atomic replace so readers never see a partial manifest
        fd, tmp = tempfile.mkstemp(dir=out, prefix=".manifest-", suffix=".tmp")
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
        return path


def _f(v):
    if v is None:
        return None
    v = float(v)
    return v if np.isfinite(v) else None


# --------------------------------------------------------------------------- helpers

def resolve_system(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    try:
        q = builtin_system_path(p.name)
    except Exception:
        q = None
    if q is not None and q.exists():
        return q
    raise ConfigError(f"system file {arg!r} not found (built-ins: kundur_4mc, nyne_16mc)")


def parse_range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise ConfigError(f"expected lo:hi, got {text!r}") from None
    if not 0 <= lo < hi:
        raise ConfigError(f"range must satisfy 0 <= lo < hi, got {text!r}")
    return lo, hi


def parse_sweep(text: str, sending=None, receiving=None, tie=None) -> SweepPlan:
    """``tie:start:stop:n`` (MW) or ``load:start:stop:n`` (load scale)."""
    parts = text.split(":")
    if len(parts) != 4 or parts[0] not in ("tie", "load"):
        raise ConfigError(f"sweep must be tie:start:stop:n or load:start:stop:n, got {text!r}")
    try:
        a, b, n = float(parts[1]), float(parts[2]), int(parts[3])
    except ValueError:
        raise ConfigError(f"bad numbers in sweep {text!r}") from None
    if n < 1:
        raise ConfigError("sweep needs at least one point")
    values = tuple(np.linspace(a, b, n)) if n > 1 else (a,)
    try:
        if parts[0] == "load":
            return SweepPlan("uniform_load", values)
        if not (sending and receiving and tie):
            raise ConfigError("tie sweeps need --sending, --receiving and --tie")
        return SweepPlan("tie_flow", values, tuple(sending), tuple(receiving), tuple(tie))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _join_sweep(parts):
    return ":".join(parts) if parts else None


def _ints(text: str | None):
    return None if not text else [int(v) for v in text.split(",")]


def output_dir(arg: str | None) -> Path:
    out = Path(arg or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _select(lm, cfg: RunConfig):
    modes = eig_modes(lm.A)
    sel = select_em_modes(modes, lm.ng, cfg.f_range, cfg.zeta_max)
    return modes, sel


def _mode_checks(lm, modes, names, cfg: RunConfig, man: RunManifest, prefix: str,
                 normalization: str = "unit", torque: str = "transfer"):
    """Energy report, balance and (simplified) distribution checks for each mode."""
    reports, dms = [], []
    for m in modes:
        t0 = time.perf_counter()
        ps = phasors(m, lm.ng, normalization, reference=0 if normalization == "reference" else None)
        rep, _ = energy_report(lm, m, ps, names, torque=torque)
        bal = balance_check(rep, cfg.tol.balance)
        man.add(f"{prefix}balance {m.f_Hz:.3f} Hz", bal.status, bal.residual, bal.threshold,
                time.perf_counter() - t0)
        reports.append(rep)
        if lm.kind == "simplified":
            dm = distribution_factors(lm, m, ps, machines=names)
            man.add(f"{prefix}distribution row identity {m.f_Hz:.3f} Hz",
                    "PASS" if dm.row_identity_error <= 1e-6 else "FAIL", dm.row_identity_error, 1e-6)
            dms.append((m, dm))
    return reports, dms


# --------------------------------------------------------------------------- commands

def cmd_analyze(cfg: RunConfig, spec, path: Path, out: Path, man: RunManifest) -> None:
    t0 = time.perf_counter()
    op = operating_point(spec, label="nominal")
    rf, rg = equilibrium_residual(spec, op, cfg.model)
    r = max(rf, rg)
    man.add("equilibrium residual", "PASS" if r <= cfg.tol.equilibrium else "FAIL", r,
            cfg.tol.equilibrium, time.perf_counter() - t0)
    t0 = time.perf_counter()
    lm = linearize(spec, op, cfg.model, label="nominal")
    man.add("linearization", "PASS", seconds=time.perf_counter() - t0, detail=f"{lm.nx} states")
    if cfg.extra.get("dump_matrices"):
        mdir = dump_matrices(lm, out / "matrices")
        man.files.append(str(mdir.relative_to(out)))
    names = [m.name for m in spec.machines]
    modes, sel = _select(lm, cfg)
    write_mode_table(modes, lm.ng, names, out / "modes_all.csv")
    write_mode_table(sel.modes, lm.ng, names, out / "modes.csv")
    man.files += ["modes_all.csv", "modes.csv"]
    if not sel.modes:
        man.add("mode selection", "FAIL", detail=sel.diagnostic)
        return
    man.add("mode selection", "PASS", len(sel.modes),
            detail="; ".join(m.describe() for m in sel.modes))
    reports, dms = _mode_checks(lm, sel.modes, names, cfg, man, "",
                                cfg.extra.get("normalization", "unit"), cfg.extra.get("torque", "transfer"))
    write_report_csv(reports, out / "energy_report.csv")
    write_reports_json(reports, out / "energy_report.json")
    man.files += ["energy_report.csv", "energy_report.json"]
    for k, (m, dm) in enumerate(dms):
        fn = f"distribution_mode{k + 1}.csv"
        write_distribution_csv(dm, out / fn, f"{m.f_Hz:.4f} Hz")
        man.files.append(fn)
    _write_balance_summary(reports, cfg, out / "balance_summary.csv")
    man.files.append("balance_summary.csv")


def _write_balance_summary(reports, cfg, path: Path, x=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(([] if x is None else ["x"]) + ["mode", "f_Hz", "zeta", "Wd_total", "Wdiss_total",
                                                     "residual", "threshold", "status"])
        for r in reports:
            b = balance_check(r, cfg.tol.balance)
            w.writerow(([] if x is None else [f"{x:.10g}"]) +
                       [r.mode_label, f"{r.f_Hz:.8g}", f"{r.zeta:.8g}", f"{r.Wd_total:.10g}",
                        f"{r.Wdiss_total:.10g}", f"{b.residual:.6e}", f"{b.threshold:.6e}", b.status])


def _sweep_point(spec_pt, op, cfg: RunConfig, names):
    lm = linearize(spec_pt, op, cfg.model, label=op.label)
    modes, sel = _select(lm, cfg)
    return lm, modes, sel


def cmd_sweep(cfg: RunConfig, spec, path: Path, out: Path, man: RunManifest) -> None:
    plan = parse_sweep(cfg.sweep, cfg.extra.get("sending"), cfg.extra.get("receiving"), cfg.extra.get("tie"))
    t0 = time.perf_counter()
    points = run_sweep(spec, plan)
    write_sweep_csv(points, out / "sweep_points.csv")
    man.files.append("sweep_points.csv")
    man.add("sweep power flows", "PASS" if all(p.ok for p in points) else "FAIL",
            sum(not p.ok for p in points), seconds=time.perf_counter() - t0,
            detail=f"{len(points)} points")
    names = [m.name for m in spec.machines]
    ok = [p for p in points if p.ok]
    workers = max(1, int(cfg.extra.get("workers", 1)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        lin = list(pool.map(lambda p: _sweep_point(p.spec, p.op, cfg, names), ok))
    pdir = out / "points"
    pdir.mkdir(exist_ok=True)
    balance_rows, ratio_rows, dist_rows = [], [], []
    tracked = None
    target = cfg.extra.get("track_freq")
    for k, (p, (lm, modes, sel)) in enumerate(zip(ok, lin)):
        tag = f"point{k:03d}"
        reports, dms = _mode_checks(lm, sel.modes, names, cfg, man, f"[{plan.kind}={p.value:g}] ")
        # follow one mode through the sweep by shape, not by frequency order
        if tracked is None:
            cands = sel.modes or modes
            if target is not None:
                tracked = min(cands, key=lambda m: abs(m.f_Hz - target)) if cands else None
            else:
                tracked = cands[0] if cands else None
        else:
            tracked = track(tracked, modes, lm.ng)
        if not sel.modes:
            man.add(f"[{plan.kind}={p.value:g}] mode selection", "FAIL", detail=sel.diagnostic)
        write_report_csv(reports, pdir / f"{tag}_energy_report.csv")
        write_mode_table(sel.modes, lm.ng, names, pdir / f"{tag}_modes.csv")
        for r in reports:
            b = balance_check(r, cfg.tol.balance)
            balance_rows.append([p.value, p.tie_flow, r.f_Hz, r.zeta, r.Wd_total, r.Wdiss_total,
                                 b.residual, b.threshold, b.status])
        if tracked is None:
            continue
        ps = phasors(tracked, lm.ng)
        rep, _ = energy_report(lm, tracked, ps, names)
        ratio_rows.append([p.value, p.tie_flow, tracked.f_Hz, tracked.zeta,
                           *((rep.Wf + rep.Wg) / rep.Wd), rep.Wd_total, rep.Wdiss_total])
        if lm.kind == "simplified":
            dm = distribution_factors(lm, tracked, ps, machines=names)
            dist_rows.append([p.value, tracked.f_Hz, *dm.fractions.ravel(), *dm.column_sums])
    _write_rows(out / "plot_balance.csv",
                ["x", "tie_flow_MW", "f_Hz", "zeta", "Wd_total", "Wdiss_total", "residual", "threshold", "status"],
                balance_rows)
    _write_rows(out / "plot_ratios.csv",
                ["x", "tie_flow_MW", "f_Hz", "zeta", *(f"Wf_over_Wd[{n}]" for n in names), "Wd_total", "Wdiss_total"],
                ratio_rows)
    files = ["plot_balance.csv", "plot_ratios.csv"]
    if dist_rows:
        hdr = ["x", "f_Hz"] + [f"F[{a},{b}]" for a in names for b in names] + [f"alpha_colsum[{n}]" for n in names]
        _write_rows(out / "plot_distribution.csv", hdr, dist_rows)
        files.append("plot_distribution.csv")
    xlabel = "tie flow (MW)" if plan.kind == "tie_flow" else "load scale"
    plot_manifest = {
        "plot_balance.csv": {"x": "x", "x_label": xlabel, "series": ["Wd_total", "Wdiss_total"],
                             "group_by": "f_Hz", "note": "every selected mode at every point"},
        "plot_ratios.csv": {"x": "x", "x_label": xlabel, "series": [f"Wf_over_Wd[{n}]" for n in names],
                            "note": "tracked mode"},
    }
    if dist_rows:
        plot_manifest["plot_distribution.csv"] = {"x": "x", "x_label": xlabel,
                                                  "series": "F[i,j] rows and alpha column sums",
                                                  "note": "tracked mode, simplified model"}
    (out / "plot_manifest.json").write_text(json.dumps(plot_manifest, indent=2, sort_keys=True) + "\n")
    man.files += files + ["plot_manifest.json", "points/"]


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([v if isinstance(v, str) else f"{v:.10g}" for v in r])


def cmd_simulate(cfg: RunConfig, spec, path: Path, out: Path, man: RunManifest) -> None:
    if not cfg.disturbance:
        raise ConfigError("simulate needs --disturbance")
    try:
        dist = parse_disturbance(cfg.disturbance).resolved(spec.f_base)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    x = cfg.extra
    op = operating_point(spec, label="nominal")
    lm = linearize(spec, op, cfg.model)
    names = [m.name for m in spec.machines]
    modes, sel = _select(lm, cfg)
    f_guess = x.get("f_guess") or (sel.modes[0].f_Hz if sel.modes else None)
    if f_guess is None:
        raise ConfigError("no selected mode to estimate; pass --f-guess")
    t0 = time.perf_counter()
    try:
        tr = simulate(spec, op, dist, x.get("t_end", 20.0), x.get("dt", 0.01), kind=cfg.model)
    except SimulationError as exc:
        man.add("simulation", "FAIL", detail=str(exc), seconds=time.perf_counter() - t0)
        return
    man.add("simulation", "PASS", tr.stats["max_residual"], 1e-8, time.perf_counter() - t0,
            detail=f"{tr.stats['steps']} steps")
    tr.to_csv(out / "trajectory.csv")
    tr.save(out / "trajectory")
    man.files += ["trajectory.csv", "trajectory.npz", "trajectory.json"]
    ref_name = x.get("reference") or names[0]
    if ref_name not in names:
        raise ConfigError(f"reference machine {ref_name!r} not in system")
    w_start = dist.t_end + 0.5 if dist.kind != "none" else 0.0
    window = x.get("window") or (w_start, tr.t[-1])
    sigs = tr.signals(x.get("torque_source", "derivative"))
    t0 = time.perf_counter()
    try:
        est = estimate_mode(tr.t, sigs, f_guess, f"omega[{ref_name}]", window)
    except EstimationError as exc:
        man.add("mode estimation", "FAIL", detail=str(exc), seconds=time.perf_counter() - t0)
        return
    est.write_csv(out / "mode_estimate.csv")
    man.files.append("mode_estimate.csv")
    nearest = min(modes, key=lambda m: abs(m.lam - est.lam))
    err = abs(est.lam - nearest.lam) / abs(nearest.lam)
    man.add("mode estimate vs small-signal", "PASS" if err <= cfg.tol.table else "FAIL", err, cfg.tol.table,
            time.perf_counter() - t0, detail=f"estimated {est.lam:.4f}, model {nearest.describe()}")
    small, meas = model_comparison(est, lm, nearest, names, names.index(ref_name),
                                   torque=[f"Te[{n}]" for n in names],
                                   efd=[f"Efd[{n}]" for n in names] if cfg.model == "detailed" else None,
                                   torque_model=x.get("measured_torque", "measured"))
    write_report_csv([small, meas], out / "energy_comparison_long.csv")
    rows = comparison_table(small, meas)
    _write_rows(out / "energy_comparison.csv", list(rows[0]), [list(r.values()) for r in rows])
    man.files += ["energy_comparison.csv", "energy_comparison_long.csv"]
    mb = balance_check(meas, cfg.tol.balance)
    man.add("measured balance", mb.status, mb.residual, mb.threshold)


def cmd_verify(cfg: RunConfig, spec, path: Path, out: Path, man: RunManifest) -> None:
    if cfg.model != "simplified":
        raise ConfigError("verify covers the simplified model only: the structural claims are not "
                          "established once exciters or damper windings are added")
    r_inj = cfg.extra.get("inject_resistance")
    if r_inj:
        spec = spec.with_branch_resistance(r_inj, relative=True)
        man.add("negative control", "INFO", r_inj, detail="branch r = value * x injected; failures expected")
    specs = [("nominal", spec)]
    if cfg.sweep:
        plan = parse_sweep(cfg.sweep, cfg.extra.get("sending"), cfg.extra.get("receiving"), cfg.extra.get("tie"))
        pts = run_sweep(spec, plan)
        for p in pts:
            if not p.ok:
                man.add(f"[{plan.kind}={p.value:g}] power flow", "FAIL", detail=p.error)
        specs += [(f"{plan.kind}={p.value:g}", p) for p in pts if p.ok]
    names = [m.name for m in spec.machines]
    rows = []
    for label, item in specs:
        if label == "nominal":
            sp, op = item, operating_point(item, label="nominal")
        else:
            sp, op = item.spec, item.op
        t0 = time.perf_counter()
        lm = linearize(sp, op, "simplified", label=label)
        for k, v in jacobian_identities(lm).items():
            thr = cfg.tol.identity
            man.add(f"[{label}] {k}", "PASS" if v <= thr else "FAIL", v, thr)
            rows.append([label, "", k, v, thr])
        if cfg.extra.get("fd"):
            an = (lm.M, lm.N, lm.C, lm.D)
            num = finite_difference_jacobians(sp, op, "simplified")
            for nm, a, b in zip("MNCD", an, num):
                e = jacobian_fd_error(a, b)
                man.add(f"[{label}] finite-difference {nm}", "PASS" if e <= cfg.tol.fd else "FAIL", e, cfg.tol.fd)
                rows.append([label, "", f"finite-difference {nm}", e, cfg.tol.fd])
        modes, sel = _select(lm, cfg)
        if not sel.modes:
            man.add(f"[{label}] mode selection", "FAIL", detail=sel.diagnostic)
        for m in sel.modes:
            res = identity_suite(lm, m, phasors(m, lm.ng), seed=cfg.seed)
            for k, v in res.items():
                thr = 1e-6 if k == "distribution row identity" else cfg.tol.identity
                man.add(f"[{label}] {m.f_Hz:.3f} Hz {k}", "PASS" if v <= thr else "FAIL", v, thr)
                rows.append([label, f"{m.f_Hz:.6f}", k, v, thr])
            rep, _ = energy_report(lm, m, phasors(m, lm.ng), names)
            bal = balance_check(rep, cfg.tol.balance)
            man.add(f"[{label}] {m.f_Hz:.3f} Hz balance", bal.status, bal.residual, bal.threshold)
            rows.append([label, f"{m.f_Hz:.6f}", "balance", bal.residual, bal.threshold])
        log.debug("%s verified in %.2fs", label, time.perf_counter() - t0)
    with open(out / "identities.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["point", "mode_f_Hz", "check", "residual", "threshold", "status"])
        for lab, f, k, v, thr in rows:
            w.writerow([lab, f, k, f"{v:.6e}", f"{thr:.1e}", "PASS" if v <= thr else "FAIL"])
    man.files.append("identities.csv")


COMMANDS = {"analyze": cmd_analyze, "sweep": cmd_sweep, "simulate": cmd_simulate, "verify": cmd_verify}


# --------------------------------------------------------------------------- argument parsing

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oscenergy", description=__doc__)
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("system", help="system JSON file or built-in name (kundur_4mc, nyne_16mc)")
    common.add_argument("--model", choices=["simplified", "detailed"], default="simplified")
    common.add_argument("--exciter-set", help="alternative exciter set named in the system file")
    common.add_argument("--mode-freq", default="0.1:3", help="mode frequency band lo:hi in Hz")
    common.add_argument("--zeta-max", type=float, default=0.1)
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
    common.add_argument("--seed", type=int, default=20240101)
    common.add_argument("--tol-identity", type=float, default=1e-8)
    common.add_argument("--tol-balance", type=float, default=BALANCE_KAPPA,
                        help="balance threshold in multiples of the mode's damping ratio")
    common.add_argument("--tol-table", type=float, default=0.10)
    common.add_argument("--tol-fd", type=float, default=1e-6)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="count", default=0)
    sweepopts = argparse.ArgumentParser(add_help=False)
    sweepopts.add_argument("--sending", help="sending-area machine buses for tie sweeps, e.g. 1,2")
    sweepopts.add_argument("--receiving", help="receiving-area machine buses, e.g. 3,4")
    sweepopts.add_argument("--tie", help="tie branch as from,to bus ids, e.g. 7,8")

    a = sub.add_parser("analyze", parents=[common], help="modes, energy reports and distribution factors")
    a.add_argument("--dump-matrices", action="store_true")
    a.add_argument("--normalization", choices=["unit", "reference"], default="unit")
    a.add_argument("--torque", choices=["transfer", "eigen"], default="transfer")

    s = sub.add_parser("sweep", parents=[common, sweepopts], help="reports across operating points")
    s.add_argument("--sweep", required=True, nargs="+", metavar="SPEC",
                   help="tie:start:stop:n (MW) or load:start:stop:n; 'load 0.9:1.1:5' also accepted")
    s.add_argument("--track-freq", type=float, help="frequency (Hz) of the mode to follow")

    m = sub.add_parser("simulate", parents=[common], help="nonlinear ringdown and measured energetics")
    m.add_argument("--disturbance", required=True,
                   help="fault:BUS[:t[:dur[:B]]] or pulse:all|i,j[:t[:dur[:mag]]]")
    m.add_argument("--t-end", type=float, default=20.0)
    m.add_argument("--dt", type=float, default=0.01)
    m.add_argument("--f-guess", type=float)
    m.add_argument("--reference", help="reference machine name (default: first machine)")
    m.add_argument("--window", help="analysis window t0:t1 in seconds")
    m.add_argument("--measured-torque", choices=["measured", "transfer"], default="measured")

    v = sub.add_parser("verify", parents=[common, sweepopts], help="structural identity suite")
    v.add_argument("--sweep", nargs="+", metavar="SPEC", help="tie:start:stop:n or load:start:stop:n")
    v.add_argument("--inject-resistance", type=float, default=0.0,
                   help="set every branch resistance to this fraction of its reactance (negative control)")
    v.add_argument("--fd", action="store_true", help="also compare Jacobians with finite differences")
    return ap


def config_from_args(args) -> RunConfig:
    tol = Tolerances(identity=args.tol_identity, balance=args.tol_balance, table=args.tol_table, fd=args.tol_fd)
    tol.check()
    if not args.zeta_max > 0:
        raise ConfigError("--zeta-max must be positive")
    extra = {"workers": args.workers}
    for key in ("dump_matrices", "normalization", "torque", "track_freq", "t_end", "dt", "f_guess",
                "reference", "measured_torque", "inject_resistance", "fd"):
        if hasattr(args, key) and getattr(args, key) is not None:
            extra[key] = getattr(args, key)
    for key in ("sending", "receiving", "tie"):
        if getattr(args, key, None):
            extra[key] = _ints(getattr(args, key))
    if getattr(args, "window", None):
        extra["window"] = parse_range(args.window)
    return RunConfig(command=args.command, system=args.system, model=args.model,
                     f_range=parse_range(args.mode_freq), zeta_max=args.zeta_max,
                     exciter_set=args.exciter_set, sweep=_join_sweep(getattr(args, "sweep", None)),
                     disturbance=getattr(args, "disturbance", None), out=str(output_dir(args.out)),
                     tol=tol, seed=args.seed, extra=extra)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        path = resolve_system(cfg.system)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    man = RunManifest(cfg, path)
    code = 0
    try:
        spec = load_system(path)
        if cfg.exciter_set:
            spec = spec.with_exciter_set(cfg.exciter_set)
        COMMANDS[cfg.command](cfg, spec, path, out, man)
        code = 0 if man.passed else 1
    except ConfigError as exc:
        man.add("config", "ERROR", detail=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        code = 2
    except (SystemFileError, KeyError) as exc:
        man.add("system file", "ERROR", detail=str(exc))
        print(f"error: {exc}", file=sys.stderr)
        code = 2
    except (PowerFlowError, InitializationError, EnergeticsError, SimulationError, EstimationError,
            np.linalg.LinAlgError, RuntimeError) as exc:
        man.add(type(exc).__name__, "ERROR", detail=str(exc))
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = 1
    man.write(out)
    failed = [s for s in man.steps if s.status not in ("PASS", "INFO")]
    print(f"{cfg.command}: {len(man.steps) - len(failed)}/{len(man.steps)} checks passed; "
          f"outputs in {out}")
    for s in failed:
        extra = f" residual {s.residual:.3e} > {s.threshold:.3e}" if s.residual is not None and s.threshold else ""
        print(f"  {s.status}: {s.name}{extra} {s.detail}".rstrip())
    return code


if __name__ == "__main__":
    sys.exit(main())
