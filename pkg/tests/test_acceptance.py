"""Acceptance criteria 1-10.

Every test prints one line ``CRITERION n: PASS|FAIL  <detail>`` and asserts the same
verdict. Tolerances are fixed here and are never loosened to make a criterion pass.
Run standalone with ``python tests/test_acceptance.py`` for the summary lines only.
"""

from __future__ import annotations

import functools
import logging
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oscenergy.energetics import (balance_check, cycle_average_oracle, damping_powers,
                                  distribution_factors, energy_report, torque_transfer,
                                  total_damping_closed, total_damping_direct, verify_claims)
from oscenergy.linmodel import (finite_difference_jacobians, jacobian_fd_error, jacobian_identities,
                                linearize)
from oscenergy.modal import PhasorSet, eig_modes, phasors, select_em_modes
from oscenergy.ringdown import (Disturbance, estimate_mode, model_comparison, simulate,
                                synthetic_ringdown)
from oscenergy.steady import operating_point, run_sweep, standard_sweep
from oscenergy.sysdata import load_builtin

SYSTEMS = ("kundur_4mc", "nyne_16mc")

TOL_IDENTITY = 1e-8
TOL_D_SYM = 1e-12
BALANCE_KAPPA = 3.0
FRACTION_TOL = 1e-6
COLUMN_KAPPA = 5.0
RATIO_DEVIATION = 0.05
FREQ_4MC = (0.69, 1.00, 1.04)
ZETA_4MC = (0.027, 0.023, 0.024)
FREQ_16MC = (0.34, 0.50, 0.60, 0.65)
TABLE2_SHARES = (0.23, 0.19, 0.26, 0.31)
TABLE2_SIGNS = (1, -1, 1, 1)
TABLE6_RATIOS = {"G14": 1.31, "G16": 0.83}
TABLE_TOL = 0.20
CLOSURE_EXACT = 1e-6
CLOSURE_ENERGY = 0.01
RINGDOWN_TOL = 0.15
ORACLE_KAPPA = 3.0
ORACLE_EXACT = 1e-10
NEG_RESISTANCE = 0.01      # branch resistance as a fraction of reactance
NEG_CLAIM = 1e-3
NEG_BALANCE_KAPPA = 10.0
TOL_FD = 1e-6

LINES: list[str] = []


def emit(capsys, n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    LINES.append(line)
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)


# --------------------------------------------------------------------------- shared data

@functools.lru_cache(maxsize=None)
def nominal(name):
    spec = load_builtin(name)
    return spec, operating_point(spec, label="nominal")


@functools.lru_cache(maxsize=None)
def sweep_points(name):
    spec, _ = nominal(name)
    return run_sweep(spec, standard_sweep(name))


@functools.lru_cache(maxsize=None)
def models(name, kind):
    """Nominal model followed by one model per sweep point (label, model, selected modes)."""
    spec, op = nominal(name)
    out = []
    pts = [("nominal", spec, op)] + [(f"{p.value:g}", p.spec, p.op) for p in sweep_points(name)]
    for label, sp, o in pts:
        lm = linearize(sp, o, kind, label=label)
        out.append((label, lm, select_em_modes(eig_modes(lm.A), lm.ng).modes))
    return out


def names_of(name):
    return [m.name for m in nominal(name)[0].machines]


def report(lm, m, names):
    return energy_report(lm, m, phasors(m, lm.ng), names)[0]


# --------------------------------------------------------------------------- criteria

def criterion_1():
    worst = {"claims": 0.0, "D": 0.0, "K": 0.0, "closed": 0.0}
    times, counts = {}, {}
    for name in SYSTEMS:
        t0 = time.perf_counter()
        models.cache_clear()
        sweep_points.cache_clear()
        nominal.cache_clear()
        n = 0
        for _, lm, modes in models(name, "simplified"):
            worst["D"] = max(worst["D"], jacobian_identities(lm)["D symmetric"])
            for m in modes:
                worst["claims"] = max(worst["claims"], *verify_claims(lm, m.omega_d).residuals.values())
                tt = torque_transfer(lm, m.omega_d)
                worst["K"] = max(worst["K"], tt.symmetry_error)
                ps = phasors(m, lm.ng)
                d = total_damping_direct(tt, ps)
                worst["closed"] = max(worst["closed"], abs(total_damping_closed(lm, ps) - d) / abs(d))
                n += 1
        times[name] = time.perf_counter() - t0
        counts[name] = n
    ok = (worst["claims"] <= TOL_IDENTITY and worst["D"] <= TOL_D_SYM and worst["K"] <= TOL_IDENTITY
          and worst["closed"] <= TOL_IDENTITY and all(t < 5.0 for t in times.values()))
    detail = (f"claims {worst['claims']:.1e}, D-sym {worst['D']:.1e}, K-sym {worst['K']:.1e}, "
              f"closed-form {worst['closed']:.1e} over {counts} mode-points; "
              + ", ".join(f"{k} {v:.2f}s" for k, v in times.items()))
    return ok, detail


def criterion_2():
    t0 = time.perf_counter()
    parts, ok = [], True
    for name in SYSTEMS:
        names = names_of(name)
        for kind in ("simplified", "detailed"):
            total = failed = 0
            worst = 0.0
            for _, lm, modes in models(name, kind):
                for m in modes:
                    b = balance_check(report(lm, m, names), BALANCE_KAPPA)
                    total += 1
                    worst = max(worst, b.residual / abs(m.zeta))
                    failed += b.status != "PASS"
            npts = len(models(name, kind))
            ok &= failed == 0 and total > 0
            parts.append(f"{name}/{kind}: {total - failed}/{total} pass over {npts} points "
                         f"(worst {worst:.2f} zeta)")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 120.0 and len(sweep_points("kundur_4mc")) >= 20 and len(sweep_points("nyne_16mc")) >= 10
    return ok, "; ".join(parts) + f"; {elapsed:.1f}s"


def criterion_3():
    parts, ok = [], True
    for name in SYSTEMS:
        names = names_of(name)
        bad = []
        for label, lm, modes in models(name, "simplified")[1:]:
            passing = [m for m in modes if balance_check(report(lm, m, names), BALANCE_KAPPA).status == "PASS"]
            if not passing:
                bad.append(f"{label}(no balanced mode)")
            for m in passing:
                r = report(lm, m, names)
                dev = np.max(np.abs((r.Wf + r.Wg) / r.Wd - 1.0))
                if not dev > RATIO_DEVIATION:
                    bad.append(f"{label}@{m.f_Hz:.2f}Hz")
        ok &= not bad
        parts.append(f"{name}: {len(models(name, 'simplified')) - 1} points, "
                     + ("every balanced mode has a machine off by > 5%" if not bad else f"violations {bad[:4]}"))
    return ok, "; ".join(parts)


def criterion_4():
    worst_row = worst_frac = 0.0
    col_total = col_bad = 0
    worst_col = 0.0
    for name in SYSTEMS:
        for _, lm, modes in models(name, "simplified"):
            for m in modes:
                dm = distribution_factors(lm, m, phasors(m, lm.ng))
                worst_row = max(worst_row, dm.row_identity_error)
                worst_frac = max(worst_frac, dm.row_sum_error)
                dev = np.abs(dm.column_sums - 1.0) / abs(m.zeta)
                worst_col = max(worst_col, float(dev.max()))
                col_total += dev.size
                col_bad += int(np.sum(dev > COLUMN_KAPPA))
    ok = worst_row <= FRACTION_TOL and worst_frac <= FRACTION_TOL and col_bad == 0
    return ok, (f"row identity {worst_row:.1e}, fraction row sums {worst_frac:.1e}; column sums "
                f"{col_total - col_bad}/{col_total} within 5 zeta (worst {worst_col:.1f} zeta)")


def criterion_5():
    _, lm4, m4 = models("kundur_4mc", "simplified")[0]
    _, lm16, m16 = models("nyne_16mc", "simplified")[0]
    ok4 = len(m4) == 3
    got4 = []
    for f, z in zip(FREQ_4MC, ZETA_4MC):
        m = min(m4, key=lambda m: abs(m.f_Hz - f))
        good = abs(m.f_Hz - f) <= 0.05 * f and abs(m.zeta - z) <= 0.01
        ok4 &= good
        got4.append(f"{f}->{m.f_Hz:.3f}Hz/{m.zeta:.3f}{'' if good else '*'}")
    ok16 = len(m16) >= 4
    got16 = []
    for f in FREQ_16MC:
        m = min(m16, key=lambda m: abs(m.f_Hz - f))
        good = abs(m.f_Hz - f) <= 0.07 * f
        ok16 &= good
        got16.append(f"{f}->{m.f_Hz:.3f}{'' if good else '*'}")
    return ok4 and ok16, (f"4mc {len(m4)} modes selected [{', '.join(got4)}]; "
                          f"16mc [{', '.join(got16)}] (* = outside tolerance)")


def criterion_6():
    _, lm, modes = models("kundur_4mc", "detailed")[0]
    m = min(modes, key=lambda m: m.zeta)
    r = report(lm, m, names_of("kundur_4mc"))
    shares = np.abs(r.Wd / r.Wd_total)
    signs = tuple(int(np.sign(v)) for v in r.Wf)
    ok_a = signs == TABLE2_SIGNS and bool(np.all(np.abs(shares - TABLE2_SHARES) <= TABLE_TOL * np.array(TABLE2_SHARES)))
    _, lm16, modes16 = models("nyne_16mc", "simplified")[0]
    m16 = min(modes16, key=lambda m: abs(m.f_Hz - 0.5))
    names16 = names_of("nyne_16mc")
    r16 = report(lm16, m16, names16)
    ratios = {g: r16.Wd[names16.index(g)] / r16.Wf[names16.index(g)] for g in TABLE6_RATIOS}
    ok_b = all(abs(ratios[g] - v) <= TABLE_TOL * v for g, v in TABLE6_RATIOS.items())
    return ok_a and ok_b, (f"4mc detailed {m.f_Hz:.3f} Hz: Wf signs {signs}, |Wd share| "
                           f"{np.round(shares, 3).tolist()}; 16mc simplified {m16.f_Hz:.3f} Hz Wd/Wf "
                           + ", ".join(f"{g} {v:.2f}" for g, v in ratios.items()))


def _closure(name, kind):
    _, lm, modes = models(name, kind)[0]
    names = names_of(name)
    m = min(modes, key=lambda m: m.zeta)
    ps = phasors(m, lm.ng)
    sn = list(lm.state_names)
    t = np.arange(0.0, 20.0, 0.01)
    sig = synthetic_ringdown(ps, t, sn, H=np.diag(lm.Hmat), omega_s=lm.omega_s)
    est = estimate_mode(t, sig, m.f_Hz, sn[lm.ng], order=4)
    lam_err = abs(est.lam - m.lam) / abs(m.lam)
    amps = np.array([est.amplitude(n) for n in sn])
    shape_err = float(np.max(np.abs(amps - ps.x)) / np.max(np.abs(ps.x)))
    efd = lm.Efd_map @ amps if kind == "detailed" else None
    small, meas = model_comparison(est, lm, m, names, 0, torque=[f"Te[{i}]" for i in range(lm.ng)],
                                   efd_phasors=efd)
    e_wd = float(np.max(np.abs(meas.Wd - small.Wd)) / np.max(np.abs(small.Wd)))
    e_wf = float(np.max(np.abs(meas.Wf - small.Wf)) / np.max(np.abs(small.Wf)))
    return lam_err, shape_err, e_wd, e_wf


def _ringdown(name, dist, t_end, ref, window_pad=0.5):
    spec, op = nominal(name)
    lm = models(name, "detailed")[0][1]
    names = names_of(name)
    modes = eig_modes(lm.A)
    tr = simulate(spec, op, dist, t_end, 0.01, kind="detailed")
    return tr, lm, names, modes, (dist.t_end + window_pad, t_end)


def criterion_7():
    t0 = time.perf_counter()
    worst_exact, worst_energy = 0.0, 0.0
    parts = []
    for name, kind in (("kundur_4mc", "detailed"), ("nyne_16mc", "simplified")):
        lam_err, shape_err, e_wd, e_wf = _closure(name, kind)
        worst_exact = max(worst_exact, lam_err, shape_err)
        worst_energy = max(worst_energy, e_wd, e_wf)
        parts.append(f"synthetic {name}/{kind}: lambda {lam_err:.1e}, shapes {shape_err:.1e}, "
                     f"Wd {e_wd:.1%}, Wf {e_wf:.1%}")
    ok = worst_exact <= CLOSURE_EXACT and worst_energy <= CLOSURE_ENERGY

    # fault near bus 8 on the detailed 4-machine model, G1 speed as reference
    fault = Disturbance("bus_fault", 8, 1.0).resolved(60.0)
    tr, lm, names, modes, win = _ringdown("kundur_4mc", fault, 20.0, 0)
    target = min(models("kundur_4mc", "detailed")[0][2], key=lambda m: m.zeta)
    sig = tr.signals()
    est = estimate_mode(tr.t, sig, target.f_Hz, f"omega[{names[0]}]", win)
    small, meas = model_comparison(est, lm, target, names, 0, torque=[f"Te[{n}]" for n in names],
                                   efd=[f"Efd[{n}]" for n in names])
    dev4 = max(float(np.max(np.abs(meas.Wd - small.Wd) / np.abs(small.Wd))),
               float(np.max(np.abs(meas.Wf - small.Wf) / np.abs(small.Wf))))
    bal4 = meas.balance_residual
    ok &= dev4 <= RINGDOWN_TOL and bal4 <= RINGDOWN_TOL
    parts.append(f"4mc fault: lambda {abs(est.lam - target.lam) / abs(target.lam):.1%} off, "
                 f"per-machine dev {dev4:.0%}, measured balance {bal4:.0%}")

    # 0.2 s pulse on every exciter input of the detailed 16-machine model, G9 reference
    pulse = Disturbance("exciter_pulse", "all", 1.0, 0.2).resolved(60.0)
    tr, lm, names, modes, win = _ringdown("nyne_16mc", pulse, 30.0, 8)
    target = min(models("nyne_16mc", "detailed")[0][2], key=lambda m: abs(m.f_Hz - 0.6))
    est = estimate_mode(tr.t, tr.signals(), target.f_Hz, "omega[G9]", win)
    k9 = names.index("G9")
    small, meas = model_comparison(est, lm, target, names, k9, torque=[f"Te[{n}]" for n in names],
                                   efd=[f"Efd[{n}]" for n in names])
    sel = [names.index(g) for g in ("G3", "G5", "G6", "G9", "G11")]
    dev16 = max(abs(meas.Wd[k9] - small.Wd[k9]) / abs(small.Wd[k9]),
                float(np.max(np.abs(meas.Wf[sel] - small.Wf[sel]) / np.abs(small.Wf[sel]))))
    bal16 = meas.balance_residual
    ok &= dev16 <= RINGDOWN_TOL and bal16 <= RINGDOWN_TOL
    parts.append(f"16mc pulse: lambda {abs(est.lam - target.lam) / abs(target.lam):.1%} off, "
                 f"Wd9/Wf(3,5,6,9,11) dev {dev16:.0%}, measured balance {bal16:.0%}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 180.0
    return ok, "; ".join(parts) + f"; {elapsed:.0f}s"


def criterion_8():
    worst_rel, worst_exact = 0.0, 0.0
    n = 0
    for name in SYSTEMS:
        for kind in ("simplified", "detailed"):
            _, lm, modes = models(name, kind)[0]
            for m in modes:
                ps = phasors(m, lm.ng)
                tt = torque_transfer(lm, m.omega_d)
                dp = damping_powers(tt, ps)
                quad = cycle_average_oracle(ps, dp.T, ps.omega)
                rel = float(np.max(np.abs(dp.Wd - quad)) / np.max(np.abs(dp.Wd)))
                worst_rel = max(worst_rel, rel / (ORACLE_KAPPA * abs(m.sigma) / m.omega_d))
                ps0 = PhasorSet(1j * m.omega_d, ps.c_hat, ps.t0, ps.x, ps.state_names, ps.ng)
                dp0 = damping_powers(tt, ps0)
                q0 = cycle_average_oracle(ps0, dp0.T, ps0.omega)
                worst_exact = max(worst_exact, float(np.max(np.abs(dp0.Wd - q0)) / np.max(np.abs(dp0.Wd))))
                n += 1
    ok = worst_rel <= 1.0 and worst_exact <= ORACLE_EXACT
    return ok, (f"{n} modes: worst deviation {worst_rel:.2f} x (3|sigma|/omega_d); "
                f"sigma zeroed {worst_exact:.1e}")


def criterion_9():
    worst_claim = np.inf
    bal_total = bal_teeth = 0
    min_bal = np.inf
    for name in SYSTEMS:
        spec, _ = nominal(name)
        lossy = spec.with_branch_resistance(NEG_RESISTANCE, relative=True)
        lm = linearize(lossy, operating_point(lossy), "simplified")
        names = names_of(name)
        for m in select_em_modes(eig_modes(lm.A), lm.ng).modes:
            res = verify_claims(lm, m.omega_d).residuals
            worst_claim = min(worst_claim, res["claim1 P^-1 A33^T P = A33"], res["claim2 A31^T P = (2H/ws) A23"])
            r = report(lm, m, names).balance_residual / abs(m.zeta)
            min_bal = min(min_bal, r)
            bal_total += 1
            bal_teeth += r > NEG_BALANCE_KAPPA
    ok = worst_claim > NEG_CLAIM and bal_teeth == bal_total and bal_total > 0
    return ok, (f"r = {NEG_RESISTANCE:g} x: smallest claim 1-2 residual {worst_claim:.1e}; balance above "
                f"10 zeta for {bal_teeth}/{bal_total} modes (smallest {min_bal:.2f} zeta)")


def criterion_10():
    parts, ok = [], True
    for name in SYSTEMS:
        spec, op = nominal(name)
        for kind in ("simplified", "detailed"):
            lm = models(name, kind)[0][1]
            e = jacobian_fd_error((lm.M, lm.N, lm.C, lm.D), finite_difference_jacobians(spec, op, kind))
            ok &= e <= TOL_FD
            parts.append(f"{name}/{kind} {e:.1e}")
    return ok, "max relative error " + ", ".join(parts)


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9, 10: criterion_10}


@pytest.mark.parametrize("n", sorted(CRITERIA))
def test_criterion(n, capsys):
    logging.disable(logging.WARNING)
    try:
        ok, detail = CRITERIA[n]()
    finally:
        logging.disable(logging.NOTSET)
    emit(capsys, n, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    logging.disable(logging.WARNING)
    failed = 0
    for n, fn in CRITERIA.items():
        ok, detail = fn()
        emit(None, n, ok, detail)
        failed += not ok
    sys.exit(1 if failed else 0)
