"""Damping powers, winding dissipation, the balance check and distribution factors.

All powers are reported per unit of ``2|c_hat|^2`` (see :class:`PhasorSet.scale`),
which removes the dependence on eigenvector scaling and on ``t0``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

from .linmodel import LinearModel
from .modal import Mode, PhasorSet

BALANCE_KAPPA = 3.0


class EnergeticsError(RuntimeError):
    pass


def _rel(a: np.ndarray, b: np.ndarray) -> float:
    den = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b)) / den)


# --------------------------------------------------------------------------- torque transfer

@dataclass(frozen=True)
class TorqueTransfer:
    omega_eval: float
    K: np.ndarray
    ReK_closed: np.ndarray | None = None

    @property
    def symmetry_error(self) -> float:
        return float(np.linalg.norm(self.K - self.K.T) / np.linalg.norm(self.K))


def torque_transfer(lm: LinearModel, omega: float, *, cond_limit: float = 1e12) -> TorqueTransfer:
    """K(j omega) mapping speed phasors to electrical-torque phasors."""
    b = lm.blocks
    s = 1j * omega
    R = s * np.eye(lm.nz) - b["A33"]
    smin = np.linalg.svd(R, compute_uv=False)[-1]
    if smin * cond_limit < np.linalg.norm(R, 2):
        ev = np.linalg.eigvals(b["A33"])
        dist = float(np.min(np.abs(ev - s)))
        raise EnergeticsError(f"resolvent (j{omega:.4f} I - A33) near singular; "
                              f"distance to nearest A33 eigenvalue {dist:.3e}")
    inner = np.linalg.solve(R, b["A31"] / s + b["A32"])
    H2 = 2 * lm.Hmat / lm.omega_s
    K = -H2 @ (b["A21"] / s + b["A22"] + b["A23"] @ inner)
    closed = None
    if lm.kind == "simplified":
        A33 = b["A33"]
        closed = H2 @ b["A23"] @ np.linalg.solve(omega ** 2 * np.eye(lm.nz) + A33 @ A33, b["A31"])
    return TorqueTransfer(float(omega), K, closed)


# --------------------------------------------------------------------------- damping powers

@dataclass
class DampingPowers:
    Wd: np.ndarray
    kd: np.ndarray
    ks: np.ndarray
    T: np.ndarray
    flagged: list[int] = field(default_factory=list)

    @property
    def total(self) -> float:
        return float(np.sum(self.Wd))


def damping_powers(tt: TorqueTransfer, ps: PhasorSet, *, torque: str = "transfer",
                   lm: LinearModel | None = None) -> DampingPowers:
    """Per-machine damping power ``1/2 Re{T w*}`` over ``2|c_hat|^2``.

    ``torque='transfer'`` uses ``T = K_r w``; ``'eigen'`` uses the exact modal torque
    ``-(2H/w_s) lambda w`` (needs ``lm``).
    """
    w = ps.omega
    if torque == "transfer":
        T = tt.K @ w
    elif torque == "eigen":
        if lm is None:
            raise ValueError("eigen torque needs the linear model")
        T = -(2 * np.diag(lm.Hmat) / lm.omega_s) * ps.lam * w
    else:
        raise ValueError(f"unknown torque source {torque!r}")
    Wd = 0.5 * np.real(T * np.conj(w)) / ps.scale
    kd = np.full(len(w), np.nan)
    ks = np.full(len(w), np.nan)
    flagged = []
    for i in range(len(w)):
        if abs(w[i]) < 1e-12 * max(1.0, abs(ps.c_hat)):
            flagged.append(i)
            Wd[i] = 0.0
            continue
        r = T[i] / w[i]
        kd[i], ks[i] = r.real, r.imag
    return DampingPowers(Wd, kd, ks, T, flagged)


def total_damping_direct(tt: TorqueTransfer, ps: PhasorSet) -> float:
    w = ps.omega
    return float(0.5 * np.real(np.conj(w) @ tt.K @ w) / ps.scale)


def total_damping_closed(lm: LinearModel, ps: PhasorSet) -> float:
    """``1/2 w^H A31^T P (w_d^2 I + A33^2)^-1 A31 w`` (simplified model)."""
    b = lm.blocks
    A33 = b["A33"]
    w = ps.omega
    v = np.linalg.solve(ps.omega_d ** 2 * np.eye(lm.nz) + A33 @ A33, b["A31"] @ w)
    return float(0.5 * np.real(np.conj(w) @ b["A31"].T @ lm.Pmat @ v) / ps.scale)


def cycle_average_oracle(ps: PhasorSet, T: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Cycle average of the reconstructed torque-speed product by adaptive quadrature,
    over ``2|c_hat|^2``; one value per machine."""
    lam, t0 = ps.lam, ps.t0
    period = 2 * np.pi / ps.omega_d
    out = np.zeros(len(w))
    for i in range(len(w)):
        def prod(t, Ti=T[i], wi=w[i]):
            e = np.exp(lam * (t - t0))
            return np.real(Ti * e) * np.real(wi * e)
        # absolute floor keeps near-cancelling products from tripping round-off warnings
        floor = 1e-13 * abs(T[i]) * abs(w[i]) * period
        val, _ = integrate.quad(prod, t0, t0 + period, epsabs=floor, epsrel=1e-12, limit=200)
        out[i] = val / period / ps.scale
    return out


# --------------------------------------------------------------------------- dissipation

@dataclass
class DissipationPowers:
    Wf: np.ndarray
    Wg: np.ndarray
    cross: np.ndarray

    @property
    def total(self) -> float:
        return float(np.sum(self.Wf) + np.sum(self.Wg))


def dissipation_powers(lm: LinearModel, ps: PhasorSet, *, efd: np.ndarray | None = None,
                       eq: np.ndarray | None = None, ed: np.ndarray | None = None) -> DissipationPowers:
    """Field and damper-winding dissipation over ``2|c_hat|^2``.

    Flux phasors default to the state phasors of ``ps``; measured shapes may be passed
    instead. The field term subtracts the power supplied by the exciter when E_fd moves.
    """
    ng, wd = lm.ng, ps.omega_d
    eq = ps.x[2 * ng: 3 * ng] if eq is None else np.asarray(eq)
    if ed is None:
        ed = np.array([ps.x[k] if k >= 0 else 0.0 for k in lm.i_ed], dtype=complex)
    if efd is None:
        efd = lm.Efd_map @ ps.x if lm.Efd_map is not None else np.zeros(ng, dtype=complex)
    if lm.kind == "simplified" and np.any(np.abs(efd) > 0):
        raise EnergeticsError("simplified model has manual excitation; E_fd phasor must vanish")
    P = np.diag(lm.Pmat)
    G = np.diag(lm.Gmat) if lm.Gmat is not None else np.zeros(ng)
    cross = np.real(1j * wd * eq * np.conj(efd)) / lm.xdd
    Wf = 0.5 * (P * wd ** 2 * np.abs(eq) ** 2 - cross) / ps.scale
    Wg = 0.5 * G * wd ** 2 * np.abs(ed) ** 2 / ps.scale
    return DissipationPowers(Wf, Wg, 0.5 * cross / ps.scale)


# --------------------------------------------------------------------------- report

@dataclass
class EnergyReport:
    mode_label: str
    lam: complex
    machines: list[str]
    Wd: np.ndarray
    Wf: np.ndarray
    Wg: np.ndarray
    kd: np.ndarray
    ks: np.ndarray
    source: str = "small-signal"
    notes: list[str] = field(default_factory=list)

    @property
    def zeta(self) -> float:
        return float(-self.lam.real / abs(self.lam))

    @property
    def f_Hz(self) -> float:
        return float(self.lam.imag / (2 * np.pi))

    @property
    def Wd_total(self) -> float:
        return float(np.sum(self.Wd))

    @property
    def Wdiss_total(self) -> float:
        return float(np.sum(self.Wf) + np.sum(self.Wg))

    @property
    def balance_residual(self) -> float:
        if abs(self.Wdiss_total) < 1e-14:
            return float("nan")
        return abs(self.Wd_total - self.Wdiss_total) / abs(self.Wdiss_total)

    def to_dict(self) -> dict:
        bal = balance_check(self)
        return {
            "mode": self.mode_label, "source": self.source,
            "lambda": [self.lam.real, self.lam.imag], "f_Hz": self.f_Hz, "zeta": self.zeta,
            "machines": [
                {"name": n, "Wd": float(a), "Wf": float(b), "Wg": float(c),
                 "kd": _num(k), "ks": _num(s)}
                for n, a, b, c, k, s in zip(self.machines, self.Wd, self.Wf, self.Wg, self.kd, self.ks)
            ],
            "Wd_total": self.Wd_total, "Wdiss_total": self.Wdiss_total,
            "balance": {"residual": _num(bal.residual), "threshold": bal.threshold, "status": bal.status},
            "notes": list(self.notes),
        }


def _num(v):
    v = float(v)
    return None if not np.isfinite(v) else v


@dataclass
class BalanceResult:
    residual: float
    threshold: float
    status: str  # PASS | FAIL | INDETERMINATE


def balance_check(report: EnergyReport, kappa: float = BALANCE_KAPPA) -> BalanceResult:
    # |zeta| keeps the bound meaningful for growing modes
    thr = kappa * abs(report.zeta)
    r = report.balance_residual
    if np.isnan(r):
        return BalanceResult(float("nan"), thr, "INDETERMINATE")
    return BalanceResult(float(r), float(thr), "PASS" if r <= thr else "FAIL")


def energy_report(lm: LinearModel, mode: Mode, ps: PhasorSet, machines: list[str], *,
                  label: str = "", torque: str = "transfer") -> tuple[EnergyReport, TorqueTransfer]:
    tt = torque_transfer(lm, mode.omega_d)
    dp = damping_powers(tt, ps, torque=torque, lm=lm)
    dis = dissipation_powers(lm, ps)
    notes = [f"k_d undefined for {machines[i]} (speed phasor ~ 0)" for i in dp.flagged]
    rep = EnergyReport(label or f"{mode.f_Hz:.3f} Hz", mode.lam, list(machines), dp.Wd, dis.Wf, dis.Wg,
                       dp.kd, dp.ks, notes=notes)
    return rep, tt


# --------------------------------------------------------------------------- distribution

@dataclass
class DistributionMatrix:
    alpha: np.ndarray
    Q: np.ndarray
    beta: np.ndarray
    fractions: np.ndarray
    Wd: np.ndarray
    Wf: np.ndarray
    machines: list[str]
    flagged: list[tuple[int, int]] = field(default_factory=list)
    undefined_rows: list[int] = field(default_factory=list)

    @property
    def row_identity_error(self) -> float:
        lhs = self.alpha @ self.Wf
        ok = [i for i in range(len(self.Wd)) if i not in self.undefined_rows]
        return float(np.max(np.abs(lhs[ok] - self.Wd[ok]) / np.abs(self.Wd[ok]))) if ok else float("nan")

    @property
    def row_sum_error(self) -> float:
        ok = [i for i in range(len(self.Wd)) if i not in self.undefined_rows]
        return float(np.max(np.abs(self.fractions[ok].sum(axis=1) - 1.0))) if ok else float("nan")

    @property
    def column_sums(self) -> np.ndarray:
        return self.alpha.sum(axis=0)


def distribution_factors(lm: LinearModel, mode: Mode, ps: PhasorSet, *,
                         dp: DampingPowers | None = None, eq: np.ndarray | None = None,
                         w: np.ndarray | None = None, machines: list[str] | None = None) -> DistributionMatrix:
    """alpha_ij linking machine i's damping power to field dissipation in machine j.

    ``eq``/``w`` default to the state phasors (measured shapes may be substituted);
    ``dp`` defaults to damping powers from K(j w_d).
    """
    if lm.kind != "simplified":
        raise EnergeticsError("distribution factors are defined for the simplified model only")
    ng, lam, wd = lm.ng, mode.lam, mode.omega_d
    b = lm.blocks
    Q = lam * np.linalg.solve(lam ** 2 * np.eye(ng) - b["A21"], b["A23"])
    eq = ps.x[2 * ng: 3 * ng] if eq is None else np.asarray(eq)
    w = ps.omega if w is None else np.asarray(w)
    if dp is None:
        dp = damping_powers(torque_transfer(lm, wd), ps)
    P = np.diag(lm.Pmat)
    Wf = 0.5 * P * wd ** 2 * np.abs(eq) ** 2 / ps.scale
    alpha = np.zeros((ng, ng))
    beta = np.zeros((ng, ng), dtype=complex)
    flagged, undefined = [], []
    for i in range(ng):
        if abs(w[i]) < 1e-12 or np.isnan(dp.kd[i]):
            undefined.append(i)
            continue
        for j in range(ng):
            beta[i, j] = np.conj(Q[i, j] * eq[j] / w[i])
            if abs(beta[i, j]) < 1e-12:
                flagged.append((i, j))
                continue
            alpha[i, j] = dp.kd[i] * abs(Q[i, j]) ** 2 / (P[j] * wd ** 2) * np.real(1.0 / beta[i, j])
    fractions = np.zeros((ng, ng))
    for i in range(ng):
        if i in undefined or abs(dp.Wd[i]) < 1e-300:
            if i not in undefined:
                undefined.append(i)
            continue
        fractions[i] = alpha[i] * Wf / dp.Wd[i]
    names = machines or [f"G{k + 1}" for k in range(ng)]
    return DistributionMatrix(alpha, Q, beta, fractions, dp.Wd, Wf, names, flagged, undefined)


# --------------------------------------------------------------------------- claims

@dataclass
class ClaimReport:
    residuals: dict[str, float]
    tolerance: float
    omega: float

    @property
    def passed(self) -> bool:
        return all(v <= self.tolerance for v in self.residuals.values())


def verify_claims(lm: LinearModel, omega: float, *, seed: int = 20240101, draws: int = 100,
                  tol: float = 1e-8) -> ClaimReport:
    """Relative residuals of the four structural claims at frequency ``omega``."""
    if lm.kind != "simplified":
        raise EnergeticsError("claims proven only for simplified model (third order, manual "
                              "excitation); exciter-augmented models are not covered")
    b = lm.blocks
    P, Pi = lm.Pmat, np.linalg.inv(lm.Pmat)
    H2 = 2 * lm.Hmat / lm.omega_s
    K = torque_transfer(lm, omega).K
    ReK = K.real
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        x = rng.standard_normal(lm.ng) + 1j * rng.standard_normal(lm.ng)
        lhs = np.real(np.conj(x) @ K @ x)
        rhs = np.real(np.conj(x) @ ReK @ x)
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-300))
    res = {
        "claim1 P^-1 A33^T P = A33": _rel(Pi @ b["A33"].T @ P, b["A33"]),
        "claim2 A31^T P = (2H/ws) A23": _rel(b["A31"].T @ P, H2 @ b["A23"]),
        "claim3 A21^T H = H A21": _rel(b["A21"].T @ lm.Hmat, lm.Hmat @ b["A21"]),
        "claim4 Re{x^H K x} = x^H Re{K} x": float(worst),
    }
    return ClaimReport(res, tol, float(omega))


def identity_suite(lm: LinearModel, mode: Mode, ps: PhasorSet, *, seed: int = 20240101) -> dict[str, float]:
    """Claims plus K symmetry, closed-form Re{K}, closed-form total damping and the
    distribution row identity for one mode."""
    out = dict(verify_claims(lm, mode.omega_d, seed=seed).residuals)
    tt = torque_transfer(lm, mode.omega_d)
    out["K symmetric"] = tt.symmetry_error
    out["Re{K} closed form"] = _rel(tt.K.real, tt.ReK_closed)
    direct = total_damping_direct(tt, ps)
    out["total damping closed form"] = abs(direct - total_damping_closed(lm, ps)) / abs(direct)
    out["sum of Wd_i = total damping"] = abs(damping_powers(tt, ps).total - direct) / abs(direct)
    dm = distribution_factors(lm, mode, ps)
    out["distribution row identity"] = dm.row_identity_error
    return out


# --------------------------------------------------------------------------- export

def write_report_csv(reports: list[EnergyReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "source", "f_Hz", "zeta", "machine", "Wd", "Wf", "Wg", "kd", "ks",
                    "Wf_over_Wd", "Wd_share"])
        for r in reports:
            for n, a, b, c, k, s in zip(r.machines, r.Wd, r.Wf, r.Wg, r.kd, r.ks):
                ratio = (b + c) / a if a != 0 else float("nan")
                share = a / r.Wd_total if r.Wd_total != 0 else float("nan")
                w.writerow([r.mode_label, r.source, f"{r.f_Hz:.8g}", f"{r.zeta:.8g}", n, f"{a:.10g}",
                            f"{b:.10g}", f"{c:.10g}", f"{k:.10g}", f"{s:.10g}", f"{ratio:.10g}", f"{share:.10g}"])
            w.writerow([r.mode_label, r.source, f"{r.f_Hz:.8g}", f"{r.zeta:.8g}", "TOTAL",
                        f"{r.Wd_total:.10g}", f"{np.sum(r.Wf):.10g}", f"{np.sum(r.Wg):.10g}", "", "",
                        f"{r.Wdiss_total / r.Wd_total:.10g}", "1"])


def write_reports_json(reports: list[EnergyReport], path: str | Path) -> None:
    Path(path).write_text(json.dumps([r.to_dict() for r in reports], indent=2, allow_nan=False,
                                     default=_num) + "\n")


def write_distribution_csv(dm: DistributionMatrix, path: str | Path, label: str = "") -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "quantity", "machine_i"] + [f"{n}" for n in dm.machines])
        for name, mat in (("alpha", dm.alpha), ("fraction", dm.fractions)):
            for i, n in enumerate(dm.machines):
                w.writerow([label, name, n] + [f"{v:.10g}" for v in mat[i]])
        w.writerow([label, "alpha_column_sum", ""] + [f"{v:.10g}" for v in dm.column_sums])


def comparison_table(small: EnergyReport, measured: EnergyReport) -> list[dict]:
    """Per-machine small-signal vs measured powers, laid out like the published tables."""
    rows = []
    for k, n in enumerate(small.machines):
        rows.append({"machine": n, "Wd_model": small.Wd[k], "Wd_measured": measured.Wd[k],
                     "Wf_model": small.Wf[k] + small.Wg[k], "Wf_measured": measured.Wf[k] + measured.Wg[k]})
    rows.append({"machine": "SUM", "Wd_model": small.Wd_total, "Wd_measured": measured.Wd_total,
                 "Wf_model": small.Wdiss_total, "Wf_measured": measured.Wdiss_total})
    return rows
