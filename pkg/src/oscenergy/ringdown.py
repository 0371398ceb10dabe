"""Nonlinear ringdown simulation and measurement-style modeshape estimation."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

from .dae import PowerSystemDAE
from .energetics import EnergyReport, dissipation_powers, energy_report, torque_transfer
from .linmodel import LinearModel
from .modal import Mode, PhasorSet, phasors
from .sysdata import SystemSpec

log = logging.getLogger(__name__)

DEFAULT_FAULT_SUSCEPTANCE = -1.0e3
DEFAULT_PULSE = 0.1
UNRELIABLE_FIT = 0.2


class SimulationError(RuntimeError):
    pass


class EstimationError(RuntimeError):
    pass


# --------------------------------------------------------------------------- disturbances

@dataclass(frozen=True)
class Disturbance:
    """A self-clearing bus fault (shunt susceptance) or a rectangular E_fd pulse.

    ``target`` is a bus id for faults and a tuple of machine indices (or ``"all"``)
    for pulses. ``duration`` defaults to five cycles for faults.
    """
    kind: str = "none"
    target: object = None
    t_start: float = 1.0
    duration: float | None = None
    magnitude: float | None = None

    def resolved(self, f_base: float = 60.0) -> "Disturbance":
        if self.kind not in ("none", "bus_fault", "exciter_pulse"):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == "none":
            return self
        if self.t_start < 0:
            raise ValueError(f"disturbance must start at t >= 0, got {self.t_start}")
        dur = self.duration
        if dur is None:
            dur = 5.0 / f_base if self.kind == "bus_fault" else 0.2
        if dur <= 0:
            raise ValueError("disturbance duration must be > 0")
        mag = self.magnitude
        if mag is None:
            mag = DEFAULT_FAULT_SUSCEPTANCE if self.kind == "bus_fault" else DEFAULT_PULSE
        return Disturbance(self.kind, self.target, float(self.t_start), float(dur), float(mag))

    @property
    def t_end(self) -> float:
        return self.t_start + (self.duration or 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["target"], tuple):
            d["target"] = list(d["target"])
        return d


def parse_disturbance(text: str) -> Disturbance:
    """``fault:BUS[:t_start[:duration[:susceptance]]]`` or
    ``pulse:all|i,j,..[:t_start[:duration[:magnitude]]]`` (machine indices 1-based)."""
    parts = text.split(":")
    kind = {"fault": "bus_fault", "pulse": "exciter_pulse", "none": "none"}.get(parts[0])
    if kind is None:
        raise ValueError(f"disturbance must start with fault:, pulse: or none, got {text!r}")
    if kind == "none":
        return Disturbance()
    if len(parts) < 2:
        raise ValueError(f"disturbance {text!r} lacks a target")
    if kind == "bus_fault":
        target: object = int(parts[1])
    else:
        target = "all" if parts[1] == "all" else tuple(int(s) - 1 for s in parts[1].split(","))
    nums = [float(p) for p in parts[2:]]
    keys = ["t_start", "duration", "magnitude"]
    return Disturbance(kind, target, **dict(zip(keys, nums)))


# --------------------------------------------------------------------------- trajectory

@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    xdot: np.ndarray
    Te: np.ndarray
    efd: np.ndarray
    state_names: tuple[str, ...]
    alg_names: tuple[str, ...]
    machines: tuple[str, ...]
    H: np.ndarray
    omega_s: float
    kind: str
    disturbance: dict
    stats: dict = field(default_factory=dict)

    @property
    def ng(self) -> int:
        return len(self.machines)

    def index(self, name: str) -> int:
        try:
            return self.state_names.index(name)
        except ValueError:
            raise KeyError(f"no state named {name!r}") from None

    def state(self, name: str) -> np.ndarray:
        return self.x[:, self.index(name)]

    def torque(self, source: str = "derivative") -> np.ndarray:
        """Electrical torque per machine (columns). ``derivative`` uses
        T_m - (2H/ws) d(omega)/dt from the integrator, ``airgap`` the air-gap power."""
        if source == "airgap":
            return self.Te
        if source != "derivative":
            raise ValueError(f"unknown torque source {source!r}")
        ng = self.ng
        tm = self.Te[0]  # equilibrium: T_m equals the initial electrical torque
        return tm - (2 * self.H / self.omega_s) * self.xdot[:, ng: 2 * ng]

    def signals(self, torque: str = "derivative") -> dict[str, np.ndarray]:
        """Every state plus ``Te[name]`` and ``Efd[name]`` per machine, keyed by name."""
        out = {n: self.x[:, k] for k, n in enumerate(self.state_names)}
        T = self.torque(torque)
        for i, m in enumerate(self.machines):
            out[f"Te[{m}]"] = T[:, i]
            out[f"Efd[{m}]"] = self.efd[:, i]
        return out

    def max_deviation(self, t_before: float | None = None) -> float:
        """Largest speed deviation (pu) before ``t_before`` (whole run if None)."""
        ng = self.ng
        w = self.x[:, ng: 2 * ng] / self.omega_s - 1.0
        sel = slice(None) if t_before is None else self.t < t_before
        return float(np.max(np.abs(w[sel]))) if np.any(sel) else 0.0

    def to_csv(self, path: str | Path) -> None:
        T = self.torque("derivative")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", *self.state_names, *self.alg_names, *(f"Te[{m}]" for m in self.machines),
                        *(f"Efd[{m}]" for m in self.machines)])
            for k in range(len(self.t)):
                w.writerow([f"{v:.12g}" for v in (self.t[k], *self.x[k], *self.y[k], *T[k], *self.efd[k])])

    def save(self, stem: str | Path) -> tuple[Path, Path]:
        """Compact binary form (``.npz``) plus a JSON manifest describing it."""
        stem = Path(stem)
        npz = stem.with_suffix(".npz")
        np.savez_compressed(npz, t=self.t, x=self.x, y=self.y, xdot=self.xdot, Te=self.Te, efd=self.efd)
        man = stem.with_suffix(".json")
        meta = {"state_names": list(self.state_names), "alg_names": list(self.alg_names),
                "machines": list(self.machines), "H": self.H.tolist(), "omega_s": self.omega_s,
                "kind": self.kind, "disturbance": self.disturbance, "stats": self.stats,
                "arrays": npz.name}
        man.write_text(json.dumps(meta, indent=2, sort_keys=True))
        return npz, man

    @classmethod
    def load(cls, stem: str | Path) -> "Trajectory":
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".json").read_text())
        arr = np.load(stem.with_suffix(".npz"))
        return cls(arr["t"], arr["x"], arr["y"], arr["xdot"], arr["Te"], arr["efd"], tuple(meta["state_names"]),
                   tuple(meta["alg_names"]), tuple(meta["machines"]), np.array(meta["H"]),
                   meta["omega_s"], meta["kind"], meta["disturbance"], meta["stats"])


# --------------------------------------------------------------------------- integrator

def _pulse_input(dae: PowerSystemDAE, dist: Disturbance) -> np.ndarray:
    u = np.zeros(dae.n_inputs)
    targets = range(dae.ng) if dist.target in ("all", None) else dist.target
    for i in targets:
        if not 0 <= i < dae.ng:
            raise ValueError(f"pulse target machine index {i} out of range")
        u[dae.ng + i] = dist.magnitude
    return u


def _consistent_algebraics(dae: PowerSystemDAE, x, y, tol, max_iter=50):
    """Re-solve g(x, y) = 0 for y after a network switch (damped Newton)."""
    nb = dae.nb
    g = dae.g(x, y)
    for _ in range(max_iter):
        gn = np.max(np.abs(g))
        if gn <= tol:
            return y
        gy = dae.jacobians(x, y)[3]
        try:
            dy = np.linalg.solve(gy, -g)
        except np.linalg.LinAlgError:
            raise SimulationError("algebraic Jacobian singular at switching instant") from None
        step = 1.0
        while step > 1e-4:
            yt = y + step * dy
            if np.all(yt[nb:] > 0):
                gt = dae.g(x, yt)
                if np.max(np.abs(gt)) < gn:
                    break
            step *= 0.5
        else:
            break
        y, g = yt, gt
    raise SimulationError(f"algebraic equations did not converge at switching (|g| = {np.max(np.abs(g)):.2e})")


def _switch_algebraics(base: PowerSystemDAE, target: PowerSystemDAE, x, y, path, tol):
    for shunt in path[:-1]:
        y = _consistent_algebraics(base.with_fault(shunt), x, y, 1e-8)
    return _consistent_algebraics(target, x, y, tol)


def _trap_step(dae, x0, y0, f0, u, h, tol, max_iter):
    nx = dae.nx
    x, y = x0 + h * f0, y0.copy()
    iters = 0
    for iters in range(1, max_iter + 1):
        fx_, fy_, gx, gy = dae.jacobians(x, y)
        f1 = dae.f(x, y, u)
        F = np.concatenate([x - x0 - 0.5 * h * (f0 + f1), dae.g(x, y)])
        if not np.all(np.isfinite(F)):
            return None
        J = np.block([[np.eye(nx) - 0.5 * h * fx_, -0.5 * h * fy_], [gx, gy]])
        try:
            dz = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return None
        x, y = x + dz[:nx], y + dz[nx:]
        if np.max(np.abs(dz)) <= tol:
            f1 = dae.f(x, y, u)
            res = np.concatenate([x - x0 - 0.5 * h * (f0 + f1), dae.g(x, y)])
            if np.max(np.abs(res)) <= 1e-8:
                return x, y, f1, iters, float(np.max(np.abs(res)))
    return None


def simulate(spec: SystemSpec, op, disturbance: Disturbance | None = None, t_end: float = 10.0,
             dt_max: float = 0.01, *, kind: str = "detailed", dt_min: float = 1e-6,
             tol: float = 1e-10, max_newton: int = 12, v_break: float = 0.8) -> Trajectory:
    """Implicit trapezoidal integration of the machine/network DAE.

    Differential and algebraic equations are solved simultaneously by Newton at each
    step. Event times are hit exactly; at a network switch the algebraic variables are
    re-solved with the states held, so both the pre- and post-switch points are stored.
    Loads are constant power above ``v_break`` and constant impedance below it, which
    keeps the algebraic equations solvable during a deep fault.
    """
    dist = (disturbance or Disturbance()).resolved(spec.f_base)
    if dt_max <= 0 or t_end <= 0:
        raise ValueError("t_end and dt_max must be positive")
    base = PowerSystemDAE(spec, op, kind, v_break=v_break)
    k_fault = -1
    if dist.kind == "bus_fault":
        try:
            k_fault = spec.bus_index(int(dist.target))
        except (KeyError, ValueError, TypeError):
            raise ValueError(f"fault bus {dist.target!r} not in system") from None
    elif dist.kind == "exciter_pulse":
        _pulse_input(base, dist)
    events = [0.0, t_end]
    if dist.kind != "none":
        events += [t for t in (dist.t_start, dist.t_end) if 0 < t < t_end]
    events = sorted(set(events))

    def shunt_path(t_switch):
        # fault shunt magnitudes from the old to the new network, log-spaced so the
        # Newton solve follows the physical voltage branch through the switch
        if dist.kind != "bus_fault":
            return []
        path = list(np.abs(dist.magnitude) * np.logspace(-3, 0, 16) * np.sign(dist.magnitude))
        seq = path if t_switch == dist.t_start else path[::-1] + [0.0]
        return [{k_fault: b} if b != 0.0 else None for b in seq]

    def segment_model(t_mid):
        active = dist.kind != "none" and dist.t_start <= t_mid < dist.t_end
        if active and dist.kind == "bus_fault":
            return base.with_fault({k_fault: dist.magnitude}), np.zeros(base.n_inputs)
        if active and dist.kind == "exciter_pulse":
            return base, _pulse_input(base, dist)
        return base, np.zeros(base.n_inputs)

    x, y = base.x0(op), base.y0(op)
    ts, xs, ys, fs, tes, efds = [], [], [], [], [], []

    def record(tk, dae, u):
        # reads the current x, y, f of the enclosing loop
        ts.append(tk)
        xs.append(x)
        ys.append(y)
        fs.append(f)
        tes.append(dae.electrical_torque(x, y))
        efds.append(dae.field_voltage(x, y, u[base.ng:])[0])

    stats = {"steps": 0, "newton_iterations": 0, "rejected": 0, "max_residual": 0.0, "min_dt": dt_max}
    t_wall = time.perf_counter()
    for a, b in zip(events[:-1], events[1:]):
        dae, u = segment_model(0.5 * (a + b))
        if a > 0:
            y = _switch_algebraics(base, dae, x, y, shunt_path(a), tol)
        f = dae.f(x, y, u)
        record(a, dae, u)
        t, h = a, dt_max
        while t < b - 1e-12:
            h = min(h, b - t)
            out = _trap_step(dae, x, y, f, u, h, tol, max_newton)
            if out is None:
                stats["rejected"] += 1
                h *= 0.5
                if h < dt_min:
                    raise SimulationError(f"Newton failed at t = {t:.6f} s with step {h:.2e} < dt_min")
                log.debug("step rejected at t=%.6f, halving to %.2e", t, h)
                continue
            x, y, f, it, res = out
            t = b if b - (t + h) < 1e-12 else t + h
            stats["steps"] += 1
            stats["newton_iterations"] += it
            stats["max_residual"] = max(stats["max_residual"], res)
            stats["min_dt"] = min(stats["min_dt"], h)
            record(t, dae, u)
            h = min(2 * h, dt_max)
    stats["wall_s"] = time.perf_counter() - t_wall
    return Trajectory(np.array(ts), np.array(xs), np.array(ys), np.array(fs), np.array(tes), np.array(efds),
                      tuple(base.state_names), tuple(base.alg_names),
                      tuple(m.name for m in spec.machines), base.H.copy(), base.omega_s, kind,
                      dist.to_dict(), stats)


def linear_response(lm: LinearModel, u: np.ndarray, t_on: float, t_off: float,
                    t: np.ndarray) -> np.ndarray:
    """State deviations of dx/dt = A x + B u for a rectangular input on [t_on, t_off),
    by exact matrix-exponential propagation. Returns shape (len(t), nx)."""
    A, n = lm.A, lm.nx
    bu = lm.B @ u
    # augmented exponential gives the forced response of a constant input exactly
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = A
    aug[:n, n] = bu
    out = np.zeros((len(t), n))
    for k, tk in enumerate(t):
        if tk <= t_on:
            continue
        ton = min(tk, t_off) - t_on
        E = linalg.expm(aug * ton)
        xk = E[:n, n]
        if tk > t_off:
            xk = linalg.expm(A * (tk - t_off)) @ xk
        out[k] = xk
    return out


# --------------------------------------------------------------------------- estimation

def detrend(t: np.ndarray, Y: np.ndarray, *, min_duration: float = 0.0) -> np.ndarray:
    """Remove the best-fit affine trend from each row of ``Y`` (or a single series)."""
    t = np.asarray(t, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if t[-1] - t[0] < min_duration:
        raise EstimationError(f"window of {t[-1] - t[0]:.3g} s is shorter than {min_duration:.3g} s")
    one = Y.ndim == 1
    Y2 = np.atleast_2d(Y)
    tc = t - t.mean()
    G = np.column_stack([np.ones_like(tc), tc])
    coef, *_ = np.linalg.lstsq(G, Y2.T, rcond=None)
    R = Y2 - (G @ coef).T
    return R[0] if one else R


@dataclass
class ModeEstimate:
    lam: complex
    reference: str
    t0: float
    names: list[str]
    amplitudes: np.ndarray     # complex phasor of each signal at t0
    residuals: np.ndarray      # fit residual energy / signal energy (detrended)
    all_lams: np.ndarray = field(default_factory=lambda: np.zeros(0, complex))

    @property
    def shapes(self) -> np.ndarray:
        """Phasors relative to the reference signal (reference = 1 at angle 0)."""
        return self.amplitudes / self.amplitudes[self.names.index(self.reference)]

    @property
    def f_Hz(self) -> float:
        return float(self.lam.imag / (2 * np.pi))

    @property
    def zeta(self) -> float:
        return float(-self.lam.real / abs(self.lam))

    @property
    def unreliable(self) -> list[str]:
        return [n for n, r in zip(self.names, self.residuals) if r > UNRELIABLE_FIT]

    def amplitude(self, name: str) -> complex:
        return complex(self.amplitudes[self.names.index(name)])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["signal", "abs_shape", "angle_deg", "re_amplitude", "im_amplitude",
                        "fit_residual", "reliable"])
            for n, s, a, r in zip(self.names, self.shapes, self.amplitudes, self.residuals):
                w.writerow([n, f"{abs(s):.10g}", f"{np.degrees(np.angle(s)):.8g}", f"{a.real:.10g}",
                            f"{a.imag:.10g}", f"{r:.4e}", int(r <= UNRELIABLE_FIT)])


def _resample(t, Y, dt):
    tu = np.arange(t[0], t[-1] + 0.5 * dt, dt)
    tu = tu[tu <= t[-1] + 1e-12]
    # drop duplicated switching instants before interpolating
    keep = np.concatenate([np.diff(t) > 0, [True]])
    return tu, np.array([np.interp(tu, t[keep], row[keep]) for row in Y])


def linear_prediction(signal: np.ndarray, dt: float, order: int, *, rcond: float = 1e-10) -> np.ndarray:
    """Continuous-time eigenvalues from a forward linear-prediction model of ``order``."""
    s = np.asarray(signal, dtype=float)
    n = len(s)
    if n <= 2 * order:
        raise EstimationError(f"{n} samples too few for prediction order {order}")
    Hk = np.column_stack([s[order - k - 1: n - k - 1] for k in range(order)])
    rhs = s[order:]
    a, *_ = np.linalg.lstsq(Hk, rhs, rcond=rcond)
    z = np.roots(np.concatenate([[1.0], -a]))
    z = z[np.abs(z) > 1e-12]
    return np.log(z.astype(complex)) / dt


def estimate_mode(t: np.ndarray, signals: dict[str, np.ndarray], f_guess: float, reference: str,
                  window: tuple[float, float] | None = None, *, order: int | None = None,
                  samples_per_period: int = 20, min_periods: float = 2.0) -> ModeEstimate:
    """Two-stage modal fit.

    (i) the eigenvalue nearest ``f_guess`` from linear prediction on the detrended
    reference; (ii) for every signal, a linear least-squares fit of all predicted
    components plus an affine trend at those fixed eigenvalues. The complex amplitude
    of the target component at the window start is the signal's phasor.
    """
    t = np.asarray(t, dtype=float)
    if reference not in signals:
        raise EstimationError(f"reference signal {reference!r} not provided")
    lo, hi = window if window is not None else (t[0], t[-1])
    sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    tw = t[sel]
    if len(tw) < 8:
        raise EstimationError("analysis window holds too few samples")
    if tw[-1] - tw[0] < min_periods / f_guess:
        raise EstimationError(f"window {tw[-1] - tw[0]:.2f} s shorter than {min_periods:g} periods "
                              f"of {f_guess:g} Hz")
    names = list(signals)
    Y = np.array([np.asarray(signals[n], dtype=float)[sel] for n in names])
    steps = np.diff(tw)
    uniform = steps.size and np.all(steps > 0) and np.ptp(steps) <= 1e-9 * max(steps.mean(), 1e-300)
    dt_target = 1.0 / (samples_per_period * f_guess)
    if uniform:
        stride = max(1, int(round(dt_target / steps.mean())))
        tu, Yu = tw[::stride], Y[:, ::stride]
    else:
        tu, Yu = _resample(tw, Y, dt_target)
    dt = tu[1] - tu[0]
    ref = Yu[names.index(reference)]
    ref_d = detrend(tu, ref)
    if np.max(np.abs(ref_d)) <= 1e-14 * max(1.0, np.max(np.abs(ref))):
        raise EstimationError(f"reference {reference!r} shows no oscillation (zero participation)")
    p = order if order is not None else min(40, max(4, len(tu) // 4))
    lams = linear_prediction(ref - ref.mean(), dt, p)
    osc = lams[lams.imag > 1e-9]
    if osc.size == 0:
        raise EstimationError("linear prediction found no oscillatory component")
    k = np.argmin(np.abs(osc.imag / (2 * np.pi) - f_guess))
    lam = complex(osc[k])
    if abs(lam.imag / (2 * np.pi) - f_guess) > 0.2 * f_guess:
        raise EstimationError(f"no mode within 20% of {f_guess:g} Hz (nearest {lam.imag / (2 * np.pi):.3f} Hz)")
    # stage (ii) basis: affine trend, every moderately damped oscillatory component and
    # the real exponentials (slow aperiodic drift) found by the prediction model
    keep = osc[(np.abs(osc.real) < 5 * abs(osc.imag) + 1.0)]
    keep = keep[np.abs(keep - lam) > 1e-9 * abs(lam)]
    basis_l = np.concatenate([[lam], keep])
    wd = abs(lam.imag)
    real = lams[np.abs(lams.imag) <= 1e-9].real
    real = real[(np.abs(real) > 1e-3 * wd) & (np.abs(real) < 5 * wd)]
    tt = tw - tw[0]
    cols = [np.ones_like(tt), tt]
    for l_ in basis_l:
        e = np.exp(l_ * tt)
        cols += [e.real, -e.imag]
    cols += [np.exp(r * tt) for r in real]
    G = np.column_stack(cols)
    cn = np.linalg.norm(G, axis=0)
    cn[cn == 0] = 1.0
    coef, *_ = np.linalg.lstsq(G / cn, Y.T, rcond=1e-12)
    coef = coef / cn[:, None]
    amps = coef[2] + 1j * coef[3]
    Yd = detrend(tw, Y)
    resid = Y - (G @ coef).T
    energy = np.sum(Yd ** 2, axis=1)
    r = np.where(energy > 0, np.sum(resid ** 2, axis=1) / np.where(energy > 0, energy, 1.0), 0.0)
    est = ModeEstimate(lam, reference, float(tw[0]), names, amps, r, basis_l)
    if abs(est.amplitude(reference)) < 1e-14:
        raise EstimationError(f"reference {reference!r} has zero participation in the mode")
    if est.unreliable:
        log.warning("fit residual above %.0f%% for %s", 100 * UNRELIABLE_FIT, ", ".join(est.unreliable))
    return est


def synthetic_ringdown(ps: PhasorSet, t: np.ndarray, names: list[str], *,
                       torque: np.ndarray | None = None, H: np.ndarray | None = None,
                       omega_s: float | None = None, offsets: np.ndarray | None = None,
                       trend: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Signals generated exactly from one mode's phasors at ``ps.t0``.

    With ``H`` and ``omega_s`` a ``Te[i]`` signal per machine is added: ``torque`` phasors
    if given, otherwise the exact modal torque -(2H/ws) lambda omega.
    """
    x = ps.x
    Y = np.real(x[:, None] * np.exp(ps.lam * (np.asarray(t) - ps.t0))[None, :])
    if offsets is not None:
        Y = Y + np.asarray(offsets)[:, None]
    if trend is not None:
        Y = Y + np.asarray(trend)[:, None] * (np.asarray(t) - ps.t0)[None, :]
    out = {n: Y[k] for k, n in enumerate(names)}
    if H is not None and omega_s is not None:
        T = torque if torque is not None else -(2 * np.asarray(H) / omega_s) * ps.lam * ps.omega
        Tt = np.real(T[:, None] * np.exp(ps.lam * (np.asarray(t) - ps.t0))[None, :])
        for i in range(ps.ng):
            out[f"Te[{i}]"] = Tt[i]
    return out


# --------------------------------------------------------------------------- measured energy

def measured_energetics(est: ModeEstimate, lm: LinearModel, machines: list[str], *,
                        omega: list[str], eq: list[str], torque: list[str] | None = None,
                        ed: list[str | None] | None = None, efd: list[str | None] | None = None,
                        efd_phasors: np.ndarray | None = None, torque_model: str = "measured",
                        scale: float = 1.0, label: str = "") -> EnergyReport:
    """Energy report from estimated phasors.

    ``omega``, ``eq``, ``torque``, ``ed`` and ``efd`` name the signals per machine (None
    where the model has no such state). ``torque_model='measured'`` uses the torque
    signals; ``'transfer'`` instead applies the model's torque transfer matrix at the
    estimated frequency to the measured speed phasors. Powers are divided by ``scale``.
    """
    ng = lm.ng
    if len(omega) != ng or len(eq) != ng:
        raise EstimationError(f"need one speed and one E'q signal per machine ({ng})")

    def pick(names_):
        missing = [n for n in names_ if n is not None and n not in est.names]
        if missing:
            raise EstimationError(f"missing signal(s) for the declared model: {', '.join(missing)}")
        return np.array([est.amplitude(n) if n is not None else 0.0 for n in names_], dtype=complex)

    w = pick(omega)
    wd = est.lam.imag
    if torque_model == "measured":
        if torque is None:
            raise EstimationError("torque signals are required for measured torque")
        T = pick(torque)
    elif torque_model == "transfer":
        T = torque_transfer(lm, wd).K @ w
    else:
        raise ValueError(f"unknown torque model {torque_model!r}")
    ps = PhasorSet(est.lam, np.sqrt(scale / 2) + 0j, est.t0, np.zeros(lm.nx, complex), (), ng)
    eq_p = pick(eq)
    ed_p = pick(ed) if ed is not None else np.zeros(ng, complex)
    if efd_phasors is not None:
        efd_p = np.asarray(efd_phasors, dtype=complex)
    elif efd is not None:
        efd_p = pick(efd)
    else:
        efd_p = np.zeros(ng, complex)
    if lm.kind != "simplified" and any(lm.has_exciter) and efd is None and efd_phasors is None:
        raise EstimationError("exciter-augmented model needs E_fd signals or phasors")
    dp = dissipation_powers(lm, ps, efd=efd_p, eq=eq_p, ed=ed_p)
    Wd = 0.5 * np.real(T * np.conj(w)) / scale
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(np.abs(w) > 0, T / w, np.nan)
    notes = [f"torque: {torque_model}"]
    if est.unreliable:
        notes.append("unreliable fits: " + ", ".join(est.unreliable))
    return EnergyReport(label or f"measured {est.f_Hz:.3f} Hz", est.lam, list(machines), Wd, dp.Wf, dp.Wg,
                        np.real(ratio), np.imag(ratio), source="measured", notes=notes)


def model_comparison(est: ModeEstimate, lm: LinearModel, mode: Mode, machines: list[str],
                     reference: int, *, torque: list[str] | None = None, efd: list[str] | None = None,
                     efd_phasors: np.ndarray | None = None,
                     torque_model: str = "measured") -> tuple[EnergyReport, EnergyReport]:
    """Small-signal and measured reports on a common scale.

    Both are expressed per unit modal amplitude: the measured phasors are mapped onto
    the model's mode through the speed of machine ``reference`` (index), which must be
    the estimate's reference signal or share its mode.
    """
    ng = lm.ng
    sn = list(lm.state_names)
    ps = phasors(mode, ng, "reference", reference=reference)
    small, _ = energy_report(lm, mode, ps, machines)
    scale = abs(est.amplitude(sn[ng + reference])) ** 2 * ps.scale
    ed = [sn[k] if k >= 0 else None for k in lm.i_ed]
    if lm.kind == "simplified":
        ed = None
    meas = measured_energetics(est, lm, machines, omega=sn[ng:2 * ng], eq=sn[2 * ng:3 * ng],
                               torque=torque, ed=ed, efd=efd, efd_phasors=efd_phasors,
                               torque_model=torque_model, scale=scale)
    return small, meas
