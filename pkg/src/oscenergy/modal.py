"""Eigenanalysis, electromechanical mode selection and modal phasors."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-8


class ModalError(RuntimeError):
    pass


@dataclass(frozen=True)
class Mode:
    lam: complex
    psi: np.ndarray
    phi: np.ndarray
    residual: float
    index: int = -1

    @property
    def sigma(self) -> float:
        return float(self.lam.real)

    @property
    def omega_d(self) -> float:
        return float(self.lam.imag)

    @property
    def f_Hz(self) -> float:
        return self.omega_d / (2 * np.pi)

    @property
    def zeta(self) -> float:
        return float(-self.lam.real / abs(self.lam))

    def describe(self) -> str:
        return f"{self.sigma:+.4f}{self.omega_d:+.4f}j ({self.f_Hz:.3f} Hz, zeta {self.zeta:.4f})"


def eig_modes(A: np.ndarray, *, min_imag: float = 1e-6) -> list[Mode]:
    """All oscillatory modes (one per conjugate pair) sorted by frequency.

    Left vectors are scaled so that ``phi^T psi = 1``; right vectors have unit
    2-norm with the largest entry real positive.
    """
    A = np.asarray(A, dtype=float)
    try:
        w, vl, vr = linalg.eig(A, left=True, right=True)
    except linalg.LinAlgError as exc:
        raise ModalError(f"eigensolver failed: {exc}") from None
    modes = []
    norm_a = max(np.linalg.norm(A, 2), 1.0)
    for k in np.flatnonzero(w.imag > min_imag):
        lam = complex(w[k])
        psi = vr[:, k] / np.linalg.norm(vr[:, k])
        psi = psi * np.exp(-1j * np.angle(psi[np.argmax(np.abs(psi))]))
        phi = np.conj(vl[:, k])
        s = phi @ psi
        if abs(s) < 1e-14:
            log.warning("mode %s: nearly defective (phi^T psi = %.1e)", lam, abs(s))
        phi = phi / s
        res = float(np.linalg.norm(A @ psi - lam * psi) / np.linalg.norm(psi))
        if res > RESIDUAL_TOL * norm_a:
            log.warning("mode %s: eigen-residual %.2e above tolerance (defective matrix?)", lam, res)
        modes.append(Mode(lam, psi, phi, res, int(k)))
    modes.sort(key=lambda m: m.omega_d)
    return modes


def conjugate_pair_error(A: np.ndarray, mode: Mode) -> float:
    w = np.linalg.eigvals(A)
    return float(np.min(np.abs(w - np.conj(mode.lam))))


def participation(mode: Mode) -> np.ndarray:
    p = np.abs(mode.phi * mode.psi)
    return p / p.sum()


@dataclass
class Selection:
    modes: list[Mode]
    diagnostic: str = ""


def select_em_modes(modes: list[Mode], ng: int, f_range: tuple[float, float] = (0.1, 3.0),
                    zeta_max: float = 0.1, *, min_mech_participation: float = 0.2) -> Selection:
    """Modes in the band with damping at most ``zeta_max`` whose rotor states
    (angle and speed) carry a non-negligible share of the participation."""
    lo, hi = f_range
    keep, rejected = [], []
    for m in modes:
        mech = float(participation(m)[: 2 * ng].sum())
        reason = None
        if not lo <= m.f_Hz <= hi:
            reason = "outside band"
        elif m.zeta > zeta_max:
            reason = f"zeta {m.zeta:.4f} > {zeta_max:g}"
        elif mech < min_mech_participation:
            reason = f"rotor participation {mech:.2f} < {min_mech_participation:g}"
        if reason is None:
            keep.append(m)
        else:
            rejected.append((m, reason))
    diag = ""
    if not keep:
        near = sorted(rejected, key=lambda mr: min(abs(mr[0].f_Hz - lo), abs(mr[0].f_Hz - hi))
                      if not lo <= mr[0].f_Hz <= hi else 0.0)[:5]
        diag = "no electromechanical mode selected; nearest rejected: " + "; ".join(
            f"{m.describe()} [{r}]" for m, r in near)
        log.info(diag)
    return Selection(keep, diag)


def mac(a: np.ndarray, b: np.ndarray) -> float:
    """Modal assurance criterion of two complex shapes."""
    return float(abs(np.vdot(a, b)) ** 2 / (np.vdot(a, a).real * np.vdot(b, b).real))


def track(previous: Mode, candidates: list[Mode], ng: int, threshold: float = 0.8) -> Mode | None:
    """The candidate whose rotor-speed shape best matches ``previous`` (MAC >= threshold)."""
    w = slice(ng, 2 * ng)
    best, score = None, threshold
    for m in candidates:
        s = mac(previous.psi[w], m.psi[w])
        if s >= score:
            best, score = m, s
    return best


# --------------------------------------------------------------------------- phasors

@dataclass(frozen=True)
class PhasorSet:
    """Phasors ``x = 2 c_hat psi`` of every state for one mode at time ``t0``."""
    lam: complex
    c_hat: complex
    t0: float
    x: np.ndarray
    state_names: tuple[str, ...] = ()
    ng: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def omega_d(self) -> float:
        return float(self.lam.imag)

    @property
    def sigma(self) -> float:
        return float(self.lam.real)

    @property
    def scale(self) -> float:
        """2|c_hat|^2, the normalizer of every reported power."""
        return 2 * abs(self.c_hat) ** 2

    @property
    def delta(self) -> np.ndarray:
        return self.x[: self.ng]

    @property
    def omega(self) -> np.ndarray:
        return self.x[self.ng: 2 * self.ng]

    @property
    def z(self) -> np.ndarray:
        return self.x[2 * self.ng:]

    def derivative(self, zeta_max: float = 0.1) -> np.ndarray:
        """Phasor of the time derivative, ``j omega_d x`` (poorly damped modes only)."""
        zeta = -self.lam.real / abs(self.lam)
        if zeta > zeta_max:
            raise ModalError(f"derivative phasor rule needs a poorly damped mode (zeta {zeta:.3f} > {zeta_max})")
        return 1j * self.omega_d * self.x

    def scaled(self, c: complex) -> "PhasorSet":
        return PhasorSet(self.lam, self.c_hat * c, self.t0, self.x * c, self.state_names, self.ng,
                         {k: v * c for k, v in self.extra.items()})


def phasors(mode: Mode, ng: int, normalization: str = "unit", *, reference: int | None = None,
            x0: np.ndarray | None = None, t0: float = 0.0, state_names=()) -> PhasorSet:
    """Phasor set under one of the ``unit``, ``reference`` or ``initial`` normalizations.

    ``unit``: c_hat = 1/2 so the phasors equal psi. ``reference``: the speed phasor of
    machine ``reference`` (index) becomes 1 at angle 0. ``initial``: c = phi^T x0.
    """
    if normalization == "unit":
        c_hat = 0.5 + 0j
    elif normalization == "reference":
        if reference is None:
            raise ValueError("reference normalization needs a machine index")
        pw = mode.psi[ng + reference]
        if abs(pw) < 1e-10:
            raise ModalError(f"reference machine {reference} has negligible speed participation ({abs(pw):.1e})")
        c_hat = 1.0 / (2 * pw)
    elif normalization == "initial":
        if x0 is None:
            raise ValueError("initial normalization needs an initial state")
        c = complex(mode.phi @ np.asarray(x0))
        c_hat = c * np.exp(mode.lam.real * t0)
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    x = 2 * c_hat * mode.psi
    if normalization == "initial" and t0 != 0.0:
        # complex amplitude of the actual signal at t0
        x = x * np.exp(1j * mode.lam.imag * t0)
    return PhasorSet(mode.lam, c_hat, t0, x, tuple(state_names), ng)


def reconstruct(ps: PhasorSet, t: np.ndarray, values: np.ndarray | None = None) -> np.ndarray:
    """Real time series ``beta e^{sigma (t - t0)} cos(omega_d (t - t0) + gamma)`` per phasor.

    ``values`` defaults to the state phasors; any phasor vector at t0 may be passed.
    Returns shape (len(values), len(t)).
    """
    v = ps.x if values is None else np.asarray(values)
    tt = np.asarray(t, dtype=float) - ps.t0
    return np.real(v[:, None] * np.exp(ps.lam * tt)[None, :])


def write_mode_table(modes: list[Mode], ng: int, machine_names: list[str], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        hdr = ["mode", "sigma", "omega_d", "f_Hz", "zeta", "residual"]
        for n in machine_names:
            hdr += [f"abs_psi_w[{n}]", f"ang_psi_w_deg[{n}]"]
        w.writerow(hdr)
        for k, m in enumerate(modes):
            pw = m.psi[ng: 2 * ng]
            ref = pw[np.argmax(np.abs(pw))]
            rel = pw / ref
            row = [k, f"{m.sigma:.10g}", f"{m.omega_d:.10g}", f"{m.f_Hz:.10g}", f"{m.zeta:.10g}", f"{m.residual:.3e}"]
            for v in rel:
                row += [f"{abs(v):.8g}", f"{np.degrees(np.angle(v)):.6g}"]
            w.writerow(row)
