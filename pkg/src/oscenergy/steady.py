"""Power flow, machine initialization and operating-point sweeps."""

from __future__ import annotations

import csv
import heapq
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dae import PowerSystemDAE, injection_jacobian, injections
from .sysdata import SystemSpec, build_ybus

log = logging.getLogger(__name__)


class PowerFlowError(RuntimeError):
    pass


class InitializationError(RuntimeError):
    pass


@dataclass
class OperatingPoint:
    V0: np.ndarray
    theta0: np.ndarray
    Pg: np.ndarray
    Qg: np.ndarray
    delta0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    Eq0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    Ed0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    Efd0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    Tm0: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mismatch: float = 0.0
    iterations: int = 0
    label: str = ""


# --------------------------------------------------------------------------- power flow

def solve_powerflow(spec: SystemSpec, pg=None, vsched=None, *, slack: int | None = None,
                    start: OperatingPoint | None = None, tol: float = 1e-10,
                    max_iter: int = 30) -> OperatingPoint:
    """Newton power flow with generator buses PV, one slack, load buses PQ.

    ``pg``/``vsched`` default to the system dispatch; ``start`` warm-starts from a
    previous solution. Mismatch is the max-norm of the PQ equations in pu.
    """
    d = spec.dispatch
    pg = np.asarray(d.pg if pg is None else pg, dtype=float)
    vsched = np.asarray(d.vsched if vsched is None else vsched, dtype=float)
    slack = d.slack if slack is None else slack
    n = spec.n_bus
    Y = build_ybus(spec)
    gb = spec.machine_bus_index
    s_idx = spec.bus_index(slack)

    P_spec = -np.array([b.p_load for b in spec.buses])
    Q_spec = -np.array([b.q_load for b in spec.buses])
    P_spec[gb] += pg
    pq = np.array([k for k in range(n) if spec.buses[k].kind != "generator"], dtype=int)
    pvpq = np.array([k for k in range(n) if k != s_idx], dtype=int)

    if start is not None:
        th, V = start.theta0.copy(), start.V0.copy()
        V[gb] = vsched
    else:
        th, V = np.zeros(n), np.ones(n)
        V[gb] = vsched
    th[s_idx] = 0.0 if start is None else start.theta0[s_idx]

    def mismatch(th, V):
        P, Q = injections(Y, th, V)
        return np.concatenate([(P_spec - P)[pvpq], (Q_spec - Q)[pq]])

    F = mismatch(th, V)
    norm = np.max(np.abs(F)) if F.size else 0.0
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise PowerFlowError(f"power flow did not converge in {max_iter} iterations "
                                 f"(final mismatch {norm:.3e} pu)")
        dS_dth, dS_dV = injection_jacobian(Y, th, V)
        J = np.block([[dS_dth.real[np.ix_(pvpq, pvpq)], dS_dV.real[np.ix_(pvpq, pq)]],
                      [dS_dth.imag[np.ix_(pq, pvpq)], dS_dV.imag[np.ix_(pq, pq)]]])
        try:
            dx = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            raise PowerFlowError(f"singular power-flow Jacobian at iteration {it}") from None
        step = 1.0
        for _ in range(5):
            th_n, V_n = th.copy(), V.copy()
            th_n[pvpq] += step * dx[: len(pvpq)]
            V_n[pq] += step * dx[len(pvpq):]
            F_n = mismatch(th_n, V_n)
            norm_n = np.max(np.abs(F_n))
            if norm_n < norm or step < 0.1:
                break
            step *= 0.5
        th, V, F, norm = th_n, V_n, F_n, norm_n
        it += 1
        if np.any(V <= 0):
            raise PowerFlowError(f"voltage collapse during power flow at iteration {it}")

    P, Q = injections(Y, th, V)
    Pg = P[gb] + np.array([spec.buses[k].p_load for k in gb])
    Qg = Q[gb] + np.array([spec.buses[k].q_load for k in gb])
    return OperatingPoint(V0=V, theta0=th, Pg=Pg, Qg=Qg, mismatch=float(norm), iterations=it)


# --------------------------------------------------------------------------- machines

def init_machines(spec: SystemSpec, bus: OperatingPoint) -> OperatingPoint:
    """Machine internal states for which every derivative vanishes.

    The rotor angle comes from ``V + j x_q I``; E'd is computed with x_q' where the
    machine declares one (it is ignored by the third-order model).
    """
    gb = spec.machine_bus_index
    ng = spec.n_gen
    delta0, Eq0, Ed0, Efd0 = (np.zeros(ng) for _ in range(4))
    for i, m in enumerate(spec.machines):
        V = bus.V0[gb[i]] * np.exp(1j * bus.theta0[gb[i]])
        I = np.conj(complex(bus.Pg[i], bus.Qg[i]) / V)
        E = V + 1j * m.xq * I
        delta = np.angle(E)
        rot = np.exp(-1j * (delta - np.pi / 2))
        vdq, idq = V * rot, I * rot
        Vq, Id, Iq = vdq.imag, idq.real, idq.imag
        Eq = Vq + m.xd_p * Id
        efd = Eq + (m.xd - m.xd_p) * Id
        if efd < 0:
            raise InitializationError(f"machine {m.name} at bus {m.bus}: infeasible "
                                      f"initialization, E_fd = {efd:.4f} < 0")
        delta0[i], Eq0[i], Efd0[i] = delta, Eq, efd
        if m.xq_p is not None:
            Ed0[i] = (m.xq - m.xq_p) * Iq
    return replace(bus, delta0=delta0, Eq0=Eq0, Ed0=Ed0, Efd0=Efd0, Tm0=bus.Pg.copy())


def operating_point(spec: SystemSpec, pg=None, vsched=None, *, start=None, label="") -> OperatingPoint:
    op = init_machines(spec, solve_powerflow(spec, pg, vsched, start=start))
    op.label = label
    return op


def equilibrium_residual(spec: SystemSpec, op: OperatingPoint, kind: str = "simplified") -> tuple[float, float]:
    """Max |f| over the differential equations and max |g| over the algebraic ones."""
    dae = PowerSystemDAE(spec, op, kind)
    x, y = dae.x0(), dae.y0()
    return float(np.max(np.abs(dae.f(x, y)))), float(np.max(np.abs(dae.g(x, y))))


# --------------------------------------------------------------------------- sweeps

@dataclass
class SweepPlan:
    kind: str  # "tie_flow" | "uniform_load"
    values: tuple[float, ...]
    # tie_flow: sending/receiving machine bus ids, tie branch (from, to) bus ids
    sending: tuple[int, ...] = ()
    receiving: tuple[int, ...] = ()
    tie: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in ("tie_flow", "uniform_load"):
            raise ValueError(f"unknown sweep kind {self.kind!r}")
        v = np.asarray(self.values, dtype=float)
        if len(v) > 1:
            dv = np.diff(v)
            if not (np.all(dv > 0) or np.all(dv < 0)):
                raise ValueError("sweep values must be strictly monotone")
        if self.kind == "tie_flow" and (not self.sending or not self.receiving or self.tie is None):
            raise ValueError("tie_flow sweep needs sending/receiving machines and a tie branch")


@dataclass
class SweepPoint:
    value: float
    op: OperatingPoint | None
    spec: SystemSpec
    tie_flow: float = float("nan")
    error: str = ""

    @property
    def ok(self) -> bool:
        return self.op is not None


def branch_flow(spec: SystemSpec, op: OperatingPoint, from_bus: int, to_bus: int) -> float:
    """Active power (pu) from ``from_bus`` to ``to_bus`` summed over parallel branches."""
    i, k = spec.bus_index(from_bus), spec.bus_index(to_bus)
    Vi = op.V0[i] * np.exp(1j * op.theta0[i])
    Vk = op.V0[k] * np.exp(1j * op.theta0[k])
    total = 0.0
    for br in spec.branches:
        if {br.from_bus, br.to_bus} != {from_bus, to_bus}:
            continue
        y, a = 1.0 / complex(br.r, br.x), br.tap
        if br.from_bus == from_bus:
            Iik = Vi * (y / a**2 + 0.5j * br.b_sh) - Vk * y / a
        else:
            Iik = Vi * (y + 0.5j * br.b_sh) - Vk * y / a
        total += (Vi * np.conj(Iik)).real
    return float(total)


def tie_flow_dispatch(spec: SystemSpec, plan: SweepPlan, flow: float) -> np.ndarray:
    """Redispatch so the sending area exports ``flow`` (pu) with total load fixed.

    Sending-area machines share (their area load + flow) in proportion to their
    nominal dispatch; receiving-area machines absorb the opposite change the same way.
    The slack sits in the receiving area and picks up any residual.
    """
    pg = np.array(spec.dispatch.pg, dtype=float)
    buses = [m.bus for m in spec.machines]
    snd = [buses.index(b) for b in plan.sending]
    rcv = [buses.index(b) for b in plan.receiving]
    area_load = _area_load(spec, plan.sending)
    target = area_load + flow
    w = pg[snd] / pg[snd].sum()
    delta = target - pg[snd].sum()
    pg[snd] += delta * w
    wr = pg[rcv] / pg[rcv].sum()
    pg[rcv] -= delta * wr
    return pg


def _area_load(spec: SystemSpec, machines: tuple[int, ...]) -> float:
    """Load of the network side attached to ``machines`` when ties are cut.

    The area is the set of buses whose electrically nearest machine is one of
    ``machines`` (see :func:`area_buses`).
    """
    return float(sum(spec.buses[k].p_load for k in area_buses(spec, machines)))


def area_buses(spec: SystemSpec, machines: tuple[int, ...]) -> list[int]:
    """Bus indices electrically closest to ``machines``: buses whose nearest machine
    (by branch-reactance distance) is one of them."""
    idx = {b.id: k for k, b in enumerate(spec.buses)}
    adj: dict[int, list[tuple[int, float]]] = {k: [] for k in range(spec.n_bus)}
    for br in spec.branches:
        i, k = idx[br.from_bus], idx[br.to_bus]
        adj[i].append((k, br.x))
        adj[k].append((i, br.x))
    dist = np.full(spec.n_bus, np.inf)
    owner = np.full(spec.n_bus, -1)
    heap = []
    for m in spec.machines:
        j = idx[m.bus]
        dist[j] = 0.0
        owner[j] = m.bus
        heap.append((0.0, j, m.bus))
    heapq.heapify(heap)
    while heap:
        dj, j, o = heapq.heappop(heap)
        if dj > dist[j]:
            continue
        for k, w in adj[j]:
            if dj + w < dist[k]:
                dist[k] = dj + w
                owner[k] = o
                heapq.heappush(heap, (dj + w, k, o))
    return [k for k in range(spec.n_bus) if owner[k] in machines]


def run_sweep(spec: SystemSpec, plan: SweepPlan, *, warm_start: bool = True) -> list[SweepPoint]:
    """Solve one operating point per plan value; failures are recorded, not raised."""
    points: list[SweepPoint] = []
    prev: OperatingPoint | None = None
    for v in plan.values:
        try:
            if plan.kind == "tie_flow":
                pg = tie_flow_dispatch(spec, plan, v / spec.S_base)
                sp = replace(spec, dispatch=replace(spec.dispatch, pg=tuple(pg)))
            else:
                sp = spec.scaled_load(v)
            bus = solve_powerflow(sp, start=prev if warm_start else None)
            op = init_machines(sp, bus)
            op.label = f"{plan.kind}={v:g}"
            tie = branch_flow(sp, op, *plan.tie) * sp.S_base if plan.tie else float("nan")
            points.append(SweepPoint(v, op, sp, tie))
            prev = bus
        except (PowerFlowError, InitializationError) as exc:
            log.warning("sweep point %s=%g failed: %s", plan.kind, v, exc)
            points.append(SweepPoint(v, None, spec, error=str(exc)))
    return points


def write_sweep_csv(points: list[SweepPoint], path: str | Path) -> None:
    rows = []
    for p in points:
        row = {"value": p.value, "tie_flow_MW": p.tie_flow,
               "load_MW": p.spec.total_load * p.spec.S_base, "ok": p.ok, "error": p.error}
        if p.ok:
            row["mismatch"] = p.op.mismatch
            for m, pg, qg, d in zip(p.spec.machines, p.op.Pg, p.op.Qg, p.op.delta0):
                row[f"Pg[{m.name}]"] = pg
                row[f"Qg[{m.name}]"] = qg
                row[f"delta0[{m.name}]"] = d
        rows.append(row)
    keys: list[str] = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in keys})


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.10g}"
    return v


def standard_sweep(name: str) -> SweepPlan:
    """Operating-point sweeps used for the built-in systems: the 4-machine tie flow from
    433 MW to -400 MW (21 points) and the 16-machine uniform load scale 0.9 to 1.1 (11 points)."""
    if name == "kundur_4mc":
        return SweepPlan("tie_flow", tuple(np.linspace(433.0, -400.0, 21)), (1, 2), (3, 4), (7, 8))
    if name == "nyne_16mc":
        return SweepPlan("uniform_load", tuple(np.linspace(0.9, 1.1, 11)))
    raise KeyError(f"no standard sweep for {name!r}")
