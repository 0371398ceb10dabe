"""System description: buses, branches, machines, exciters and the lossless Y-bus.

The on-disk format is a single JSON document (described in the README)::

    {
      "name": "...",
      "base": {"mva": 100.0, "hz": 60.0},
      "buses": [{"id": 1, "kind": "generator", "p_load": 0.0, ...}, ...],
      "branches": [{"from": 1, "to": 5, "x": 0.0167, "b_sh": 0.0, "r": 0.0}, ...],
      "machines": [{"bus": 1, "H": 58.5, "xd": 0.2, ...}, ...],
      "exciters": [{"bus": 1, "kind": "st1a_pss", ...}, ...],
      "exciter_sets": {"alt": [...]},
      "dispatch": {"pg": [...], "vsched": [...], "slack": 3}
    }

All electrical quantities are per-unit on the system base except H, the
open-circuit time constants and the base block.
"""

from __future__ import annotations

import copy
import hashlib
import json
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np


class SystemFileError(ValueError):
    """Malformed or inconsistent system description."""


BUS_KINDS = ("generator", "load")
MACHINE_ORDERS = ("third", "fourth")
EXCITER_KINDS = ("manual", "static_first_order", "st1a_pss")


@dataclass(frozen=True)
class BusSpec:
    id: int
    kind: str
    p_load: float = 0.0
    q_load: float = 0.0
    b_shunt: float = 0.0
    base_kv: float = 1.0


@dataclass(frozen=True)
class BranchSpec:
    from_bus: int
    to_bus: int
    x: float
    b_sh: float = 0.0
    r: float = 0.0
    # off-nominal turns ratio on the from side (real, so the network stays reciprocal)
    tap: float = 1.0


@dataclass(frozen=True)
class MachineSpec:
    bus: int
    H: float
    xd: float
    xd_p: float
    xq: float
    Tdo_p: float
    xq_p: float | None = None
    Tqo_p: float | None = None
    order: str = "fourth"
    name: str = ""

    @property
    def R_f(self) -> float:
        """Field-winding 'resistance' (x_d - x_d')/T'_do, the inverse of P(i, i)."""
        return (self.xd - self.xd_p) / self.Tdo_p


@dataclass(frozen=True)
class ExciterSpec:
    bus: int
    kind: str = "manual"
    K_A: float = 0.0
    T_R: float = 0.0
    K_pss: float = 0.0
    T_w: float = 10.0
    T_1: float = 0.0
    T_2: float = 1.0

    @property
    def has_pss(self) -> bool:
        return self.kind == "st1a_pss" and self.K_pss != 0.0


@dataclass(frozen=True)
class Dispatch:
    pg: tuple[float, ...]
    vsched: tuple[float, ...]
    slack: int


@dataclass(frozen=True)
class SystemSpec:
    buses: tuple[BusSpec, ...]
    branches: tuple[BranchSpec, ...]
    machines: tuple[MachineSpec, ...]
    exciters: dict[int, ExciterSpec]
    dispatch: Dispatch
    f_base: float = 60.0
    S_base: float = 100.0
    name: str = ""
    exciter_sets: dict[str, dict[int, ExciterSpec]] = field(default_factory=dict)
    notes: str = ""

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_gen(self) -> int:
        return len(self.machines)

    @property
    def omega_s(self) -> float:
        return 2.0 * np.pi * self.f_base

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def bus_index(self, bus_id: int) -> int:
        for k, b in enumerate(self.buses):
            if b.id == bus_id:
                return k
        raise KeyError(f"unknown bus id {bus_id}")

    @property
    def machine_bus_index(self) -> np.ndarray:
        return np.array([self.bus_index(m.bus) for m in self.machines], dtype=int)

    @property
    def total_load(self) -> float:
        return float(sum(b.p_load for b in self.buses))

    def with_exciter_set(self, name: str) -> "SystemSpec":
        if name not in self.exciter_sets:
            raise KeyError(f"no exciter set named {name!r}; have {sorted(self.exciter_sets)}")
        return replace(self, exciters=dict(self.exciter_sets[name]))

    def with_branch_resistance(self, r: float, *, relative: bool = False) -> "SystemSpec":
        """Copy with every branch resistance set to ``r`` (or ``r * |x|`` when ``relative``).
        Bypasses the lossless check on purpose; only meant for negative-control studies."""
        branches = tuple(replace(br, r=float(r) * (abs(br.x) if relative else 1.0)) for br in self.branches)
        return replace(self, branches=branches)

    def scaled_load(self, factor: float) -> "SystemSpec":
        buses = tuple(replace(b, p_load=b.p_load * factor, q_load=b.q_load * factor)
                      for b in self.buses)
        d = self.dispatch
        pg = tuple(p * factor for p in d.pg)
        return replace(self, buses=buses, dispatch=replace(d, pg=pg))


# --------------------------------------------------------------------------- parsing

def _req(rec: dict, key: str, where: str) -> Any:
    if key not in rec:
        raise SystemFileError(f"{where}: missing field {key!r}")
    return rec[key]


def _num(rec: dict, key: str, where: str, default: float | None = None) -> float:
    if key not in rec:
        if default is None:
            raise SystemFileError(f"{where}: missing field {key!r}")
        return float(default)
    try:
        val = float(rec[key])
    except (TypeError, ValueError):
        raise SystemFileError(f"{where}: field {key!r} is not a number: {rec[key]!r}") from None
    if not np.isfinite(val):
        raise SystemFileError(f"{where}: field {key!r} is not finite")
    return val


def _parse_exciter(rec: dict, where: str) -> ExciterSpec:
    kind = rec.get("kind", "manual")
    if kind not in EXCITER_KINDS:
        raise SystemFileError(f"{where}: unknown exciter kind {kind!r}")
    exc = ExciterSpec(
        bus=int(_req(rec, "bus", where)),
        kind=kind,
        K_A=_num(rec, "K_A", where, 0.0),
        T_R=_num(rec, "T_R", where, 0.0),
        K_pss=_num(rec, "K_pss", where, 0.0),
        T_w=_num(rec, "T_w", where, 10.0),
        T_1=_num(rec, "T_1", where, 0.0),
        T_2=_num(rec, "T_2", where, 1.0),
    )
    if kind != "manual":
        if exc.T_R <= 0 or exc.K_A <= 0:
            raise SystemFileError(f"{where}: exciter needs K_A > 0 and T_R > 0")
    if kind == "st1a_pss" and exc.K_pss != 0.0:
        if exc.T_w <= 0 or exc.T_2 <= 0 or exc.T_1 < 0:
            raise SystemFileError(f"{where}: PSS time constants must be positive")
    return exc


def parse_system(doc: dict, *, strict: bool = True) -> SystemSpec:
    """Build and validate a :class:`SystemSpec` from a decoded JSON document.

    With ``strict`` (the default) a nonzero branch resistance is rejected.
    """
    if not isinstance(doc, dict):
        raise SystemFileError("top level must be an object")
    base = doc.get("base", {})
    S_base = _num(base, "mva", "base", 100.0)
    f_base = _num(base, "hz", "base", 60.0)

    raw_buses = _req(doc, "buses", "system")
    buses = []
    for k, rec in enumerate(raw_buses):
        where = f"buses[{k}]"
        kind = rec.get("kind", "load")
        if kind not in BUS_KINDS:
            raise SystemFileError(f"{where}: unknown bus kind {kind!r}")
        buses.append(BusSpec(
            id=int(_req(rec, "id", where)), kind=kind,
            p_load=_num(rec, "p_load", where, 0.0), q_load=_num(rec, "q_load", where, 0.0),
            b_shunt=_num(rec, "b_shunt", where, 0.0), base_kv=_num(rec, "base_kv", where, 1.0),
        ))
    ids = [b.id for b in buses]
    dup = {i for i in ids if ids.count(i) > 1}
    if dup:
        raise SystemFileError(f"buses: duplicate bus id(s) {sorted(dup)}")
    # generator buses first, file order otherwise preserved
    buses.sort(key=lambda b: b.kind != "generator")
    known = set(ids)

    branches = []
    for k, rec in enumerate(_req(doc, "branches", "system")):
        where = f"branches[{k}]"
        br = BranchSpec(
            from_bus=int(_req(rec, "from", where)), to_bus=int(_req(rec, "to", where)),
            x=_num(rec, "x", where), b_sh=_num(rec, "b_sh", where, 0.0), r=_num(rec, "r", where, 0.0),
            tap=_num(rec, "tap", where, 1.0),
        )
        if br.from_bus not in known or br.to_bus not in known:
            raise SystemFileError(f"{where}: references unknown bus")
        if br.from_bus == br.to_bus:
            raise SystemFileError(f"{where}: self-loop at bus {br.from_bus}")
        if br.x <= 0:
            raise SystemFileError(f"{where}: reactance must be > 0")
        if br.tap <= 0:
            raise SystemFileError(f"{where}: tap ratio must be > 0")
        if br.b_sh < 0:
            raise SystemFileError(f"{where}: shunt susceptance must be >= 0")
        if strict and br.r != 0.0:
            raise SystemFileError(f"{where}: lossless network required (r = {br.r})")
        branches.append(br)

    machines = []
    for k, rec in enumerate(_req(doc, "machines", "system")):
        where = f"machines[{k}]"
        order = rec.get("order", "fourth")
        if order not in MACHINE_ORDERS:
            raise SystemFileError(f"{where}: unknown machine order {order!r}")
        m = MachineSpec(
            bus=int(_req(rec, "bus", where)), H=_num(rec, "H", where), xd=_num(rec, "xd", where),
            xd_p=_num(rec, "xd_p", where), xq=_num(rec, "xq", where), Tdo_p=_num(rec, "Tdo_p", where),
            xq_p=float(rec["xq_p"]) if rec.get("xq_p") is not None else None,
            Tqo_p=float(rec["Tqo_p"]) if rec.get("Tqo_p") is not None else None,
            order=order, name=str(rec.get("name", "")),
        )
        if m.bus not in known:
            raise SystemFileError(f"{where}: references unknown bus {m.bus}")
        if not (m.xd > m.xd_p > 0):
            raise SystemFileError(f"{where}: need xd > xd_p > 0")
        if m.xq <= 0 or m.H <= 0 or m.Tdo_p <= 0:
            raise SystemFileError(f"{where}: xq, H and Tdo_p must be > 0")
        if order == "fourth":
            if m.xq_p is None or m.Tqo_p is None:
                raise SystemFileError(f"{where}: fourth-order machine needs xq_p and Tqo_p")
            if not (m.xq > m.xq_p > 0) or m.Tqo_p <= 0:
                raise SystemFileError(f"{where}: need xq > xq_p > 0 and Tqo_p > 0")
        machines.append(m)

    order_of = {b.id: k for k, b in enumerate(buses)}
    gen_buses = [b.id for b in buses if b.kind == "generator"]
    mbus = [m.bus for m in machines]
    if sorted(mbus) != sorted(gen_buses) or len(set(mbus)) != len(mbus):
        raise SystemFileError("machines: exactly one machine per generator bus required "
                              f"(generator buses {gen_buses}, machine buses {mbus})")
    if not machines:
        raise SystemFileError("machines: at least one machine required")
    perm = sorted(range(len(machines)), key=lambda k: order_of[machines[k].bus])
    machines = [machines[k] for k in perm]
    if not all(m.name for m in machines):
        machines = [m if m.name else replace(m, name=f"G{k + 1}") for k, m in enumerate(machines)]

    def parse_exciters(recs: list, where: str) -> dict[int, ExciterSpec]:
        out: dict[int, ExciterSpec] = {}
        for k, rec in enumerate(recs):
            exc = _parse_exciter(rec, f"{where}[{k}]")
            if exc.bus not in gen_buses:
                raise SystemFileError(f"{where}[{k}]: bus {exc.bus} has no machine")
            if exc.bus in out:
                raise SystemFileError(f"{where}[{k}]: duplicate exciter at bus {exc.bus}")
            out[exc.bus] = exc
        return out

    exciters = parse_exciters(doc.get("exciters", []), "exciters")
    exciter_sets = {name: parse_exciters(recs, f"exciter_sets.{name}")
                    for name, recs in doc.get("exciter_sets", {}).items()}

    disp = _req(doc, "dispatch", "system")
    pg_raw = _req(disp, "pg", "dispatch")
    vs_raw = _req(disp, "vsched", "dispatch")
    if len(pg_raw) != len(machines) or len(vs_raw) != len(machines):
        raise SystemFileError("dispatch: pg and vsched need one entry per machine")
    # dispatch lists follow the machine records as written in the file
    pg = [float(pg_raw[k]) for k in perm]
    vs = [float(vs_raw[k]) for k in perm]
    if any(v <= 0 for v in vs):
        raise SystemFileError("dispatch: vsched must be > 0")
    slack = disp.get("slack")
    if slack is None:
        slack = max(machines, key=lambda m: m.H).bus
    slack = int(slack)
    if slack not in gen_buses:
        raise SystemFileError(f"dispatch: slack bus {slack} is not a generator bus")

    spec = SystemSpec(
        buses=tuple(buses), branches=tuple(branches), machines=tuple(machines),
        exciters=exciters, dispatch=Dispatch(tuple(pg), tuple(vs), slack),
        f_base=f_base, S_base=S_base, name=str(doc.get("name", "")),
        exciter_sets=exciter_sets, notes=str(doc.get("notes", "")),
    )
    _check_connected(spec)
    return spec


def _check_connected(spec: SystemSpec) -> None:
    adj: dict[int, set[int]] = {b.id: set() for b in spec.buses}
    for br in spec.branches:
        adj[br.from_bus].add(br.to_bus)
        adj[br.to_bus].add(br.from_bus)
    start = spec.buses[0].id
    seen = {start}
    queue = deque([start])
    while queue:
        for nb in adj[queue.popleft()]:
            if nb not in seen:
                seen.add(nb)
                queue.append(nb)
    missing = sorted(set(adj) - seen)
    if missing:
        raise SystemFileError(f"network is disconnected; unreachable buses {missing}")


def load_system(path: str | Path, *, strict: bool = True) -> SystemSpec:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise SystemFileError(f"{path}: parse error: {exc}") from exc
    return parse_system(doc, strict=strict)


def _exciter_dict(e: ExciterSpec) -> dict:
    d = {"bus": e.bus, "kind": e.kind}
    if e.kind != "manual":
        d.update(K_A=e.K_A, T_R=e.T_R)
    if e.kind == "st1a_pss":
        d.update(K_pss=e.K_pss, T_w=e.T_w, T_1=e.T_1, T_2=e.T_2)
    return d


def system_to_dict(spec: SystemSpec) -> dict:
    doc: dict[str, Any] = {
        "name": spec.name,
        "base": {"mva": spec.S_base, "hz": spec.f_base},
        "buses": [{"id": b.id, "kind": b.kind, "p_load": b.p_load, "q_load": b.q_load,
                   "b_shunt": b.b_shunt, "base_kv": b.base_kv} for b in spec.buses],
        "branches": [{"from": br.from_bus, "to": br.to_bus, "x": br.x, "b_sh": br.b_sh, "r": br.r, "tap": br.tap}
                     for br in spec.branches],
        "machines": [],
        "exciters": [_exciter_dict(e) for _, e in sorted(spec.exciters.items())],
        "dispatch": {"pg": list(spec.dispatch.pg), "vsched": list(spec.dispatch.vsched),
                     "slack": spec.dispatch.slack},
    }
    for m in spec.machines:
        rec = {"bus": m.bus, "name": m.name, "H": m.H, "xd": m.xd, "xd_p": m.xd_p, "xq": m.xq,
               "Tdo_p": m.Tdo_p, "order": m.order}
        if m.xq_p is not None:
            rec["xq_p"] = m.xq_p
        if m.Tqo_p is not None:
            rec["Tqo_p"] = m.Tqo_p
        doc["machines"].append(rec)
    if spec.exciter_sets:
        doc["exciter_sets"] = {k: [_exciter_dict(e) for _, e in sorted(v.items())]
                               for k, v in spec.exciter_sets.items()}
    if spec.notes:
        doc["notes"] = spec.notes
    return doc


def save_system(spec: SystemSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(system_to_dict(spec), indent=1) + "\n")


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def builtin_system_path(name: str) -> Path:
    """Path of a fixture shipped with the package (``kundur_4mc`` or ``nyne_16mc``)."""
    from importlib import resources

    fname = name if name.endswith(".json") else name + ".json"
    return Path(str(resources.files("oscenergy") / "data" / fname))


def load_builtin(name: str) -> SystemSpec:
    return load_system(builtin_system_path(name))


# --------------------------------------------------------------------------- Y-bus

def build_ybus(spec: SystemSpec, *, extra_shunt: dict[int, float] | None = None) -> np.ndarray:
    """Nodal admittance matrix on the system base.

    Off-diagonals are ``-1/(r + jx)`` summed over parallel branches; the diagonal
    collects series terms, half line charging at each end and bus shunts.
    ``extra_shunt`` maps bus *index* to an added shunt susceptance (fault studies).
    """
    n = spec.n_bus
    idx = {b.id: k for k, b in enumerate(spec.buses)}
    Y = np.zeros((n, n), dtype=complex)
    for br in spec.branches:
        i, k = idx[br.from_bus], idx[br.to_bus]
        y = 1.0 / complex(br.r, br.x)
        a = br.tap
        Y[i, k] -= y / a
        Y[k, i] -= y / a
        Y[i, i] += y / a**2 + 0.5j * br.b_sh
        Y[k, k] += y + 0.5j * br.b_sh
    for k, b in enumerate(spec.buses):
        Y[k, k] += 1j * b.b_shunt
    if extra_shunt:
        for k, bsh in extra_shunt.items():
            Y[k, k] += 1j * bsh
    return Y


def ybus_polar(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Magnitudes and angles of Y entries, the (Y_ik, angle_ik) form used by the
    network equations. For a lossless network off-diagonal angles are +pi/2."""
    return np.abs(Y), np.angle(Y)


def copy_spec(spec: SystemSpec) -> SystemSpec:
    return copy.deepcopy(spec)
