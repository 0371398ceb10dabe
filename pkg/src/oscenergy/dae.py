"""Nonlinear differential-algebraic model of the multimachine system.

States are grouped ``[delta | omega | E'q | E'd | exciter | PSS]`` (machine-major
inside each group); algebraic variables are ``[theta | V]`` over all buses.
Speed is carried in rad/s so that ``d(delta)/dt = omega - omega_s``.

Machines use the flux-decay (third order, q-axis reactance x_q) or two-axis
(fourth order, E'd state behind x_q') model with zero stator resistance.
Loads are constant power.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sysdata import ExciterSpec, SystemSpec, build_ybus

MODEL_KINDS = ("simplified", "detailed")


def injections(Y: np.ndarray, th: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Active and reactive power leaving each bus into the network."""
    Vc = V * np.exp(1j * th)
    S = Vc * np.conj(Y @ Vc)
    return S.real, S.imag


def injection_jacobian(Y: np.ndarray, th: np.ndarray, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partials of complex injections S = V conj(Y V) w.r.t. theta and |V|."""
    Vc = V * np.exp(1j * th)
    Ibus = Y @ Vc
    dS_dth = 1j * np.diag(Vc) @ np.conj(np.diag(Ibus) - Y * Vc[None, :])
    Vn = Vc / V
    dS_dV = np.diag(Vc) @ np.conj(Y * Vn[None, :]) + np.diag(np.conj(Ibus) * Vn)
    return dS_dth, dS_dV


@dataclass
class MachineCurrents:
    Id: np.ndarray
    Iq: np.ndarray
    Pg: np.ndarray
    Qg: np.ndarray
    # partials w.r.t. (delta, theta_bus, V_bus, E'q, E'd), each shape (ng,)
    dPg: dict
    dQg: dict
    dId: dict
    dIq: dict


class PowerSystemDAE:
    """Residual functions and analytic Jacobians for one system + operating point.

    ``kind='simplified'`` forces third-order machines with manual excitation;
    ``'detailed'`` uses each machine's declared order and the system's exciters.
    Setpoints (T_m, manual E_fd, voltage references) come from ``op``.
    """

    def __init__(self, spec: SystemSpec, op=None, kind: str = "simplified",
                 fault_shunt: dict[int, float] | None = None, v_break: float = 0.0):
        if kind not in MODEL_KINDS:
            raise ValueError(f"model kind must be one of {MODEL_KINDS}, got {kind!r}")
        self.spec = spec
        self.kind = kind
        self.ng = ng = spec.n_gen
        self.nb = nb = spec.n_bus
        self.omega_s = spec.omega_s
        self.gbus = spec.machine_bus_index
        ms = spec.machines
        self.H = np.array([m.H for m in ms])
        self.xd = np.array([m.xd for m in ms])
        self.xdp = np.array([m.xd_p for m in ms])
        self.xq = np.array([m.xq for m in ms])
        self.Tdo = np.array([m.Tdo_p for m in ms])
        self.fourth = np.array([kind == "detailed" and m.order == "fourth" for m in ms])
        self.xqp = np.array([m.xq_p if f else m.xq for m, f in zip(ms, self.fourth)])
        self.Tqo = np.array([m.Tqo_p if f else 1.0 for m, f in zip(ms, self.fourth)])
        # q-axis reactance seen by the stator
        self.xqe = np.where(self.fourth, self.xqp, self.xq)

        self.exciters: list[ExciterSpec] = []
        for m in ms:
            exc = spec.exciters.get(m.bus) if kind == "detailed" else None
            self.exciters.append(exc if exc is not None else ExciterSpec(bus=m.bus))

        # state layout
        names: list[str] = []
        gname = [m.name for m in ms]
        self.i_delta = np.arange(ng)
        self.i_omega = ng + np.arange(ng)
        self.i_eq = 2 * ng + np.arange(ng)
        names += [f"delta[{g}]" for g in gname]
        names += [f"omega[{g}]" for g in gname]
        names += [f"Eq_p[{g}]" for g in gname]
        k = 3 * ng
        self.i_ed = -np.ones(ng, dtype=int)
        for i in range(ng):
            if self.fourth[i]:
                self.i_ed[i] = k
                names.append(f"Ed_p[{gname[i]}]")
                k += 1
        self.i_exc = -np.ones(ng, dtype=int)  # E_fd (static) or v_m (ST1A)
        for i, exc in enumerate(self.exciters):
            if exc.kind == "static_first_order":
                self.i_exc[i] = k
                names.append(f"Efd[{gname[i]}]")
                k += 1
            elif exc.kind == "st1a_pss":
                self.i_exc[i] = k
                names.append(f"vm[{gname[i]}]")
                k += 1
        self.i_xw = -np.ones(ng, dtype=int)
        self.i_xl = -np.ones(ng, dtype=int)
        for i, exc in enumerate(self.exciters):
            if exc.has_pss:
                self.i_xw[i], self.i_xl[i] = k, k + 1
                names += [f"pss_washout[{gname[i]}]", f"pss_leadlag[{gname[i]}]"]
                k += 2
        self.nx = k
        self.state_names = names
        self.alg_names = [f"theta[{b.id}]" for b in spec.buses] + [f"V[{b.id}]" for b in spec.buses]
        self.ny = 2 * nb
        self.nz = self.nx - 2 * ng

        self.Y = build_ybus(spec, extra_shunt=fault_shunt)
        self.P_load = np.array([b.p_load for b in spec.buses])
        self.Q_load = np.array([b.q_load for b in spec.buses])
        # below v_break loads turn constant-impedance (only reached during faults)
        self.v_break = float(v_break)
        self.fault_shunt = fault_shunt

        self.Tm = np.zeros(ng)
        self.Efd0 = np.zeros(ng)
        self.Vref = np.zeros(ng)
        self.op = op
        if op is not None:
            self.set_operating_point(op)

    # ------------------------------------------------------------------ setup
    def with_fault(self, fault_shunt: dict[int, float] | None) -> "PowerSystemDAE":
        """Same model and setpoints on a network with an added shunt (or none)."""
        other = PowerSystemDAE(self.spec, None, self.kind, fault_shunt, self.v_break)
        other.Tm, other.Efd0, other.Vref, other.op = self.Tm, self.Efd0, self.Vref, self.op
        return other

    def set_operating_point(self, op) -> None:
        self.op = op
        self.Tm = np.asarray(op.Tm0, dtype=float).copy()
        self.Efd0 = np.asarray(op.Efd0, dtype=float).copy()
        ka = np.array([e.K_A if e.kind != "manual" else 1.0 for e in self.exciters])
        vg = np.asarray(op.V0)[self.gbus]
        self.Vref = vg + self.Efd0 / ka

    def x0(self, op=None) -> np.ndarray:
        op = op if op is not None else self.op
        x = np.zeros(self.nx)
        x[self.i_delta] = op.delta0
        x[self.i_omega] = self.omega_s
        x[self.i_eq] = op.Eq0
        for i in range(self.ng):
            if self.i_ed[i] >= 0:
                x[self.i_ed[i]] = op.Ed0[i]
            kind = self.exciters[i].kind
            if kind == "static_first_order":
                x[self.i_exc[i]] = op.Efd0[i]
            elif kind == "st1a_pss":
                x[self.i_exc[i]] = op.V0[self.gbus[i]]
        return x

    def y0(self, op=None) -> np.ndarray:
        op = op if op is not None else self.op
        return np.concatenate([op.theta0, op.V0])

    @property
    def Hmat(self) -> np.ndarray:
        return np.diag(self.H)

    @property
    def Pmat(self) -> np.ndarray:
        return np.diag(self.Tdo / (self.xd - self.xdp))

    @property
    def n_inputs(self) -> int:
        return 2 * self.ng

    # ------------------------------------------------------------------ pieces
    def _split(self, x, y):
        th = y[: self.nb]
        V = y[self.nb:]
        d = x[self.i_delta]
        eq = x[self.i_eq]
        ed = np.where(self.i_ed >= 0, x[np.maximum(self.i_ed, 0)], 0.0)
        return d, eq, ed, th, V

    def currents(self, x, y) -> MachineCurrents:
        d, eq, ed, th, V = self._split(x, y)
        Vb = V[self.gbus]
        phi = d - th[self.gbus]
        s, c = np.sin(phi), np.cos(phi)
        xdp, xqe = self.xdp, self.xqe
        Id = (eq - Vb * c) / xdp
        Iq = (Vb * s - ed) / xqe
        dId = {"d": Vb * s / xdp, "t": -Vb * s / xdp, "V": -c / xdp,
               "q": 1.0 / xdp, "e": np.zeros(self.ng)}
        dIq = {"d": Vb * c / xqe, "t": -Vb * c / xqe, "V": s / xqe,
               "q": np.zeros(self.ng), "e": np.where(self.fourth, -1.0 / xqe, 0.0)}
        ds = {"d": c, "t": -c}
        dc = {"d": -s, "t": s}
        Pg = Vb * (Id * s + Iq * c)
        Qg = Vb * (Id * c - Iq * s)
        dPg, dQg = {}, {}
        for key in ("d", "t"):
            dPg[key] = Vb * (dId[key] * s + Id * ds[key] + dIq[key] * c + Iq * dc[key])
            dQg[key] = Vb * (dId[key] * c + Id * dc[key] - dIq[key] * s - Iq * ds[key])
        dPg["V"] = (Id * s + Iq * c) + Vb * (dId["V"] * s + dIq["V"] * c)
        dQg["V"] = (Id * c - Iq * s) + Vb * (dId["V"] * c - dIq["V"] * s)
        for key in ("q", "e"):
            dPg[key] = Vb * (dId[key] * s + dIq[key] * c)
            dQg[key] = Vb * (dId[key] * c - dIq[key] * s)
        return MachineCurrents(Id, Iq, Pg, Qg, dPg, dQg, dId, dIq)

    def field_voltage(self, x, y, uE=None) -> tuple[np.ndarray, np.ndarray]:
        """E_fd per machine and its Jacobian w.r.t. the state vector."""
        ng = self.ng
        uE = np.zeros(ng) if uE is None else uE
        efd = np.zeros(ng)
        J = np.zeros((ng, self.nx))
        for i, exc in enumerate(self.exciters):
            if exc.kind == "manual":
                efd[i] = self.Efd0[i] + uE[i]
            elif exc.kind == "static_first_order":
                efd[i] = x[self.i_exc[i]]
                J[i, self.i_exc[i]] = 1.0
            else:
                vs, dvs = self._pss_output(i, x)
                efd[i] = exc.K_A * (self.Vref[i] - x[self.i_exc[i]] + vs) + uE[i]
                J[i, self.i_exc[i]] = -exc.K_A
                for col, val in dvs.items():
                    J[i, col] += exc.K_A * val
        return efd, J

    def _pss_output(self, i, x) -> tuple[float, dict]:
        exc = self.exciters[i]
        if not exc.has_pss:
            return 0.0, {}
        iw, il, io = self.i_xw[i], self.i_xl[i], self.i_omega[i]
        a = exc.T_1 / exc.T_2
        kw = exc.K_pss / self.omega_s
        vw = kw * (x[io] - self.omega_s) - x[iw]
        vs = x[il] + a * (vw - x[il])
        return vs, {io: a * kw, iw: -a, il: 1.0 - a}

    def network_injection(self, y) -> tuple[np.ndarray, np.ndarray]:
        return injections(self.Y, y[: self.nb], y[self.nb:])

    def network_jacobian(self, y) -> tuple[np.ndarray, np.ndarray]:
        return injection_jacobian(self.Y, y[: self.nb], y[self.nb:])

    # ------------------------------------------------------------------ residuals
    def f(self, x, y, u=None) -> np.ndarray:
        ng, ws = self.ng, self.omega_s
        uT = np.zeros(ng) if u is None else u[:ng]
        uE = np.zeros(ng) if u is None else u[ng:]
        mc = self.currents(x, y)
        efd, _ = self.field_voltage(x, y, uE)
        _, eq, ed, _, V = self._split(x, y)
        dx = np.zeros(self.nx)
        dx[self.i_delta] = x[self.i_omega] - ws
        dx[self.i_omega] = ws / (2 * self.H) * (self.Tm + uT - mc.Pg)
        dx[self.i_eq] = (efd - eq - (self.xd - self.xdp) * mc.Id) / self.Tdo
        for i in range(ng):
            if self.i_ed[i] >= 0:
                dx[self.i_ed[i]] = (-ed[i] + (self.xq[i] - self.xqp[i]) * mc.Iq[i]) / self.Tqo[i]
            exc = self.exciters[i]
            Vb = V[self.gbus[i]]
            if exc.kind == "static_first_order":
                k = self.i_exc[i]
                dx[k] = (exc.K_A * (self.Vref[i] - Vb) + uE[i] - x[k]) / exc.T_R
            elif exc.kind == "st1a_pss":
                k = self.i_exc[i]
                dx[k] = (Vb - x[k]) / exc.T_R
                if exc.has_pss:
                    iw, il = self.i_xw[i], self.i_xl[i]
                    vw = exc.K_pss * (x[self.i_omega[i]] - ws) / ws - x[iw]
                    dx[iw] = vw / exc.T_w
                    dx[il] = (vw - x[il]) / exc.T_2
        return dx

    def load_factor(self, V) -> tuple[np.ndarray, np.ndarray]:
        """Load multiplier per bus and its derivative in V."""
        if self.v_break <= 0:
            return np.ones_like(V), np.zeros_like(V)
        low = V < self.v_break
        k = np.where(low, (V / self.v_break) ** 2, 1.0)
        dk = np.where(low, 2 * V / self.v_break ** 2, 0.0)
        return k, dk

    def g(self, x, y) -> np.ndarray:
        P, Q = self.network_injection(y)
        mc = self.currents(x, y)
        k, _ = self.load_factor(y[self.nb:])
        gP = -self.P_load * k - P
        gQ = -self.Q_load * k - Q
        np.add.at(gP, self.gbus, mc.Pg)
        np.add.at(gQ, self.gbus, mc.Qg)
        return np.concatenate([gP, gQ])

    def electrical_torque(self, x, y) -> np.ndarray:
        return self.currents(x, y).Pg

    # ------------------------------------------------------------------ Jacobians
    def jacobians(self, x, y) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Analytic (f_x, f_y, g_x, g_y) at an arbitrary point (unscaled V)."""
        ng, nb, nx, ws = self.ng, self.nb, self.nx, self.omega_s
        mc = self.currents(x, y)
        _, efd_x = self.field_voltage(x, y)
        fx = np.zeros((nx, nx))
        fy = np.zeros((nx, 2 * nb))
        gx = np.zeros((2 * nb, nx))
        gy = np.zeros((2 * nb, 2 * nb))
        gb = self.gbus
        iD, iW, iQ = self.i_delta, self.i_omega, self.i_eq
        fx[iD, iW] = 1.0

        def scatter(row_idx, coef, dct):
            # d(row)/d(machine variables) with coefficient coef (ng,)
            fx[row_idx, iD] += coef * dct["d"]
            fx[row_idx, iQ] += coef * dct["q"]
            fy[row_idx, gb] += coef * dct["t"]
            fy[row_idx, nb + gb] += coef * dct["V"]
            has = self.i_ed >= 0
            fx[row_idx[has], self.i_ed[has]] += (coef * dct["e"])[has]

        scatter(iW, -ws / (2 * self.H), mc.dPg)
        scatter(iQ, -(self.xd - self.xdp) / self.Tdo, mc.dId)
        fx[iQ, iQ] += -1.0 / self.Tdo
        fx[iQ, :] += efd_x / self.Tdo[:, None]
        for i in range(ng):
            if self.i_ed[i] >= 0:
                r = self.i_ed[i]
                k = (self.xq[i] - self.xqp[i]) / self.Tqo[i]
                fx[r, iD[i]] += k * mc.dIq["d"][i]
                fx[r, iQ[i]] += k * mc.dIq["q"][i]
                fx[r, r] += -1.0 / self.Tqo[i] + k * mc.dIq["e"][i]
                fy[r, gb[i]] += k * mc.dIq["t"][i]
                fy[r, nb + gb[i]] += k * mc.dIq["V"][i]
            exc = self.exciters[i]
            if exc.kind == "static_first_order":
                r = self.i_exc[i]
                fx[r, r] = -1.0 / exc.T_R
                fy[r, nb + gb[i]] = -exc.K_A / exc.T_R
            elif exc.kind == "st1a_pss":
                r = self.i_exc[i]
                fx[r, r] = -1.0 / exc.T_R
                fy[r, nb + gb[i]] = 1.0 / exc.T_R
                if exc.has_pss:
                    iw, il = self.i_xw[i], self.i_xl[i]
                    kw = exc.K_pss / ws
                    fx[iw, iW[i]] = kw / exc.T_w
                    fx[iw, iw] = -1.0 / exc.T_w
                    fx[il, iW[i]] = kw / exc.T_2
                    fx[il, iw] = -1.0 / exc.T_2
                    fx[il, il] = -1.0 / exc.T_2

        dS_dth, dS_dV = self.network_jacobian(y)
        gy[:nb, :nb] = -dS_dth.real
        gy[:nb, nb:] = -dS_dV.real
        gy[nb:, :nb] = -dS_dth.imag
        gy[nb:, nb:] = -dS_dV.imag
        _, dk = self.load_factor(y[nb:])
        gy[np.arange(nb), nb + np.arange(nb)] -= self.P_load * dk
        gy[nb + np.arange(nb), nb + np.arange(nb)] -= self.Q_load * dk
        for rows, dct in ((gb, mc.dPg), (nb + gb, mc.dQg)):
            gx[rows, iD] += dct["d"]
            gx[rows, iQ] += dct["q"]
            has = self.i_ed >= 0
            gx[rows[has], self.i_ed[has]] += dct["e"][has]
            gy[rows, gb] += dct["t"]
            gy[rows, nb + gb] += dct["V"]
        return fx, fy, gx, gy

    def input_matrix(self, x, y) -> np.ndarray:
        """Partial of f w.r.t. inputs u = [dT_m (ng) | dE_fd (ng)]."""
        ng = self.ng
        Bu = np.zeros((self.nx, 2 * ng))
        Bu[self.i_omega, np.arange(ng)] = self.omega_s / (2 * self.H)
        for i, exc in enumerate(self.exciters):
            if exc.kind == "static_first_order":
                Bu[self.i_exc[i], ng + i] = 1.0 / exc.T_R
            else:
                # manual and ST1A: u_E adds directly to E_fd
                Bu[self.i_eq[i], ng + i] = 1.0 / self.Tdo[i]
        return Bu

    def efd_output_row(self, x, y) -> np.ndarray:
        """Linear map from a state perturbation to the E_fd perturbation (ng x nx)."""
        return self.field_voltage(x, y)[1]
