"""Linearized DAE matrices, reduction to the state matrix and its block partition.

The algebraic variables are ``[theta | nu]`` with ``nu = V / V0``, which makes the
algebraic Jacobian D symmetric for a lossless network.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dae import PowerSystemDAE
from .sysdata import SystemSpec

D_COND_LIMIT = 1e12


class ReductionError(RuntimeError):
    pass


class PartitionError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearModel:
    M: np.ndarray
    N: np.ndarray
    C: np.ndarray
    D: np.ndarray
    A: np.ndarray
    B: np.ndarray
    state_names: tuple[str, ...]
    alg_names: tuple[str, ...]
    Hmat: np.ndarray
    Pmat: np.ndarray
    omega_s: float
    ng: int
    kind: str
    blocks: dict = field(default_factory=dict)
    # maps state perturbation to E_fd perturbation; zero rows for manual excitation
    Efd_map: np.ndarray | None = None
    # per-machine q-axis dissipation weight T'qo/(x_q - x'_q); zero for third order
    Gmat: np.ndarray | None = None
    # per-machine x_d - x'_d
    xdd: np.ndarray | None = None
    # per-machine column of E'd (-1 when absent)
    i_ed: tuple[int, ...] = ()
    has_exciter: tuple[bool, ...] = ()
    label: str = ""

    @property
    def nx(self) -> int:
        return self.A.shape[0]

    @property
    def nz(self) -> int:
        return self.nx - 2 * self.ng

    @property
    def state_index(self) -> dict[str, int]:
        return {n: k for k, n in enumerate(self.state_names)}

    def block(self, name: str) -> np.ndarray:
        return self.blocks[name]


def build_jacobians(spec: SystemSpec, op, kind: str = "simplified",
                    dae: PowerSystemDAE | None = None) -> tuple[np.ndarray, ...]:
    """M, N, C, D at the operating point with voltage columns scaled by V0."""
    dae = dae or PowerSystemDAE(spec, op, kind)
    x, y = dae.x0(op), dae.y0(op)
    fx, fy, gx, gy = dae.jacobians(x, y)
    scale = np.concatenate([np.ones(dae.nb), np.asarray(op.V0, dtype=float)])
    return fx, fy * scale[None, :], gx, gy * scale[None, :]


def reduce(M: np.ndarray, N: np.ndarray, C: np.ndarray, D: np.ndarray, *, label: str = "") -> np.ndarray:
    """A = M - N D^-1 C through a linear solve."""
    if N.size == 0 or not np.any(N):
        return M.copy()
    cond = np.linalg.cond(D)
    if not np.isfinite(cond) or cond > D_COND_LIMIT:
        where = f" at operating point {label!r}" if label else ""
        raise ReductionError(f"algebraic Jacobian singular or ill-conditioned{where} "
                             f"(cond = {cond:.3e}); possible voltage collapse")
    X = np.linalg.solve(D, C)
    res = np.linalg.norm(D @ X - C, np.inf) / max(1.0, np.linalg.norm(C, np.inf))
    if res > 1e-10:
        raise ReductionError(f"linear solve residual {res:.2e} too large{' at ' + label if label else ''}")
    return M - N @ X


def partition(A: np.ndarray, ng: int, kind: str = "simplified") -> dict[str, np.ndarray]:
    """Blocks of A under the [delta | omega | z] ordering.

    Raises if the kinematic rows are not ``[0 I 0]`` or, for the simplified model,
    if A22 or A32 are nonzero.
    """
    n = A.shape[0]
    if A.shape != (n, n) or n < 2 * ng:
        raise PartitionError(f"state matrix shape {A.shape} inconsistent with {ng} machines")
    d, w, z = slice(0, ng), slice(ng, 2 * ng), slice(2 * ng, n)
    top = A[d]
    expect = np.zeros((ng, n))
    expect[:, ng:2 * ng] = np.eye(ng)
    if not np.array_equal(top, expect):
        raise PartitionError("rows of the rotor-angle states are not [0 I 0]; state ordering corrupted")
    blocks = {"A21": A[w, d], "A22": A[w, w], "A23": A[w, z],
              "A31": A[z, d], "A32": A[z, w], "A33": A[z, z]}
    if kind == "simplified":
        for key in ("A22", "A32"):
            if np.max(np.abs(blocks[key]), initial=0.0) > 1e-12:
                raise PartitionError(f"{key} must vanish for the simplified model")
    return blocks


def assemble(blocks: dict[str, np.ndarray]) -> np.ndarray:
    ng = blocks["A21"].shape[0]
    nz = blocks["A33"].shape[0]
    top = np.hstack([np.zeros((ng, ng)), np.eye(ng), np.zeros((ng, nz))])
    mid = np.hstack([blocks["A21"], blocks["A22"], blocks["A23"]])
    bot = np.hstack([blocks["A31"], blocks["A32"], blocks["A33"]])
    return np.vstack([top, mid, bot])


def linearize(spec: SystemSpec, op, kind: str = "simplified", *, label: str = "") -> LinearModel:
    """Full linear model (matrices, blocks and the weights used by the energy formulas)."""
    dae = PowerSystemDAE(spec, op, kind)
    x, y = dae.x0(op), dae.y0(op)
    M, N, C, D = build_jacobians(spec, op, kind, dae)
    A = reduce(M, N, C, D, label=label or getattr(op, "label", ""))
    # kinematic rows are exact by construction; clear round-off from the reduction
    A[: dae.ng] = 0.0
    A[np.arange(dae.ng), dae.ng + np.arange(dae.ng)] = 1.0
    blocks = partition(A, dae.ng, kind)
    gq = np.where(dae.fourth, dae.Tqo / np.where(dae.fourth, dae.xq - dae.xqp, 1.0), 0.0)
    lm = LinearModel(M=M, N=N, C=C, D=D, A=A, B=dae.input_matrix(x, y),
                     state_names=tuple(dae.state_names), alg_names=tuple(dae.alg_names),
                     Hmat=dae.Hmat, Pmat=dae.Pmat, omega_s=dae.omega_s, ng=dae.ng, kind=kind,
                     blocks=blocks, Efd_map=dae.efd_output_row(x, y), Gmat=np.diag(gq),
                     xdd=dae.xd - dae.xdp, i_ed=tuple(int(i) for i in dae.i_ed),
                     has_exciter=tuple(e.kind != "manual" for e in dae.exciters),
                     label=label or getattr(op, "label", ""))
    return lm


def jacobian_identities(lm: LinearModel) -> dict[str, float]:
    """Relative residuals of the structural identities of the simplified model."""
    if lm.kind != "simplified":
        raise ValueError("Jacobian identities are proven only for the simplified model")
    ng = lm.ng
    d, w, q = slice(0, ng), slice(ng, 2 * ng), slice(2 * ng, 3 * ng)
    th, nu = slice(0, lm.D.shape[0] // 2), slice(lm.D.shape[0] // 2, None)
    H2 = 2 * lm.Hmat / lm.omega_s
    P, Pi = lm.Pmat, np.linalg.inv(lm.Pmat)
    M, N, C, D = lm.M, lm.N, lm.C, lm.D

    def rel(a, b):
        den = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-300)
        return float(np.max(np.abs(a - b)) / den)

    def offdiag(X):
        return float(np.max(np.abs(X - np.diag(np.diag(X)))) / max(np.max(np.abs(X)), 1e-300))

    Dinv = np.linalg.inv(D)
    return {
        "D symmetric": float(np.max(np.abs(D - D.T)) / np.max(np.abs(D))),
        "D^-1 symmetric": rel(Dinv, Dinv.T),
        "P^-1 C13^T = N31": rel(Pi @ C[th, q].T, N[q, th]),
        "P^-1 C23^T = N32": rel(Pi @ C[nu, q].T, N[q, nu]),
        "C11^T = (2H/ws) N21": rel(C[th, d].T, H2 @ N[w, th]),
        "C21^T = (2H/ws) N22": rel(C[nu, d].T, H2 @ N[w, nu]),
        "M31^T P = (2H/ws) M23": rel(M[q, d].T @ P, H2 @ M[w, q]),
        "H M21 = M21^T H": rel(lm.Hmat @ M[w, d], M[w, d].T @ lm.Hmat),
        "M33 diagonal": offdiag(M[q, q]),
        "M31 diagonal": offdiag(M[q, d]),
        "M23 diagonal": offdiag(M[w, q]),
        "M21 diagonal": offdiag(M[w, d]),
    }


def finite_difference_jacobians(spec: SystemSpec, op, kind: str = "simplified",
                                h: float = 1e-5) -> tuple[np.ndarray, ...]:
    """Central-difference M, N, C, D of the nonlinear residuals (nu-scaled).

    The default step balances truncation against round-off for entries a few
    orders below the largest in their row."""
    dae = PowerSystemDAE(spec, op, kind)
    x0, y0 = dae.x0(op), dae.y0(op)
    V0 = np.asarray(op.V0, dtype=float)
    nb = dae.nb

    def yfrom(v):
        return np.concatenate([v[:nb], v[nb:] * V0])

    v0 = np.concatenate([y0[:nb], np.ones(nb)])
    nx, ny = len(x0), len(v0)
    M, N = np.zeros((nx, nx)), np.zeros((nx, ny))
    C, D = np.zeros((ny, nx)), np.zeros((ny, ny))
    for k in range(nx):
        e = np.zeros(nx)
        e[k] = h
        M[:, k] = (dae.f(x0 + e, y0) - dae.f(x0 - e, y0)) / (2 * h)
        C[:, k] = (dae.g(x0 + e, y0) - dae.g(x0 - e, y0)) / (2 * h)
    for k in range(ny):
        e = np.zeros(ny)
        e[k] = h
        N[:, k] = (dae.f(x0, yfrom(v0 + e)) - dae.f(x0, yfrom(v0 - e))) / (2 * h)
        D[:, k] = (dae.g(x0, yfrom(v0 + e)) - dae.g(x0, yfrom(v0 - e))) / (2 * h)
    return M, N, C, D


def jacobian_fd_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Max relative error over analytic entries whose magnitude exceeds ``floor``;
    entries below it must agree to ``floor`` in absolute terms."""
    worst = 0.0
    for a, b in zip(analytic, numeric):
        mask = np.abs(a) > floor
        if np.any(mask):
            worst = max(worst, float(np.max(np.abs(a[mask] - b[mask]) / np.abs(a[mask]))))
        small = np.abs(a - b)[~mask]
        if small.size and np.max(small) > 10 * floor:
            worst = max(worst, float(np.max(small)))
    return worst


def dump_matrices(lm: LinearModel, directory: str | Path) -> Path:
    """Write every matrix as whitespace-delimited text plus a label manifest."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    st, al = list(lm.state_names), list(lm.alg_names)
    z = st[2 * lm.ng:]
    gd, gw = st[: lm.ng], st[lm.ng: 2 * lm.ng]
    inputs = [f"Tm[{s[6:-1]}]" for s in gw] + [f"Efd_in[{s[6:-1]}]" for s in gw]
    mats = {"M": (lm.M, st, st), "N": (lm.N, st, al), "C": (lm.C, al, st), "D": (lm.D, al, al),
            "A": (lm.A, st, st), "B": (lm.B, st, inputs), "H": (lm.Hmat, gw, gw), "P": (lm.Pmat, z[: lm.ng], z[: lm.ng]),
            "A21": (lm.blocks["A21"], gw, gd), "A22": (lm.blocks["A22"], gw, gw), "A23": (lm.blocks["A23"], gw, z),
            "A31": (lm.blocks["A31"], z, gd), "A32": (lm.blocks["A32"], z, gw), "A33": (lm.blocks["A33"], z, z)}
    manifest = {"omega_s": lm.omega_s, "model": lm.kind, "label": lm.label, "matrices": {}}
    for name, (mat, rows, cols) in mats.items():
        fn = f"{name}.txt"
        np.savetxt(out / fn, mat, fmt="%.17g")
        manifest["matrices"][name] = {"file": fn, "shape": list(mat.shape), "rows": rows, "cols": cols}
    (out / "matrices.json").write_text(json.dumps(manifest, indent=2))
    return out
