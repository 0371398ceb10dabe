import numpy as np
import pytest
from scipy import linalg

from oscenergy.modal import (ModalError, eig_modes, mac, participation, phasors, reconstruct,
                             select_em_modes, track, write_mode_table)

from conftest import SYSTEMS, model, selected


def _toy():
    # two decoupled lightly damped oscillators plus a real pole
    A = linalg.block_diag([[0.0, 1.0], [-(2 * np.pi * 0.5) ** 2, -0.2]],
                          [[0.0, 1.0], [-(2 * np.pi * 1.2) ** 2, -0.3]], [[-4.0]])
    return A


def test_toy_eigenvalues():
    modes = eig_modes(_toy())
    assert len(modes) == 2
    ev = np.linalg.eigvals(_toy())
    for m in modes:
        assert np.min(np.abs(ev - m.lam)) < 1e-12
    assert modes[0].f_Hz < modes[1].f_Hz


@pytest.mark.parametrize("name", SYSTEMS)
@pytest.mark.parametrize("kind", ["simplified", "detailed"])
def test_eigenvectors(name, kind):
    lm = model(name, kind)
    for m in eig_modes(lm.A):
        assert np.linalg.norm(lm.A @ m.psi - m.lam * m.psi) < 1e-8 * np.linalg.norm(lm.A, 2)
        assert np.linalg.norm(m.phi @ lm.A - m.lam * m.phi) < 1e-8 * np.linalg.norm(lm.A, 2) * np.linalg.norm(m.phi)
        assert abs(m.phi @ m.psi - 1) < 1e-10
        assert np.linalg.norm(m.psi) == pytest.approx(1.0)


def test_participation_sums_to_one():
    for m in selected("kundur_4mc"):
        assert participation(m).sum() == pytest.approx(1.0)


def test_selection_filters():
    lm = model("nyne_16mc")
    modes = eig_modes(lm.A)
    sel = select_em_modes(modes, lm.ng, (0.1, 3.0), 0.1).modes
    assert sel
    for m in sel:
        assert 0.1 <= m.f_Hz <= 3.0 and m.zeta <= 0.1
        assert participation(m)[: 2 * lm.ng].sum() >= 0.2
    none = select_em_modes(modes, lm.ng, (10.0, 11.0), 0.1)
    assert not none.modes and "nearest rejected" in none.diagnostic


def test_mac_properties(rng):
    a = rng.standard_normal(5) + 1j * rng.standard_normal(5)
    assert mac(a, a) == pytest.approx(1.0)
    assert mac(a, (2 - 3j) * a) == pytest.approx(1.0)
    b = np.zeros(5, complex)
    b[0] = 1.0
    c = np.zeros(5, complex)
    c[1] = 1.0
    assert mac(b, c) == 0.0


def test_track_follows_shape_not_order():
    lm = model("kundur_4mc")
    modes = eig_modes(lm.A)
    target = selected("kundur_4mc")[0]
    # shuffled candidate list: tracking must still find the same mode
    assert track(target, modes[::-1], lm.ng).lam == target.lam


def test_phasor_normalizations():
    lm = model("kundur_4mc")
    m = selected("kundur_4mc")[0]
    unit = phasors(m, lm.ng)
    assert np.allclose(unit.x, m.psi) and unit.scale == pytest.approx(0.5)
    ref = phasors(m, lm.ng, "reference", reference=1)
    assert ref.omega[1] == pytest.approx(1.0 + 0j)
    x0 = np.real(m.psi)
    init = phasors(m, lm.ng, "initial", x0=x0)
    assert init.c_hat == pytest.approx(m.phi @ x0)


def test_reference_with_no_participation():
    m = eig_modes(_toy())[0]
    # the second oscillator has no participation in the first mode
    with pytest.raises(ModalError):
        phasors(m, 1, "reference", reference=1)


def test_reconstruction_matches_expm():
    A = _toy()
    m = eig_modes(A)[0]
    x0 = np.real(m.psi)  # excites only the mode and its conjugate
    ps = phasors(m, 1, "initial", x0=x0)
    t = np.linspace(0, 3, 7)
    ref = np.array([linalg.expm(A * tk) @ x0 for tk in t]).T
    assert np.allclose(reconstruct(ps, t), ref, atol=1e-12)


def test_derivative_rule_guard():
    lm = model("kundur_4mc")
    ps = phasors(selected("kundur_4mc")[0], lm.ng)
    assert np.allclose(ps.derivative(), 1j * ps.omega_d * ps.x)
    heavy = eig_modes(np.array([[0.0, 1.0], [-1.0, -1.0]]))[0]
    with pytest.raises(ModalError):
        phasors(heavy, 1).derivative()


def test_mode_table(tmp_path):
    lm = model("kundur_4mc")
    write_mode_table(selected("kundur_4mc"), lm.ng, ["G1", "G2", "G3", "G4"], tmp_path / "m.csv")
    rows = (tmp_path / "m.csv").read_text().splitlines()
    assert len(rows) == 1 + len(selected("kundur_4mc"))
    assert rows[0].startswith("mode,sigma")
