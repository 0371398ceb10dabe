import json

import numpy as np
import pytest

from oscenergy.sysdata import (SystemFileError, build_ybus, builtin_system_path, file_digest,
                               load_builtin, load_system, save_system)

from conftest import SYSTEMS


def _doc(name="kundur_4mc"):
    return json.loads(builtin_system_path(name).read_text())


@pytest.mark.parametrize("name", SYSTEMS)
def test_builtin_loads(name):
    spec = load_builtin(name)
    assert spec.n_gen == len(spec.machines) > 0
    assert spec.n_bus == len(spec.buses)
    assert len(spec.dispatch.pg) == spec.n_gen


def test_machine_counts():
    assert load_builtin("kundur_4mc").n_gen == 4
    assert load_builtin("nyne_16mc").n_gen == 16


def test_lossy_branch_rejected(tmp_path):
    doc = _doc()
    doc["branches"][0]["r"] = 0.001
    p = tmp_path / "lossy.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(SystemFileError, match="lossless network required"):
        load_system(p)


@pytest.mark.parametrize("field,value,msg", [
    ("x", 0.0, "reactance"),
    ("to", 999, "unknown bus"),
])
def test_bad_branch(tmp_path, field, value, msg):
    doc = _doc()
    doc["branches"][0][field] = value
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(SystemFileError, match=msg):
        load_system(p)


def test_round_trip_and_digest(tmp_path):
    spec = load_builtin("kundur_4mc")
    p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
    save_system(spec, p1)
    save_system(load_system(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert file_digest(p1) == file_digest(p2)
    assert len(file_digest(p1)) == 64


def test_ybus_offdiagonal_from_branch_list():
    spec = load_builtin("kundur_4mc")
    br = spec.branches[0]
    Y = build_ybus(spec)
    i, k = spec.bus_index(br.from_bus), spec.bus_index(br.to_bus)
    parallel = [b for b in spec.branches if {b.from_bus, b.to_bus} == {br.from_bus, br.to_bus}]
    expect = -sum(1 / (1j * b.x) / b.tap for b in parallel)
    assert Y[i, k] == pytest.approx(expect, rel=1e-14)


@pytest.mark.parametrize("name", SYSTEMS)
def test_ybus_lossless_symmetric(name):
    Y = build_ybus(load_builtin(name))
    assert np.allclose(Y, Y.T, atol=0)
    assert np.max(np.abs(Y.real)) == 0.0


def test_extra_shunt():
    spec = load_builtin("kundur_4mc")
    k = spec.bus_index(8)
    d = build_ybus(spec, extra_shunt={k: -5.0}) - build_ybus(spec)
    assert d[k, k] == pytest.approx(-5j)
    assert np.count_nonzero(d) == 1


def test_bus_index_unknown():
    with pytest.raises(KeyError):
        load_builtin("kundur_4mc").bus_index(12345)


def test_exciter_sets():
    spec = load_builtin("kundur_4mc")
    alt = spec.with_exciter_set("dc1a_like")
    assert all(e.kind == "static_first_order" for e in alt.exciters.values())
    with pytest.raises(KeyError):
        spec.with_exciter_set("nope")


def test_branch_resistance_injection():
    spec = load_builtin("kundur_4mc")
    rel = spec.with_branch_resistance(0.01, relative=True)
    assert all(b.r == pytest.approx(0.01 * b.x) for b in rel.branches)
    ab = spec.with_branch_resistance(0.002)
    assert all(b.r == 0.002 for b in ab.branches)
    assert np.max(np.abs(build_ybus(ab).real)) > 0
