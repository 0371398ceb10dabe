import functools

import numpy as np
import pytest

from oscenergy.linmodel import linearize
from oscenergy.modal import eig_modes, select_em_modes
from oscenergy.steady import operating_point
from oscenergy.sysdata import load_builtin

SYSTEMS = ("kundur_4mc", "nyne_16mc")


@functools.lru_cache(maxsize=None)
def system(name):
    spec = load_builtin(name)
    return spec, operating_point(spec, label="nominal")


@functools.lru_cache(maxsize=None)
def model(name, kind="simplified"):
    spec, op = system(name)
    return linearize(spec, op, kind, label=name)


@functools.lru_cache(maxsize=None)
def selected(name, kind="simplified"):
    lm = model(name, kind)
    return select_em_modes(eig_modes(lm.A), lm.ng).modes


def machine_names(name):
    return [m.name for m in system(name)[0].machines]


@pytest.fixture(params=SYSTEMS)
def sysname(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)
