import os
import subprocess
import sys

import numpy as np
import pytest

from mcode import _rng, kernels
from mcode.codes import Code, MechanismTable
from mcode.estimator import draw_samples
from mcode.expr import DerivativeOrderError, RhsSystem
from mcode.sampling import SampleOptions


def test_env_flag_selects_numpy(monkeypatch):
    monkeypatch.setenv(kernels.ENV_FLAG, "1")
    assert kernels.default_backend() == "numpy"
    monkeypatch.setenv(kernels.ENV_FLAG, "0")
    assert kernels.default_backend() == ("numba" if kernels.HAVE_NUMBA else "numpy")


def test_env_flag_in_fresh_interpreter():
    env = dict(os.environ, **{kernels.ENV_FLAG: "1"})
    out = subprocess.run([sys.executable, "-c", "from mcode import kernels; print(kernels.default_backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_unknown_backend():
    with pytest.raises(ValueError):
        draw_samples(RhsSystem(["y0^2"], [1.0]), MechanismTable.autonomous(1), 0, 0.3, 10, backend="cuda")


def test_chunked_indices_give_the_same_trees():
    sys = RhsSystem(["y0^2"], [1.0])
    table = MechanismTable.autonomous(1)
    base = _rng.stream_key(1, 0)
    idx = np.arange(10_000)
    whole = kernels.draw(sys, table, Code.identity(0), 0.4, idx, SampleOptions(), base)
    part = kernels.draw(sys, table, Code.identity(0), 0.4, idx[5000:], SampleOptions(), base)
    np.testing.assert_array_equal(whole.values[5000:], part.values)


def test_jet_cache_growth_and_cap():
    jc = kernels.JetCache(RhsSystem(["cos(y0)"], [1.0]), order=4, max_order=20)
    assert jc.ensure(3).order == 4
    assert jc.ensure(5).order == 8
    assert jc.ensure(19).order == 19
    with pytest.raises(DerivativeOrderError):
        jc.ensure(21)
    poly = kernels.JetCache(RhsSystem(["y0^2"], [1.0]))
    assert poly.table.complete and poly.ensure(40).order == 2


def test_set_threads_is_harmless():
    kernels.set_threads(1)
