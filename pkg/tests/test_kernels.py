import os
import subprocess
import sys

import numpy as np
import pytest

from acgan_re import _pykernels, kernels

compiled = pytest.importorskip("acgan_re._ckernels")


def test_backend_switch():
    old = kernels.BACKEND
    assert kernels.use("python") == "python"
    assert kernels.pool_forward is _pykernels.pool_forward
    kernels.use(old)


def test_env_var_selects_fallback():
    code = "import acgan_re.kernels as k; print(k.BACKEND)"
    env = dict(os.environ, ACGAN_RE_KERNELS="python")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("seed", range(5))
def test_pool_parity(seed):
    rng = np.random.default_rng(seed)
    B, L, F = 6, 9, 4
    feat = rng.normal(size=(B, L, F))
    feat[0, :, 0] = 1.0  # ties resolve to the first index in both
    lengths = rng.integers(2, L + 1, size=B)
    e1 = np.array([rng.integers(0, n - 1) for n in lengths])
    e2 = np.array([rng.integers(a + 1, n) for a, n in zip(e1, lengths)])
    args = (feat, e1.astype(np.int64), e2.astype(np.int64), lengths.astype(np.int64))
    p1, a1 = compiled.pool_forward(*args)
    p2, a2 = _pykernels.pool_forward(*args)
    assert np.array_equal(p1, p2) and np.array_equal(a1, a2)
    d = rng.normal(size=p1.shape)
    assert np.allclose(compiled.pool_backward(d, a1, L), _pykernels.pool_backward(d, a2, L), atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_lstm_pointwise_parity(seed):
    rng = np.random.default_rng(seed)
    gates, c = rng.normal(size=(4, 12)) * 3, rng.normal(size=(4, 3))
    a = compiled.lstm_pointwise(gates, c)
    b = _pykernels.lstm_pointwise(gates, c)
    for x, y in zip(a, b):
        assert np.allclose(x, y, atol=1e-15)
    dh, dc = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    for x, y in zip(compiled.lstm_pointwise_backward(dh, dc, c, a[2], a[3]), _pykernels.lstm_pointwise_backward(dh, dc, c, b[2], b[3])):
        assert np.allclose(x, y, atol=1e-14)


def test_sampling_parity():
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(7), size=500)
    probs[:5] = 0.0
    probs[:5, 2] = 1.0
    u = rng.random(500)
    u[0] = 0.0
    u[1] = np.nextafter(1.0, 0.0)
    assert np.array_equal(compiled.sample_categorical(probs, u), _pykernels.sample_categorical(probs, u))
    assert np.all(_pykernels.sample_categorical(probs, u)[:5] == 2)
