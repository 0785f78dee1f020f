import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fusiongen import kernels
from fusiongen import _pykernels

SEEDS = st.integers(0, 2**32 - 1)


def naive_corr_down(x, K, r):
    B, C, t, d_in = x.shape
    d_out = K.shape[0]
    left = r // 2
    out = np.zeros((B, C, t // r, d_out))
    for j in range(t // r):
        for m in range(2 * r):
            src = j * r + m - left
            if 0 <= src < t:
                out[:, :, j, :] += x[:, :, src, :] @ K[:, :, m].T
    return out


def test_active_backend_is_listed():
    assert kernels.BACKEND in kernels.available()


@settings(max_examples=40, deadline=None)
@given(seed=SEEDS)
def test_corr_down_matches_loops(backend, seed):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, 7))
    B, C, J, di, do = (int(v) for v in rng.integers(1, 4, size=5))
    x = rng.standard_normal((B, C, J * r, di))
    K = rng.standard_normal((do, di, 2 * r))
    np.testing.assert_allclose(backend.corr_down(x, K, r), naive_corr_down(x, K, r), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=SEEDS)
def test_backends_agree(seed):
    mods = kernels.available()
    if len(mods) < 2:
        pytest.skip("compiled backend not built")
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, 7))
    B, C, J, di, do = (int(v) for v in rng.integers(1, 5, size=5))
    x = rng.standard_normal((B, C, J * r, di))
    K = rng.standard_normal((do, di, 2 * r))
    y = rng.standard_normal((B, C, J, do))
    py, cy = mods["python"], mods["compiled"]
    np.testing.assert_allclose(cy.corr_down(x, K, r), py.corr_down(x, K, r), atol=1e-12)
    np.testing.assert_allclose(cy.scatter_up(y, K, r, J * r), py.scatter_up(y, K, r, J * r), atol=1e-12)
    np.testing.assert_allclose(cy.kernel_grad(x, y, r), py.kernel_grad(x, y, r), atol=1e-11)
    t = rng.standard_normal((int(rng.integers(1, 30)), do))
    s = rng.standard_normal((int(rng.integers(1, 30)), do))
    s[0] = 0.0
    (ci, cs), (pi, ps) = cy.cosine_argmax(t, s), py.cosine_argmax(t, s)
    np.testing.assert_array_equal(ci, pi)
    np.testing.assert_allclose(cs, ps, rtol=1e-14, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(seed=SEEDS)
def test_scatter_up_is_adjoint_of_corr_down(backend, seed):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, 7))
    B, C, J, di, do = (int(v) for v in rng.integers(1, 4, size=5))
    x = rng.standard_normal((B, C, J * r, di))
    K = rng.standard_normal((do, di, 2 * r))
    y = rng.standard_normal((B, C, J, do))
    lhs = np.sum(backend.corr_down(x, K, r) * y)
    rhs = np.sum(x * backend.scatter_up(y, K, r, J * r))
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


def test_cosine_argmax_zero_vectors(backend):
    t = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]])
    s = np.array([[0.0, 0.0], [2.0, 0.0]])
    idx, sim = backend.cosine_argmax(t, s)
    assert list(idx) == [1, -1, 1]
    assert sim[0] == 1.0 and np.isnan(sim[1]) and sim[2] == 0.0


def test_cosine_argmax_only_zero_sources(backend):
    idx, sim = backend.cosine_argmax(np.ones((2, 3)), np.zeros((4, 3)))
    assert list(idx) == [-1, -1] and np.isnan(sim).all()


def test_python_backend_name():
    assert _pykernels.NAME == "python"
