import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gazeattn import _kernels_py, kernels

BACKENDS = kernels.backends()


def loop_conv(x, w, b):
    n, h, wd, _ = x.shape
    kh, kw, cin, cout = w.shape
    out = np.zeros((n, h, wd, cout))
    for s in range(n):
        for i in range(h):
            for j in range(wd):
                for o in range(cout):
                    acc = b[o]
                    for di in range(kh):
                        for dj in range(kw):
                            r, c = i + di - kh // 2, j + dj - kw // 2
                            if 0 <= r < h and 0 <= c < wd:
                                for ci in range(cin):
                                    acc += x[s, r, c, ci] * w[di, dj, ci, o]
                    out[s, i, j, o] = acc
    return out


def brute_counts(pos, neg):
    greater = sum(1 for p in pos for q in neg if p > q)
    equal = sum(1 for p in pos for q in neg if p == q)
    return greater, equal


@pytest.mark.parametrize("name", sorted(BACKENDS))
class TestEachBackend:
    def test_conv_matches_loop(self, name, rng):
        mod = BACKENDS[name]
        x = rng.normal(size=(2, 5, 4, 3))
        w = rng.normal(size=(3, 3, 3, 2))
        b = rng.normal(size=2)
        np.testing.assert_allclose(mod.conv2d_forward(x, w, b), loop_conv(x, w, b), rtol=1e-12, atol=1e-12)

    def test_conv_1x1(self, name, rng):
        mod = BACKENDS[name]
        x = rng.normal(size=(1, 3, 3, 4))
        w = rng.normal(size=(1, 1, 4, 2))
        np.testing.assert_allclose(mod.conv2d_forward(x, w, np.zeros(2)), x @ w[0, 0], atol=1e-12)

    def test_empty_inputs(self, name):
        mod = BACKENDS[name]
        out = mod.conv2d_forward(np.zeros((2, 3, 3, 0)), np.zeros((3, 3, 0, 2)), np.array([1.0, 2.0]))
        np.testing.assert_array_equal(out, np.broadcast_to([1.0, 2.0], (2, 3, 3, 2)))
        assert mod.conv2d_grad_weight(np.zeros((0, 3, 3, 1)), np.zeros((0, 3, 3, 2)), 3, 3).shape == (3, 3, 1, 2)
        np.testing.assert_array_equal(mod.conv2d_grad_weight(np.zeros((0, 3, 3, 1)), np.zeros((0, 3, 3, 2)), 3, 3), 0)

    def test_grad_input_is_adjoint(self, name, rng):
        # <conv(x), d> == <x, conv^T(d)> for zero bias
        mod = BACKENDS[name]
        x = rng.normal(size=(2, 4, 5, 3))
        w = rng.normal(size=(3, 3, 3, 4))
        d = rng.normal(size=(2, 4, 5, 4))
        lhs = np.sum(mod.conv2d_forward(x, w, np.zeros(4)) * d)
        rhs = np.sum(x * mod.conv2d_grad_input(d, w))
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_grad_weight_is_adjoint(self, name, rng):
        mod = BACKENDS[name]
        x = rng.normal(size=(2, 4, 5, 3))
        w = rng.normal(size=(3, 3, 3, 4))
        d = rng.normal(size=(2, 4, 5, 4))
        lhs = np.sum(mod.conv2d_forward(x, w, np.zeros(4)) * d)
        rhs = np.sum(w * mod.conv2d_grad_weight(x, d, 3, 3))
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_rank_counts(self, name, rng):
        mod = BACKENDS[name]
        for _ in range(50):
            pos = rng.integers(0, 6, size=int(rng.integers(1, 9))).astype(float)
            neg = rng.integers(0, 6, size=int(rng.integers(1, 9))).astype(float)
            assert tuple(mod.rank_counts(pos, neg)) == brute_counts(pos, neg)


@pytest.mark.skipif("cython" not in BACKENDS, reason="compiled extension not built")
class TestParity:
    @given(st.integers(0, 2**32 - 1))
    def test_conv_parity(self, seed):
        rng = np.random.default_rng(seed)
        n, h, w, cin, cout = (int(v) for v in rng.integers(1, 6, size=5))
        x = rng.normal(size=(n, h, w, cin))
        wt = rng.normal(size=(3, 3, cin, cout))
        b = rng.normal(size=cout)
        d = rng.normal(size=(n, h, w, cout))
        cy, py = BACKENDS["cython"], BACKENDS["python"]
        np.testing.assert_allclose(cy.conv2d_forward(x, wt, b), py.conv2d_forward(x, wt, b), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(cy.conv2d_grad_input(d, wt), py.conv2d_grad_input(d, wt), rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(cy.conv2d_grad_weight(x, d, 3, 3), py.conv2d_grad_weight(x, d, 3, 3),
                                   rtol=1e-12, atol=1e-11)

    @given(st.lists(st.integers(-3, 3), min_size=1, max_size=30), st.lists(st.integers(-3, 3), min_size=1, max_size=30))
    def test_rank_parity(self, pos, neg):
        pos, neg = np.array(pos, float), np.array(neg, float)
        assert tuple(BACKENDS["cython"].rank_counts(pos, neg)) == tuple(BACKENDS["python"].rank_counts(pos, neg))


def test_backend_flag():
    assert kernels.BACKEND in ("cython", "python")
    assert BACKENDS["python"] is _kernels_py
