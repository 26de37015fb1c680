"""Tensor-library tests: hand oracles, finite differences, and structural properties."""

import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointpolicy import numerics as nm
from pointpolicy.numerics import Tensor, parameter


def fd_gradient(fn, param, h=1e-5):
    """Independent central-difference oracle for a scalar objective."""
    grad = np.zeros_like(param.data)
    for i in range(param.size):
        orig = param.data.flat[i]
        param.data.flat[i] = orig + h
        fp = float(fn().data)
        param.data.flat[i] = orig - h
        fm = float(fn().data)
        param.data.flat[i] = orig
        grad.flat[i] = (fp - fm) / (2 * h)
    return grad


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = nm.matmul(a, Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.data, a.data)

    def test_direct_evaluation(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal(nm.matmul(a, b).data, [[19.0, 22.0], [43.0, 50.0]])

    def test_grad_of_sum_is_ones_times_bt(self):
        rng = np.random.default_rng(0)
        a = parameter(rng.normal(size=(3, 4)))
        b = Tensor(rng.normal(size=(4, 5)))
        out = nm.sum_(nm.matmul(a, b))
        out.backward()
        np.testing.assert_allclose(a.grad, np.ones((3, 5)) @ b.data.T, rtol=1e-12)
        fd = fd_gradient(lambda: nm.sum_(nm.matmul(a, b)), a)
        np.testing.assert_allclose(a.grad, fd, rtol=1e-6, atol=1e-8)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(nm.DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            nm.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))

    def test_batched_against_loop(self):
        rng = np.random.default_rng(1)
        a = parameter(rng.normal(size=(2, 3, 4)))
        b = parameter(rng.normal(size=(2, 4, 5)))
        out = nm.matmul(a, b)
        expected = np.stack([a.data[i] @ b.data[i] for i in range(2)])
        np.testing.assert_allclose(out.data, expected, rtol=1e-12)
        err = nm.grad_check(lambda: nm.sum_(nm.mul(nm.matmul(a, b), nm.matmul(a, b))), [a, b])
        assert err < 1e-6


class TestLayerNorm:
    def test_constant_row_collapses_to_bias(self):
        x = Tensor([[3.0, 3.0, 3.0]])
        gain = Tensor([1.0, 1.0, 1.0])
        bias = Tensor([0.5, 0.5, 0.5])
        out = nm.layer_norm(x, gain, bias)
        np.testing.assert_allclose(out.data, [[0.5, 0.5, 0.5]], atol=1e-12)

    def test_hand_oracle_two_points(self):
        # mean 2, population std 1
        out = nm.layer_norm(Tensor([1.0, 3.0]), Tensor([1.0, 1.0]), Tensor([0.0, 0.0]), eps=0.0)
        np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-12)

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(2)
        x = parameter(rng.normal(size=(4, 8)))
        gain = parameter(rng.normal(size=8))
        bias = parameter(rng.normal(size=8))

        def f():
            y = nm.layer_norm(x, gain, bias)
            return nm.sum_(nm.mul(y, y))

        assert nm.grad_check(f, [x, gain, bias]) < 1e-4


class TestAttention:
    def test_single_key_returns_v(self):
        rng = np.random.default_rng(3)
        q = Tensor(rng.normal(size=(2, 1, 4)))
        k = Tensor(rng.normal(size=(2, 1, 4)))
        v = Tensor(rng.normal(size=(2, 1, 4)))
        out = nm.attention(q, k, v)
        np.testing.assert_allclose(out.data, v.data, rtol=1e-12)

    def test_uniform_logits_average_v(self):
        # zero queries make every logit equal, so the softmax is uniform
        q = Tensor(np.zeros((1, 2, 4)))
        k = Tensor(np.random.default_rng(4).normal(size=(1, 3, 4)))
        v = Tensor(np.arange(12, dtype=np.float64).reshape(1, 3, 4))
        out = nm.attention(q, k, v)
        np.testing.assert_allclose(out.data, np.broadcast_to(v.data.mean(axis=1, keepdims=True), (1, 2, 4)), rtol=1e-12)

    def test_causal_first_row_depends_only_on_first_value(self):
        rng = np.random.default_rng(5)
        q = Tensor(rng.normal(size=(1, 3, 4)))
        k = Tensor(rng.normal(size=(1, 3, 4)))
        v = parameter(rng.normal(size=(1, 3, 4)))
        mask = np.tril(np.ones((3, 3), dtype=bool))
        out = nm.attention(q, k, v, mask)
        jac = nm.jacobian(out, v)
        jac = jac.reshape(3, 4, 3, 4)  # (out_row, out_dim, v_row, v_dim)
        assert np.all(jac[0, :, 1:, :] == 0.0)
        assert np.any(jac[0, :, 0, :] != 0.0)

    def test_fully_masked_row_raises(self):
        q = Tensor(np.zeros((1, 2, 4)))
        k = Tensor(np.zeros((1, 2, 4)))
        v = Tensor(np.zeros((1, 2, 4)))
        mask = np.array([[True, True], [False, False]])
        with pytest.raises(ValueError, match="fully masked"):
            nm.attention(q, k, v, mask)

    def test_rows_sum_to_one_and_masked_weights_exactly_zero(self):
        rng = np.random.default_rng(6)
        q = rng.normal(size=(2, 5, 8))
        k = rng.normal(size=(2, 5, 8))
        mask = np.tril(np.ones((5, 5), dtype=bool))
        w = nm.attention_weights(q, k, mask)
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-6)
        assert np.all(w[:, ~mask] == 0.0)

    def test_gradients_vs_finite_differences(self):
        rng = np.random.default_rng(7)
        q = parameter(rng.normal(size=(2, 3, 4)))
        k = parameter(rng.normal(size=(2, 3, 4)))
        v = parameter(rng.normal(size=(2, 3, 4)))
        mask = np.tril(np.ones((3, 3), dtype=bool))

        def f():
            out = nm.attention(q, k, v, mask)
            return nm.sum_(nm.mul(out, out))

        assert nm.grad_check(f, [q, k, v]) < 1e-4


class TestGradCheckHarness:
    def test_quadratic_matches_analytic(self):
        x = parameter(np.array([1.0, 2.0]))
        out = nm.sum_(nm.mul(x, x))
        out.backward()
        np.testing.assert_allclose(x.grad, [2.0, 4.0], rtol=1e-12)
        assert nm.grad_check(lambda: nm.sum_(nm.mul(x, x)), [x]) < 1e-6

    def test_constant_objective_has_zero_gradient(self):
        x = parameter(np.array([1.0, 2.0]))
        c = Tensor(np.array(3.0))
        out = nm.add(nm.mul(nm.sum_(x), 0.0), c)
        nm.zero_graph_grads(out)
        x.grad = None
        out.backward()
        assert x.grad is None or np.all(x.grad == 0.0)

    def test_rejects_non_scalar(self):
        x = parameter(np.ones(3))
        with pytest.raises(ValueError, match="scalar"):
            nm.grad_check(lambda: nm.mul(x, x), [x])

    def test_rejects_f32(self):
        x = parameter(np.ones(3, dtype=np.float32))
        with pytest.raises(ValueError, match="float64"):
            nm.grad_check(lambda: nm.sum_(x), [x])


# Backward-vs-finite-difference sweep: every op, >=5 seeds, >=3 shapes.
OP_CASES = {
    "add": lambda a, b: nm.add(a, b),
    "mul": lambda a, b: nm.mul(a, b),
    "matmul": None,
    "gelu": lambda a, b: nm.gelu(nm.add(a, b)),
    "silu": lambda a, b: nm.silu(nm.add(a, b)),
    "layer_norm": None,
    "concat": lambda a, b: nm.concat([a, b], axis=0),
    "slice": lambda a, b: nm.add(nm.take(a, (slice(1, None), slice(None))), nm.take(b, (slice(1, None), slice(None)))),
    "mean": lambda a, b: nm.mean(nm.mul(a, b), axis=0),
}
SHAPES = [(2, 3), (4, 4), (3, 5)]


@pytest.mark.parametrize("name", sorted(OP_CASES))
@pytest.mark.parametrize("seed", range(5))
def test_op_backward_matches_finite_differences(name, seed):
    for shape in SHAPES:
        rng = np.random.default_rng([seed, zlib.crc32(name.encode()), shape[0]])
        # modest scale keeps FD well conditioned away from activation tails
        a = parameter(0.7 * rng.normal(size=shape))
        b = parameter(0.7 * rng.normal(size=shape))
        if name == "matmul":
            b = parameter(rng.normal(size=(shape[1], 3)))
            f = lambda: nm.sum_(nm.silu(nm.matmul(a, b)))
        elif name == "layer_norm":
            g = parameter(rng.normal(size=shape[1]))
            c = parameter(rng.normal(size=shape[1]))
            f = lambda: nm.sum_(nm.square(nm.layer_norm(a, g, c)))
        else:
            op = OP_CASES[name]
            f = lambda: nm.sum_(nm.square(op(a, b)))
        assert nm.grad_check(f, [a, b]) < 1e-4, f"{name} failed FD check at shape {shape}"


@pytest.mark.parametrize("seed", range(5))
def test_embedding_and_reductions_fd(seed):
    rng = np.random.default_rng(seed)
    table = parameter(rng.normal(size=(6, 4)))
    idx = rng.integers(0, 6, size=5)

    def f():
        e = nm.embedding(table, idx)
        return nm.mean(nm.mul(e, e))

    assert nm.grad_check(f, [table]) < 1e-4


def test_broadcast_add_bias_gradient():
    rng = np.random.default_rng(11)
    x = parameter(rng.normal(size=(3, 4, 5)))
    b = parameter(rng.normal(size=5))
    assert nm.grad_check(lambda: nm.sum_(nm.square(nm.add(x, b))), [x, b]) < 1e-4


def test_forward_deterministic_bitwise():
    rng = np.random.default_rng(8)
    x = Tensor(rng.normal(size=(16, 16)).astype(np.float32))
    w = Tensor(rng.normal(size=(16, 16)).astype(np.float32))

    def run():
        return nm.gelu(nm.matmul(x, w)).data.tobytes()

    assert run() == run()


def test_repeated_backward_is_stable():
    rng = np.random.default_rng(9)
    x = parameter(rng.normal(size=(4, 4)))
    out = nm.sum_(nm.silu(nm.matmul(x, x)))
    out.backward()
    first = x.grad.tobytes()
    nm.zero_graph_grads(out)
    x.grad = None
    out.backward()
    assert x.grad.tobytes() == first


def test_mixed_precision_rejected():
    a = Tensor(np.ones((2, 2), dtype=np.float32))
    b = Tensor(np.ones((2, 2), dtype=np.float64))
    with pytest.raises(nm.DimensionError, match="precision"):
        nm.add(a, b)


def test_gradient_accumulates_until_zeroed():
    x = parameter(np.array([1.0, 2.0]))
    nm.sum_(nm.mul(x, x)).backward()
    nm.sum_(nm.mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, [4.0, 8.0])
    x.grad = None
    nm.sum_(nm.mul(x, x)).backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=16))
@settings(max_examples=50, deadline=None)
def test_softmax_rows_sum_to_one(values):
    q = np.array(values, dtype=np.float64).reshape(1, 1, -1)
    k = np.random.default_rng(0).normal(size=(1, 4, len(values)))
    w = nm.attention_weights(q, k)
    np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-9)


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(10)
        arrays = {
            "enc.block0.attn.q.weight": rng.normal(size=(8, 8)).astype(np.float32),
            "enc.block0.attn.q.bias": rng.normal(size=8).astype(np.float32),
            "scalar": np.float32(1.5).reshape(()),
        }
        path = tmp_path / "w.fp3w"
        nm.save_weights(path, arrays)
        loaded = nm.load_weights(path)
        assert set(loaded) == set(arrays)
        for name, arr in arrays.items():
            assert loaded[name].tobytes() == np.asarray(arr, dtype=np.float32).tobytes()
            assert loaded[name].shape == np.asarray(arr).shape

    def test_identical_content_identical_bytes(self, tmp_path):
        arrays = {"b": np.ones((2, 2), np.float32), "a": np.zeros(3, np.float32)}
        p1, p2 = tmp_path / "1.w", tmp_path / "2.w"
        nm.save_weights(p1, arrays)
        nm.save_weights(p2, dict(reversed(list(arrays.items()))))
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.w"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(nm.CheckpointError, match="magic"):
            nm.load_weights(path)

    def test_future_version_rejected(self, tmp_path):
        path = tmp_path / "v9.w"
        path.write_bytes(b"FP3W" + (9).to_bytes(4, "little"))
        with pytest.raises(nm.CheckpointError, match="version 9"):
            nm.load_weights(path)

    def test_truncation_reports_offset(self, tmp_path):
        arrays = {"w": np.ones((4, 4), np.float32)}
        path = tmp_path / "t.w"
        nm.save_weights(path, arrays)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(nm.CheckpointError, match="offset"):
            nm.load_weights(path)
