import math

import numpy as np
import pytest

from groupemo import autodiff as ad
from groupemo.autodiff import Tensor
from groupemo.errors import ContractError, DimensionError
from groupemo.nn import Adam, EncoderBlock, Linear, MultiHeadAttention, gcn_layer, linear


def test_linear_examples(rng):
    w = Tensor(rng.standard_normal((3, 2)))
    b = Tensor([0.5, -1.0])
    np.testing.assert_allclose(linear(Tensor(np.zeros((4, 3))), w, b).data, np.tile([0.5, -1.0], (4, 1)))
    x = rng.standard_normal((4, 3))
    np.testing.assert_allclose(linear(Tensor(x), Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x, rtol=1e-6)


def test_linear_matches_loop(f64, rng):
    x, w, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2)), rng.standard_normal(2)
    expect = [[sum(x[i, k] * w[k, j] for k in range(4)) + b[j] for j in range(2)] for i in range(3)]
    np.testing.assert_allclose(linear(Tensor(x), Tensor(w), Tensor(b)).data, expect)


def test_linear_width_mismatch():
    with pytest.raises(DimensionError):
        Linear(np.random.default_rng(0), 3, 2)(Tensor(np.ones((1, 4))))


def _mha(width=4, heads=2, seed=0):
    with ad.precision("f64"):
        return MultiHeadAttention(np.random.default_rng(seed), width, heads)


def test_attention_single_key_returns_value_projection(f64, rng):
    mha = _mha()
    q, kv = Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((1, 4)))
    out = mha(q, kv, kv).data
    expect = mha.out(mha.v(kv)).data
    np.testing.assert_allclose(out, np.repeat(expect, 3, axis=0))


def test_attention_identical_keys_ignore_queries(f64, rng):
    mha = _mha()
    kv = Tensor(np.tile(rng.standard_normal(4), (3, 1)))
    a = mha(Tensor(rng.standard_normal((2, 4))), kv, kv).data
    b = mha(Tensor(rng.standard_normal((2, 4))), kv, kv).data
    np.testing.assert_allclose(a, b)


def test_attention_matches_dense_formula(f64, rng):
    mha = _mha()
    x = rng.standard_normal((2, 4))
    q, k, v = (x @ lin.weight.data + lin.bias.data for lin in (mha.q, mha.k, mha.v))
    heads = []
    for h in range(2):
        cols = slice(2 * h, 2 * h + 2)
        scores = q[:, cols] @ k[:, cols].T / math.sqrt(2)
        w = np.exp(scores - scores.max(axis=1, keepdims=True))
        heads.append((w / w.sum(axis=1, keepdims=True)) @ v[:, cols])
    expect = np.concatenate(heads, axis=1) @ mha.out.weight.data + mha.out.bias.data
    np.testing.assert_allclose(mha(Tensor(x), Tensor(x), Tensor(x)).data, expect, rtol=1e-10)


def test_attention_masked_key_has_no_effect(f64, rng):
    mha = _mha()
    x = rng.standard_normal((3, 4))
    y = x.copy()
    y[2] = 100.0
    mask = np.array([True, True, False])
    np.testing.assert_allclose(mha(Tensor(x), Tensor(x), Tensor(x), mask).data[:2],
                               mha(Tensor(y), Tensor(y), Tensor(y), mask).data[:2])


def test_encoder_block_shape_and_equivariance(rng):
    block = EncoderBlock(np.random.default_rng(0), 512, 8, dropout=0.0)
    x = rng.standard_normal((5, 512))
    out = block(Tensor(x)).data
    assert out.shape == (5, 512)
    perm = np.array([3, 0, 4, 1, 2])
    np.testing.assert_allclose(block(Tensor(x[perm])).data, out[perm], atol=1e-5)


def test_encoder_block_matches_step_by_step(f64, rng):
    block = EncoderBlock(np.random.default_rng(1), 4, 2, ffn_mult=2, dropout=0.0)
    x = rng.standard_normal((2, 4))

    def ln(z, norm):
        mu = z.mean(axis=-1, keepdims=True)
        var = ((z - mu) ** 2).mean(axis=-1, keepdims=True)
        return (z - mu) / np.sqrt(var + 1e-5) * norm.gamma.data + norm.beta.data

    h = ln(x + block.attn(Tensor(x), Tensor(x), Tensor(x)).data, block.norm1)
    ff = np.maximum(h @ block.ff1.weight.data + block.ff1.bias.data, 0) @ block.ff2.weight.data + block.ff2.bias.data
    np.testing.assert_allclose(block(Tensor(x)).data, ln(h + ff, block.norm2), rtol=1e-10)


def test_gcn_examples(f64, rng):
    w = Tensor(rng.standard_normal((3, 2)))
    h = Tensor(rng.standard_normal((1, 3)))
    np.testing.assert_allclose(gcn_layer(h, np.array([[1.0]]), w).data, np.maximum(h.data @ w.data, 0))
    pos = np.abs(rng.standard_normal((3, 3)))
    np.testing.assert_allclose(gcn_layer(Tensor(pos), np.eye(3), Tensor(np.eye(3))).data, pos)


def test_gcn_matches_triple_product(f64, rng):
    a = rng.uniform(0, 1, (3, 3))
    a = (a + a.T) / 2
    h, w = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    np.testing.assert_allclose(gcn_layer(Tensor(h), a, Tensor(w)).data, np.maximum(a @ h @ w, 0))


def test_gcn_rejects_asymmetric_adjacency():
    with pytest.raises(ContractError):
        gcn_layer(Tensor(np.ones((2, 2))), np.array([[1.0, 0.5], [0.0, 1.0]]), Tensor(np.eye(2)))


def test_adam_first_step(f64):
    p = Tensor(np.zeros(3), requires_grad=True)
    opt = Adam({"p": p}, lr=0.001)
    opt.step({"p": np.ones(3)})
    np.testing.assert_allclose(p.data, -0.001 / (1 + 1e-8))


def test_adam_zero_gradient_is_fixed_point(f64):
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam({"p": p})
    opt.step({"p": np.zeros(2)})
    np.testing.assert_array_equal(p.data, [1.0, -2.0])
    assert opt.t == 1


def test_adam_scalar_quadratic_oracle(f64):
    p = Tensor(np.array([2.0]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1)
    x, m, v = 2.0, 0.0, 0.0
    for t in range(1, 4):
        g = 2 * x
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        x -= 0.1 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        p.grad = None
        ad.backward(ad.sum(p * p))
        opt.step()
    assert p.data[0] == pytest.approx(x, rel=1e-12)


def test_adam_missing_gradient():
    p = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(ContractError):
        Adam({"p": p}).step()


def test_adam_epoch_decay():
    opt = Adam({}, lr=0.001, decay=0.9)
    opt.set_epoch(2)
    assert opt.lr == pytest.approx(0.001 * 0.81)
