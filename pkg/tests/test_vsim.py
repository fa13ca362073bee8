import math

import numpy as np
import pytest

from groupemo import autodiff as ad
from groupemo.autodiff import Tensor
from groupemo.vsim import InteractionModule, SimStats, group_encode, similarity_fuse, standardize


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64), dtype=np.float64)


def sigmoid(x):
    return 1 / (1 + math.exp(-x))


def test_identical_projections_have_unit_similarity(f64, rng):
    v = rng.standard_normal((3, 4))
    _, sim, _ = similarity_fuse(T(v), T(v), SimStats(), train=True)
    np.testing.assert_allclose(sim.data, 1.0)


def test_constant_similarity_gives_half_gate(f64, rng):
    v = rng.standard_normal(4)
    _, _, gate = similarity_fuse(T(np.tile(v, (3, 1))), T(v), SimStats(), train=True)
    np.testing.assert_array_equal(gate.data, 0.5)


def test_two_sample_standardization():
    stats = SimStats()
    z = standardize(T([0.2, 0.8]), stats, train=True)
    np.testing.assert_allclose(z.data, [-1.0, 1.0], atol=1e-6)
    np.testing.assert_allclose(ad.sigmoid(z).data, [0.2689, 0.7311], atol=1e-4)
    assert stats.mean == pytest.approx(0.5) and stats.std == pytest.approx(0.3)


def test_eval_uses_running_stats_and_leaves_them_alone():
    stats = SimStats(mean=0.5, std=0.25, count=3)
    z = standardize(T([0.75]), stats, train=False)
    assert z.data[0] == pytest.approx(1.0, rel=1e-6)
    assert stats.count == 3


def test_running_stats_momentum():
    stats = SimStats(momentum=0.9)
    stats.update(1.0, 2.0)
    stats.update(0.0, 1.0)
    assert stats.mean == pytest.approx(0.9) and stats.std == pytest.approx(1.9)


def test_ungated_tokens_are_plain_pair(f64, rng):
    v, t = rng.standard_normal((2, 4)), rng.standard_normal(4)
    tokens, sim, gate = similarity_fuse(T(v), T(t), SimStats(), train=True, gated=False)
    assert sim is None and gate is None
    np.testing.assert_array_equal(tokens.data[:, 0], v)
    np.testing.assert_array_equal(tokens.data[:, 1], np.tile(t, (2, 1)))


def test_gated_tokens_scale_both_rows(f64, rng):
    v, t = rng.standard_normal((2, 4)), rng.standard_normal((2, 4))
    tokens, _, gate = similarity_fuse(T(v), T(t), SimStats(), train=True)
    np.testing.assert_allclose(tokens.data[:, 0], v * gate.data[:, None])
    np.testing.assert_allclose(tokens.data[:, 1], t * gate.data[:, None])
    assert np.all((gate.data > 0) & (gate.data < 1))


@pytest.fixture
def module():
    with ad.precision("f64"):
        return InteractionModule(np.random.default_rng(0), 4, 2, depth=2, ffn_mult=2, dropout=0.0)


def test_identical_tokens_pool_to_encoder_row(f64, module, rng):
    row = rng.standard_normal(4)
    tokens = T(np.tile(row, (1, 2, 1)))
    f_group, logits = group_encode(tokens, module)
    np.testing.assert_allclose(f_group.data[0], module.group_encoder(tokens).data[0, 0], atol=1e-12)
    assert logits.shape == (1, 3)


def test_token_swap_invariance(f64, module, rng):
    tokens = rng.standard_normal((3, 2, 4))
    a, _ = group_encode(T(tokens), module)
    b, _ = group_encode(T(tokens[:, ::-1]), module)
    np.testing.assert_allclose(a.data, b.data, atol=1e-5)


def test_group_head_composes(f64, module, rng):
    tokens = T(rng.standard_normal((2, 2, 4)))
    f_group, logits = group_encode(tokens, module)
    np.testing.assert_allclose(f_group.data, module.group_encoder(tokens).data.mean(axis=1))
    np.testing.assert_allclose(logits.data, f_group.data @ module.group_head.weight.data + module.group_head.bias.data)
