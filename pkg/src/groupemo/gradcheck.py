"""Central finite-difference checks of analytic gradients.

``check_gradients`` compares the gradient from :func:`autodiff.backward` with
``(f(x + h) - f(x - h)) / 2h`` entry by entry, using only forward evaluations
of the same scalar function.  The error of one entry is
``|analytic - numeric| / max(1, |numeric|)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import RunConfig
from .data import collate, FeatureBundle, hash_embedding
from .errors import ContractError
from .esem import LexiconClass, LexiconSet
from .model import GroupEmotionModel
from .nn import EncoderBlock, LayerNorm, Linear, MultiHeadAttention, gcn_layer
from .objectives import SamConfig, cross_entropy, sam_loss
from .vcem import cue_logits, encode_visual
from .vsim import group_encode, similarity_fuse

STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_error: float
    passed: bool
    worst: str = ""
    entries: int = 0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = f"  worst {self.worst}" if not self.passed else ""
        return f"{status}  {self.name:<28} max_rel_err={self.max_error:.3e}  entries={self.entries}{where}"


@dataclass
class GradCheckReport:
    results: list[CheckResult] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_dict(self) -> dict:
        return {"passed": bool(self.passed), "seconds": float(self.seconds),
                "checks": [{"name": r.name, "max_error": float(r.max_error), "passed": bool(r.passed),
                            "worst": r.worst, "entries": int(r.entries)} for r in self.results]}


def check_gradients(name: str, fn: Callable[[], Tensor], params: dict[str, Tensor], step: float = STEP,
                    tol: float = TOLERANCE, max_entries: int | None = None,
                    rng: np.random.Generator | None = None) -> CheckResult:
    """Compare analytic and central-difference gradients of the scalar ``fn()``.

    ``fn`` must rebuild its graph from the current parameter values on every
    call.  ``max_entries`` caps the entries probed per parameter (chosen with
    ``rng``); ``None`` probes every entry.
    """
    for p in params.values():
        if p.dtype != np.float64:
            raise ContractError(f"gradient check of {name} needs 64-bit parameters")
        p.grad = None
    loss = fn()
    ad.backward(loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    rng = rng or np.random.default_rng(0)
    worst, worst_at, count = 0.0, "", 0
    for key, p in params.items():
        flat = p.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        for idx in indices:
            original = flat[idx]
            flat[idx] = original + step
            up = float(fn().data)
            flat[idx] = original - step
            down = float(fn().data)
            flat[idx] = original
            numeric = (up - down) / (2 * step)
            err = abs(analytic[key].reshape(-1)[idx] - numeric) / max(1.0, abs(numeric))
            count += 1
            if err > worst:
                worst = err
                worst_at = f"{key}[{tuple(int(i) for i in np.unravel_index(idx, p.shape))}] analytic={analytic[key].reshape(-1)[idx]:.6g} numeric={numeric:.6g}"
    for p in params.values():
        p.grad = None
    return CheckResult(name, worst, worst < tol, worst_at, count)


def _leaf(rng: np.random.Generator, *shape, positive: bool = False) -> Tensor:
    data = rng.uniform(0.5, 2.0, shape) if positive else rng.standard_normal(shape)
    return Tensor(data, requires_grad=True, dtype=np.float64)


def primitive_checks(seed: int = 0) -> list[CheckResult]:
    """One check per autodiff primitive on random 64-bit inputs."""
    rng = np.random.default_rng([seed, 10])
    results = []

    def run(name, builder, inputs):
        w_rng = np.random.default_rng([seed, 11, len(results)])
        weights = {}

        def fn():
            out = builder(*inputs.values())
            if "w" not in weights:
                weights["w"] = Tensor(w_rng.standard_normal(out.shape), dtype=np.float64)
            return ad.sum(out * weights["w"])

        results.append(check_gradients(name, fn, inputs))

    a, b = _leaf(rng, 3, 4), _leaf(rng, 4, 2)
    run("matmul", ad.matmul, {"a": a, "b": b})
    run("matmul_batched", ad.matmul, {"a": _leaf(rng, 2, 3, 4), "b": _leaf(rng, 4, 2)})
    run("add_broadcast", ad.broadcast_add, {"x": _leaf(rng, 3, 4), "row": _leaf(rng, 4)})
    run("mul_broadcast", ad.mul, {"x": _leaf(rng, 3, 4), "col": _leaf(rng, 3, 1)})
    run("sub", ad.sub, {"x": _leaf(rng, 3, 4), "y": _leaf(rng, 3, 4)})
    run("div", ad.div, {"x": _leaf(rng, 3, 4), "y": _leaf(rng, 3, 4, positive=True)})
    run("scale", lambda x: ad.scale(x, -2.5), {"x": _leaf(rng, 5)})
    run("sigmoid", ad.sigmoid, {"x": _leaf(rng, 3, 4)})
    run("relu", ad.relu, {"x": _leaf(rng, 3, 4)})
    run("exp", ad.exp, {"x": _leaf(rng, 3, 4)})
    run("log", ad.log, {"x": _leaf(rng, 3, 4, positive=True)})
    run("sqrt", ad.sqrt, {"x": _leaf(rng, 3, 4, positive=True)})
    mask = np.array([[True, False, True, True], [False, True, True, False], [True, True, True, True]])
    run("softmax_masked", lambda x: ad.softmax(x, mask), {"x": _leaf(rng, 3, 4)})
    run("logsumexp", lambda x: ad.logsumexp(x, axis=-1), {"x": _leaf(rng, 3, 4)})
    run("sum_axis", lambda x: ad.sum(x, axis=0), {"x": _leaf(rng, 3, 4)})
    run("mean_rows", ad.mean_rows, {"x": _leaf(rng, 3, 4)})
    run("max_rows", ad.max_rows, {"x": _leaf(rng, 3, 4)})
    row_mask = np.array([[True, False, True], [False, False, True]])
    run("masked_mean_rows", lambda x: ad.masked_mean_rows(x, row_mask), {"x": _leaf(rng, 2, 3, 4)})
    run("cosine_similarity", ad.cosine_similarity, {"u": _leaf(rng, 3, 5), "v": _leaf(rng, 3, 5)})
    run("normalize", ad.normalize, {"x": _leaf(rng, 3, 5)})
    run("concat", lambda x, y: ad.concat([x, y], axis=1), {"x": _leaf(rng, 2, 3), "y": _leaf(rng, 2, 2)})
    run("getitem", lambda x: x[np.array([2, 0, 2])], {"x": _leaf(rng, 3, 4)})
    run("reshape_swapaxes", lambda x: ad.swapaxes(ad.reshape(x, (2, 3, 2)), 0, 2), {"x": _leaf(rng, 3, 4)})
    run("broadcast_to", lambda x: ad.broadcast_to(x, (3, 2, 4)), {"x": _leaf(rng, 1, 2, 4)})
    return results


def _layer_params(module, prefix: str = "") -> dict[str, Tensor]:
    return {prefix + k: v for k, v in module.named_parameters()}


def nn_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng([seed, 20])
    init = np.random.default_rng([seed, 21])
    dt = np.float64
    results = []
    x = _leaf(rng, 2, 3, 6)
    mask = np.array([[True, True, False], [True, True, True]])

    lin = Linear(init, 6, 4, dtype=dt)
    w = Tensor(rng.standard_normal((2, 3, 4)), dtype=dt)
    results.append(check_gradients("linear", lambda: ad.sum(lin(x) * w), {**_layer_params(lin), "x": x}))

    ln = LayerNorm(6, dtype=dt)
    ln.gamma.data[:] = rng.uniform(0.5, 1.5, 6)
    w6 = Tensor(rng.standard_normal((2, 3, 6)), dtype=dt)
    results.append(check_gradients("layer_norm", lambda: ad.sum(ln(x) * w6), {**_layer_params(ln), "x": x}))

    mha = MultiHeadAttention(init, 6, 2, dtype=dt)
    results.append(check_gradients("multi_head_attention", lambda: ad.sum(mha(x, x, x, mask) * w6),
                                   {**_layer_params(mha), "x": x}))

    block = EncoderBlock(init, 6, 2, ffn_mult=2, dropout=0.0, dtype=dt)
    results.append(check_gradients("encoder_block", lambda: ad.sum(block(x, mask) * w6),
                                   {**_layer_params(block), "x": x}))

    h = _leaf(rng, 3, 5)
    a = np.array([[1.0, 0.4, 0.0], [0.4, 1.0, 0.7], [0.0, 0.7, 1.0]])
    d = 1.0 / np.sqrt(a.sum(1))
    a_hat = a * d[:, None] * d[None, :]
    weight = _leaf(rng, 5, 4)
    w4 = Tensor(rng.standard_normal((3, 4)), dtype=dt)
    results.append(check_gradients("gcn_layer", lambda: ad.sum(gcn_layer(h, a_hat, weight) * w4),
                                   {"H": h, "W": weight}))
    return results


def micro_config(**overrides) -> RunConfig:
    base = dict(hidden=6, heads=2, fusion_depth=4, scales=2, d_e=5, d_h=6, ffn_mult=2, dropout=0.0,
                batch_size=2, precision="f64", variant="B4", tau=0.02)
    base.update(overrides)
    return RunConfig(**base).validate()


def micro_lexicons(d_e: int = 5, words: int = 3) -> LexiconSet:
    classes = []
    for name in ("positive", "neutral", "negative"):
        vocab = [f"{name}-{i}" for i in range(words)]
        classes.append(LexiconClass(name, name.capitalize(), hash_embedding(name, d_e), vocab,
                                    np.array([hash_embedding(w, d_e) for w in vocab])))
    return LexiconSet(tuple(classes)).validate()


def micro_bundles(seed: int, dim: int, scales: int = 2, faces=(2, 1), objects=(2, 0)) -> list[FeatureBundle]:
    rng = np.random.default_rng([seed, 30])
    return [FeatureBundle(f"micro-{n}", rng.standard_normal((faces[n], dim)), rng.standard_normal((objects[n], dim)),
                          rng.standard_normal((scales, dim)), n % 3) for n in range(len(faces))]


def module_checks(cfg: RunConfig | None = None, max_entries: int | None = 12) -> list[CheckResult]:
    """Each model branch in isolation, then the full B4 objective, on a micro configuration."""
    cfg = cfg or micro_config()
    seed = cfg.seed
    model = GroupEmotionModel(cfg, micro_lexicons(cfg.d_e))
    # faces I=2 with one padded row in the second sample; objects J=2 / 0
    batch = collate(micro_bundles(seed, cfg.hidden, cfg.scales), 2, np.float64)
    rng = np.random.default_rng([seed, 40])
    pick = np.random.default_rng([seed, 41])
    results = []
    dt = np.float64
    faces, objects, scenes = (Tensor(a, requires_grad=True, dtype=dt) for a in (batch.faces, batch.objects, batch.scenes))
    w_v = Tensor(rng.standard_normal((2, cfg.hidden)), dtype=dt)
    w_c = Tensor(rng.standard_normal((2, 3)), dtype=dt)

    def vcem_fn():
        vis = encode_visual(faces, batch.face_mask, objects, batch.object_mask, scenes, model.visual)
        cues = cue_logits(faces, batch.face_mask, objects, batch.object_mask, scenes, model.cue_heads)
        total = ad.sum(vis.f_v * w_v)
        for logits in cues.logits.values():
            total = total + ad.sum(logits * w_c)
        return total

    vcem_params = {**_layer_params(model.visual, "visual."), **_layer_params(model.cue_heads, "cue_heads."),
                   "faces": faces, "objects": objects, "scenes": scenes}
    results.append(check_gradients("vcem", vcem_fn, vcem_params, max_entries=max_entries, rng=pick))

    w_t = Tensor(rng.standard_normal(cfg.hidden), dtype=dt)
    w_l = Tensor(rng.standard_normal((3, cfg.hidden)), dtype=dt)

    def esem_fn():
        class_vectors, f_t = model.semantic()
        return ad.sum(f_t * w_t) + ad.sum(model.esem.class_projections(class_vectors) * w_l)

    results.append(check_gradients("esem", esem_fn, _layer_params(model.esem, "esem."), max_entries=max_entries,
                                   rng=pick))

    fv = _leaf(rng, 2, cfg.hidden)
    ft = _leaf(rng, cfg.hidden)
    w_g = Tensor(rng.standard_normal((2, 3)), dtype=dt)

    def vsim_fn():
        pv = model.vsim.visual_proj(fv)
        tokens, _, _ = similarity_fuse(pv, ft, model.sim_stats, train=True, update_stats=False)
        f_group, logits = group_encode(tokens, model.vsim)
        return ad.sum(logits * w_g) + ad.sum(f_group * w_v)

    results.append(check_gradients("vsim", vsim_fn, {**_layer_params(model.vsim, "vsim."), "F_v": fv, "F_t": ft},
                                   max_entries=max_entries, rng=pick))

    sv, st = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    labels = np.array([0, 0, 2])
    logits = _leaf(rng, 3, 3)
    results.append(check_gradients("objectives.sam_loss", lambda: sam_loss(sv, st, labels, SamConfig(tau=0.5)),
                                   {"Fv": sv, "Ft": st}))
    results.append(check_gradients("objectives.sam_loss_tau0.02",
                                   lambda: sam_loss(sv, st, labels, SamConfig(tau=0.02)), {"Fv": sv, "Ft": st}))
    results.append(check_gradients("objectives.cross_entropy", lambda: cross_entropy(logits, labels),
                                   {"logits": logits}))

    # full objective on an unpadded batch: I = J = K = 2, N = 2
    full_batch = collate(micro_bundles(seed + 1, cfg.hidden, cfg.scales, faces=(2, 2), objects=(2, 2)), 2, dt)

    def full_fn():
        out = model.forward(full_batch, train=True, update_stats=False)
        return model.losses(out, full_batch.labels)[0]

    results.append(check_gradients("full_B4_loss", full_fn, model.variant_parameters("B4"),
                                   max_entries=max_entries, rng=pick))
    return results


def grad_check(config: RunConfig | None = None, max_entries: int | None = 12) -> GradCheckReport:
    """Run the primitive, layer, module and full-model checks in 64-bit mode."""
    if config is None:
        cfg = micro_config()
    elif config.hidden > 8:
        raise ContractError(f"gradient checks need a small config (hidden <= 8), got hidden={config.hidden}")
    else:
        cfg = config.replace(precision="f64", dropout=0.0)
    start = time.perf_counter()
    with ad.precision("f64"):
        results = primitive_checks(cfg.seed) + nn_checks(cfg.seed) + module_checks(cfg, max_entries)
    return GradCheckReport(results, time.perf_counter() - start)
