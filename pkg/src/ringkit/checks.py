"""Finite-difference verification suites.

The op-level suite drives every differentiable tensor op through
``grad_check`` at float64 on seeded random shapes; the full-model suite
does the same for the complete network on a three-molecule micro batch.
Both are used by the ``gradcheck`` CLI subcommand and by the test suite.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .hiergraph import build_hier_graph, build_vocab
from .model import ModelConfig, build_batch, forward, init_params, mae_loss
from .tensor import GradCheckResult, Tensor, grad_check

OP_TOLERANCE = 1e-5
MODEL_TOLERANCE = 1e-4

GRADCHECK_MOLECULES = ("c1ccc2cc3ccccc3cc2c1", "c1ccc(-c2cccs2)cc1", "CCO")
# Targets sit a fixed offset away from the initial predictions: the loss
# magnitude (and with it the finite-difference roundoff, which scales as
# machine_eps*|loss|/eps) stays small, keeping the oracle well above its
# own noise floor even for the tiniest true gradient entries. The offset
# is orders of magnitude larger than any eps-induced prediction change,
# so no |.| kink is crossed during perturbation.
GRADCHECK_TARGET_OFFSETS = (0.05, -0.07, 0.06)


def _proj(rng, shape) -> Tensor:
    return Tensor(rng.normal(size=shape))


def _suite_entry(results, name, report):
    for key, res in report.items():
        results[f"{name}[{key}]" if len(report) > 1 else name] = res


def op_level_suite(seed: int = 0) -> dict[str, GradCheckResult]:
    """grad_check every differentiable op; all entries, f64, eps=1e-5."""
    results: dict[str, GradCheckResult] = {}
    rng = np.random.default_rng(seed)

    def check(name, f, params, exclude=None):
        _suite_entry(results, name, grad_check(f, params, exclude=exclude))

    a = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
    pm = _proj(rng, (4, 5))
    check("matmul", lambda p: T.reduce_sum(T.mul(T.matmul(p["a"], p["b"]), pm)),
          {"a": a, "b": b})

    x = Tensor(rng.normal(size=(5, 4)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    bias = Tensor(rng.normal(size=3), requires_grad=True)
    pl = _proj(rng, (5, 3))
    check("linear", lambda p: T.reduce_sum(T.mul(T.linear(p["x"], p["w"], p["b"]), pl)),
          {"x": x, "w": w, "b": bias})

    a2 = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    b2 = Tensor(rng.normal(size=4), requires_grad=True)
    pa = _proj(rng, (6, 4))
    check("add_broadcast", lambda p: T.reduce_sum(T.mul(T.add(p["a"], p["b"]), pa)),
          {"a": a2, "b": b2})

    m1 = Tensor(rng.normal(size=(6, 4)), requires_grad=True)
    m2 = Tensor(rng.normal(size=(6, 1)), requires_grad=True)
    check("mul_broadcast", lambda p: T.reduce_sum(T.mul(T.mul(p["a"], p["b"]), pa)),
          {"a": m1, "b": m2})

    d1 = Tensor(rng.normal(size=(5,)), requires_grad=True)
    d2 = Tensor(rng.uniform(1.0, 2.0, size=(5,)), requires_grad=True)
    pd = _proj(rng, (5,))
    check("div", lambda p: T.reduce_sum(T.mul(T.div(p["a"], p["b"]), pd)),
          {"a": d1, "b": d2})

    s1 = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    check("scalar_mul", lambda p: T.reduce_sum(T.scalar_mul(p["a"], 2.5)),
          {"a": s1})

    c1 = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    c2 = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    pc = _proj(rng, (4, 5))
    check("concat", lambda p: T.reduce_sum(T.mul(T.concat([p["a"], p["b"]], axis=1), pc)),
          {"a": c1, "b": c2})

    sl = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    ps = _proj(rng, (4, 3))
    check("slice_lastdim",
          lambda p: T.reduce_sum(T.mul(T.slice_lastdim(p["a"], 1, 4), ps)),
          {"a": sl})

    # one entry exactly at the relu kink: excluded and reported, not failed
    r_data = rng.normal(size=(4, 4))
    r_data[np.abs(r_data) < 0.05] = 0.3
    r_data[0, 0] = 0.0
    r = Tensor(r_data, requires_grad=True)
    mask = np.zeros((4, 4), dtype=bool)
    mask[0, 0] = True
    pr = _proj(rng, (4, 4))
    check("relu", lambda p: T.reduce_sum(T.mul(T.relu(p["a"]), pr)),
          {"a": r}, exclude={"a": mask})

    e = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    pe = _proj(rng, (3, 3))
    check("exp", lambda p: T.reduce_sum(T.mul(T.exp(p["a"]), pe)), {"a": e})

    lg = Tensor(rng.uniform(0.5, 3.0, size=(3, 3)), requires_grad=True)
    check("log", lambda p: T.reduce_sum(T.mul(T.log(p["a"]), pe)), {"a": lg})

    ab_data = rng.normal(size=(4, 3))
    ab_data[np.abs(ab_data) < 0.05] = 0.4
    ab = Tensor(ab_data, requires_grad=True)
    pab = _proj(rng, (4, 3))
    check("abs", lambda p: T.reduce_sum(T.mul(T.absolute(p["a"]), pab)), {"a": ab})

    sm = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    psm = _proj(rng, (4, 5))
    check("softmax_rows",
          lambda p: T.reduce_sum(T.mul(T.softmax_rows(p["a"]), psm)), {"a": sm})

    seg = np.array([0, 0, 1, 1, 1, 3], dtype=np.int64)  # segment 2 empty
    sx = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    pseg = _proj(rng, (4, 3))
    check("segment_sum",
          lambda p: T.reduce_sum(T.mul(T.segment_sum(p["a"], seg, 4), pseg)),
          {"a": sx})

    ss = Tensor(rng.normal(size=(6,)), requires_grad=True)
    pss = _proj(rng, (6,))
    check("segment_softmax",
          lambda p: T.reduce_sum(T.mul(T.segment_softmax(p["a"], seg, 4), pss)),
          {"a": ss})

    table = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    idx = np.array([0, 2, 2, 4, 1], dtype=np.int64)
    pg = _proj(rng, (5, 3))
    check("gather_rows",
          lambda p: T.reduce_sum(T.mul(T.gather_rows(p["a"], idx), pg)),
          {"a": table})

    rs = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    paxis = _proj(rng, (4,))
    check("reduce_sum_axis",
          lambda p: T.reduce_sum(T.mul(T.reduce_sum(p["a"], axis=1), paxis)),
          {"a": rs})
    check("mean", lambda p: T.mean(p["a"]), {"a": rs})

    rsh = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    prs = _proj(rng, (8, 3))
    check("reshape",
          lambda p: T.reduce_sum(T.mul(T.reshape(p["a"], (8, 3)), prs)),
          {"a": rsh})
    return results


def micro_model_setup(seed: int = 0, attn_norm: str = "softmax",
                      use_virtual: bool = True):
    """Micro configuration (L=2, d=16, C=2, d_p=4) over three molecules."""
    config = ModelConfig(L=2, d=16, C=2, d_p=4, attn_norm=attn_norm,
                         use_virtual=use_virtual, n_targets=1)
    graphs = [build_hier_graph(s, add_virtual=use_virtual)
              for s in GRADCHECK_MOLECULES]
    vocab = build_vocab(graphs)
    batch = build_batch(graphs, vocab, dtype=np.float64)
    params = init_params(config, d_vr=vocab.d_vr, d_er=vocab.d_er,
                         seed=seed, dtype=np.float64)
    initial = forward(batch, params, config).data
    offsets = np.asarray(GRADCHECK_TARGET_OFFSETS).reshape(-1, 1)
    batch.targets = initial + offsets
    return config, batch, params


def full_model_suite(seed: int = 0, max_entries: int | None = None,
                     attn_norm: str = "softmax") -> dict[str, GradCheckResult]:
    """grad_check every model parameter through forward + MAE loss.

    Base step 1e-5; entries the base-step oracle cannot resolve are
    re-estimated at coarser steps (see grad_check's retry_eps).
    """
    config, batch, params = micro_model_setup(seed=seed, attn_norm=attn_norm)

    def f(p):
        pred = forward(batch, params, config)
        return mae_loss(pred, Tensor(batch.targets))

    return grad_check(f, params.tensors, eps=1e-5, tol=MODEL_TOLERANCE,
                      max_entries=max_entries, seed=seed,
                      retry_eps=(1e-4, 1e-3, 1e-2))


def worst(results: dict[str, GradCheckResult]) -> tuple[str, float]:
    name = max(results, key=lambda k: results[k].max_rel_error)
    return name, results[name].max_rel_error
