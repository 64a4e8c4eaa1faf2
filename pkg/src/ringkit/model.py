"""Hierarchical graph network over batched molecule graphs.

Per layer: GINE message passing on the atom graph, edge-aware localized
cross-attention over the ring graph (keys/values built from the source
ring's representation concatenated with the connection one-hot, queries
from the target ring; a virtual molecule node relays global context),
GIN message passing across the atom/ring membership edges, and a fusion
MLP combining the two views of every node. The readout concatenates all
per-layer representations, sum-pools atoms and rings separately per
graph (the virtual node is excluded) and maps the result linearly to
the regression targets. Loss is mean absolute error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .hiergraph import HierGraph, Vocabulary, encode_ring_attributes
from .smiles import ATOM_FEATURE_DIM, BOND_FEATURE_DIM, featurize_atom_graph
from .tensor import (
    ShapeMismatch,
    Tensor,
    absolute,
    add,
    concat,
    div,
    gather_rows,
    linear,
    matmul,
    mean,
    mul,
    reduce_sum,
    relu,
    reshape,
    scalar_mul,
    segment_softmax,
    segment_sum,
    sub,
)


class VocabMismatch(ValueError):
    pass


class NonFiniteTarget(ValueError):
    pass


_LINEAR_ATTN_EPS = 1e-8


@dataclass
class ModelConfig:
    L: int = 8
    d: int = 512
    C: int = 4
    d_p: int = 32
    max_degree: int = 16
    attn_norm: str = "softmax"  # "softmax" | "linear"
    use_virtual: bool = True
    n_targets: int = 1
    dropout: float = 0.0  # seam only; must stay 0.0
    layer_norm: bool = False  # seam only; must stay False

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if self.d % self.C != 0:
            raise ValueError("d must be divisible by the head count C")
        if not 0 < self.d_p < self.d:
            raise ValueError("d_p must lie in (0, d)")
        if self.attn_norm not in ("softmax", "linear"):
            raise ValueError(f"unknown attn_norm {self.attn_norm!r}")
        if self.n_targets < 1:
            raise ValueError("n_targets must be >= 1")
        if self.dropout != 0.0:
            raise ValueError("dropout is a config seam; only 0.0 is supported")
        if self.layer_norm:
            raise ValueError("layer_norm is a config seam; only False is supported")

    def to_json(self) -> dict:
        return {
            "L": self.L, "d": self.d, "C": self.C, "d_p": self.d_p,
            "max_degree": self.max_degree, "attn_norm": self.attn_norm,
            "use_virtual": self.use_virtual, "n_targets": self.n_targets,
            "dropout": self.dropout, "layer_norm": self.layer_norm,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        return cls(**obj)


@dataclass
class ModelParams:
    """Named parameter collection; insertion order fixes checkpoint layout."""
    tensors: dict[str, Tensor]
    config: ModelConfig
    d_va: int
    d_ea: int
    d_vr: int
    d_er: int

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @property
    def dtype(self):
        return next(iter(self.tensors.values())).dtype

    def copy_values(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, t in self.tensors.items():
            t.data = values[name].copy()


def init_params(
    config: ModelConfig,
    d_vr: int,
    d_er: int,
    seed: int = 0,
    dtype=np.float32,
    d_va: int = ATOM_FEATURE_DIM,
    d_ea: int = BOND_FEATURE_DIM,
) -> ModelParams:
    """Glorot-initialized parameters for every layer, deterministic per seed."""
    rng = np.random.default_rng(seed)
    d, dp, C, L, T = config.d, config.d_p, config.C, config.L, config.n_targets
    dh = d // C
    tensors: dict[str, Tensor] = {}

    def glorot(out_dim: int, in_dim: int) -> np.ndarray:
        limit = math.sqrt(6.0 / (in_dim + out_dim))
        return rng.uniform(-limit, limit, size=(out_dim, in_dim))

    def param(name: str, value: np.ndarray) -> None:
        tensors[name] = Tensor(value.astype(dtype), requires_grad=True)

    param("atom_in.w", glorot(d, d_va))
    param("ring_in.w", glorot(d - dp, d_vr))
    param("ring_in.pe", rng.uniform(-0.1, 0.1, size=(config.max_degree + 2, dp)))
    param("ring_in.virtual", rng.normal(0.0, 1.0 / math.sqrt(d), size=(1, d)))
    for l in range(L):
        param(f"atom.{l}.edge.w", glorot(d, d_ea))
        param(f"atom.{l}.eps", np.zeros(1))
        param(f"atom.{l}.mlp.w1", glorot(d, d))
        param(f"atom.{l}.mlp.b1", np.zeros(d))
        param(f"atom.{l}.mlp.w2", glorot(d, d))
        param(f"atom.{l}.mlp.b2", np.zeros(d))
        param(f"ring.{l}.z.w1", glorot(d, d + d_er))
        param(f"ring.{l}.z.b1", np.zeros(d))
        param(f"ring.{l}.z.w2", glorot(d, d))
        param(f"ring.{l}.z.b2", np.zeros(d))
        for c in range(C):
            param(f"ring.{l}.q.{c}", glorot(dh, d))
            param(f"ring.{l}.k.{c}", glorot(dh, d))
            param(f"ring.{l}.v.{c}", glorot(dh, d))
        param(f"ring.{l}.ws", glorot(d, d))
        param(f"ring.{l}.wo", glorot(d, d))
        param(f"ring.{l}.ffn.w1", glorot(2 * d, d))
        param(f"ring.{l}.ffn.b1", np.zeros(2 * d))
        param(f"ring.{l}.ffn.w2", glorot(d, 2 * d))
        param(f"ring.{l}.ffn.b2", np.zeros(d))
        param(f"inter.{l}.eps", np.zeros(1))
        param(f"inter.{l}.mlp.w1", glorot(d, d))
        param(f"inter.{l}.mlp.b1", np.zeros(d))
        param(f"inter.{l}.mlp.w2", glorot(d, d))
        param(f"inter.{l}.mlp.b2", np.zeros(d))
        param(f"fuse_atom.{l}.w1", glorot(d, 2 * d))
        param(f"fuse_atom.{l}.b1", np.zeros(d))
        param(f"fuse_atom.{l}.w2", glorot(d, d))
        param(f"fuse_atom.{l}.b2", np.zeros(d))
        param(f"fuse_ring.{l}.w1", glorot(d, 2 * d))
        param(f"fuse_ring.{l}.b1", np.zeros(d))
        param(f"fuse_ring.{l}.w2", glorot(d, d))
        param(f"fuse_ring.{l}.b2", np.zeros(d))
    param("readout.w", glorot(T, 2 * d * (L + 1)))
    param("readout.b", np.zeros(T))
    return ModelParams(tensors=tensors, config=config, d_va=d_va,
                       d_ea=d_ea, d_vr=d_vr, d_er=d_er)


@dataclass
class BatchedGraph:
    """Molecule graphs packed into flat index arrays.

    Ring-level node ids run per graph: real rings first, then (when
    enabled) the graph's virtual node. Membership edges appear in both
    directions. Segment ids are contiguous and sorted by graph.
    """
    n_graphs: int
    n_atoms: int
    n_ring_nodes: int
    atom_x: np.ndarray
    atom_edge_src: np.ndarray
    atom_edge_dst: np.ndarray
    atom_edge_x: np.ndarray
    atom_seg: np.ndarray
    ring_x: np.ndarray
    ring_pe_idx: np.ndarray
    ring_real_mask: np.ndarray  # (n_ring_nodes, 1) float
    ring_virtual_mask: np.ndarray
    ring_edge_src: np.ndarray
    ring_edge_dst: np.ndarray
    ring_edge_x: np.ndarray
    ring_seg: np.ndarray
    a2r_src: np.ndarray
    a2r_dst: np.ndarray
    r2a_src: np.ndarray
    r2a_dst: np.ndarray
    use_virtual: bool
    targets: np.ndarray | None = None

    @property
    def d_va(self) -> int:
        return self.atom_x.shape[1]

    @property
    def d_ea(self) -> int:
        return self.atom_edge_x.shape[1]

    @property
    def d_vr(self) -> int:
        return self.ring_x.shape[1]

    @property
    def d_er(self) -> int:
        return self.ring_edge_x.shape[1]


def build_batch(
    graphs: Sequence[HierGraph],
    vocab: Vocabulary,
    dtype=np.float32,
    targets: np.ndarray | None = None,
) -> BatchedGraph:
    """Pack HierGraphs (all built with the same virtual-node setting)."""
    if not graphs:
        raise ValueError("cannot batch zero graphs")
    flags = {g.ring_graph.has_virtual for g in graphs}
    if len(flags) != 1:
        raise ValueError("graphs mix virtual and non-virtual construction")
    use_virtual = flags.pop()

    atom_x_rows, bond_rows = [], []
    ae_src, ae_dst = [], []
    atom_seg, ring_seg = [], []
    ring_x_rows, ring_pe, real_mask, virt_mask = [], [], [], []
    re_src, re_dst = [], []
    re_x_rows = []
    a2r_s, a2r_d, r2a_s, r2a_d = [], [], [], []
    y_rows = []
    have_targets = all(g.targets is not None for g in graphs)

    atom_base = 0
    ring_base = 0
    for gi, graph in enumerate(graphs):
        node_x, edge_x = featurize_atom_graph(graph.atom_graph)
        atom_x_rows.append(node_x)
        n_a = len(graph.atom_graph.atoms)
        atom_seg.extend([gi] * n_a)
        for bi, bond in enumerate(graph.atom_graph.bonds):
            i, j = bond.endpoints
            ae_src.extend([atom_base + i, atom_base + j])
            ae_dst.extend([atom_base + j, atom_base + i])
            bond_rows.append(edge_x[bi])
            bond_rows.append(edge_x[bi])

        rg = graph.ring_graph
        n_r = len(rg.rings)
        ring_onehot, conn_onehot = encode_ring_attributes(graph, vocab)
        degree = np.zeros(n_r, dtype=np.int64)
        for conn in rg.connections:
            degree[conn.ring_pair[0]] += 1
            degree[conn.ring_pair[1]] += 1
        n_nodes = n_r + (1 if use_virtual else 0)
        block = np.zeros((n_nodes, vocab.d_vr))
        block[:n_r] = ring_onehot
        ring_x_rows.append(block)
        ring_pe.extend(int(v) for v in degree)
        real_mask.extend([1.0] * n_r)
        virt_mask.extend([0.0] * n_r)
        if use_virtual:
            ring_pe.append(-1)  # sentinel; resolved to the reserved row below
            real_mask.append(0.0)
            virt_mask.append(1.0)
        ring_seg.extend([gi] * n_nodes)

        for ci, conn in enumerate(rg.connections):
            i, j = conn.ring_pair
            re_src.extend([ring_base + i, ring_base + j])
            re_dst.extend([ring_base + j, ring_base + i])
            re_x_rows.append(conn_onehot[ci])
            re_x_rows.append(conn_onehot[ci])
        if use_virtual:
            v_node = ring_base + n_r
            for ri in range(n_r):
                row = conn_onehot[len(rg.connections) + ri]
                re_src.extend([v_node, ring_base + ri])
                re_dst.extend([ring_base + ri, v_node])
                re_x_rows.append(row)
                re_x_rows.append(row)

        for ri, ai in graph.inter_edges:
            a2r_s.append(atom_base + ai)
            a2r_d.append(ring_base + ri)
            r2a_s.append(ring_base + ri)
            r2a_d.append(atom_base + ai)

        if have_targets:
            y_rows.append(graph.targets)
        atom_base += n_a
        ring_base += n_nodes

    n_atoms = atom_base
    n_ring_nodes = ring_base
    if targets is None and have_targets:
        targets = np.asarray(y_rows, dtype=np.float64)

    def stack(rows, width):
        if rows:
            return np.asarray(np.vstack(rows), dtype=dtype)
        return np.zeros((0, width), dtype=dtype)

    return BatchedGraph(
        n_graphs=len(graphs),
        n_atoms=n_atoms,
        n_ring_nodes=n_ring_nodes,
        atom_x=stack(atom_x_rows, ATOM_FEATURE_DIM),
        atom_edge_src=np.asarray(ae_src, dtype=np.int64),
        atom_edge_dst=np.asarray(ae_dst, dtype=np.int64),
        atom_edge_x=stack(bond_rows, BOND_FEATURE_DIM),
        atom_seg=np.asarray(atom_seg, dtype=np.int64),
        ring_x=stack(ring_x_rows, vocab.d_vr),
        ring_pe_idx=np.asarray(ring_pe, dtype=np.int64),
        ring_real_mask=np.asarray(real_mask, dtype=dtype).reshape(-1, 1),
        ring_virtual_mask=np.asarray(virt_mask, dtype=dtype).reshape(-1, 1),
        ring_edge_src=np.asarray(re_src, dtype=np.int64),
        ring_edge_dst=np.asarray(re_dst, dtype=np.int64),
        ring_edge_x=stack(re_x_rows, vocab.d_er),
        ring_seg=np.asarray(ring_seg, dtype=np.int64),
        a2r_src=np.asarray(a2r_s, dtype=np.int64),
        a2r_dst=np.asarray(a2r_d, dtype=np.int64),
        r2a_src=np.asarray(r2a_s, dtype=np.int64),
        r2a_dst=np.asarray(r2a_d, dtype=np.int64),
        use_virtual=use_virtual,
        targets=targets,
    )


def _mlp2(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    h = relu(linear(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return linear(h, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _one_plus(eps: Tensor) -> Tensor:
    return add(eps, Tensor(np.ones(1, dtype=eps.dtype)))


def init_embeddings(batch: BatchedGraph, params: ModelParams
                    ) -> tuple[Tensor, Tensor]:
    """Initial representations: atoms via the input projection, rings via
    the ring-type projection concatenated with the degree position
    encoding (real ring-graph degree, clipped); virtual nodes take the
    learned embedding row instead.
    """
    config = params.config
    h_atom = linear(Tensor(batch.atom_x), params["atom_in.w"])
    pe_idx = np.where(
        batch.ring_pe_idx < 0,
        config.max_degree + 1,
        np.minimum(batch.ring_pe_idx, config.max_degree),
    )
    base = linear(Tensor(batch.ring_x), params["ring_in.w"])
    pe = gather_rows(params["ring_in.pe"], pe_idx)
    h_ring = concat([base, pe], axis=1)
    if batch.use_virtual:
        # (n,1) mask column times the learned (1,d) virtual row
        virt = matmul(Tensor(batch.ring_virtual_mask), params["ring_in.virtual"])
        h_ring = add(mul(h_ring, Tensor(batch.ring_real_mask)), virt)
    return h_atom, h_ring


def atom_mp_layer(l: int, atom_h: Tensor, batch: BatchedGraph,
                  params: ModelParams) -> Tensor:
    """GINE update: h'_i = MLP((1+eps)h_i + sum_j relu(h_j + W_e e_ij))."""
    if batch.atom_edge_src.size:
        src_h = gather_rows(atom_h, batch.atom_edge_src)
        e = linear(Tensor(batch.atom_edge_x), params[f"atom.{l}.edge.w"])
        msg = relu(add(src_h, e))
        agg = segment_sum(msg, batch.atom_edge_dst, batch.n_atoms)
        pre = add(mul(atom_h, _one_plus(params[f"atom.{l}.eps"])), agg)
    else:
        pre = mul(atom_h, _one_plus(params[f"atom.{l}.eps"]))
    return _mlp2(pre, params, f"atom.{l}.mlp")


def ring_attention_layer(l: int, ring_h: Tensor, batch: BatchedGraph,
                         params: ModelParams, config: ModelConfig,
                         attention_out: list | None = None) -> Tensor:
    """Localized multi-head cross-attention over ring-level edges.

    Keys and values come from MLP(source representation || edge one-hot),
    queries from the target; attention weights normalize over each target
    node's in-neighborhood. Nodes with no neighbors (only possible
    without the virtual node) pass through as W_s h before the FFN.
    When ``attention_out`` is given, each head's per-edge weights are
    appended as (layer, head, weights-array).
    """
    d, C = config.d, config.C
    n = batch.n_ring_nodes
    dst = batch.ring_edge_dst
    n_edges = dst.size

    if n_edges:
        src_h = gather_rows(ring_h, batch.ring_edge_src)
        z = _mlp2(concat([src_h, Tensor(batch.ring_edge_x)], axis=1),
                  params, f"ring.{l}.z")
        heads = []
        for c in range(C):
            q = linear(ring_h, params[f"ring.{l}.q.{c}"])
            k = linear(z, params[f"ring.{l}.k.{c}"])
            v = linear(z, params[f"ring.{l}.v.{c}"])
            q_e = gather_rows(q, dst)
            scores = scalar_mul(reduce_sum(mul(q_e, k), axis=1),
                                1.0 / math.sqrt(d))
            if config.attn_norm == "softmax":
                alpha = segment_softmax(scores, dst, n)
            else:
                ssum = segment_sum(scores, dst, n)
                per_edge = gather_rows(ssum, dst)
                guard = np.where(per_edge.data >= 0.0,
                                 _LINEAR_ATTN_EPS, -_LINEAR_ATTN_EPS)
                alpha = div(scores, add(per_edge, Tensor(guard.astype(per_edge.dtype))))
            if attention_out is not None:
                attention_out.append((l, c, alpha.data.copy()))
            weighted = mul(v, reshape(alpha, (n_edges, 1)))
            heads.append(segment_sum(weighted, dst, n))
        attn = concat(heads, axis=1)
        hat = add(linear(ring_h, params[f"ring.{l}.ws"]),
                  linear(attn, params[f"ring.{l}.wo"]))
    else:
        hat = linear(ring_h, params[f"ring.{l}.ws"])
    return _mlp2(add(hat, ring_h), params, f"ring.{l}.ffn")


def inter_mp_layer(l: int, atom_h: Tensor, ring_h: Tensor,
                   batch: BatchedGraph, params: ModelParams
                   ) -> tuple[Tensor, Tensor]:
    """GIN update on the bipartite membership graph, both directions.

    Atoms aggregate their member rings and rings their member atoms;
    nodes without membership edges reduce to MLP((1+eps)h).
    """
    one_plus = _one_plus(params[f"inter.{l}.eps"])
    if batch.r2a_src.size:
        agg_a = segment_sum(gather_rows(ring_h, batch.r2a_src),
                            batch.r2a_dst, batch.n_atoms)
        pre_a = add(mul(atom_h, one_plus), agg_a)
    else:
        pre_a = mul(atom_h, one_plus)
    if batch.a2r_src.size:
        agg_r = segment_sum(gather_rows(atom_h, batch.a2r_src),
                            batch.a2r_dst, batch.n_ring_nodes)
        pre_r = add(mul(ring_h, one_plus), agg_r)
    else:
        pre_r = mul(ring_h, one_plus)
    return (_mlp2(pre_a, params, f"inter.{l}.mlp"),
            _mlp2(pre_r, params, f"inter.{l}.mlp"))


def fuse(l: int, h_level: Tensor, h_inter: Tensor, params: ModelParams,
         node_type: str, batch: BatchedGraph | None = None) -> Tensor:
    """Per-node fusion MLP over the concatenated level/inter views.

    Ring fusion leaves the virtual node untouched: it has no membership
    edges, so its post-attention value carries forward unchanged.
    """
    prefix = "fuse_atom" if node_type == "atom" else "fuse_ring"
    fused = _mlp2(concat([h_level, h_inter], axis=1), params, f"{prefix}.{l}")
    if node_type == "ring" and batch is not None and batch.use_virtual:
        fused = add(mul(fused, Tensor(batch.ring_real_mask)),
                    mul(h_level, Tensor(batch.ring_virtual_mask)))
    return fused


def forward(batch: BatchedGraph, params: ModelParams,
            config: ModelConfig | None = None) -> Tensor:
    """Predictions for every graph in the batch, shape (B, n_targets)."""
    config = config or params.config
    if (batch.d_va, batch.d_ea, batch.d_vr, batch.d_er) != \
            (params.d_va, params.d_ea, params.d_vr, params.d_er):
        raise VocabMismatch(
            f"batch feature widths (VA={batch.d_va}, EA={batch.d_ea}, "
            f"VR={batch.d_vr}, ER={batch.d_er}) do not match the checkpoint "
            f"(VA={params.d_va}, EA={params.d_ea}, VR={params.d_vr}, "
            f"ER={params.d_er})")
    if batch.use_virtual != config.use_virtual:
        raise VocabMismatch(
            "batch virtual-node construction disagrees with the model config")

    h_atom, h_ring = init_embeddings(batch, params)
    atom_layers = [h_atom]
    ring_layers = [h_ring]
    for l in range(config.L):
        h_a = atom_mp_layer(l, h_atom, batch, params)
        h_r = ring_attention_layer(l, h_ring, batch, params, config)
        h_ia, h_ir = inter_mp_layer(l, h_atom, h_ring, batch, params)
        h_atom = fuse(l, h_a, h_ia, params, "atom")
        h_ring = fuse(l, h_r, h_ir, params, "ring", batch=batch)
        atom_layers.append(h_atom)
        ring_layers.append(h_ring)

    atom_cat = concat(atom_layers, axis=1)
    ring_cat = concat(ring_layers, axis=1)
    pooled_atoms = segment_sum(atom_cat, batch.atom_seg, batch.n_graphs)
    if batch.use_virtual:
        ring_cat = mul(ring_cat, Tensor(batch.ring_real_mask))
    pooled_rings = segment_sum(ring_cat, batch.ring_seg, batch.n_graphs)
    graph_repr = concat([pooled_atoms, pooled_rings], axis=1)
    return linear(graph_repr, params["readout.w"], params["readout.b"])


def mae_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute error over batch and tasks."""
    target = target if isinstance(target, Tensor) else Tensor(
        np.asarray(target, dtype=pred.dtype))
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs target {target.shape}")
    if not np.all(np.isfinite(target.data)):
        raise NonFiniteTarget("targets contain non-finite values")
    return mean(absolute(sub(pred, target)))
