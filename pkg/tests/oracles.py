"""Independent reference implementations used as test oracles.

Everything here is deliberately written as plain loops over nodes and
edges, sharing no code with the library's vectorized paths.
"""

from __future__ import annotations

import numpy as np

from ringkit.hiergraph import HierGraph
from ringkit.rings import build_ring_graph
from ringkit.smiles import Atom, AtomGraph, Bond


def simple_cycle_vertex_sets(n: int, nbrs: list[set[int]],
                             max_len: int) -> set[frozenset[int]]:
    """Vertex sets of all simple cycles of length 3..max_len.

    Exhaustive path enumeration anchored at each cycle's minimum vertex;
    no chordless pruning anywhere.
    """
    found: set[frozenset[int]] = set()
    for start in range(n):
        stack = [(start, (start,), frozenset((start,)))]
        while stack:
            v, path, on_path = stack.pop()
            for w in nbrs[v]:
                if w == start and len(path) >= 3:
                    found.add(frozenset(path))
                elif w > start and w not in on_path and len(path) < max_len:
                    stack.append((w, path + (w,), on_path | {w}))
    return found


def brute_force_induced_cycles(n: int, edges: set[tuple[int, int]],
                               max_len: int) -> set[frozenset[int]]:
    """All induced-cycle vertex sets: simple cycles whose vertex set
    spans exactly |S| edges (any chord adds an edge)."""
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for i, j in edges:
        nbrs[i].add(j)
        nbrs[j].add(i)

    def edges_within(vertex_set: frozenset[int]) -> int:
        return sum(1 for i, j in edges if i in vertex_set and j in vertex_set)

    candidates = simple_cycle_vertex_sets(n, nbrs, max_len)
    return {s for s in candidates if edges_within(s) == len(s)}


def atom_graph_edges(g: AtomGraph) -> set[tuple[int, int]]:
    return {tuple(sorted(b.endpoints)) for b in g.bonds}


def permute_atom_graph(g: AtomGraph, perm: list[int]) -> AtomGraph:
    """Relabel atoms by perm (new_index = perm[old_index])."""
    n = len(g.atoms)
    atoms: list[Atom] = [None] * n  # type: ignore[list-item]
    for old, atom in enumerate(g.atoms):
        atoms[perm[old]] = Atom(
            element=atom.element, aromatic=atom.aromatic,
            formal_charge=atom.formal_charge, explicit_h=atom.explicit_h,
            implicit_h=atom.implicit_h, degree=atom.degree,
            in_ring=False)
    bonds = [Bond(endpoints=(perm[b.endpoints[0]], perm[b.endpoints[1]]),
                  order=b.order) for b in g.bonds]
    adjacency: list[list[int]] = [[] for _ in range(n)]
    for bi, bond in enumerate(bonds):
        adjacency[bond.endpoints[0]].append(bi)
        adjacency[bond.endpoints[1]].append(bi)
    return AtomGraph(atoms=atoms, bonds=bonds, adjacency=adjacency,
                     source_smiles=g.source_smiles)


def permuted_hier_graph(graph: HierGraph, perm: list[int]) -> HierGraph:
    """HierGraph of the same molecule under an atom relabeling."""
    g2 = permute_atom_graph(graph.atom_graph, perm)
    rg2 = build_ring_graph(g2, add_virtual=graph.ring_graph.has_virtual)
    inter = [(ri, ai) for ri, ring in enumerate(rg2.rings)
             for ai in ring.atom_indices]
    return HierGraph(atom_graph=g2, ring_graph=rg2, inter_edges=inter,
                     targets=list(graph.targets) if graph.targets else None)


# --- naive per-node/per-edge layer re-implementations ----------------------


def _np_mlp2(x, w1, b1, w2, b2):
    h = np.maximum(x @ w1.T + b1, 0.0)
    return h @ w2.T + b2


def naive_gine(h, edge_src, edge_dst, edge_x, w_e, eps, mlp):
    """Edge-by-edge GINE layer."""
    w1, b1, w2, b2 = mlp
    out = np.zeros_like(h)
    for i in range(h.shape[0]):
        m = np.zeros(h.shape[1])
        for e in range(len(edge_src)):
            if edge_dst[e] == i:
                m += np.maximum(h[edge_src[e]] + edge_x[e] @ w_e.T, 0.0)
        out[i] = _np_mlp2((1.0 + eps) * h[i] + m, w1, b1, w2, b2)
    return out


def naive_ring_attention(h, edge_src, edge_dst, edge_x, params, l, d, C,
                         attn_norm="softmax"):
    """Per-node localized cross-attention, one neighborhood at a time."""
    def p(name):
        return params[f"ring.{l}.{name}"].data

    n = h.shape[0]
    z_mlp = (p("z.w1"), p("z.b1"), p("z.w2"), p("z.b2"))
    ffn = (p("ffn.w1"), p("ffn.b1"), p("ffn.w2"), p("ffn.b2"))
    out = np.zeros_like(h)
    for i in range(n):
        incoming = [e for e in range(len(edge_src)) if edge_dst[e] == i]
        if incoming:
            head_outputs = []
            for c in range(C):
                q = p(f"q.{c}") @ h[i]
                scores = []
                values = []
                for e in incoming:
                    z = _np_mlp2(np.concatenate([h[edge_src[e]], edge_x[e]]),
                                 *z_mlp)
                    k = p(f"k.{c}") @ z
                    values.append(p(f"v.{c}") @ z)
                    scores.append(float(q @ k) / np.sqrt(d))
                scores = np.asarray(scores)
                if attn_norm == "softmax":
                    w = np.exp(scores - scores.max())
                    alpha = w / w.sum()
                else:
                    denom = scores.sum()
                    denom += 1e-8 if denom >= 0 else -1e-8
                    alpha = scores / denom
                head_outputs.append(sum(a * v for a, v in zip(alpha, values)))
            merged = np.concatenate(head_outputs)
            hat = p("ws") @ h[i] + p("wo") @ merged
        else:
            hat = p("ws") @ h[i]
        out[i] = _np_mlp2(hat + h[i], *ffn)
    return out


def naive_inter_gin(atom_h, ring_h, a2r, r2a, eps, mlp):
    """Node-by-node GIN over the bipartite membership edges."""
    w1, b1, w2, b2 = mlp
    out_a = np.zeros_like(atom_h)
    for i in range(atom_h.shape[0]):
        m = np.zeros(atom_h.shape[1])
        for src, dst in r2a:
            if dst == i:
                m += ring_h[src]
        out_a[i] = _np_mlp2((1.0 + eps) * atom_h[i] + m, w1, b1, w2, b2)
    out_r = np.zeros_like(ring_h)
    for i in range(ring_h.shape[0]):
        m = np.zeros(ring_h.shape[1])
        for src, dst in a2r:
            if dst == i:
                m += atom_h[src]
        out_r[i] = _np_mlp2((1.0 + eps) * ring_h[i] + m, w1, b1, w2, b2)
    return out_a, out_r
