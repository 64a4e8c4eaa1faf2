"""Hierarchical molecule graphs: atom level, ring level, and the
bipartite membership edges between them, plus corpus vocabularies and a
lossless JSONL serialization.

The JSONL schema (one molecule per line, UTF-8, LF endings)::

    {"v":1, "smiles":str, "virtual":0|1,
     "atoms":[{"el":str,"ar":0|1,"chg":int,"hs":int}, ...],
     "bonds":[[i,j,"order"], ...],
     "rings":[[atom indices...], ...], "ring_sigs":[str, ...],
     "conns":[[ri,rj,"kind","sig"], ...],
     "inter":[[ri,ai], ...], "y":[floats]}

All indices are 0-based. ``hs`` is the explicit (bracket) hydrogen
count; implicit hydrogens, degrees and ring flags are recomputed on
load, so a round trip is byte-identical.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .rings import (
    CHAIN_MAX_DEFAULT,
    MAX_RINGS_DEFAULT,
    R_MAX_DEFAULT,
    Ring,
    RingConnection,
    RingGraph,
    VIRTUAL_SIGNATURE,
    build_ring_graph,
)
from .smiles import (
    Atom,
    AtomGraph,
    Bond,
    BOND_ORDERS,
    compute_implicit_hydrogens,
    parse_smiles,
)

OOV_INDEX = 0
VIRTUAL_INDEX = 1


class EmptyCorpus(ValueError):
    pass


class SchemaError(ValueError):
    def __init__(self, message: str, line_number: int | None = None):
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)
        self.line_number = line_number


@dataclass
class HierGraph:
    atom_graph: AtomGraph
    ring_graph: RingGraph
    inter_edges: list[tuple[int, int]]  # (ring index, atom index)
    targets: list[float] | None = None

    def same_structure(self, other: "HierGraph") -> bool:
        """Equality over the serialized content (transients ignored)."""
        return serialize(self) == serialize(other)


@dataclass
class Vocabulary:
    """Index maps for ring-type and connection-type signatures.

    Index 0 of both spaces is the out-of-vocabulary bucket; connection
    index 1 is the reserved virtual-edge type ``V``. Real signatures are
    assigned by descending training-corpus frequency, ties broken by the
    signature string, so construction is corpus-order independent.
    """
    ring_types: dict[str, int] = field(default_factory=dict)
    connection_types: dict[str, int] = field(
        default_factory=lambda: {VIRTUAL_SIGNATURE: VIRTUAL_INDEX})

    @property
    def d_vr(self) -> int:
        return len(self.ring_types) + 1

    @property
    def d_er(self) -> int:
        return len(self.connection_types) + 1

    def ring_index(self, signature: str) -> int:
        return self.ring_types.get(signature, OOV_INDEX)

    def connection_index(self, signature: str) -> int:
        return self.connection_types.get(signature, OOV_INDEX)

    def to_json(self) -> dict:
        ring_order = sorted(self.ring_types, key=self.ring_types.get)
        conn_order = sorted(
            (s for s in self.connection_types if s != VIRTUAL_SIGNATURE),
            key=self.connection_types.get)
        return {"ring_types": ring_order, "connection_types": conn_order}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        vocab = cls()
        for i, sig in enumerate(obj["ring_types"]):
            vocab.ring_types[sig] = i + 1
        for i, sig in enumerate(obj["connection_types"]):
            vocab.connection_types[sig] = i + 2
        return vocab


def build_hier_graph(
    smiles: str,
    add_virtual: bool = True,
    r_max: int = R_MAX_DEFAULT,
    chain_max: int = CHAIN_MAX_DEFAULT,
    max_rings: int = MAX_RINGS_DEFAULT,
) -> HierGraph:
    """Parse one SMILES and assemble all three graph levels."""
    atom_graph = parse_smiles(smiles)
    ring_graph = build_ring_graph(
        atom_graph, add_virtual=add_virtual, r_max=r_max,
        chain_max=chain_max, max_rings=max_rings)
    inter = [(ri, ai)
             for ri, ring in enumerate(ring_graph.rings)
             for ai in ring.atom_indices]
    return HierGraph(atom_graph=atom_graph, ring_graph=ring_graph,
                     inter_edges=inter)


def build_vocab(corpus: Iterable[HierGraph]) -> Vocabulary:
    """Frequency-ordered vocabulary over a training corpus.

    Only training-split graphs should be passed; unseen signatures at
    encode time fall into the OOV bucket.
    """
    ring_counts: Counter[str] = Counter()
    conn_counts: Counter[str] = Counter()
    n = 0
    for graph in corpus:
        n += 1
        ring_counts.update(r.signature for r in graph.ring_graph.rings)
        conn_counts.update(c.signature for c in graph.ring_graph.connections)
    if n == 0:
        raise EmptyCorpus("vocabulary needs at least one graph")
    vocab = Vocabulary()
    for i, (sig, _) in enumerate(
            sorted(ring_counts.items(), key=lambda kv: (-kv[1], kv[0]))):
        vocab.ring_types[sig] = i + 1
    for i, (sig, _) in enumerate(
            sorted(conn_counts.items(), key=lambda kv: (-kv[1], kv[0]))):
        vocab.connection_types[sig] = i + 2
    return vocab


def encode_ring_attributes(
    graph: HierGraph, vocab: Vocabulary
) -> tuple[np.ndarray, np.ndarray]:
    """One-hot matrices for ring nodes and ring-level edges.

    Edge rows are the real connections in stored order followed by one
    virtual-edge row per ring when the graph carries a virtual node.
    """
    rg = graph.ring_graph
    ring_x = np.zeros((len(rg.rings), vocab.d_vr))
    for i, ring in enumerate(rg.rings):
        ring_x[i, vocab.ring_index(ring.signature)] = 1.0
    n_virtual = len(rg.rings) if rg.has_virtual else 0
    edge_x = np.zeros((len(rg.connections) + n_virtual, vocab.d_er))
    for i, conn in enumerate(rg.connections):
        edge_x[i, vocab.connection_index(conn.signature)] = 1.0
    for i in range(n_virtual):
        edge_x[len(rg.connections) + i, VIRTUAL_INDEX] = 1.0
    return ring_x, edge_x


def serialize(graph: HierGraph) -> str:
    """One JSON line (no trailing newline) for a HierGraph."""
    ag = graph.atom_graph
    rg = graph.ring_graph
    obj = {
        "v": 1,
        "smiles": ag.source_smiles,
        "virtual": 1 if rg.has_virtual else 0,
        "atoms": [
            {"el": a.element, "ar": int(a.aromatic),
             "chg": a.formal_charge, "hs": a.explicit_h}
            for a in ag.atoms
        ],
        "bonds": [[b.endpoints[0], b.endpoints[1], b.order] for b in ag.bonds],
        "rings": [list(r.atom_indices) for r in rg.rings],
        "ring_sigs": [r.signature for r in rg.rings],
        "conns": [[c.ring_pair[0], c.ring_pair[1], c.kind, c.signature]
                  for c in rg.connections],
        "inter": [[ri, ai] for ri, ai in graph.inter_edges],
        "y": list(graph.targets) if graph.targets is not None else [],
    }
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def _require(condition: bool, message: str, line_number: int | None) -> None:
    if not condition:
        raise SchemaError(message, line_number)


def deserialize(line: str, line_number: int | None = None) -> HierGraph:
    """Rebuild a HierGraph from one JSONL line.

    Raises SchemaError (tagged with the line number when given) on
    malformed or inconsistent input.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON ({exc.msg})", line_number) from exc
    _require(isinstance(obj, dict), "record must be a JSON object", line_number)
    for key in ("smiles", "atoms", "bonds", "rings", "ring_sigs",
                "conns", "inter", "y"):
        _require(key in obj, f"missing field {key!r}", line_number)

    atoms = []
    for rec in obj["atoms"]:
        _require(isinstance(rec, dict) and {"el", "ar", "chg", "hs"} <= set(rec),
                 "atom record needs el/ar/chg/hs", line_number)
        atoms.append(Atom(element=rec["el"], aromatic=bool(rec["ar"]),
                          formal_charge=int(rec["chg"]),
                          explicit_h=int(rec["hs"])))
    n_atoms = len(atoms)
    _require(n_atoms > 0, "molecule has no atoms", line_number)

    bonds: list[Bond] = []
    adjacency: list[list[int]] = [[] for _ in range(n_atoms)]
    seen = set()
    for rec in obj["bonds"]:
        _require(isinstance(rec, list) and len(rec) == 3,
                 "bond record must be [i,j,order]", line_number)
        i, j, order = rec
        _require(isinstance(i, int) and isinstance(j, int)
                 and 0 <= i < n_atoms and 0 <= j < n_atoms and i != j,
                 f"bond endpoints {rec[:2]} out of range", line_number)
        _require(order in BOND_ORDERS, f"unknown bond order {order!r}", line_number)
        pair = frozenset((i, j))
        _require(pair not in seen, f"duplicate bond {sorted(pair)}", line_number)
        seen.add(pair)
        bi = len(bonds)
        bonds.append(Bond(endpoints=(i, j), order=order))
        adjacency[i].append(bi)
        adjacency[j].append(bi)

    atom_graph = AtomGraph(atoms=atoms, bonds=bonds, adjacency=adjacency,
                           source_smiles=str(obj["smiles"]))
    for idx, atom in enumerate(atoms):
        atom.degree = len(adjacency[idx])
        atom.implicit_h = compute_implicit_hydrogens(
            atom, atom_graph.incident_orders(idx))

    sigs = obj["ring_sigs"]
    _require(len(sigs) == len(obj["rings"]),
             "rings and ring_sigs lengths differ", line_number)
    rings = []
    bond_of_pair = {frozenset(b.endpoints): i for i, b in enumerate(bonds)}
    for members, sig in zip(obj["rings"], sigs):
        _require(isinstance(members, list) and len(members) >= 3,
                 "ring needs at least 3 atoms", line_number)
        _require(all(isinstance(a, int) and 0 <= a < n_atoms for a in members),
                 "ring atom index out of range", line_number)
        ring = Ring(atom_indices=tuple(members), size=len(members),
                    signature=str(sig))
        for pos, a in enumerate(ring.atom_indices):
            b = ring.atom_indices[(pos + 1) % ring.size]
            _require(frozenset((a, b)) in bond_of_pair,
                     f"ring edge {a}-{b} is not a bond", line_number)
        rings.append(ring)
    for ring in rings:
        for pos, a in enumerate(ring.atom_indices):
            atoms[a].in_ring = True
            b = ring.atom_indices[(pos + 1) % ring.size]
            bonds[bond_of_pair[frozenset((a, b))]].in_ring = True

    connections = []
    for rec in obj["conns"]:
        _require(isinstance(rec, list) and len(rec) == 4,
                 "connection record must be [ri,rj,kind,sig]", line_number)
        ri, rj, kind, sig = rec
        _require(isinstance(ri, int) and isinstance(rj, int)
                 and 0 <= ri < len(rings) and 0 <= rj < len(rings) and ri != rj,
                 f"connection ring pair {rec[:2]} out of range", line_number)
        _require(kind in ("shared", "chain"),
                 f"unknown connection kind {kind!r}", line_number)
        connections.append(RingConnection(
            ring_pair=(ri, rj), kind=kind, signature=str(sig)))

    inter: list[tuple[int, int]] = []
    seen_inter = set()
    for rec in obj["inter"]:
        _require(isinstance(rec, list) and len(rec) == 2,
                 "inter record must be [ri,ai]", line_number)
        ri, ai = rec
        _require(isinstance(ri, int) and 0 <= ri < len(rings),
                 f"inter ring index {ri} out of range", line_number)
        _require(isinstance(ai, int) and 0 <= ai < n_atoms,
                 f"inter atom index {ai} out of range", line_number)
        _require(ai in rings[ri].atom_indices,
                 f"inter edge [{ri},{ai}] is not a membership pair", line_number)
        _require((ri, ai) not in seen_inter,
                 f"duplicate inter edge [{ri},{ai}]", line_number)
        seen_inter.add((ri, ai))
        inter.append((ri, ai))
    expected = {(ri, ai) for ri, ring in enumerate(rings)
                for ai in ring.atom_indices}
    _require(seen_inter == expected,
             "inter edges do not cover the membership relation", line_number)

    targets = [float(v) for v in obj["y"]] if obj["y"] else None
    ring_graph = RingGraph(rings=rings, connections=connections,
                           has_virtual=bool(obj.get("virtual", 1)))
    return HierGraph(atom_graph=atom_graph, ring_graph=ring_graph,
                     inter_edges=inter, targets=targets)


def write_jsonl(path, graphs: Iterable[HierGraph]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for graph in graphs:
            fh.write(serialize(graph))
            fh.write("\n")
            n += 1
    return n


def read_jsonl(path) -> Iterator[HierGraph]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line:
                yield deserialize(line, line_number=lineno)
