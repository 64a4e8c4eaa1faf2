"""Smallest-ring perception and ring-level graph construction.

A smallest ring is an induced (chordless) simple cycle: no proper subset
of its vertices forms a smaller cycle. Enumeration is a DFS over induced
paths anchored at each cycle's minimum-index vertex, which visits every
chordless cycle exactly once. Deliberately not SSSR: bridged bicyclics
keep their large bridging ring.

Two rings are connected when they share at least one atom, or when a
single chain of non-aromatic bonds (interior atoms in no ring, at most
``CHAIN_MAX_DEFAULT`` bonds) links them. Each qualifying pair gets one
edge, typed by a canonical signature string.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .smiles import AtomGraph

R_MAX_DEFAULT = 24
CHAIN_MAX_DEFAULT = 8
MAX_RINGS_DEFAULT = 256
VIRTUAL_SIGNATURE = "V"

_CHAIN_BOND_SYMBOL = {"single": "-", "double": "=", "triple": "#"}

# generous cap on DFS expansions; only pathological non-molecular inputs
# can get anywhere near it
_EXPANSION_BUDGET = 5_000_000


class RingLimitExceeded(RuntimeError):
    pass


@dataclass
class Ring:
    atom_indices: tuple[int, ...]  # canonical cyclic order
    size: int
    signature: str = ""


@dataclass
class RingConnection:
    ring_pair: tuple[int, int]
    kind: str  # "shared" | "chain"
    signature: str
    shared_atoms: tuple[int, ...] = ()
    chain_atoms: tuple[int, ...] = ()  # full path incl. ring endpoints
    chain_bonds: tuple[int, ...] = ()  # bond indices along the path


@dataclass
class RingGraph:
    rings: list[Ring] = field(default_factory=list)
    connections: list[RingConnection] = field(default_factory=list)
    has_virtual: bool = False


def _neighbor_sets(g: AtomGraph) -> list[set[int]]:
    nbrs: list[set[int]] = [set() for _ in g.atoms]
    for bond in g.bonds:
        i, j = bond.endpoints
        nbrs[i].add(j)
        nbrs[j].add(i)
    return nbrs


def _enumerate_chordless_cycles(
    nbrs: list[set[int]], r_max: int, max_rings: int
) -> list[tuple[int, ...]]:
    """All chordless cycles of length 3..r_max, each exactly once.

    Paths start at the cycle's minimum vertex u and only use vertices
    above u. A path stays induced: a new vertex may touch no path vertex
    except the current endpoint, with the sole exception of u, which
    closes the cycle (extending past such a vertex would reintroduce the
    chord to u). The emitted orientation has path[1] < path[-1], so each
    cycle appears once; a chordless cycle is unique for its vertex set.
    """
    n = len(nbrs)
    cycles: list[tuple[int, ...]] = []
    expansions = 0
    for u in range(n):
        starts = sorted(v for v in nbrs[u] if v > u)
        for v in starts:
            # (path, vertices on path, interior vertices = path minus endpoints)
            stack: list[tuple[tuple[int, ...], frozenset[int], frozenset[int]]] = [
                ((u, v), frozenset((u, v)), frozenset())
            ]
            while stack:
                path, on_path, interior = stack.pop()
                last = path[-1]
                for y in sorted(nbrs[last]):
                    if y <= u or y in on_path or nbrs[y] & interior:
                        continue
                    if u in nbrs[y]:
                        if len(path) >= 2 and path[1] < y and len(path) + 1 >= 3 \
                                and len(path) + 1 <= r_max:
                            cycles.append(path + (y,))
                            if len(cycles) > max_rings:
                                raise RingLimitExceeded(
                                    f"more than {max_rings} smallest rings"
                                )
                    elif len(path) + 2 <= r_max:
                        expansions += 1
                        if expansions > _EXPANSION_BUDGET:
                            raise RingLimitExceeded(
                                "ring enumeration budget exceeded"
                            )
                        stack.append(
                            (path + (y,), on_path | {y}, interior | {last})
                        )
    return cycles


def ring_signature(ring: Ring, g: AtomGraph) -> str:
    """Canonical ring-type string, e.g. ``6:c.c.c.c.c.c`` for benzene.

    The token sequence (element symbol, lowercased when aromatic) is
    minimized over all rotations of both orientations, so any relabeling
    of the same chemical ring yields the identical signature.
    """
    tokens = tuple(
        g.atoms[i].element.lower() if g.atoms[i].aromatic else g.atoms[i].element
        for i in ring.atom_indices
    )
    k = len(tokens)
    best: tuple[str, ...] | None = None
    for seq in (tokens, tokens[::-1]):
        for shift in range(k):
            rotated = seq[shift:] + seq[:shift]
            if best is None or rotated < best:
                best = rotated
    assert best is not None
    return f"{ring.size}:" + ".".join(best)


def find_smallest_rings(
    g: AtomGraph,
    r_max: int = R_MAX_DEFAULT,
    max_rings: int = MAX_RINGS_DEFAULT,
) -> list[Ring]:
    """Chordless simple cycles of g, deduplicated and canonically ordered.

    Also sets the in_ring flags on g's atoms and on every bond whose
    endpoints are cyclically adjacent in some returned ring.
    """
    nbrs = _neighbor_sets(g)
    cycles = sorted(_enumerate_chordless_cycles(nbrs, r_max, max_rings))
    rings = [Ring(atom_indices=c, size=len(c)) for c in cycles]
    for ring in rings:
        ring.signature = ring_signature(ring, g)

    bond_of_pair = {frozenset(b.endpoints): i for i, b in enumerate(g.bonds)}
    for atom in g.atoms:
        atom.in_ring = False
    for bond in g.bonds:
        bond.in_ring = False
    for ring in rings:
        k = ring.size
        for pos, a in enumerate(ring.atom_indices):
            g.atoms[a].in_ring = True
            b = ring.atom_indices[(pos + 1) % k]
            g.bonds[bond_of_pair[frozenset((a, b))]].in_ring = True
    return rings


def _chain_string(g: AtomGraph, path_atoms: tuple[int, ...],
                  path_bonds: tuple[int, ...]) -> str:
    def one_direction(atoms_seq, bonds_seq):
        parts = []
        for idx, bi in enumerate(bonds_seq):
            parts.append(_CHAIN_BOND_SYMBOL[g.bonds[bi].order])
            if idx < len(bonds_seq) - 1:
                parts.append(g.atoms[atoms_seq[idx + 1]].element)
        return "".join(parts)

    forward = one_direction(path_atoms, path_bonds)
    backward = one_direction(path_atoms[::-1], path_bonds[::-1])
    return min(forward, backward)


def _best_chain(
    g: AtomGraph,
    from_atoms: set[int],
    to_atoms: set[int],
    chain_max: int,
) -> tuple[tuple[int, ...], tuple[int, ...], str] | None:
    """Shortest qualifying chain between two disjoint rings, or None.

    Ties on length break on the lexicographically smallest canonical
    chain string, then on the atom path for full determinism.
    """
    best: tuple[int, str, tuple[int, ...], tuple[int, ...]] | None = None
    for start in sorted(from_atoms):
        stack: list[tuple[int, tuple[int, ...], tuple[int, ...]]] = [
            (start, (start,), ())
        ]
        while stack:
            atom, path_atoms, path_bonds = stack.pop()
            for bi in sorted(g.adjacency[atom]):
                if g.bonds[bi].order == "aromatic":
                    continue
                w = g.neighbor(atom, bi)
                if w in to_atoms:
                    cand_atoms = path_atoms + (w,)
                    cand_bonds = path_bonds + (bi,)
                    key = (len(cand_bonds), _chain_string(g, cand_atoms, cand_bonds),
                           cand_atoms, cand_bonds)
                    if best is None or key < best:
                        best = key
                elif (not g.atoms[w].in_ring and w not in path_atoms
                      and len(path_bonds) + 2 <= chain_max):
                    stack.append((w, path_atoms + (w,), path_bonds + (bi,)))
    if best is None:
        return None
    _, signature, atoms_path, bonds_path = best
    return atoms_path, bonds_path, signature


def find_ring_connections(
    g: AtomGraph,
    rings: list[Ring],
    chain_max: int = CHAIN_MAX_DEFAULT,
) -> list[RingConnection]:
    """One typed edge per qualifying ring pair (shared atoms beat chains)."""
    ring_sets = [set(r.atom_indices) for r in rings]
    connections: list[RingConnection] = []
    for i in range(len(rings)):
        for j in range(i + 1, len(rings)):
            shared = ring_sets[i] & ring_sets[j]
            if shared:
                ordered = tuple(sorted(shared))
                elements = ",".join(sorted(g.atoms[a].element for a in ordered))
                connections.append(RingConnection(
                    ring_pair=(i, j), kind="shared",
                    signature=f"S:{len(shared)}:{elements}",
                    shared_atoms=ordered,
                ))
                continue
            chain = _best_chain(g, ring_sets[i], ring_sets[j], chain_max)
            if chain is not None:
                atoms_path, bonds_path, signature = chain
                connections.append(RingConnection(
                    ring_pair=(i, j), kind="chain",
                    signature=f"C:{signature}",
                    chain_atoms=atoms_path, chain_bonds=bonds_path,
                ))
    return connections


def build_ring_graph(
    g: AtomGraph,
    add_virtual: bool = True,
    r_max: int = R_MAX_DEFAULT,
    chain_max: int = CHAIN_MAX_DEFAULT,
    max_rings: int = MAX_RINGS_DEFAULT,
) -> RingGraph:
    """Ring-level graph of g; the virtual molecule node stays implicit.

    When present, the virtual node has index ``len(rings)`` and is
    connected to every ring node by an edge carrying the reserved
    signature ``V``; a ring-free molecule then yields a graph containing
    only the virtual node.
    """
    rings = find_smallest_rings(g, r_max=r_max, max_rings=max_rings)
    connections = find_ring_connections(g, rings, chain_max=chain_max)
    return RingGraph(rings=rings, connections=connections, has_virtual=add_virtual)
