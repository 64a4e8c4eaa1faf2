import numpy as np
import pytest

from ringkit.rings import (
    RingLimitExceeded,
    build_ring_graph,
    find_ring_connections,
    find_smallest_rings,
    ring_signature,
)
from ringkit.smiles import Atom, AtomGraph, Bond, parse_smiles

from oracles import (
    atom_graph_edges,
    brute_force_induced_cycles,
    permute_atom_graph,
)


def make_graph(n: int, edges: list[tuple[int, int]]) -> AtomGraph:
    """Synthetic all-carbon single-bond graph for topology tests."""
    atoms = [Atom(element="C") for _ in range(n)]
    bonds = [Bond(endpoints=e, order="single") for e in edges]
    adjacency: list[list[int]] = [[] for _ in range(n)]
    for bi, bond in enumerate(bonds):
        adjacency[bond.endpoints[0]].append(bi)
        adjacency[bond.endpoints[1]].append(bi)
    for i, atom in enumerate(atoms):
        atom.degree = len(adjacency[i])
    return AtomGraph(atoms=atoms, bonds=bonds, adjacency=adjacency,
                     source_smiles="")


def ring_sets(rings):
    return {frozenset(r.atom_indices) for r in rings}


def test_benzene_single_ring():
    g = parse_smiles("c1ccccc1")
    rings = find_smallest_rings(g)
    assert len(rings) == 1 and rings[0].size == 6


def test_acyclic_no_rings():
    g = parse_smiles("CCCC")
    assert find_smallest_rings(g) == []
    assert not any(a.in_ring for a in g.atoms)


def test_naphthalene_excludes_perimeter():
    g = parse_smiles("c1ccc2ccccc2c1")
    rings = find_smallest_rings(g)
    assert len(rings) == 2 and all(r.size == 6 for r in rings)
    oracle = brute_force_induced_cycles(len(g.atoms), atom_graph_edges(g), 24)
    assert ring_sets(rings) == oracle
    # the 10-cycle perimeter is a simple cycle but has a chord
    assert frozenset(range(10)) not in oracle


def test_quaterthiophene_four_rings():
    g = parse_smiles("c1ccc(-c2ccc(-c3ccc(-c4cccs4)s3)s2)s1")
    rings = find_smallest_rings(g)
    assert len(rings) == 4 and all(r.size == 5 for r in rings)


def test_norbornane_keeps_bridging_ring():
    # induced-cycle semantics admit the 6-ring a chemical SSSR would drop
    g = parse_smiles("C1CC2CCC1C2")
    rings = find_smallest_rings(g)
    assert sorted(r.size for r in rings) == [5, 5, 6]
    oracle = brute_force_induced_cycles(len(g.atoms), atom_graph_edges(g), 24)
    assert ring_sets(rings) == oracle


def test_ring_flags_closure():
    g = parse_smiles("Cc1ccccc1")
    rings = find_smallest_rings(g)
    in_ring_atoms = {i for r in rings for i in r.atom_indices}
    assert {i for i, a in enumerate(g.atoms) if a.in_ring} == in_ring_atoms
    for bond in g.bonds:
        touches = any(
            set(bond.endpoints) <= set(r.atom_indices)
            and _cyclically_adjacent(r.atom_indices, *bond.endpoints)
            for r in rings)
        assert bond.in_ring == touches


def _cyclically_adjacent(cycle, a, b):
    k = len(cycle)
    for pos in range(k):
        if {cycle[pos], cycle[(pos + 1) % k]} == {a, b}:
            return True
    return False


def test_benzene_signature():
    g = parse_smiles("c1ccccc1")
    rings = find_smallest_rings(g)
    assert rings[0].signature == "6:c.c.c.c.c.c"


def test_thiophene_signature():
    g = parse_smiles("c1ccsc1")
    rings = find_smallest_rings(g)
    assert rings[0].signature == "5:c.c.c.c.s"


def test_pyridine_vs_benzene_signatures_differ():
    p = parse_smiles("c1ccncc1")
    b = parse_smiles("c1ccccc1")
    sig_p = find_smallest_rings(p)[0].signature
    sig_b = find_smallest_rings(b)[0].signature
    assert sig_p != sig_b
    assert sig_p == "6:c.c.c.c.c.n"


def test_signature_rotation_invariance():
    g = parse_smiles("c1csc(-c2ccccc2)c1")
    for ring in find_smallest_rings(g):
        base = ring_signature(ring, g)
        idx = ring.atom_indices
        for shift in range(1, ring.size):
            ring.atom_indices = idx[shift:] + idx[:shift]
            assert ring_signature(ring, g) == base
        ring.atom_indices = idx[::-1]
        assert ring_signature(ring, g) == base


def test_relabeling_invariance(curated_molecules):
    rng = np.random.default_rng(5)
    for smiles in curated_molecules[:20]:
        g = parse_smiles(smiles)
        rings = find_smallest_rings(g)
        conns = find_ring_connections(g, rings)
        perm = list(rng.permutation(len(g.atoms)))
        g2 = permute_atom_graph(g, perm)
        rings2 = find_smallest_rings(g2)
        conns2 = find_ring_connections(g2, rings2)
        mapped = {frozenset(perm[i] for i in r.atom_indices) for r in rings}
        assert mapped == ring_sets(rings2), smiles
        assert sorted(r.signature for r in rings) == \
            sorted(r.signature for r in rings2), smiles
        assert sorted(c.signature for c in conns) == \
            sorted(c.signature for c in conns2), smiles


def test_shared_connection_naphthalene():
    g = parse_smiles("c1ccc2ccccc2c1")
    rings = find_smallest_rings(g)
    conns = find_ring_connections(g, rings)
    assert len(conns) == 1
    assert conns[0].kind == "shared" and conns[0].signature == "S:2:C,C"


def test_chain_connection_biphenyl():
    g = parse_smiles("c1ccc(-c2ccccc2)cc1")
    rings = find_smallest_rings(g)
    conns = find_ring_connections(g, rings)
    assert len(conns) == 1
    assert conns[0].kind == "chain" and conns[0].signature == "C:-"


def test_spiro_shares_one_atom():
    g = parse_smiles("C1CCC2(C1)CCCC2")
    rings = find_smallest_rings(g)
    conns = find_ring_connections(g, rings)
    assert len(conns) == 1 and conns[0].signature == "S:1:C"


def test_chain_with_interior_atoms():
    g = parse_smiles("c1ccc(CCc2ccccc2)cc1")  # -CH2-CH2- bridge, 3 bonds
    rings = find_smallest_rings(g)
    conns = find_ring_connections(g, rings)
    assert len(conns) == 1
    assert conns[0].kind == "chain" and conns[0].signature == "C:-C-C-"


def test_chain_respects_max_length():
    eight = "c1ccc(" + "C" * 7 + "c2ccccc2)cc1"  # 8 bonds ring-to-ring
    nine = "c1ccc(" + "C" * 8 + "c2ccccc2)cc1"   # 9 bonds: beyond the cap
    g8 = parse_smiles(eight)
    conns8 = find_ring_connections(g8, find_smallest_rings(g8))
    assert len(conns8) == 1 and conns8[0].kind == "chain"
    g9 = parse_smiles(nine)
    assert find_ring_connections(g9, find_smallest_rings(g9)) == []


def test_chain_interior_may_not_cross_rings():
    # anthracene's outer rings touch only through the middle ring
    g = parse_smiles("c1ccc2cc3ccccc3cc2c1")
    rings = find_smallest_rings(g)
    conns = find_ring_connections(g, rings)
    assert len(conns) == 2 and all(c.kind == "shared" for c in conns)


def test_aromatic_bonds_never_form_chains():
    # direct aromatic fusion bond handled as shared atoms, never a chain
    g = parse_smiles("c1ccc(-c2cccs2)cc1")
    rings = find_smallest_rings(g)
    conns = find_ring_connections(g, rings)
    assert all(
        g.bonds[b].order != "aromatic"
        for c in conns for b in c.chain_bonds)


def test_shortest_chain_wins():
    # two triangles joined both by a direct bond and by a two-bond path;
    # r_max=3 keeps the encompassing macrocycle out of the ring set so
    # both chains qualify and the one-bond chain must win
    g = make_graph(7, [(0, 1), (1, 2), (2, 0),        # triangle A
                       (3, 4), (4, 5), (5, 3),        # triangle B
                       (0, 3), (2, 6), (6, 5)])
    rings = find_smallest_rings(g, r_max=3)
    conns = find_ring_connections(g, rings)
    assert len(conns) == 1
    assert conns[0].kind == "chain" and conns[0].signature == "C:-"


def test_equal_chains_break_ties_lexicographically():
    # two 2-bond chains; the interior carbon beats the interior nitrogen
    g = make_graph(8, [(0, 1), (1, 2), (2, 0),
                       (3, 4), (4, 5), (5, 3),
                       (0, 6), (6, 3), (2, 7), (7, 5)])
    g.atoms[7].element = "N"
    rings = find_smallest_rings(g, r_max=3)
    conns = find_ring_connections(g, rings)
    assert len(conns) == 1
    assert conns[0].signature == "C:-C-"
    assert conns[0].chain_atoms[1] == 6


def test_build_ring_graph_virtual_flags():
    rg = build_ring_graph(parse_smiles("c1ccccc1"), add_virtual=True)
    assert len(rg.rings) == 1 and rg.has_virtual and rg.connections == []
    rg2 = build_ring_graph(parse_smiles("c1ccc2ccccc2c1"), add_virtual=True)
    assert len(rg2.rings) == 2 and len(rg2.connections) == 1
    rg3 = build_ring_graph(parse_smiles("CCCC"), add_virtual=False)
    assert rg3.rings == [] and rg3.connections == [] and not rg3.has_virtual


def test_ring_limit_exceeded():
    # complete bipartite K(7,7): 441 chordless 4-cycles
    edges = [(i, 7 + j) for i in range(7) for j in range(7)]
    g = make_graph(14, edges)
    with pytest.raises(RingLimitExceeded):
        find_smallest_rings(g)


def test_oracle_equivalence_random_graphs():
    rng = np.random.default_rng(123)
    probs = [0.08, 0.12, 0.16, 0.2, 0.25, 0.3]
    for trial in range(200):
        n = int(rng.integers(4, 13))
        p = probs[trial % len(probs)]
        edges = [(i, j) for i in range(n) for j in range(i + 1, n)
                 if rng.random() < p]
        g = make_graph(n, edges)
        mine = ring_sets(find_smallest_rings(g, max_rings=100000))
        oracle = brute_force_induced_cycles(n, set(edges), 24)
        assert mine == oracle, (n, edges)


def test_oracle_equivalence_curated(curated_molecules):
    for smiles in curated_molecules:
        g = parse_smiles(smiles)
        mine = ring_sets(find_smallest_rings(g))
        oracle = brute_force_induced_cycles(
            len(g.atoms), atom_graph_edges(g), 24)
        assert mine == oracle, smiles


def test_chain_invariants_over_corpus(curated_molecules):
    for smiles in curated_molecules:
        g = parse_smiles(smiles)
        rings = find_smallest_rings(g)
        for conn in find_ring_connections(g, rings):
            if conn.kind != "chain":
                assert len(conn.shared_atoms) >= 1
                continue
            assert 1 <= len(conn.chain_bonds) <= 8
            for atom_idx in conn.chain_atoms[1:-1]:
                assert not g.atoms[atom_idx].in_ring
            for bond_idx in conn.chain_bonds:
                assert g.bonds[bond_idx].order != "aromatic"
