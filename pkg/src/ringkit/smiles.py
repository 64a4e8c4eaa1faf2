"""SMILES parsing and atom-graph featurization.

Covers the practical subset needed for organic-solar-cell corpora: the
organic subset atoms, bracket atoms with charge and explicit hydrogens,
bond symbols ``- = # :``, branches, one- and two-digit (``%NN``) ring
closures, and aromatic lowercase notation. Stereo markers (``/ \\ @ @@``)
are accepted and ignored with a warning recorded on the graph; isotopes
and atom-map classes are accepted and ignored silently; dot-disconnected
inputs are rejected.

Aromaticity is taken verbatim from the notation: lowercase atoms are
aromatic, ``:`` bonds are aromatic, and an unannotated bond between two
aromatic atoms is aromatic exactly when the bond lies on a cycle (a
biaryl linkage written without ``-`` therefore resolves to a single
bond). There is no Hueckel perception and no kekulization.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np


class SmilesParseError(ValueError):
    """Base class for every SMILES rejection."""


class UnclosedRing(SmilesParseError):
    pass


class UnclosedBranch(SmilesParseError):
    pass


class UnknownElement(SmilesParseError):
    pass


class ValenceError(SmilesParseError):
    pass


class DisconnectedInput(SmilesParseError):
    pass


#: Elements with dedicated feature slots; everything else parsed from a
#: bracket atom lands in the shared "other" slot.
SUPPORTED_ELEMENTS = (
    "H", "B", "C", "N", "O", "F", "Si", "P", "S", "Cl",
    "Se", "Ge", "Br", "Sn", "Te", "I",
)

#: Allowed valences per element, tried in ascending order.
DEFAULT_VALENCES = {
    "B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "F": (1,),
    "Si": (4,), "P": (3, 5), "S": (2, 4, 6), "Cl": (1,),
    "Se": (2, 4, 6), "Ge": (4,), "Br": (1,), "Sn": (4,),
    "Te": (2,), "I": (1,),
}

_ORGANIC_ALIPHATIC = ("Cl", "Br", "B", "C", "N", "O", "P", "S", "F", "I")
_ORGANIC_AROMATIC = ("b", "c", "n", "o", "p", "s")
_AROMATIC_BRACKET = ("se", "as", "te", "si", "ge", "sn", "b", "c", "n", "o", "p", "s")

# Aromatic forms of these elements donate a lone pair to the pi system,
# so both of their ring bonds are single in every kekule assignment.
_PI_LONE_PAIR = ("O", "S", "Se", "Te")

BOND_ORDERS = ("single", "double", "triple", "aromatic")
_BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic"}
_ORDER_VALUE = {"single": 1, "double": 2, "triple": 3}

_PERIODIC_TABLE = frozenset(
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co "
    "Ni Cu Zn Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb "
    "Te I Xe Cs Ba La Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re "
    "Os Ir Pt Au Hg Tl Pb Bi Po At Rn Fr Ra Ac Th Pa U Np Pu".split()
)

_BRACKET_RE = re.compile(
    r"^(?P<isotope>\d+)?"
    r"(?P<symbol>se|as|te|si|ge|sn|[A-Z][a-z]?|[bcnops])"
    r"(?P<stereo>@{1,2})?"
    r"(?P<hcount>H\d*)?"
    r"(?P<charge>[+-]\d{1,2}|\++|-+)?"
    r"(?::(?P<cls>\d+))?$"
)


@dataclass
class Atom:
    element: str
    aromatic: bool = False
    formal_charge: int = 0
    explicit_h: int = 0
    implicit_h: int = 0
    degree: int = 0
    in_ring: bool = False


@dataclass
class Bond:
    endpoints: tuple[int, int]
    order: str
    in_ring: bool = False


@dataclass
class AtomGraph:
    atoms: list[Atom]
    bonds: list[Bond]
    adjacency: list[list[int]]  # per-atom incident bond indices
    source_smiles: str
    warnings: list[str] = field(default_factory=list)

    def neighbor(self, atom_index: int, bond_index: int) -> int:
        i, j = self.bonds[bond_index].endpoints
        return j if i == atom_index else i

    def incident_orders(self, atom_index: int) -> list[str]:
        return [self.bonds[b].order for b in self.adjacency[atom_index]]


def _parse_charge(text: str) -> int:
    if text[1:].isdigit():
        value = int(text[1:])
    else:
        value = len(text)
    return value if text[0] == "+" else -value


def _parse_bracket_atom(body: str, warnings: list[str]) -> Atom:
    match = _BRACKET_RE.match(body)
    if match is None:
        raise SmilesParseError(f"malformed bracket atom [{body}]")
    symbol = match.group("symbol")
    aromatic = symbol.islower()
    if aromatic and symbol not in _AROMATIC_BRACKET:
        raise UnknownElement(f"no aromatic form for [{body}]")
    element = symbol.capitalize()
    if element not in _PERIODIC_TABLE:
        raise UnknownElement(f"unknown element symbol [{body}]")
    if match.group("stereo"):
        warnings.append(f"ignored stereo marker in [{body}]")
    hcount = match.group("hcount")
    if hcount is None:
        explicit_h = 0
    elif hcount == "H":
        explicit_h = 1
    else:
        explicit_h = int(hcount[1:])
    charge_text = match.group("charge")
    charge = _parse_charge(charge_text) if charge_text else 0
    if not -4 <= charge <= 4:
        raise SmilesParseError(f"formal charge {charge} outside [-4, +4] in [{body}]")
    return Atom(element=element, aromatic=aromatic, formal_charge=charge,
                explicit_h=explicit_h)


def compute_implicit_hydrogens(atom: Atom, incident_bond_orders: list[str]) -> int:
    """Number of implicit hydrogens completing the atom's valence.

    The bond-order sum counts single/double/triple bonds at face value.
    Aromatic bonds contribute the kekule-consistent amount: one each,
    plus one extra for the in-ring double bond unless no kekule form can
    place one on the atom, i.e. it donates a lone pair to the pi system
    (aromatic O/S/Se/Te always; aromatic N/P/B when carrying an explicit
    H or a third heavy-atom bond, the pyrrole pattern) or already holds
    an exocyclic multiple bond. The smallest allowed valence covering
    the sum plus ``explicit_h`` wins; if every allowed valence is
    exceeded a ValenceError is raised. Elements without a valence table
    entry get zero implicit hydrogens.
    """
    valences = DEFAULT_VALENCES.get(atom.element)
    if valences is None:
        return 0
    n_aromatic = sum(1 for o in incident_bond_orders if o == "aromatic")
    plain = sum(_ORDER_VALUE[o] for o in incident_bond_orders if o != "aromatic")
    if atom.aromatic:
        donates_lone_pair = (
            atom.element in _PI_LONE_PAIR
            or (atom.element in ("N", "P", "B")
                and (atom.explicit_h > 0 or len(incident_bond_orders) >= 3))
        )
        has_exocyclic_multiple = any(
            o in ("double", "triple") for o in incident_bond_orders
        )
        pi_extra = 0 if (donates_lone_pair or has_exocyclic_multiple) else min(1, n_aromatic)
        bond_sum = plain + n_aromatic + pi_extra
    else:
        bond_sum = plain + int(1.5 * n_aromatic)
    demand = bond_sum + atom.explicit_h
    for valence in valences:
        if valence >= demand:
            return valence - demand
    raise ValenceError(
        f"{atom.element} with bond-order sum {bond_sum} and {atom.explicit_h} "
        f"explicit H exceeds allowed valences {valences}"
    )


def _bridge_bonds(n_atoms: int, bonds: list[Bond], adjacency: list[list[int]]) -> set[int]:
    """Bond indices that lie on no cycle (classic lowlink computation)."""
    disc = [-1] * n_atoms
    low = [0] * n_atoms
    bridges: set[int] = set()
    counter = 0
    for root in range(n_atoms):
        if disc[root] != -1:
            continue
        disc[root] = low[root] = counter
        counter += 1
        stack = [(root, -1, iter(adjacency[root]))]
        while stack:
            v, parent_edge, it = stack[-1]
            descended = False
            for bi in it:
                if bi == parent_edge:
                    continue
                a, b = bonds[bi].endpoints
                w = b if a == v else a
                if disc[w] == -1:
                    disc[w] = low[w] = counter
                    counter += 1
                    stack.append((w, bi, iter(adjacency[w])))
                    descended = True
                    break
                low[v] = min(low[v], disc[w])
            if not descended:
                stack.pop()
                if stack:
                    u = stack[-1][0]
                    low[u] = min(low[u], low[v])
                    if low[v] > disc[u]:
                        bridges.add(parent_edge)
        # loop invariant: every vertex of the component is now discovered
    return bridges


def parse_smiles(text: str) -> AtomGraph:
    """Parse a SMILES string into an attributed atom graph.

    Deterministic: atom order equals token order, bonds appear in the
    order their second endpoint is resolved. Implicit hydrogens are
    assigned after all bond orders are known.
    """
    if not text:
        raise SmilesParseError("empty SMILES")
    if not text.isascii():
        raise SmilesParseError("SMILES must be ASCII")

    atoms: list[Atom] = []
    warnings: list[str] = []
    # (i, j, order-or-None); order None means "resolve later"
    raw_bonds: list[tuple[int, int, str | None]] = []
    seen_pairs: set[frozenset[int]] = set()
    anchor: int | None = None
    pending: str | None = None
    branch_stack: list[int] = []
    ring_openings: dict[int, tuple[int, str | None]] = {}

    def add_bond(i: int, j: int, order: str | None) -> None:
        if i == j:
            raise SmilesParseError("bond from an atom to itself")
        pair = frozenset((i, j))
        if pair in seen_pairs:
            raise SmilesParseError(f"duplicate bond between atoms {i} and {j}")
        seen_pairs.add(pair)
        raw_bonds.append((i, j, order))

    def add_atom(atom: Atom) -> None:
        nonlocal anchor, pending
        atoms.append(atom)
        idx = len(atoms) - 1
        if anchor is not None:
            add_bond(anchor, idx, pending)
        elif pending is not None:
            raise SmilesParseError("bond symbol before the first atom")
        pending = None
        anchor = idx

    def open_or_close_ring(number: int) -> None:
        nonlocal pending
        if anchor is None:
            raise SmilesParseError(f"ring closure {number} before any atom")
        if number in ring_openings:
            other, order_there = ring_openings.pop(number)
            order = pending
            if order is not None and order_there is not None and order != order_there:
                raise SmilesParseError(
                    f"conflicting bond orders on ring closure {number}"
                )
            add_bond(other, anchor, order if order is not None else order_there)
            pending = None
        else:
            ring_openings[number] = (anchor, pending)
            pending = None

    pos = 0
    n = len(text)
    while pos < n:
        ch = text[pos]
        if ch == "[":
            end = text.find("]", pos)
            if end == -1:
                raise SmilesParseError("unterminated bracket atom")
            add_atom(_parse_bracket_atom(text[pos + 1:end], warnings))
            pos = end + 1
        elif text[pos:pos + 2] in ("Cl", "Br"):
            add_atom(Atom(element=text[pos:pos + 2]))
            pos += 2
        elif ch in _ORGANIC_ALIPHATIC:
            add_atom(Atom(element=ch))
            pos += 1
        elif ch in _ORGANIC_AROMATIC:
            add_atom(Atom(element=ch.upper(), aromatic=True))
            pos += 1
        elif ch in _BOND_SYMBOLS:
            if pending is not None:
                raise SmilesParseError("two consecutive bond symbols")
            pending = _BOND_SYMBOLS[ch]
            pos += 1
        elif ch in "/\\":
            if pending is not None:
                raise SmilesParseError("bond symbol before stereo marker")
            warnings.append(f"ignored stereo bond marker '{ch}'")
            pending = "single"
            pos += 1
        elif ch == "(":
            if pending is not None:
                raise SmilesParseError("bond symbol before branch open")
            if anchor is None:
                raise SmilesParseError("branch before any atom")
            branch_stack.append(anchor)
            pos += 1
        elif ch == ")":
            if pending is not None:
                raise SmilesParseError("dangling bond symbol before ')'")
            if not branch_stack:
                raise UnclosedBranch("unmatched ')'")
            anchor = branch_stack.pop()
            pos += 1
        elif ch.isdigit():
            open_or_close_ring(int(ch))
            pos += 1
        elif ch == "%":
            if pos + 2 >= n or not text[pos + 1:pos + 3].isdigit():
                raise SmilesParseError("'%' ring closure needs two digits")
            open_or_close_ring(int(text[pos + 1:pos + 3]))
            pos += 3
        elif ch == ".":
            raise DisconnectedInput("dot-disconnected SMILES are rejected")
        elif ch.isspace():
            raise SmilesParseError("whitespace inside SMILES")
        else:
            raise UnknownElement(f"unexpected character {ch!r}")

    if pending is not None:
        raise SmilesParseError("dangling bond symbol at end of input")
    if branch_stack:
        raise UnclosedBranch(f"{len(branch_stack)} unclosed '('")
    if ring_openings:
        digits = sorted(ring_openings)
        raise UnclosedRing(f"unmatched ring closure digits {digits}")
    if not atoms:
        raise SmilesParseError("no atoms in SMILES")

    # Resolve implicit bond orders: aromatic only between two aromatic
    # atoms and only when the bond lies on a cycle.
    bonds = [Bond(endpoints=(i, j), order=order or "single")
             for i, j, order in raw_bonds]
    adjacency: list[list[int]] = [[] for _ in atoms]
    for bi, bond in enumerate(bonds):
        i, j = bond.endpoints
        adjacency[i].append(bi)
        adjacency[j].append(bi)
    bridges = _bridge_bonds(len(atoms), bonds, adjacency)
    for bi, (i, j, order) in enumerate(raw_bonds):
        if order is None and atoms[i].aromatic and atoms[j].aromatic \
                and bi not in bridges:
            bonds[bi].order = "aromatic"

    for bond in bonds:
        if bond.order == "aromatic":
            i, j = bond.endpoints
            if not (atoms[i].aromatic and atoms[j].aromatic):
                raise SmilesParseError(
                    "aromatic bond between non-aromatic atoms"
                )

    graph = AtomGraph(atoms=atoms, bonds=bonds, adjacency=adjacency,
                      source_smiles=text, warnings=warnings)
    for idx, atom in enumerate(atoms):
        atom.degree = len(adjacency[idx])
        atom.implicit_h = compute_implicit_hydrogens(
            atom, graph.incident_orders(idx))
    return graph


# Feature layout: element one-hot (16 + other), degree 0-6, implicit H
# 0-4, formal charge -2..+3 (clamped), aromatic flag, in-ring flag.
_ELEMENT_SLOT = {el: i for i, el in enumerate(SUPPORTED_ELEMENTS)}
_N_ELEMENT_SLOTS = len(SUPPORTED_ELEMENTS) + 1
_N_DEGREE_SLOTS = 7
_N_HYDROGEN_SLOTS = 5
_N_CHARGE_SLOTS = 6
ATOM_FEATURE_DIM = _N_ELEMENT_SLOTS + _N_DEGREE_SLOTS + _N_HYDROGEN_SLOTS + _N_CHARGE_SLOTS + 2
BOND_FEATURE_DIM = len(BOND_ORDERS) + 1


def featurize_atom_graph(graph: AtomGraph) -> tuple[np.ndarray, np.ndarray]:
    """One-hot node and edge feature matrices for a parsed graph.

    Requires ring perception to have run (``in_ring`` flags set);
    returns float64 arrays of width ``ATOM_FEATURE_DIM`` and
    ``BOND_FEATURE_DIM``.
    """
    node = np.zeros((len(graph.atoms), ATOM_FEATURE_DIM))
    for i, atom in enumerate(graph.atoms):
        col = _ELEMENT_SLOT.get(atom.element, _N_ELEMENT_SLOTS - 1)
        node[i, col] = 1.0
        off = _N_ELEMENT_SLOTS
        node[i, off + min(atom.degree, _N_DEGREE_SLOTS - 1)] = 1.0
        off += _N_DEGREE_SLOTS
        node[i, off + min(atom.implicit_h, _N_HYDROGEN_SLOTS - 1)] = 1.0
        off += _N_HYDROGEN_SLOTS
        charge = min(max(atom.formal_charge, -2), 3)
        node[i, off + charge + 2] = 1.0
        off += _N_CHARGE_SLOTS
        node[i, off] = float(atom.aromatic)
        node[i, off + 1] = float(atom.in_ring)
    edge = np.zeros((len(graph.bonds), BOND_FEATURE_DIM))
    for i, bond in enumerate(graph.bonds):
        edge[i, BOND_ORDERS.index(bond.order)] = 1.0
        edge[i, len(BOND_ORDERS)] = float(bond.in_ring)
    return node, edge
