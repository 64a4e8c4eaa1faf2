"""Shared fixture data: curated molecule sets and the synthetic-target
surrogate corpus used by the training-scale tests."""

from __future__ import annotations

import pathlib
import sys

import numpy as np
import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

FIXTURES = pathlib.Path(__file__).parent / "fixtures"

# 50 molecules spanning the structures ring perception must handle:
# single rings, fused/spiro/bridged systems, chains, heteroaromatics.
CURATED_MOLECULES = [
    "c1ccccc1",                 # benzene
    "c1ccc2ccccc2c1",           # naphthalene
    "c1ccc(-c2ccccc2)cc1",      # biphenyl
    "c1ccsc1",                  # thiophene
    "c1csc(-c2cccs2)c1",        # bithiophene
    "c1csc(-c2ccc(-c3cccs3)s2)c1",
    "c1ccc(-c2ccc(-c3ccc(-c4cccs4)s3)s2)s1",   # quaterthiophene
    "C1CCC2(C1)CCCC2",          # spiro[4.4]nonane
    "C1CCC2(CC1)CCCC2",         # spiro[4.5]decane
    "C1CC2(C1)CCC2",            # spiro[3.3]heptane
    "C1CC2CCC1C2",              # norbornane
    "C1CC2CCC1CC2",             # bicyclo[2.2.2]octane
    "C1C2CC3CC1CC(C2)C3",       # adamantane
    "c1ccc2cc3ccccc3cc2c1",     # anthracene
    "c1ccc2c(c1)ccc1ccccc12",   # phenanthrene
    "c1ccc2cc3cc4cc5ccccc5cc4cc3cc2c1",          # pentacene
    "c1ccc2cc3cc4cc5cc6ccccc6cc5cc4cc3cc2c1",    # hexacene
    "c1ccncc1",                 # pyridine
    "c1ccoc1",                  # furan
    "c1cc[nH]c1",               # pyrrole
    "c1cc[se]c1",               # selenophene
    "c1ccc2[nH]ccc2c1",         # indole
    "c1ccc2c(c1)[nH]c1ccccc12", # carbazole
    "CC1(C)c2ccccc2-c2ccccc21", # dimethylfluorene
    "c1ccc2nsnc2c1",            # benzothiadiazole
    "C1COc2sccc2O1",            # dioxine-fused thiophene
    "C1CCCCC1",                 # cyclohexane
    "C1CCCC1",                  # cyclopentane
    "C1CC1",                    # cyclopropane
    "CCCC",                     # butane (no rings)
    "CC(C)(C)C",                # neopentane (no rings)
    "Cc1ccccc1",                # toluene
    "C=Cc1ccccc1",              # styrene
    "Oc1ccccc1",                # phenol
    "CN1CCCC1c1cccnc1",         # nicotine skeleton
    "c1ccc(-c2ccncc2)cc1",      # phenylpyridine
    "c1ccc2cccc2cc1",           # azulene
    "C1Cc2ccccc2C1",            # indane
    "O=C1CCCCC1",               # cyclohexanone
    "c1ccc(-c2cccs2)cc1",       # phenylthiophene
    "CCCCc1ccc(-c2ccc(-c3cccs3)s2)s1",
    "[Si]1(C)(C)c2ccccc2-c2ccccc21",             # dibenzosilole
    "Cn1cnc2c1c(=O)n(C)c(=O)n2C",                # caffeine
    "CC(=O)Oc1ccccc1C(=O)O",    # aspirin
    "c1ccc2c(c1)oc1ccccc12",    # dibenzofuran
    "c1ccc2c(c1)sc1ccccc12",    # dibenzothiophene
    "N#Cc1ccc(-c2cccs2)cc1",
    "OB(O)c1ccccc1",            # phenylboronic acid
    "C%10CCCCC%10",             # two-digit ring closure
    "CC12CCC(CC1)C(C)(C)O2",    # bridged ether bicycle
]

# 32 structurally distinct small molecules for the capacity smoke test.
OVERFIT_MOLECULES = [
    "c1ccccc1", "Cc1ccccc1", "CCc1ccccc1", "Fc1ccccc1",
    "Clc1ccccc1", "Oc1ccccc1", "COc1ccccc1", "Nc1ccccc1",
    "c1ccncc1", "Cc1ccncc1", "c1ccoc1", "Cc1ccco1",
    "c1ccsc1", "Cc1cccs1", "CCc1cccs1", "c1cc[nH]c1",
    "c1ccc2ccccc2c1", "Cc1ccc2ccccc2c1", "c1ccc2[nH]ccc2c1",
    "c1ccc2occc2c1", "c1ccc2sccc2c1", "c1ccc2nsnc2c1",
    "C1CCCCC1", "CC1CCCCC1", "C1CCCC1", "C1Cc2ccccc2C1",
    "c1ccc(-c2ccccc2)cc1", "c1ccc(-c2cccs2)cc1", "c1csc(-c2cccs2)c1",
    "CC(C)c1ccccc1", "C=Cc1ccccc1", "N#Cc1ccccc1",
]

_SURROGATE_CORES = [
    "c1ccc({})cc1", "c1ccc({})s1", "c1ccc({})o1", "c1cc({})ccn1",
    "c1ccc2cc({})ccc2c1", "c1cc({})c2nsnc2c1", "c1cc({})cc2ccccc12",
]
_SURROGATE_TAILS = [
    "-c1ccccc1", "-c1cccs1", "-c1ccco1", "-c1ccc2ccccc2c1",
    "C", "CC", "CCCC", "OC", "F", "C#N", "-c1ccc(C)s1", "-c1ccc(F)cc1",
]


def _renumber(fragment: str, start: int) -> tuple[str, int]:
    """Remap the fragment's ring-closure digits to fresh ones so nested
    fragments never collide (fragments contain no bracket atoms)."""
    mapping: dict[str, str] = {}
    out = []
    for ch in fragment:
        if ch.isdigit():
            if ch not in mapping:
                mapping[ch] = str(start) if start < 10 else f"%{start:02d}"
                start += 1
            out.append(mapping[ch])
        else:
            out.append(ch)
    return "".join(out), start


def surrogate_corpus(n: int = 350, seed: int = 1234) -> list[tuple[str, float]]:
    """Deterministic ring-rich molecules with structure-correlated
    synthetic targets on a power-conversion-efficiency-like scale."""
    rng = np.random.default_rng(seed)
    rows: list[tuple[str, float]] = []
    for _ in range(n):
        depth = int(rng.integers(1, 4))
        digit = 1
        smiles, digit = _renumber(
            _SURROGATE_TAILS[int(rng.integers(0, len(_SURROGATE_TAILS)))], digit)
        for _ in range(depth):
            core = _SURROGATE_CORES[int(rng.integers(0, len(_SURROGATE_CORES)))]
            numbered, digit = _renumber(core, digit)
            smiles = numbered.format(smiles)
        n_rings = sum(ch.isdigit() for ch in smiles.replace("%", "")) // 2
        n_sulfur = smiles.count("s")
        n_fluor = smiles.count("F")
        y = (1.1 * n_rings + 0.9 * n_sulfur - 0.6 * n_fluor
             + 0.25 * len(smiles) / 10.0 + float(rng.normal(0.0, 0.4)))
        rows.append((smiles, round(max(0.2, y), 4)))
    return rows


@pytest.fixture(scope="session")
def curated_molecules() -> list[str]:
    return list(CURATED_MOLECULES)


@pytest.fixture(scope="session")
def counts_table() -> list[tuple[str, int, int]]:
    rows = []
    text = (FIXTURES / "smiles_counts.tsv").read_text(encoding="utf-8")
    for line in text.strip().splitlines()[1:]:
        smiles, atoms, bonds = line.split("\t")
        rows.append((smiles, int(atoms), int(bonds)))
    return rows
