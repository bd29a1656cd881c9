"""Synthetic molecules whose descriptions are a deterministic function of the graph.

Used to check that alignment training can learn a real graph/text correlation
without any LLM in the loop.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from molalign.chem.smiles import parse_smiles
from molalign.dsm.descriptors import ring_count

_CHAIN_ELEMENTS = ("C", "C", "C", "N", "O", "S", "F", "Cl")
_RINGS = ("c1ccccc1", "C1CCCCC1", "c1ccncc1", "C1CCOC1", "c1ccsc1")
_NAMES = {"C": "carbon", "N": "nitrogen", "O": "oxygen", "S": "sulfur", "F": "fluorine", "Cl": "chlorine"}


def random_smiles(rng: np.random.Generator, max_chain: int = 12, max_rings: int = 3) -> str:
    """A chain of heavy atoms with optional ring substituents as branches."""
    n = int(rng.integers(2, max_chain + 1))
    atoms = [str(rng.choice(_CHAIN_ELEMENTS[:6])) for _ in range(n)]
    rings = [str(rng.choice(_RINGS)) for _ in range(int(rng.integers(0, max_rings + 1)))]
    parts = []
    for i, sym in enumerate(atoms):
        parts.append(sym)
        if rings and sym == "C" and i < n - 1 and rng.random() < 0.5:
            parts.append(f"({rings.pop()})")
    tail = "".join(rings)
    halogen = str(rng.choice(("F", "Cl"))) if rng.random() < 0.3 else ""
    return "".join(parts) + tail + halogen


def describe_composition(smiles: str) -> str:
    """Element counts, ring count and bond count in a fixed sentence shape."""
    mol = parse_smiles(smiles)
    counts = Counter(a.element for a in mol.atoms)
    pieces = [f"{counts[e]} {_NAMES[e]}" for e in sorted(counts) if e in _NAMES]
    return (
        f"This molecule has {mol.num_atoms} heavy atoms: {', '.join(pieces)}. "
        f"Ring count: {ring_count(mol)}. Bond count: {mol.num_bonds}."
    )


def synthetic_corpus(n: int, seed: int = 0) -> list[tuple[str, str]]:
    """``n`` (smiles, description) pairs with pairwise distinct descriptions."""
    rng = np.random.default_rng(seed)
    seen: set[str] = set()
    out: list[tuple[str, str]] = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 100 * n:
            raise RuntimeError(f"could not draw {n} distinct compositions")
        smiles = random_smiles(rng)
        text = describe_composition(smiles)
        if text in seen:
            continue
        seen.add(text)
        out.append((smiles, text))
    return out
