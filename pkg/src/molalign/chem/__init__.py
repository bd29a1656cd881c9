from molalign.chem.graph import MolecularGraph, featurize, smiles_to_graph
from molalign.chem.scaffold import murcko_scaffold
from molalign.chem.smiles import (
    Atom,
    Bond,
    BondDirection,
    BondOrder,
    Chirality,
    Molecule,
    SmilesError,
    implicit_hydrogens,
    parse_smiles,
    total_hydrogens,
)

__all__ = [
    "Atom",
    "Bond",
    "BondDirection",
    "BondOrder",
    "Chirality",
    "MolecularGraph",
    "Molecule",
    "SmilesError",
    "featurize",
    "implicit_hydrogens",
    "murcko_scaffold",
    "parse_smiles",
    "smiles_to_graph",
    "total_hydrogens",
]
