"""Featurization of parsed molecules into integer-indexed graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from molalign.chem.smiles import Molecule

NUM_ATOM_TYPES = 118  # atomic numbers 1..118 -> indices 0..117
NUM_CHIRALITY = 3
NUM_BOND_TYPES = 4
NUM_BOND_DIRECTIONS = 3


@dataclass(frozen=True)
class MolecularGraph:
    """Node features ``(atomic_number_index, chirality_index)``; each bond
    appears as two directed edges in ``edge_index`` (shape ``2 x E``) with
    per-edge ``(bond_type_index, bond_direction_index)``."""

    node_features: np.ndarray
    edge_index: np.ndarray
    edge_features: np.ndarray

    @property
    def num_nodes(self) -> int:
        return int(self.node_features.shape[0])

    @property
    def num_edges(self) -> int:
        return int(self.edge_index.shape[1])

    def permuted(self, perm) -> "MolecularGraph":
        """Relabel nodes so that new node ``i`` is old node ``perm[i]``."""
        perm = np.asarray(perm)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(len(perm))
        return MolecularGraph(
            self.node_features[perm], inverse[self.edge_index], self.edge_features.copy()
        )


def featurize(mol: Molecule) -> MolecularGraph:
    nodes = np.zeros((mol.num_atoms, 2), dtype=np.int64)
    for i, atom in enumerate(mol.atoms):
        if not 1 <= atom.atomic_number <= NUM_ATOM_TYPES:
            raise ValueError(
                f"atomic number {atom.atomic_number} of atom {i} outside vocabulary 1-{NUM_ATOM_TYPES}"
            )
        nodes[i] = (atom.atomic_number - 1, int(atom.chirality))

    edge_index = np.zeros((2, 2 * mol.num_bonds), dtype=np.int64)
    edge_feats = np.zeros((2 * mol.num_bonds, 2), dtype=np.int64)
    for k, bond in enumerate(mol.bonds):
        edge_index[:, 2 * k] = (bond.a, bond.b)
        edge_index[:, 2 * k + 1] = (bond.b, bond.a)
        edge_feats[2 * k] = (int(bond.order), int(bond.direction))
        edge_feats[2 * k + 1] = (int(bond.order), int(bond.direction.mirrored()))
    return MolecularGraph(nodes, edge_index, edge_feats)


def smiles_to_graph(smiles: str) -> MolecularGraph:
    from molalign.chem.smiles import parse_smiles

    return featurize(parse_smiles(smiles))
