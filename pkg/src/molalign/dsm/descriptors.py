"""Exact molecular descriptors and their "calibrated knowledge" text form."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from molalign.chem.elements import ATOMIC_WEIGHT
from molalign.chem.smiles import BondOrder, Molecule, implicit_hydrogens, total_hydrogens
from molalign.dsm.crippen import crippen_logp

HYDROGEN_WEIGHT = ATOMIC_WEIGHT["H"]


class MetricId(str, enum.Enum):
    MOLECULAR_WEIGHT = "molecular_weight"
    LOGP = "logp"
    HBD = "hbd"
    HBA = "hba"
    ROTATABLE_BONDS = "rotatable_bonds"
    RING_COUNT = "ring_count"
    HEAVY_ATOM_COUNT = "heavy_atom_count"


class DescriptorError(ValueError):
    def __init__(self, metric: MetricId | None, message: str):
        prefix = f"{metric.value}: " if metric is not None else ""
        super().__init__(prefix + message)
        self.metric = metric


def molecular_weight(mol: Molecule) -> float:
    """Average molecular weight in g/mol, hydrogens included.

    Isotope-labelled atoms weigh their mass number.
    """
    total = 0.0
    for i, atom in enumerate(mol.atoms):
        if atom.isotope is not None:
            total += float(atom.isotope)
        else:
            try:
                total += ATOMIC_WEIGHT[atom.element]
            except KeyError:
                raise DescriptorError(
                    MetricId.MOLECULAR_WEIGHT, f"no tabulated weight for element {atom.element}"
                ) from None
        total += implicit_hydrogens(mol, i) * HYDROGEN_WEIGHT
    return total


def _is_donor_acceptor_element(atom) -> bool:
    return atom.atomic_number in (7, 8)


def hbd_count(mol: Molecule) -> int:
    return sum(
        1
        for i, atom in enumerate(mol.atoms)
        if _is_donor_acceptor_element(atom) and total_hydrogens(mol, i) > 0
    )


def hba_count(mol: Molecule) -> int:
    return sum(1 for atom in mol.atoms if _is_donor_acceptor_element(atom))


def _heavy_degree(mol: Molecule, idx: int) -> int:
    return sum(1 for j, _ in mol.neighbors(idx) if mol.atoms[j].atomic_number > 1)


def rotatable_bonds(mol: Molecule) -> int:
    """Single acyclic bonds between two non-terminal heavy atoms (no amide exclusion)."""
    count = 0
    for bond in mol.bonds:
        if bond.order is not BondOrder.SINGLE or bond.in_ring:
            continue
        a, b = mol.atoms[bond.a], mol.atoms[bond.b]
        if a.atomic_number == 1 or b.atomic_number == 1:
            continue
        if _heavy_degree(mol, bond.a) >= 2 and _heavy_degree(mol, bond.b) >= 2:
            count += 1
    return count


def ring_count(mol: Molecule) -> int:
    """Size of the smallest set of smallest rings (the cycle rank)."""
    return mol.num_bonds - mol.num_atoms + mol.num_components()


def heavy_atom_count(mol: Molecule) -> int:
    return sum(1 for atom in mol.atoms if atom.atomic_number > 1)


@dataclass(frozen=True)
class MetricSpec:
    id: MetricId
    name: str  # human-readable, used in calibrated-knowledge lines
    unit: str
    continuous: bool
    compute: Callable[[Molecule], float]
    aliases: tuple[str, ...] = field(default=())


REGISTRY: dict[MetricId, MetricSpec] = {
    spec.id: spec
    for spec in (
        MetricSpec(
            MetricId.MOLECULAR_WEIGHT, "Molecular weight", "g/mol", True, molecular_weight,
            ("molecular weight", "mw", "molecular mass", "molar mass", "molecular size",
             "molecular weight (mw)"),
        ),
        MetricSpec(
            MetricId.LOGP, "LogP", "", True, crippen_logp,
            ("logp", "clogp", "lipophilicity", "lipophilicity (logp)", "hydrophobicity",
             "partition coefficient", "octanol-water partition coefficient"),
        ),
        MetricSpec(
            MetricId.HBD, "Hydrogen bond donors", "", False, hbd_count,
            ("hydrogen bond donors", "hydrogen bond donor", "h-bond donors", "hbd",
             "hydrogen bond donor count", "hydrogen bond donors and acceptors",
             "hydrogen bonding", "h-bond donors and acceptors"),
        ),
        MetricSpec(
            MetricId.HBA, "Hydrogen bond acceptors", "", False, hba_count,
            ("hydrogen bond acceptors", "hydrogen bond acceptor", "h-bond acceptors", "hba",
             "hydrogen bond acceptor count", "hydrogen bond donors and acceptors",
             "hydrogen bonding", "h-bond donors and acceptors"),
        ),
        MetricSpec(
            MetricId.ROTATABLE_BONDS, "Rotatable bonds", "", False, rotatable_bonds,
            ("rotatable bonds", "rotatable bond count", "number of rotatable bonds",
             "molecular flexibility", "flexibility"),
        ),
        MetricSpec(
            MetricId.RING_COUNT, "Ring count", "", False, ring_count,
            ("ring count", "number of rings", "rings"),
        ),
        MetricSpec(
            MetricId.HEAVY_ATOM_COUNT, "Heavy atom count", "", False, heavy_atom_count,
            ("heavy atom count", "heavy atoms", "number of heavy atoms"),
        ),
    )
}


@dataclass(frozen=True)
class DescriptorReport:
    smiles: str
    values: tuple[tuple[MetricId, float, str], ...]

    def __post_init__(self):
        ids = [m for m, _, _ in self.values]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate metric in report")
        for m, v, _ in self.values:
            if not math.isfinite(v):
                raise ValueError(f"non-finite value for {m.value}")


@dataclass(frozen=True)
class CalibratedKnowledge:
    lines: tuple[str, ...] = ()

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)


def compute_report(
    mol: Molecule, requested: Sequence[MetricId], smiles: str | None = None
) -> DescriptorReport:
    if not requested:
        raise DescriptorError(None, "empty metric request")
    values = []
    for metric in requested:
        metric = MetricId(metric)
        spec = REGISTRY[metric]
        try:
            raw = spec.compute(mol)
        except DescriptorError:
            raise
        except Exception as exc:
            raise DescriptorError(metric, str(exc)) from exc
        value = round(float(raw), 3) if spec.continuous else int(raw)
        values.append((metric, value, spec.unit))
    return DescriptorReport(smiles if smiles is not None else mol.smiles_source, tuple(values))


def format_value(metric: MetricId, value: float) -> str:
    if REGISTRY[metric].continuous:
        return f"{value:.3f}"
    return str(int(value))


def format_calibrated(report: DescriptorReport) -> CalibratedKnowledge:
    return CalibratedKnowledge(
        tuple(
            f"{REGISTRY[m].name} of {report.smiles}: {format_value(m, v)}"
            for m, v, _ in report.values
        )
    )
