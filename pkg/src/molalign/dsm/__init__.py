from molalign.dsm.crippen import crippen_logp
from molalign.dsm.descriptors import (
    REGISTRY,
    CalibratedKnowledge,
    DescriptorError,
    DescriptorReport,
    MetricId,
    compute_report,
    format_calibrated,
    hba_count,
    hbd_count,
    heavy_atom_count,
    molecular_weight,
    ring_count,
    rotatable_bonds,
)

__all__ = [
    "REGISTRY",
    "CalibratedKnowledge",
    "DescriptorError",
    "DescriptorReport",
    "MetricId",
    "compute_report",
    "crippen_logp",
    "format_calibrated",
    "hba_count",
    "hbd_count",
    "heavy_atom_count",
    "molecular_weight",
    "ring_count",
    "rotatable_bonds",
]
