"""CSV ingestion into :class:`MoleculeDataset`."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from molalign.chem.smiles import SmilesError, parse_smiles
from molalign.downstream import MoleculeDataset

log = logging.getLogger(__name__)


class IngestError(ValueError):
    pass


@dataclass
class IngestResult:
    dataset: MoleculeDataset
    kept: int
    dropped: int
    unlabeled: int = 0
    dropped_rows: list[int] = field(default_factory=list)


def ingest_csv(
    path: str | Path,
    smiles_column: str = "smiles",
    label_columns: Sequence[str] = (),
    name: str | None = None,
    task_type: str = "classification",
) -> IngestResult:
    """Read a headered CSV.

    Rows whose SMILES do not parse are dropped and counted (``dropped``,
    ``dropped_rows`` holds their 1-based data-row numbers). Empty label cells
    become masked labels; rows with every label masked are dropped as
    ``unlabeled``.
    """
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise IngestError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in [smiles_column, *label_columns]:
            if col not in header:
                raise IngestError(f"{path}: missing column {col!r} (have {', '.join(header)})")
        smiles, labels, mask, bad_rows = [], [], [], []
        unlabeled = 0
        for row_no, row in enumerate(reader, start=1):
            s = (row[smiles_column] or "").strip()
            try:
                parse_smiles(s)
            except SmilesError:
                bad_rows.append(row_no)
                continue
            values, present = [], []
            for col in label_columns:
                cell = (row[col] or "").strip()
                if cell == "":
                    values.append(0.0)
                    present.append(False)
                    continue
                try:
                    values.append(float(cell))
                except ValueError:
                    raise IngestError(f"{path}: row {row_no}, column {col!r}: non-numeric label {cell!r}") from None
                present.append(True)
            if label_columns and not any(present):
                unlabeled += 1
                continue
            smiles.append(s)
            labels.append(values)
            mask.append(present)
    if not smiles:
        raise IngestError(f"{path}: no valid rows")
    if bad_rows:
        log.warning("%s: dropped %d rows with unparseable SMILES", path, len(bad_rows))
    n_tasks = len(label_columns)
    dataset = MoleculeDataset(
        name or path.stem,
        smiles,
        np.array(labels, dtype=np.float64).reshape(len(smiles), n_tasks),
        np.array(mask, dtype=bool).reshape(len(smiles), n_tasks),
        task_type,
        list(label_columns),
    )
    return IngestResult(dataset, len(smiles), len(bad_rows), unlabeled, bad_rows)
