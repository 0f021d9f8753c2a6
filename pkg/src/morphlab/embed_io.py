"""On-disk exchange format for embedding tables.

CSV with header ``id,image_id,e0..e{D-1}`` plus a JSON sidecar recording
dimension, normalisation and the producing backend.  The sidecar lives
next to the CSV with a ``.json`` suffix appended.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def sidecar_path(csv_path) -> Path:
    return Path(str(csv_path) + ".json")


def save_embeddings(csv_path, ids, image_ids, matrix, fr_backend_id: str,
                    normalized: bool = True):
    """Write an embedding table and its sidecar.

    ids / image_ids are parallel sequences; matrix is (N, D).
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValueError(f"expected (N, D) matrix, got shape {matrix.shape}")
    if not (len(ids) == len(image_ids) == matrix.shape[0]):
        raise ValueError("ids, image_ids and matrix rows must align")
    dim = matrix.shape[1]
    csv_path = Path(csv_path)
    with csv_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "image_id"] + [f"e{i}" for i in range(dim)])
        for rid, img, row in zip(ids, image_ids, matrix):
            writer.writerow([rid, img] + [repr(float(v)) for v in row])
    sidecar = {
        "dimension": dim,
        "normalized": bool(normalized),
        "fr_backend_id": fr_backend_id,
    }
    sidecar_path(csv_path).write_text(json.dumps(sidecar, sort_keys=True))


def load_embeddings(csv_path):
    """Read an embedding table; returns (ids, image_ids, matrix, sidecar)."""
    csv_path = Path(csv_path)
    sidecar = json.loads(sidecar_path(csv_path).read_text())
    ids, image_ids, rows = [], [], []
    with csv_path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = len(header) - 2
        if header[:2] != ["id", "image_id"] or dim != sidecar["dimension"]:
            raise ValueError(f"malformed embedding CSV header in {csv_path}")
        for row in reader:
            ids.append(row[0])
            image_ids.append(row[1])
            rows.append([float(v) for v in row[2:]])
    matrix = np.asarray(rows, dtype=np.float64).reshape(len(rows), dim)
    return ids, image_ids, matrix, sidecar
