"""File formats: inventories, prior counts, embedding matrices, JSONL.

All JSON written by this package is sorted-key, two-space indented, and
newline-terminated so that identical values produce identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ValidationError
from .metrics import EmbeddingSet
from .scene import Inventory, MeshAsset


def write_json(path: str | Path, data: dict) -> None:
    text = json.dumps(data, sort_keys=True, indent=2)
    Path(path).write_text(text + "\n", encoding="utf-8")


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_jsonl(path: str | Path, rows: Iterable[dict]) -> None:
    lines = [json.dumps(row, sort_keys=True) for row in rows]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""),
                          encoding="utf-8")


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    for line_number, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ValidationError(
                f"{path}:{line_number}: bad JSON line: {exc}") from exc
    return rows


def load_inventory(path: str | Path) -> Inventory:
    """Inventory JSON: ``{"embedding_dim": int|null, "assets": [...]}``."""
    data = read_json(path)
    try:
        assets = [
            MeshAsset(
                id=str(entry["id"]),
                category=str(entry["category"]),
                image=str(entry.get("image", "")),
                embedding=tuple(entry["embedding"])
                if entry.get("embedding") is not None else None,
            )
            for entry in data["assets"]
        ]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed inventory file {path}: {exc}") from exc
    return Inventory(assets=assets, embedding_dim=data.get("embedding_dim"))


def save_inventory(path: str | Path, inventory: Inventory) -> None:
    write_json(path, {
        "embedding_dim": inventory.embedding_dim,
        "assets": [
            {"id": a.id, "category": a.category, "image": a.image,
             "embedding": list(a.embedding) if a.embedding else None}
            for a in inventory
        ],
    })


def read_counts(path: str | Path) -> dict[str, int]:
    """Columnar counts file: ``asset_id count`` per line, ``#`` comments."""
    counts: dict[str, int] = {}
    for line_number, raw in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValidationError(
                f"{path}:{line_number}: expected 'asset_id count', got {raw!r}")
        asset_id, count_text = parts
        try:
            count = int(count_text)
        except ValueError as exc:
            raise ValidationError(
                f"{path}:{line_number}: count must be an integer, "
                f"got {count_text!r}") from exc
        if asset_id in counts:
            raise ValidationError(
                f"{path}:{line_number}: duplicate asset id {asset_id!r}")
        counts[asset_id] = count
    return counts


def load_embedding_set(path: str | Path) -> EmbeddingSet:
    """Matrix file: `.npy`, or text with a ``d n`` header line followed by
    ``n`` rows of ``d`` values."""
    path = Path(path)
    if path.suffix == ".npy":
        return EmbeddingSet(vectors=np.load(path))
    lines = [line for line in path.read_text(encoding="utf-8").splitlines()
             if line.strip() and not line.lstrip().startswith("#")]
    if not lines:
        raise ValidationError(f"{path}: empty matrix file")
    header = lines[0].split()
    if len(header) != 2:
        raise ValidationError(f"{path}: header must be 'd n', got {lines[0]!r}")
    try:
        d, n = int(header[0]), int(header[1])
    except ValueError as exc:
        raise ValidationError(f"{path}: non-integer header {lines[0]!r}") from exc
    values: list[float] = []
    for line in lines[1:]:
        values.extend(float(token) for token in line.split())
    if len(values) != d * n:
        raise ValidationError(
            f"{path}: expected {d * n} values for a {n}x{d} matrix, "
            f"got {len(values)}")
    return EmbeddingSet(vectors=np.array(values, dtype=np.float64).reshape(n, d))


def save_embedding_set(path: str | Path, embeddings: EmbeddingSet) -> None:
    path = Path(path)
    if path.suffix == ".npy":
        np.save(path, embeddings.vectors)
        return
    lines = [f"{embeddings.dim} {embeddings.n}"]
    for row in embeddings.vectors:
        lines.append(" ".join(repr(float(v)) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")

