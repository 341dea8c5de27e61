"""Embedding interchange format (emb-jsonl/1) reader, writer, and lookups.

File layout: first line is a header
  {"format": "emb-jsonl/1", "encoder": "...", "dim": 768}
followed by one record per line:
  {"key": "s12/image/img3", "role": "image", "dim": 768, "vector": [...]}

Keys are sample_id/role/variant. Vectors are stored unnormalized; floats
use Python's shortest round-trip decimal encoding, so write(read(x)) is
byte-identical for canonical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import LookupError_, ValidationError

FORMAT_NAME = "emb-jsonl/1"

ROLES = ("query", "image", "caption", "image_aug", "caption_bt", "caption_para")
AUGMENTED_ROLES = ("image_aug", "caption_bt", "caption_para")


@dataclass(frozen=True)
class EmbeddingRecord:
    key: str
    role: str
    vector: np.ndarray
    truncated: Optional[bool] = None

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


@dataclass
class EmbeddingStore:
    dim: int
    encoder: str
    records: dict[str, EmbeddingRecord] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def add(self, record: EmbeddingRecord) -> None:
        if record.role not in ROLES:
            raise ValidationError(f"record {record.key!r}: unknown role {record.role!r}")
        if record.dim != self.dim:
            raise ValidationError(
                f"record {record.key!r}: dim {record.dim} != store dim {self.dim}"
            )
        if not np.all(np.isfinite(record.vector)):
            raise ValidationError(f"record {record.key!r}: non-finite vector entries")
        if record.key in self.records:
            raise ValidationError(f"duplicate key {record.key!r}")
        self.records[record.key] = record

    def get(self, key: str) -> np.ndarray:
        """Stored vector for key (a read-only view, not a copy)."""
        rec = self.records.get(key)
        if rec is None:
            raise LookupError_(
                f"key {key!r} not in store; nearest keys: {self._nearest(key)}"
            )
        return rec.vector

    def _nearest(self, key: str, n: int = 3) -> list[str]:
        prefix = key.rsplit("/", 1)[0]
        hits = [k for k in self.records if k.startswith(prefix)]
        return sorted(hits)[:n] or sorted(self.records)[:n]

    def __contains__(self, key: str) -> bool:
        return key in self.records

    def __len__(self) -> int:
        return len(self.records)


def record_key(sample_id: str, role: str, variant: str) -> str:
    return f"{sample_id}/{role}/{variant}"


@dataclass
class SampleBundle:
    """All embedding records needed to rank one sample."""
    sample_id: str
    llm_name: str
    query: np.ndarray
    images: dict[str, np.ndarray]
    captions: dict[str, np.ndarray]
    augmented: dict[str, dict[str, np.ndarray]] = field(default_factory=dict)
    image_order: tuple[str, ...] = ()


def get_sample_bundle(store: EmbeddingStore, sample_id: str, llm_name: str,
                      image_ids: tuple[str, ...]) -> SampleBundle:
    """Group the query, 5 image, and 5 caption records for one sample,
    plus any augmented-variant records present in the store."""
    query = store.get(record_key(sample_id, "query", llm_name))
    images = {i: store.get(record_key(sample_id, "image", i)) for i in image_ids}
    captions = {}
    for i in image_ids:
        key = record_key(sample_id, "caption", i)
        if key in store:
            captions[i] = store.get(key)
    augmented: dict[str, dict[str, np.ndarray]] = {}
    for role in AUGMENTED_ROLES:
        found = {
            i: store.get(record_key(sample_id, role, i))
            for i in image_ids
            if record_key(sample_id, role, i) in store
        }
        if found:
            augmented[role] = found
    return SampleBundle(
        sample_id=sample_id, llm_name=llm_name, query=query,
        images=images, captions=captions, augmented=augmented,
        image_order=image_ids,
    )


def read_store(path: str | Path) -> EmbeddingStore:
    """Read and validate an emb-jsonl/1 file."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"embedding store not found: {path}")
    with path.open(encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: malformed header line: {exc}") from exc
        if header.get("format") != FORMAT_NAME:
            raise ValidationError(
                f"{path}: expected format {FORMAT_NAME!r}, got {header.get('format')!r}"
            )
        store = EmbeddingStore(
            dim=int(header["dim"]),
            encoder=header.get("encoder", "unknown"),
            meta={k: v for k, v in header.items() if k not in ("format",)},
        )
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            rec = json.loads(line)
            vector = np.asarray(rec["vector"], dtype=np.float64)
            if int(rec["dim"]) != store.dim or vector.shape[0] != store.dim:
                raise ValidationError(
                    f"{path}:{lineno}: record {rec['key']!r} has dim "
                    f"{rec['dim']} but store dim is {store.dim}"
                )
            if not np.all(np.isfinite(vector)):
                raise ValidationError(
                    f"{path}:{lineno}: record {rec['key']!r} has NaN/Inf entries"
                )
            vector.setflags(write=False)
            store.add(EmbeddingRecord(
                key=rec["key"], role=rec["role"], vector=vector,
                truncated=rec.get("truncated"),
            ))
    return store


def write_store(store: EmbeddingStore, path: str | Path) -> None:
    """Write the store as emb-jsonl/1, records sorted by key for stable bytes."""
    path = Path(path)
    header = {"format": FORMAT_NAME, "encoder": store.encoder, "dim": store.dim}
    for k, v in store.meta.items():
        if k not in header:
            header[k] = v
    lines = [json.dumps(header)]
    for key in sorted(store.records):
        rec = store.records[key]
        body = {
            "key": rec.key,
            "role": rec.role,
            "dim": rec.dim,
            "vector": [float(x) for x in rec.vector],
        }
        if rec.truncated is not None:
            body["truncated"] = rec.truncated
        lines.append(json.dumps(body))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
