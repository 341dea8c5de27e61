"""Dataset loading, validation, splitting, and persistence.

Canonical format is a single JSON document per language:
{"language": "EN", "samples": [{"sample_id", "compound", "sentence",
 "gold_type", "gold_order", "candidates": [... x5]}]}
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ValidationError

LANGUAGES = ("EN", "PT")
COMPOUND_TYPES = ("idiomatic", "literal")
CANDIDATES_PER_SAMPLE = 5


@dataclass(frozen=True)
class CandidateImage:
    image_id: str
    image_path: str
    caption: str


@dataclass(frozen=True)
class Sample:
    sample_id: str
    compound: str
    sentence: str
    language: str
    candidates: tuple[CandidateImage, ...]
    gold_order: Optional[tuple[str, ...]] = None
    gold_type: Optional[str] = None

    def candidate_ids(self) -> tuple[str, ...]:
        return tuple(c.image_id for c in self.candidates)

    def validate(self) -> None:
        if not self.compound.strip():
            raise ValidationError(f"sample {self.sample_id!r}: empty compound")
        if not self.sentence.strip():
            raise ValidationError(f"sample {self.sample_id!r}: empty sentence")
        if self.language not in LANGUAGES:
            raise ValidationError(
                f"sample {self.sample_id!r}: language {self.language!r} not in {LANGUAGES}"
            )
        if len(self.candidates) != CANDIDATES_PER_SAMPLE:
            raise ValidationError(
                f"sample {self.sample_id!r}: expected {CANDIDATES_PER_SAMPLE} "
                f"candidates, got {len(self.candidates)}"
            )
        ids = self.candidate_ids()
        if len(set(ids)) != CANDIDATES_PER_SAMPLE:
            raise ValidationError(f"sample {self.sample_id!r}: duplicate candidate ids")
        for c in self.candidates:
            if not c.caption.strip():
                raise ValidationError(
                    f"sample {self.sample_id!r}: empty caption for image {c.image_id!r}"
                )
        if self.gold_order is not None and sorted(self.gold_order) != sorted(ids):
            raise ValidationError(
                f"sample {self.sample_id!r}: gold_order is not a permutation of candidate ids"
            )
        if self.gold_type is not None and self.gold_type not in COMPOUND_TYPES:
            raise ValidationError(
                f"sample {self.sample_id!r}: gold_type {self.gold_type!r} "
                f"not in {COMPOUND_TYPES}"
            )

    def gold_top(self) -> str:
        if self.gold_order is None:
            raise ValidationError(f"sample {self.sample_id!r}: gold_order missing")
        return self.gold_order[0]


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    train_frac: float = 0.70
    val_frac: float = 0.10
    test_frac: float = 0.20

    def __post_init__(self):
        total = self.train_frac + self.val_frac + self.test_frac
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"split fractions sum to {total}, expected 1.0")


def _sample_from_dict(rec: dict, language: str) -> Sample:
    try:
        candidates = tuple(
            CandidateImage(c["image_id"], c["image_path"], c["caption"])
            for c in rec["candidates"]
        )
        gold_order = rec.get("gold_order")
        gold_type = rec.get("gold_type")
        sample = Sample(
            sample_id=rec["sample_id"],
            compound=rec["compound"],
            sentence=rec["sentence"],
            language=language,
            candidates=candidates,
            gold_order=tuple(gold_order) if gold_order is not None else None,
            gold_type=gold_type.lower() if gold_type is not None else None,
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(
            f"sample record {rec.get('sample_id', '<no id>')!r} is malformed: {exc}"
        ) from exc
    sample.validate()
    return sample


def _sample_to_dict(s: Sample) -> dict:
    return {
        "sample_id": s.sample_id,
        "compound": s.compound,
        "sentence": s.sentence,
        "gold_type": s.gold_type,
        "gold_order": list(s.gold_order) if s.gold_order is not None else None,
        "candidates": [
            {"image_id": c.image_id, "image_path": c.image_path, "caption": c.caption}
            for c in s.candidates
        ],
    }


def load_dataset(path: str | Path, language: Optional[str] = None,
                 check_images: bool = False) -> list[Sample]:
    """Load and validate a canonical dataset JSON. Preserves file order.

    With check_images=True, every candidate's image_path must exist relative
    to the dataset file's directory; all missing paths are reported at once.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"dataset file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(
            f"malformed JSON in {path} at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    file_language = doc.get("language")
    if language is not None and file_language != language:
        raise ValidationError(
            f"{path}: requested language {language!r} but file declares {file_language!r}"
        )
    samples = [_sample_from_dict(rec, file_language) for rec in doc.get("samples", [])]
    seen = set()
    for s in samples:
        if s.sample_id in seen:
            raise ValidationError(f"duplicate sample_id {s.sample_id!r} in {path}")
        seen.add(s.sample_id)
    if check_images:
        missing = [
            c.image_path
            for s in samples
            for c in s.candidates
            if not (path.parent / c.image_path).exists()
        ]
        if missing:
            raise ValidationError(
                "missing image files: " + ", ".join(sorted(missing))
            )
    return samples


def save_dataset(samples: list[Sample], path: str | Path) -> None:
    """Write samples in the canonical JSON format (single language per file)."""
    if not samples:
        raise ValidationError("cannot save an empty dataset")
    languages = {s.language for s in samples}
    if len(languages) != 1:
        raise ValidationError(f"mixed languages in one dataset: {sorted(languages)}")
    doc = {
        "language": samples[0].language,
        "samples": [_sample_to_dict(s) for s in samples],
    }
    Path(path).write_text(
        json.dumps(doc, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )


def split_dataset(
    samples: list[Sample], spec: SplitSpec
) -> tuple[list[Sample], list[Sample], list[Sample]]:
    """Deterministic train/val/test partition.

    Val and test sizes are round-half-up(n * frac); the remainder goes to
    train. Same seed always yields the same partition.
    """
    if not samples:
        raise ValidationError("cannot split an empty sample list")
    n = len(samples)
    n_val = int(n * spec.val_frac + 0.5)
    n_test = int(n * spec.test_frac + 0.5)
    if n_val + n_test >= n:
        raise ValidationError(f"split of {n} samples leaves no training data")
    order = list(range(n))
    random.Random(spec.seed).shuffle(order)
    val_idx = set(order[:n_val])
    test_idx = set(order[n_val:n_val + n_test])
    train = [s for i, s in enumerate(samples) if i not in val_idx and i not in test_idx]
    val = [s for i, s in enumerate(samples) if i in val_idx]
    test = [s for i, s in enumerate(samples) if i in test_idx]
    return train, val, test


DEFAULT_TSV_COLUMNS = {
    "sample_id": "compound_id",
    "compound": "compound",
    "sentence": "sentence",
    "gold_type": "sentence_type",
    "gold_order": "expected_order",
    "image_prefix": "image",
    "caption_prefix": "caption",
}


def ingest_tsv(path: str | Path, language: str,
               columns: Optional[dict] = None) -> list[Sample]:
    """Convert a shared-task style TSV into Samples.

    Column mapping is configurable; candidate columns are expected as
    <image_prefix>{1..5}_name and <caption_prefix>{1..5}. gold_order cells
    hold a JSON or comma-separated list of image names.
    """
    cols = dict(DEFAULT_TSV_COLUMNS)
    if columns:
        cols.update(columns)
    path = Path(path)
    samples = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        for i, row in enumerate(reader):
            candidates = []
            for k in range(1, CANDIDATES_PER_SAMPLE + 1):
                name = row.get(f"{cols['image_prefix']}{k}_name", f"img{k}")
                caption = row.get(f"{cols['caption_prefix']}{k}", "")
                candidates.append(CandidateImage(name, name, caption))
            gold_order = None
            raw_order = row.get(cols["gold_order"])
            if raw_order:
                raw_order = raw_order.strip()
                if raw_order.startswith("["):
                    gold_order = tuple(json.loads(raw_order.replace("'", '"')))
                else:
                    gold_order = tuple(x.strip() for x in raw_order.split(","))
            gold_type = row.get(cols["gold_type"]) or None
            sample = Sample(
                sample_id=row.get(cols["sample_id"], f"s{i}"),
                compound=row.get(cols["compound"], ""),
                sentence=row.get(cols["sentence"], ""),
                language=language,
                candidates=tuple(candidates),
                gold_order=gold_order,
                gold_type=gold_type.lower() if gold_type else None,
            )
            sample.validate()
            samples.append(sample)
    return samples
