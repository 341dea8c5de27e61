"""Contrastive training set construction.

Each training sample becomes one entry: the compound (query) embedding is
the anchor; the gold top-ranked image contributes one positive per
modality (image, image_aug, caption, caption_bt, caption_para); the other
four images contribute hard negatives in the same modalities; soft
negatives come from K other samples' gold-top records, one per modality
each, so every modality ends up with N = 4 + K negatives.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .corpus import Sample
from .embedstore import EmbeddingStore, record_key
from .errors import ValidationError

FULL_MODALITIES = ("image", "image_aug", "caption", "caption_bt", "caption_para")
HARD_NEGATIVES_PER_MODALITY = 4  # the non-top candidates


@dataclass
class TripletEntry:
    sample_id: str
    anchor_key: str
    positive_keys: dict[str, str]             # modality -> key
    negative_keys: dict[str, list[str]]       # modality -> keys, hard first
    anchor: np.ndarray = None
    positives: dict[str, np.ndarray] = None
    negatives: dict[str, list[np.ndarray]] = None


@dataclass
class TripletSet:
    entries: list[TripletEntry]
    modalities: tuple[str, ...]
    k_soft: int
    seed: int

    @property
    def m_count(self) -> int:
        return len(self.modalities)

    @property
    def negatives_per_modality(self) -> int:
        return HARD_NEGATIVES_PER_MODALITY + self.k_soft


def _available_modalities(store: EmbeddingStore, samples: Sequence[Sample]) -> tuple[str, ...]:
    """Modalities for which every (sample, candidate) record exists."""
    present = []
    for modality in FULL_MODALITIES:
        ok = all(
            record_key(s.sample_id, modality, c.image_id) in store
            for s in samples for c in s.candidates
        )
        if ok:
            present.append(modality)
    return tuple(present)


def build_triplets(samples: Sequence[Sample], store: EmbeddingStore,
                   k_soft: int, seed: int, llm_name: str,
                   strict: bool = True) -> TripletSet:
    """Build anchor/positive/negative entries from gold-labelled samples.

    Anchors use the gold compound type (the query record for llm_name,
    which the caller produced from gold types, not predictions). Strict
    mode demands all 5 modalities; lenient mode uniformly drops missing
    ones so M stays consistent across entries.
    """
    samples = list(samples)
    if not samples:
        raise ValidationError("no samples to build triplets from")
    for s in samples:
        if s.gold_order is None or s.gold_type is None:
            raise ValidationError(
                f"sample {s.sample_id!r} lacks gold_order/gold_type required for training"
            )
    if k_soft > len(samples) - 1:
        raise ValidationError(
            f"k_soft={k_soft} exceeds the {len(samples) - 1} other samples available"
        )

    modalities = _available_modalities(store, samples)
    if strict and modalities != FULL_MODALITIES:
        missing = tuple(m for m in FULL_MODALITIES if m not in modalities)
        raise ValidationError(
            f"strict mode: store is missing records for modalities {missing}"
        )
    if not modalities:
        raise ValidationError("store has no complete modality for these samples")

    rng = np.random.default_rng(seed)
    gold_top = {s.sample_id: s.gold_top() for s in samples}

    entries = []
    for idx, s in enumerate(samples):
        top = gold_top[s.sample_id]
        rest = [c.image_id for c in s.candidates if c.image_id != top]
        anchor_key = record_key(s.sample_id, "query", llm_name)
        positive_keys = {m: record_key(s.sample_id, m, top) for m in modalities}
        negative_keys = {
            m: [record_key(s.sample_id, m, i) for i in rest] for m in modalities
        }
        others = [o for o in samples if o.sample_id != s.sample_id]
        if k_soft > 0:
            chosen = rng.choice(len(others), size=k_soft, replace=False)
            for j in sorted(chosen):
                o = others[j]
                for m in modalities:
                    negative_keys[m].append(
                        record_key(o.sample_id, m, gold_top[o.sample_id])
                    )
        entry = TripletEntry(
            sample_id=s.sample_id,
            anchor_key=anchor_key,
            positive_keys=positive_keys,
            negative_keys=negative_keys,
        )
        _check_no_leakage(entry)
        entries.append(entry)

    tset = TripletSet(entries=entries, modalities=modalities, k_soft=k_soft, seed=seed)
    resolve_vectors(tset, store)
    return tset


def _check_no_leakage(entry: TripletEntry) -> None:
    for m, pos_key in entry.positive_keys.items():
        if pos_key in entry.negative_keys[m]:
            raise ValidationError(
                f"entry {entry.sample_id!r}: positive key {pos_key!r} leaked "
                "into its own negatives"
            )


def resolve_vectors(tset: TripletSet, store: EmbeddingStore) -> None:
    """Attach vectors from the store to every entry (keys stay authoritative)."""
    for e in tset.entries:
        e.anchor = store.get(e.anchor_key)
        e.positives = {m: store.get(k) for m, k in e.positive_keys.items()}
        e.negatives = {
            m: [store.get(k) for k in keys] for m, keys in e.negative_keys.items()
        }


def write_manifest(tset: TripletSet, path: str | Path) -> None:
    """Persist the set as key references plus the seed; vectors are not copied."""
    doc = {
        "modalities": list(tset.modalities),
        "k_soft": tset.k_soft,
        "seed": tset.seed,
        "entries": [
            {
                "sample_id": e.sample_id,
                "anchor": e.anchor_key,
                "positives": e.positive_keys,
                "negatives": e.negative_keys,
            }
            for e in tset.entries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_manifest(path: str | Path, store: Optional[EmbeddingStore] = None) -> TripletSet:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    entries = [
        TripletEntry(
            sample_id=e["sample_id"],
            anchor_key=e["anchor"],
            positive_keys=e["positives"],
            negative_keys=e["negatives"],
        )
        for e in doc["entries"]
    ]
    tset = TripletSet(
        entries=entries, modalities=tuple(doc["modalities"]),
        k_soft=doc["k_soft"], seed=doc["seed"],
    )
    if store is not None:
        resolve_vectors(tset, store)
    return tset
