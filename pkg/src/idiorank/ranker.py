"""Per-image ranking scores and multi-LLM ensembling.

CI mode scores each candidate by cosine(query, image); CIC adds
cosine(query, caption) unweighted. The ensemble is an unweighted mean of
per-LLM scores. Ties break by original candidate position.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedstore import SampleBundle
from .errors import NumericalError, ValidationError

MODES = ("ci", "cic")
ENSEMBLE_NAME = "ensemble"


@dataclass(frozen=True)
class RankResult:
    sample_id: str
    llm_name: str
    mode: str
    scores: dict[str, float]
    order: tuple[str, ...]


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity in double precision."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValidationError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = math.sqrt(float(u @ u))
    nv = math.sqrt(float(v @ v))
    if nu == 0.0 or nv == 0.0:
        raise NumericalError("cosine of a zero-norm vector (degenerate embedding)")
    return float(u @ v) / (nu * nv)


def _order_from_scores(scores: dict[str, float],
                       candidate_order: Sequence[str]) -> tuple[str, ...]:
    # stable sort: equal scores keep original candidate position
    return tuple(sorted(candidate_order, key=lambda i: -scores[i]))


def score_sample(bundle: SampleBundle, mode: str) -> RankResult:
    """Score one sample's candidates in CI or CIC mode."""
    mode = mode.lower()
    if mode not in MODES:
        raise ValidationError(f"unknown mode {mode!r}; expected one of {MODES}")
    scores: dict[str, float] = {}
    for image_id in bundle.image_order:
        s = cosine(bundle.query, bundle.images[image_id])
        if mode == "cic":
            caption = bundle.captions.get(image_id)
            if caption is None:
                raise ValidationError(
                    f"sample {bundle.sample_id!r}: caption record for "
                    f"{image_id!r} required in CIC mode"
                )
            s += cosine(bundle.query, caption)
        scores[image_id] = s
    return RankResult(
        sample_id=bundle.sample_id,
        llm_name=bundle.llm_name,
        mode=mode,
        scores=scores,
        order=_order_from_scores(scores, bundle.image_order),
    )


def ensemble_scores(results: Sequence[RankResult]) -> RankResult:
    """Unweighted mean of per-LLM scores for one sample; order recomputed."""
    if len(results) < 2:
        raise ValidationError("ensemble needs at least 2 results")
    first = results[0]
    ids = set(first.scores)
    for r in results[1:]:
        if r.sample_id != first.sample_id or r.mode != first.mode:
            raise ValidationError("ensemble inputs must share sample and mode")
        if set(r.scores) != ids:
            raise ValidationError(
                f"sample {first.sample_id!r}: mismatched candidate sets in ensemble"
            )
    # score dicts from score_sample all carry the original candidate order
    # as their insertion order; reuse it so tie-breaks stay positional
    base_order = tuple(first.scores)
    mean_scores = {
        i: sum(r.scores[i] for r in results) / len(results) for i in base_order
    }
    return RankResult(
        sample_id=first.sample_id,
        llm_name=ENSEMBLE_NAME,
        mode=first.mode,
        scores=mean_scores,
        order=_order_from_scores(mean_scores, base_order),
    )


def write_rank_results(results: Sequence[RankResult], path: str | Path) -> None:
    """One JSONL line per (sample, llm, mode), sorted for stable bytes."""
    ordered = sorted(results, key=lambda r: (r.sample_id, r.llm_name, r.mode))
    lines = [
        json.dumps({
            "sample_id": r.sample_id,
            "llm": r.llm_name,
            "mode": r.mode,
            "scores": dict(r.scores),  # key order = original candidate order
            "order": list(r.order),
        })
        for r in ordered
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_rank_results(path: str | Path) -> list[RankResult]:
    results = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        results.append(RankResult(
            sample_id=rec["sample_id"], llm_name=rec["llm"], mode=rec["mode"],
            scores=rec["scores"], order=tuple(rec["order"]),
        ))
    return results
