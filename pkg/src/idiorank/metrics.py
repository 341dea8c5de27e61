"""Ranking metrics (top-1 accuracy, Spearman, DCG) and evaluation reports.

All three metrics are per-sample means, so a combined split's value is the
sample-count-weighted mean of its parts. The DCG gain scheme is
configurable; the default [3, 1, 0, 0, 0] corresponds to graded relevance
(2, 1, 0, 0, 0) under the 2^rel - 1 convention.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .errors import ValidationError
from .ranker import RankResult

DEFAULT_GAINS = (3.0, 1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class DcgGains:
    gains: tuple[float, ...] = DEFAULT_GAINS

    def __post_init__(self):
        g = self.gains
        if len(g) != 5 or g[0] <= 0 or any(x < 0 for x in g):
            raise ValidationError(f"invalid gains {g}: need 5 nonnegative, gains[0] > 0")
        if any(g[i] < g[i + 1] for i in range(4)):
            raise ValidationError(f"gains {g} must be nonincreasing")


def _check_permutations(pred: Sequence[str], gold: Sequence[str]) -> None:
    if sorted(pred) != sorted(gold) or len(set(pred)) != len(pred):
        raise ValidationError(
            f"orders are not permutations of the same ids: {pred} vs {gold}"
        )


def top1_accuracy(results: Sequence[RankResult],
                  golds: dict[str, Sequence[str]]) -> float:
    """Fraction of samples whose predicted best image is the gold best."""
    if not results:
        raise ValidationError("no results to score")
    correct = 0
    for r in results:
        gold = golds.get(r.sample_id)
        if gold is None:
            raise ValidationError(f"no gold order for sample {r.sample_id!r}")
        correct += r.order[0] == gold[0]
    return correct / len(results)


def spearman(pred_order: Sequence[str], gold_order: Sequence[str]) -> float:
    """Spearman rho between two strict orders of the same 5 ids."""
    _check_permutations(pred_order, gold_order)
    n = len(pred_order)
    gold_rank = {img: i for i, img in enumerate(gold_order)}
    d2 = sum((i - gold_rank[img]) ** 2 for i, img in enumerate(pred_order))
    return 1.0 - 6.0 * d2 / (n * (n * n - 1))


def mean_spearman(results: Sequence[RankResult],
                  golds: dict[str, Sequence[str]]) -> float:
    if not results:
        raise ValidationError("no results to score")
    return sum(spearman(r.order, golds[r.sample_id]) for r in results) / len(results)


def dcg(pred_order: Sequence[str], gold_order: Sequence[str],
        gains: DcgGains = DcgGains()) -> float:
    """Discounted cumulative gain with log2(position + 1) discounts."""
    _check_permutations(pred_order, gold_order)
    gold_pos = {img: i for i, img in enumerate(gold_order)}
    return sum(
        gains.gains[gold_pos[img]] / math.log2(i + 2)
        for i, img in enumerate(pred_order)
    )


def mean_dcg(results: Sequence[RankResult], golds: dict[str, Sequence[str]],
             gains: DcgGains = DcgGains()) -> float:
    if not results:
        raise ValidationError("no results to score")
    return sum(dcg(r.order, golds[r.sample_id], gains) for r in results) / len(results)


@dataclass(frozen=True)
class ReportRow:
    llm: str            # "-" for the no-LLM baseline
    clip: str
    mode: str
    split: str          # EN, PT, XE, XP or a combined label
    acc: float
    corr: float
    dcg: float
    n_samples: int


@dataclass
class EvalReport:
    rows: list[ReportRow]

    def key_index(self) -> dict:
        return {(r.llm, r.clip, r.mode, r.split): r for r in self.rows}


def evaluate_split(results: Sequence[RankResult], golds: dict[str, Sequence[str]],
                   llm: str, clip: str, mode: str, split: str,
                   gains: DcgGains = DcgGains()) -> ReportRow:
    return ReportRow(
        llm=llm, clip=clip, mode=mode, split=split,
        acc=top1_accuracy(results, golds),
        corr=mean_spearman(results, golds),
        dcg=mean_dcg(results, golds, gains),
        n_samples=len(results),
    )


def combine_rows(rows: Sequence[ReportRow], split_label: str) -> ReportRow:
    """Sample-count-weighted merge of per-split rows (same llm/clip/mode)."""
    if not rows:
        raise ValidationError("no rows to combine")
    keys = {(r.llm, r.clip, r.mode) for r in rows}
    if len(keys) != 1:
        raise ValidationError(f"cannot combine rows across configurations: {keys}")
    total = sum(r.n_samples for r in rows)
    return ReportRow(
        llm=rows[0].llm, clip=rows[0].clip, mode=rows[0].mode, split=split_label,
        acc=sum(r.acc * r.n_samples for r in rows) / total,
        corr=sum(r.corr * r.n_samples for r in rows) / total,
        dcg=sum(r.dcg * r.n_samples for r in rows) / total,
        n_samples=total,
    )


def build_report(results_by_config: dict, golds_by_split: dict,
                 gains: DcgGains = DcgGains(),
                 combine: Optional[dict[str, tuple[str, ...]]] = None) -> EvalReport:
    """Assemble an EvalReport.

    results_by_config maps (llm, clip, mode, split) -> list of RankResult;
    golds_by_split maps split -> {sample_id: gold_order}. combine maps a
    combined-split label to the member splits it merges (all members must
    be present for every configuration that has any of them).
    """
    rows = []
    for (llm, clip, mode, split), results in sorted(results_by_config.items()):
        golds = golds_by_split.get(split)
        if golds is None:
            raise ValidationError(f"no gold orders for split {split!r}")
        rows.append(evaluate_split(results, golds, llm, clip, mode, split, gains))
    if combine:
        by_config: dict[tuple, dict[str, ReportRow]] = {}
        for r in rows:
            by_config.setdefault((r.llm, r.clip, r.mode), {})[r.split] = r
        combined_rows = []
        for label, members in combine.items():
            for config, splits in sorted(by_config.items()):
                have = [s for s in members if s in splits]
                if not have:
                    continue
                missing = [s for s in members if s not in splits]
                if missing:
                    raise ValidationError(
                        f"config {config}: combined split {label!r} is missing "
                        f"member splits {missing}"
                    )
                combined_rows.append(
                    combine_rows([splits[s] for s in members], label)
                )
        rows.extend(combined_rows)
    return EvalReport(rows=rows)


def report_to_json(report: EvalReport) -> str:
    return json.dumps({
        "rows": [
            {
                "llm": r.llm, "clip": r.clip, "mode": r.mode, "split": r.split,
                "acc": r.acc, "corr": r.corr, "dcg": r.dcg,
                "n_samples": r.n_samples,
            }
            for r in report.rows
        ]
    }, indent=2) + "\n"


def report_to_text(report: EvalReport) -> str:
    """Aligned plain-text table, one row per (llm, clip, mode, split)."""
    header = ("LLM", "CLIP model", "Mode", "Split", "N", "Acc", "Corr", "DCG")
    body = [
        (r.llm, r.clip, r.mode.upper(), r.split, str(r.n_samples),
         f"{r.acc:.3f}", f"{r.corr:.3f}", f"{r.dcg:.3f}")
        for r in report.rows
    ]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = []
    for row in [header] + body:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def report_to_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["llm", "clip", "mode", "split", "n_samples", "acc", "corr", "dcg"])
    for r in report.rows:
        writer.writerow([r.llm, r.clip, r.mode, r.split, r.n_samples,
                         r.acc, r.corr, r.dcg])
    return buf.getvalue()


def write_report(report: EvalReport, directory: str | Path,
                 stem: str = "report") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / f"{stem}.json").write_text(report_to_json(report), encoding="utf-8")
    (directory / f"{stem}.txt").write_text(report_to_text(report), encoding="utf-8")
    (directory / f"{stem}.csv").write_text(report_to_csv(report), encoding="utf-8")
