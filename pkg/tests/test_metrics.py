import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from idiorank.errors import ValidationError
from idiorank.metrics import (
    DcgGains, EvalReport, build_report, combine_rows, dcg, evaluate_split,
    mean_dcg, mean_spearman, report_to_csv, report_to_json, report_to_text,
    spearman, top1_accuracy,
)
from idiorank.ranker import RankResult

IDS = ("A", "B", "C", "D", "E")


def rr(order, sample_id="s1", llm="gpt4", mode="ci"):
    scores = {img: float(len(order) - i) for i, img in enumerate(order)}
    return RankResult(sample_id, llm, mode, scores, tuple(order))


def brute_force_spearman(pred, gold):
    """Pearson correlation of the two rank vectors, in exact rationals."""
    n = len(pred)
    pr = {img: i for i, img in enumerate(pred)}
    gr = {img: i for i, img in enumerate(gold)}
    xs = [Fraction(pr[img]) for img in IDS[:n]]
    ys = [Fraction(gr[img]) for img in IDS[:n]]
    mx = sum(xs) / n
    my = sum(ys) / n
    cov = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    vx = sum((x - mx) ** 2 for x in xs)
    vy = sum((y - my) ** 2 for y in ys)
    return cov / Fraction(math.isqrt(int(vx * vy)))


def test_spearman_identity_and_reversal():
    assert spearman(IDS, IDS) == 1.0
    assert spearman(IDS, tuple(reversed(IDS))) == -1.0


def test_spearman_adjacent_swap():
    assert spearman(("A", "B", "C", "D", "E"),
                    ("B", "A", "C", "D", "E")) == pytest.approx(0.9, abs=1e-15)


def test_spearman_matches_brute_force_on_all_120_permutations():
    gold = IDS
    for perm in itertools.permutations(IDS):
        expected = brute_force_spearman(perm, gold)
        got = Fraction(spearman(perm, gold)).limit_denominator(10**6)
        assert got == expected


def test_spearman_rejects_non_permutations():
    with pytest.raises(ValidationError):
        spearman(("A", "A", "C", "D", "E"), IDS)
    with pytest.raises(ValidationError):
        spearman(("A", "B", "C", "D", "X"), IDS)


def test_top1_accuracy():
    golds = {f"s{i}": IDS for i in range(4)}
    correct = [rr(IDS, f"s{i}") for i in range(4)]
    assert top1_accuracy(correct, golds) == 1.0
    swapped = [rr(("B", "A", "C", "D", "E"), f"s{i}") for i in range(4)]
    assert top1_accuracy(swapped, golds) == 0.0


def test_top1_accuracy_partial_matches_paper_scale():
    golds = {f"s{i}": IDS for i in range(115)}
    results = [rr(IDS if i < 64 else ("B", "A", "C", "D", "E"), f"s{i}")
               for i in range(115)]
    assert top1_accuracy(results, golds) == pytest.approx(0.5565, abs=5e-5)


def test_dcg_perfect_prediction():
    assert dcg(IDS, IDS) == pytest.approx(3 + 1 / math.log2(3), abs=1e-12)
    assert dcg(IDS, IDS) == pytest.approx(3.6309, abs=1e-4)


def test_dcg_constructed_case():
    # gold-top ranked last (position 5), gold-2nd ranked 4th
    pred = ("C", "D", "E", "B", "A")
    expected = 3 / math.log2(6) + 1 / math.log2(5)
    assert dcg(pred, IDS) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(1.5912, abs=1e-4)


def test_dcg_random_expectation_monte_carlo():
    # each gain lands at each position with probability 1/5:
    # E[DCG] = (sum gains)/5 * sum_i 1/log2(i+1) = 0.8 * 2.9485 = 2.3588
    rng = np.random.default_rng(314)
    ids = list(IDS)
    total = 0.0
    trials = 120_000
    for _ in range(trials):
        perm = [ids[i] for i in rng.permutation(5)]
        total += dcg(perm, IDS)
    assert total / trials == pytest.approx(2.3588, abs=0.01)


def test_dcg_maximized_by_gold_order():
    rng = np.random.default_rng(7)
    for _ in range(10):
        raw = sorted(rng.uniform(0, 5, size=5), reverse=True)
        raw[0] = max(raw[0], 1e-6)
        gains = DcgGains(tuple(raw))
        best = dcg(IDS, IDS, gains)
        for perm in itertools.permutations(IDS):
            assert dcg(perm, IDS, gains) <= best + 1e-12


def test_invalid_gains():
    with pytest.raises(ValidationError):
        DcgGains((1.0, 2.0, 0.0, 0.0, 0.0))   # increasing
    with pytest.raises(ValidationError):
        DcgGains((0.0, 0.0, 0.0, 0.0, 0.0))   # gains[0] must be positive


def test_mean_metrics():
    golds = {"s1": IDS, "s2": IDS}
    results = [rr(IDS, "s1"), rr(tuple(reversed(IDS)), "s2")]
    assert mean_spearman(results, golds) == pytest.approx(0.0, abs=1e-15)
    expected = (dcg(IDS, IDS) + dcg(tuple(reversed(IDS)), IDS)) / 2
    assert mean_dcg(results, golds) == pytest.approx(expected)


def test_combined_split_is_weighted_mean():
    golds_a = {f"a{i}": IDS for i in range(3)}
    golds_b = {f"b{i}": IDS for i in range(7)}
    res_a = [rr(IDS, f"a{i}") for i in range(3)]
    res_b = [rr(("B", "A", "C", "D", "E"), f"b{i}") for i in range(7)]
    row_a = evaluate_split(res_a, golds_a, "gpt4", "LABSE-14", "ci", "EN")
    row_b = evaluate_split(res_b, golds_b, "gpt4", "LABSE-14", "ci", "XE")
    combined = combine_rows([row_a, row_b], "TestAll")
    assert combined.n_samples == 10
    assert combined.acc == pytest.approx((row_a.acc * 3 + row_b.acc * 7) / 10)
    assert combined.dcg == pytest.approx((row_a.dcg * 3 + row_b.dcg * 7) / 10)
    # direct evaluation over the union agrees
    direct = evaluate_split(res_a + res_b, {**golds_a, **golds_b},
                            "gpt4", "LABSE-14", "ci", "TestAll")
    assert combined.acc == pytest.approx(direct.acc)
    assert combined.corr == pytest.approx(direct.corr)
    assert combined.dcg == pytest.approx(direct.dcg)


def test_build_report_single_row_and_missing_split():
    golds = {"s1": IDS}
    results = {("gpt4", "LABSE-14", "ci", "EN"): [rr(IDS)]}
    report = build_report(results, {"EN": golds})
    assert len(report.rows) == 1
    assert report.rows[0].acc == 1.0
    with pytest.raises(ValidationError, match="PT"):
        build_report({("gpt4", "LABSE-14", "ci", "PT"): [rr(IDS)]}, {"EN": golds})


def test_build_report_combined_missing_member_errors():
    golds = {"EN": {"s1": IDS}, "XE": {"s2": IDS}}
    results = {("gpt4", "L", "ci", "EN"): [rr(IDS, "s1")]}
    with pytest.raises(ValidationError, match="XE"):
        build_report(results, golds, combine={"TestAll": ("EN", "XE")})


def test_baseline_rows_render_with_dash():
    golds = {"s1": IDS}
    results = {("-", "XLM-32", "ci", "EN"): [rr(IDS, llm="-")]}
    report = build_report(results, {"EN": golds})
    text = report_to_text(report)
    assert text.splitlines()[1].startswith("-")
    csv_out = report_to_csv(report)
    assert csv_out.splitlines()[1].startswith("-,XLM-32")
    assert '"llm": "-"' in report_to_json(report)


def test_report_renderers_align():
    golds = {"s1": IDS}
    rows = build_report({("gpt4", "LABSE-14", "cic", "EN"): [rr(IDS, mode="cic")]},
                        {"EN": golds}).rows
    text = report_to_text(EvalReport(rows))
    header, line = text.splitlines()[:2]
    assert header.index("Acc") <= line.index("1.000")
