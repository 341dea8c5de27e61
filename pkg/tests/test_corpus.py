import json

import pytest

from idiorank.corpus import (
    Sample, SplitSpec, ingest_tsv, load_dataset, save_dataset, split_dataset,
)
from idiorank.errors import ValidationError

from conftest import make_sample, make_samples


def test_load_single_valid_sample(tmp_path):
    path = tmp_path / "d.json"
    save_dataset([make_sample()], path)
    samples = load_dataset(path)
    assert len(samples) == 1
    assert len(samples[0].candidates) == 5


def test_wrong_candidate_count_names_sample():
    with pytest.raises(ValidationError, match="s1"):
        make_sample(n_candidates=4).validate()


def test_full_size_training_file(tmp_path):
    # the EN training set has 70 records; the loader must take them all
    samples = make_samples(70)
    path = tmp_path / "en_train.json"
    save_dataset(samples, path)
    assert len(load_dataset(path)) == 70


def test_malformed_json_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"language": "EN",\n "samples": [}', encoding="utf-8")
    with pytest.raises(ValidationError, match="line 2"):
        load_dataset(path)


def test_missing_images_all_listed(tmp_path):
    path = tmp_path / "d.json"
    save_dataset([make_sample()], path)
    with pytest.raises(ValidationError) as exc:
        load_dataset(path, check_images=True)
    msg = str(exc.value)
    assert all(f"s1_img{k}.png" in msg for k in range(1, 6))


def test_gold_order_must_be_permutation():
    with pytest.raises(ValidationError, match="permutation"):
        make_sample(gold_order=["img1"] * 5).validate()


def test_roundtrip_structural_equality(tmp_path):
    samples = make_samples(12)
    path = tmp_path / "d.json"
    save_dataset(samples, path)
    assert load_dataset(path) == samples


def test_split_sizes_50():
    train, val, test = split_dataset(make_samples(50), SplitSpec(seed=7))
    assert (len(train), len(val), len(test)) == (35, 5, 10)


def test_split_sizes_70_follow_stated_fractions():
    # 70 * (0.7, 0.1, 0.2) with the remainder going to train
    train, val, test = split_dataset(make_samples(70), SplitSpec(seed=3))
    assert (len(train), len(val), len(test)) == (49, 7, 14)


def test_split_deterministic_and_partitioned():
    samples = make_samples(50)
    spec = SplitSpec(seed=7)
    a = split_dataset(samples, spec)
    b = split_dataset(samples, spec)
    assert a == b
    ids = [s.sample_id for part in a for s in part]
    assert sorted(ids) == sorted(s.sample_id for s in samples)
    assert len(set(ids)) == len(samples)


def test_different_seeds_differ():
    samples = make_samples(100)
    a = split_dataset(samples, SplitSpec(seed=1))
    b = split_dataset(samples, SplitSpec(seed=2))
    train_a = {s.sample_id for s in a[0]}
    moved = sum(1 for s in samples
                if (s.sample_id in train_a) != (s.sample_id in {x.sample_id for x in b[0]}))
    assert moved >= 20


def test_split_empty_errors():
    with pytest.raises(ValidationError):
        split_dataset([], SplitSpec(seed=0))


def test_ingest_tsv(tmp_path):
    header = ["compound_id", "compound", "sentence", "sentence_type", "expected_order"]
    for k in range(1, 6):
        header += [f"image{k}_name", f"caption{k}"]
    row = ["c1", "night owl", "He is a night owl.", "idiomatic",
           '["i2", "i1", "i3", "i4", "i5"]']
    for k in range(1, 6):
        row += [f"i{k}", f"caption text {k}"]
    path = tmp_path / "task.tsv"
    path.write_text("\t".join(header) + "\n" + "\t".join(row) + "\n", encoding="utf-8")
    samples = ingest_tsv(path, "EN")
    assert len(samples) == 1
    assert samples[0].gold_order == ("i2", "i1", "i3", "i4", "i5")
    assert samples[0].gold_type == "idiomatic"
