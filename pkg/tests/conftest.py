import json

import numpy as np
import pytest

from idiorank.corpus import CandidateImage, Sample
from idiorank.embedstore import EmbeddingRecord, EmbeddingStore, record_key


def make_sample(sample_id="s1", language="EN", gold_order=None,
                gold_type="idiomatic", n_candidates=5, compound="night owl"):
    candidates = tuple(
        CandidateImage(f"img{k}", f"images/{sample_id}_img{k}.png", f"caption {k}")
        for k in range(1, n_candidates + 1)
    )
    if gold_order is None:
        gold_order = tuple(c.image_id for c in candidates)
    return Sample(
        sample_id=sample_id,
        compound=compound,
        sentence=f"A sentence with the {compound} in it.",
        language=language,
        candidates=candidates,
        gold_order=tuple(gold_order) if gold_order else None,
        gold_type=gold_type,
    )


def make_samples(n, language="EN", seed=0):
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        ids = [f"img{k}" for k in range(1, 6)]
        order = list(rng.permutation(ids))
        samples.append(make_sample(f"s{i}", language=language, gold_order=order,
                                   compound=f"compound {i}"))
    return samples


def make_store(samples, llm_names=("gpt4",), dim=16, seed=0,
               roles=("query", "image", "caption", "image_aug", "caption_bt",
                      "caption_para"), encoder="LABSE-14"):
    """Fixture store with random (non-degenerate) vectors for every record."""
    rng = np.random.default_rng(seed)
    store = EmbeddingStore(dim=dim, encoder=encoder)

    def vec():
        v = rng.normal(size=dim)
        v.setflags(write=False)
        return v

    for s in samples:
        if "query" in roles:
            for llm in llm_names:
                store.add(EmbeddingRecord(record_key(s.sample_id, "query", llm),
                                          "query", vec()))
        for c in s.candidates:
            for role in roles:
                if role == "query":
                    continue
                store.add(EmbeddingRecord(record_key(s.sample_id, role, c.image_id),
                                          role, vec()))
    return store


def write_dataset_json(samples, path):
    from idiorank.corpus import save_dataset
    save_dataset(list(samples), path)
    return path


@pytest.fixture
def tiny_samples():
    return make_samples(4)


@pytest.fixture
def tiny_store(tiny_samples):
    return make_store(tiny_samples)
