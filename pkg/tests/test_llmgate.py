import json

import pytest
from hypothesis import given, strategies as st

from idiorank import llmgate
from idiorank.errors import TransportError, ValidationError
from idiorank.llmgate import (
    IDIOMATIC, LITERAL, UNPARSEABLE, MockTransport, ResponseCache, TypeVote,
    classify_compound, decide_majority, generate_meaning, parse_type_label,
    resolve_query_text, type_detection_accuracy,
)

from conftest import make_sample


def fixture_for(compound, classify_responses, meaning_responses=("a meaning",)):
    return {
        f"classify|{compound}": list(classify_responses),
        f"meaning|{compound}": list(meaning_responses),
    }


def test_strict_majority():
    sample = make_sample()
    transport = MockTransport(fixture_for(
        "night owl", ["Idiomatic", "Idiomatic", "Literal", "Idiomatic", "Literal"]))
    vote = classify_compound(sample, transport, t=5)
    assert vote.decision == IDIOMATIC
    assert vote.votes == [IDIOMATIC, IDIOMATIC, LITERAL, IDIOMATIC, LITERAL]


def test_default_t_issues_five_calls():
    sample = make_sample()
    transport = MockTransport(fixture_for("night owl", ["Literal"]))
    vote = classify_compound(sample, transport)
    assert vote.t == 5
    assert len(transport.calls) == 5
    assert vote.decision == LITERAL


def test_tie_breaks_idiomatic():
    sample = make_sample()
    transport = MockTransport(fixture_for(
        "night owl", ["Idiomatic", "Idiomatic", "Literal", "Literal"]))
    assert classify_compound(sample, transport, t=4).decision == IDIOMATIC


def test_all_unparseable_is_error():
    sample = make_sample()
    transport = MockTransport(fixture_for("night owl", ["no idea", "dunno"]))
    with pytest.raises(ValidationError):
        classify_compound(sample, transport, t=2)


def test_parse_labels():
    assert parse_type_label("It is IDIOMATIC.") == IDIOMATIC
    assert parse_type_label("literal") == LITERAL
    assert parse_type_label("could be idiomatic or literal") == UNPARSEABLE
    assert parse_type_label("42") == UNPARSEABLE
    # "idiomatic" contains no "literal", but check the reverse direction too
    assert parse_type_label("Literally idiomatic") == UNPARSEABLE


@given(st.lists(st.sampled_from([IDIOMATIC, LITERAL, UNPARSEABLE]),
                min_size=1, max_size=9).filter(
                    lambda v: any(x != UNPARSEABLE for x in v)))
def test_majority_is_permutation_invariant(votes):
    baseline = decide_majority(votes)
    assert decide_majority(list(reversed(votes))) == baseline
    assert decide_majority(sorted(votes)) == baseline


def test_adding_idiomatic_vote_never_flips_to_literal():
    for votes in ([IDIOMATIC], [IDIOMATIC, LITERAL], [IDIOMATIC] * 3 + [LITERAL]):
        if decide_majority(votes) == IDIOMATIC:
            assert decide_majority(votes + [IDIOMATIC]) == IDIOMATIC


def test_generate_meaning_passthrough():
    sample = make_sample()
    transport = MockTransport(fixture_for(
        "night owl", ["Idiomatic"], ["a person who stays up late"]))
    vote = classify_compound(sample, transport, t=1)
    rec = generate_meaning(sample, transport, vote)
    assert rec.meaning_text == "a person who stays up late"
    assert rec.llm_name == "mock"


def test_generate_meaning_requires_idiomatic_decision():
    sample = make_sample()
    transport = MockTransport(fixture_for("night owl", ["Literal"]))
    vote = classify_compound(sample, transport, t=1)
    with pytest.raises(ValidationError):
        generate_meaning(sample, transport, vote)
    # forced generation bypasses the gate
    rec = generate_meaning(sample, transport, vote, forced=True)
    assert rec.meaning_text


def test_three_transports_give_three_meanings():
    sample = make_sample()
    texts = {"gpt3.5": "late-night person", "gpt4": "someone active at night",
             "gpt4o": "a habitual night-time person"}
    records = []
    for name, text in texts.items():
        transport = MockTransport(fixture_for("night owl", ["Idiomatic"], [text]),
                                  name=name)
        vote = classify_compound(sample, transport, t=1)
        records.append(generate_meaning(sample, transport, vote))
    assert len({r.meaning_text for r in records}) == 3
    assert len({r.llm_name for r in records}) == 3


def test_resolve_query_text():
    sample = make_sample(compound="bath bomb", gold_type="literal")
    literal_vote = TypeVote("s1", [LITERAL], LITERAL, 1)
    assert resolve_query_text(sample, literal_vote) == "bath bomb"

    sample_idiom = make_sample()
    idiom_vote = TypeVote("s1", [IDIOMATIC], IDIOMATIC, 1)
    transport = MockTransport(fixture_for(
        "night owl", ["Idiomatic"], ["a person who stays up late"]))
    meaning = generate_meaning(sample_idiom, transport, idiom_vote)
    assert resolve_query_text(sample_idiom, idiom_vote, meaning) \
        == "a person who stays up late"
    with pytest.raises(ValidationError):
        resolve_query_text(sample_idiom, idiom_vote, None)


def test_type_detection_accuracy():
    votes = [TypeVote(f"c{i}", [IDIOMATIC], IDIOMATIC, 1) for i in range(5)]
    assert type_detection_accuracy(votes, ["idiomatic"] * 5) == 1.0
    assert type_detection_accuracy(votes, ["literal"] * 5) == 0.0
    # 61 correct of 70 lands on the published GPT-4 EN scale
    votes70 = [TypeVote(f"c{i}", [IDIOMATIC], IDIOMATIC, 1) for i in range(70)]
    golds = ["idiomatic"] * 61 + ["literal"] * 9
    assert type_detection_accuracy(votes70, golds) == pytest.approx(0.8714, abs=5e-5)
    with pytest.raises(ValidationError):
        type_detection_accuracy(votes, ["idiomatic"] * 4)


def test_mock_transport_determinism():
    fixture = fixture_for("night owl", ["Idiomatic", "Literal", "Idiomatic"])
    sample = make_sample()
    votes1 = classify_compound(sample, MockTransport(fixture), t=5).votes
    votes2 = classify_compound(sample, MockTransport(fixture), t=5).votes
    assert votes1 == votes2
    # responses cycle when the fixture is exhausted
    assert votes1 == [IDIOMATIC, LITERAL, IDIOMATIC, IDIOMATIC, LITERAL]


def test_response_cache_replays_without_calls(tmp_path):
    sample = make_sample()
    fixture = fixture_for("night owl", ["Idiomatic", "Literal", "Idiomatic"])
    cache = ResponseCache(tmp_path / "cache.jsonl")
    t1 = MockTransport(fixture)
    v1 = classify_compound(sample, t1, t=5, cache=cache)
    assert len(t1.calls) == 5

    cache2 = ResponseCache(tmp_path / "cache.jsonl")
    t2 = MockTransport(fixture)
    v2 = classify_compound(sample, t2, t=5, cache=cache2)
    assert len(t2.calls) == 0
    assert v1.votes == v2.votes


def test_http_transport_retries_then_fails(monkeypatch):
    from idiorank.llmgate import HttpChatTransport

    attempts = []

    class FakeRequests:
        @staticmethod
        def post(*a, **k):
            attempts.append(1)
            raise OSError("connection refused")

    transport = HttpChatTransport("http://localhost:1/v1", "m", retries=3, backoff=0)
    monkeypatch.setitem(__import__("sys").modules, "requests", FakeRequests)
    with pytest.raises(TransportError):
        transport.complete("p", "classify", "c", 1.0)
    assert len(attempts) == 3
