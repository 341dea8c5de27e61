"""Compound type classification and idiomatic meaning generation via LLMs.

Classification prompts the model T times and takes the majority of the
parseable answers; meaning generation asks once per (compound, model).
Transports are pluggable: an OpenAI-compatible HTTP client for real runs
and a fixture-driven mock for tests and offline reproduction.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .corpus import Sample
from .errors import TransportError, ValidationError

IDIOMATIC = "idiomatic"
LITERAL = "literal"
UNPARSEABLE = "unparseable"

DEFAULT_T = 5  # repetitions for type classification

CLASSIFY_PROMPT = (
    'Consider the compound "{compound}" in the sentence: "{sentence}". '
    "Is the compound used idiomatically or literally here? "
    'Answer with exactly one word: "Idiomatic" or "Literal".'
)
MEANING_PROMPT = (
    'The compound "{compound}" is used idiomatically in the sentence: '
    '"{sentence}". Give a short phrase stating its idiomatic meaning in this '
    "context. Reply with the meaning only."
)

DEFAULT_CLASSIFY_TEMPERATURE = 1.0  # majority voting needs sampling diversity
DEFAULT_MEANING_TEMPERATURE = 0.7


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


@dataclass
class TypeVote:
    compound_id: str
    votes: list[str]
    decision: str
    t: int


@dataclass
class MeaningRecord:
    compound_id: str
    llm_name: str
    meaning_text: str
    prompt_hash: str


class LlmTransport:
    """Minimal chat interface: one prompt in, one response string out."""

    name: str = "llm"

    def complete(self, prompt: str, kind: str, compound: str,
                 temperature: float) -> str:
        raise NotImplementedError


class MockTransport(LlmTransport):
    """Scripted transport for deterministic tests.

    Fixture maps "<kind>|<compound>" to a list of responses consumed in
    order, cycling when exhausted. Also records every call.
    """

    def __init__(self, fixture: dict[str, Sequence[str]] | str | Path,
                 name: str = "mock"):
        if isinstance(fixture, (str, Path)):
            fixture = json.loads(Path(fixture).read_text(encoding="utf-8"))
        self.fixture = {k: list(v) for k, v in fixture.items()}
        self.name = name
        self.calls: list[tuple[str, str]] = []
        self._cursors: dict[str, int] = {}

    def complete(self, prompt, kind, compound, temperature):
        key = f"{kind}|{compound}"
        self.calls.append((kind, compound))
        if key not in self.fixture:
            raise TransportError(f"mock fixture has no entry for {key!r}")
        responses = self.fixture[key]
        i = self._cursors.get(key, 0)
        self._cursors[key] = i + 1
        return responses[i % len(responses)]


class ResponseCache:
    """JSONL cache of raw LLM responses keyed by (model, prompt_hash, index).

    The index distinguishes repeated samples of the same prompt so majority
    voting replays identically from cache.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._entries: dict[tuple[str, str, int], str] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                self._entries[(rec["model"], rec["prompt_hash"], rec["index"])] = rec["response"]

    def get(self, model: str, phash: str, index: int) -> Optional[str]:
        return self._entries.get((model, phash, index))

    def put(self, model: str, phash: str, index: int, response: str) -> None:
        self._entries[(model, phash, index)] = response
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps({
                "model": model, "prompt_hash": phash,
                "index": index, "response": response,
            }) + "\n")


class HttpChatTransport(LlmTransport):
    """OpenAI-compatible chat-completion client with retries.

    API key comes from the environment (api_key_env); base URL and model
    name from config. Retries transport failures with exponential backoff.
    """

    def __init__(self, base_url: str, model: str, name: Optional[str] = None,
                 api_key_env: str = "OPENAI_API_KEY", timeout: float = 60.0,
                 retries: int = 3, backoff: float = 1.0):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.name = name or model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    def complete(self, prompt, kind, compound, temperature):
        import requests

        api_key = os.environ.get(self.api_key_env, "")
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
        }
        last_err: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = requests.post(
                    f"{self.base_url}/chat/completions",
                    json=payload, headers=headers, timeout=self.timeout,
                )
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except Exception as exc:  # noqa: BLE001 - any transport hiccup retries
                last_err = exc
                if attempt < self.retries - 1:
                    time.sleep(self.backoff * (2 ** attempt))
        raise TransportError(
            f"{self.name}: chat completion failed after {self.retries} attempts: {last_err}"
        )


def parse_type_label(response: str) -> str:
    """Case-insensitive label search; both or neither present -> unparseable."""
    low = response.lower()
    has_idiom = "idiomatic" in low
    has_literal = "literal" in low
    if has_idiom == has_literal:
        return UNPARSEABLE
    return IDIOMATIC if has_idiom else LITERAL


def decide_majority(votes: Sequence[str]) -> str:
    """Strict majority of parseable votes; ties (or only one side absent
    entirely) break toward idiomatic, which preserves information downstream."""
    n_idiom = sum(1 for v in votes if v == IDIOMATIC)
    n_literal = sum(1 for v in votes if v == LITERAL)
    if n_idiom + n_literal == 0:
        raise ValidationError("all votes unparseable; no decision possible")
    return LITERAL if n_literal > n_idiom else IDIOMATIC


def classify_compound(sample: Sample, transport: LlmTransport,
                      t: int = DEFAULT_T, seed: int = 0,
                      temperature: float = DEFAULT_CLASSIFY_TEMPERATURE,
                      cache: Optional[ResponseCache] = None) -> TypeVote:
    """Prompt the transport t times and majority-vote the parsed labels."""
    if t < 1:
        raise ValidationError(f"t must be >= 1, got {t}")
    prompt = CLASSIFY_PROMPT.format(compound=sample.compound, sentence=sample.sentence)
    phash = prompt_hash(prompt)
    votes = []
    for i in range(t):
        response = cache.get(transport.name, phash, i) if cache else None
        if response is None:
            response = transport.complete(prompt, "classify", sample.compound, temperature)
            if cache:
                cache.put(transport.name, phash, i, response)
        votes.append(parse_type_label(response))
    decision = decide_majority(votes)
    return TypeVote(compound_id=sample.sample_id, votes=votes, decision=decision, t=t)


def generate_meaning(sample: Sample, transport: LlmTransport,
                     vote: Optional[TypeVote] = None, forced: bool = False,
                     temperature: float = DEFAULT_MEANING_TEMPERATURE,
                     cache: Optional[ResponseCache] = None) -> MeaningRecord:
    """Generate one idiomatic-meaning string for a compound.

    Requires the compound to have been decided idiomatic unless forced.
    """
    if not forced and (vote is None or vote.decision != IDIOMATIC):
        raise ValidationError(
            f"sample {sample.sample_id!r} was not decided idiomatic; "
            "pass forced=True to generate anyway"
        )
    prompt = MEANING_PROMPT.format(compound=sample.compound, sentence=sample.sentence)
    phash = prompt_hash(prompt)
    response = cache.get(transport.name, phash, 0) if cache else None
    if response is None:
        response = transport.complete(prompt, "meaning", sample.compound, temperature)
        if cache:
            cache.put(transport.name, phash, 0, response)
    meaning = response.strip()
    if not meaning:
        raise ValidationError(
            f"empty meaning generated for sample {sample.sample_id!r} by {transport.name}"
        )
    return MeaningRecord(
        compound_id=sample.sample_id, llm_name=transport.name,
        meaning_text=meaning, prompt_hash=phash,
    )


def resolve_query_text(sample: Sample, vote: TypeVote,
                       meaning: Optional[MeaningRecord] = None) -> str:
    """Query text for embedding: the meaning if idiomatic, else the compound."""
    if vote.decision == IDIOMATIC:
        if meaning is None:
            raise ValidationError(
                f"sample {sample.sample_id!r} decided idiomatic but no meaning given"
            )
        return meaning.meaning_text
    return sample.compound


def type_detection_accuracy(votes: Sequence[TypeVote],
                            golds: Sequence[str]) -> float:
    """Fraction of decisions matching gold compound types."""
    if len(votes) != len(golds):
        raise ValidationError(
            f"got {len(votes)} votes but {len(golds)} gold labels"
        )
    if not votes:
        raise ValidationError("no votes to score")
    correct = sum(
        1 for v, g in zip(votes, golds) if v.decision == g.lower()
    )
    return correct / len(votes)
