"""Preference data for the knowledge-augmentation stage, and the DPO loss."""

from __future__ import annotations

import itertools
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .gateway import GREEDY, ChatRequest, DecodingParams, Gateway, GatewayError
from .templates import get_template, render

log = logging.getLogger(__name__)

KA_MAX_TOKENS = 1024

# appended to the judge prompt on the single re-ask, so the retry is a distinct request
REASK_SUFFIX = "\n\nYour previous reply could not be parsed. Reply with the JSON object only."

DEFAULT_GRID: tuple[DecodingParams, ...] = tuple(
    DecodingParams(t, p, KA_MAX_TOKENS)
    for t, p in [(0.0, 1.0), (0.3, 0.95), (0.5, 0.9), (0.7, 0.9), (0.9, 0.8), (1.0, 0.7)]
)


def dpo_loss(
    logp_chosen_policy: float,
    logp_chosen_ref: float,
    logp_rejected_policy: float,
    logp_rejected_ref: float,
    beta: float = 0.1,
) -> float:
    """``-log sigmoid(beta * (chosen log-ratio - rejected log-ratio))`` for one pair."""
    values = (logp_chosen_policy, logp_chosen_ref, logp_rejected_policy, logp_rejected_ref, beta)
    if not all(math.isfinite(v) for v in values):
        raise ValueError("dpo_loss inputs must be finite")
    if beta <= 0:
        raise ValueError("beta must be > 0")
    z = beta * ((logp_chosen_policy - logp_chosen_ref) - (logp_rejected_policy - logp_rejected_ref))
    # softplus(-z), split by sign so exp never overflows
    if z >= 0:
        return math.log1p(math.exp(-z))
    return -z + math.log1p(math.exp(z))


@dataclass(frozen=True)
class KAInput:
    """One knowledge-augmentation input: question, passage note and facts summary."""

    id: str
    question: str
    passage: str
    facts: str
    round: int = 1

    def __post_init__(self) -> None:
        if self.round not in (1, 2):
            raise ValueError(f"round must be 1 or 2, got {self.round}")

    def ka_bindings(self) -> dict[str, str]:
        return {"question": self.question, "passage": self.passage, "triples_summary": self.facts}

    def prompt(self) -> str:
        return render(get_template("ka"), self.ka_bindings())


@dataclass
class Candidate:
    id: int
    params: DecodingParams
    text: str | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.text is not None


@dataclass
class CandidateSet:
    x: KAInput
    candidates: list[Candidate]

    @property
    def successes(self) -> list[Candidate]:
        return [c for c in self.candidates if c.ok]

    @property
    def usable(self) -> bool:
        return len(self.successes) >= 2


@dataclass(frozen=True)
class Verdict:
    best_id: int
    worst_id: int
    raw: str


@dataclass(frozen=True)
class Ambiguous:
    reason: str
    raw: str = ""


@dataclass
class PreferenceExample:
    prompt: str
    chosen: str
    rejected: str
    round: int
    verdict_raw: str

    def to_json(self) -> str:
        return json.dumps(
            {"prompt": self.prompt, "chosen": self.chosen, "rejected": self.rejected,
             "round": self.round, "verdict_raw": self.verdict_raw},
            ensure_ascii=False,
        )


def sample_candidates(x: KAInput, grid: Sequence[DecodingParams], gateway: Gateway) -> CandidateSet:
    cands = []
    for i, params in enumerate(grid, 1):
        c = Candidate(i, params)
        try:
            c.text = gateway.complete("ka", x.ka_bindings(), params).text
        except GatewayError as exc:
            c.error = str(exc)
        cands.append(c)
    return CandidateSet(x, cands)


def format_outputs(cands: Sequence[Candidate]) -> str:
    return "\n".join(json.dumps({"_id": c.id, "output": c.text}, ensure_ascii=False) for c in cands)


def parse_verdict(reply: str) -> tuple[int, int] | None:
    """First JSON object in ``reply`` carrying integer ``best_id`` and ``worst_id``."""
    decoder = json.JSONDecoder()
    pos = reply.find("{")
    while pos != -1:
        try:
            obj, _ = decoder.raw_decode(reply, pos)
        except json.JSONDecodeError:
            obj = None
        if isinstance(obj, dict) and "best_id" in obj and "worst_id" in obj:
            try:
                return int(obj["best_id"]), int(obj["worst_id"])
            except (TypeError, ValueError):
                return None
        pos = reply.find("{", pos + 1)
    return None


def distinct_candidates(cset: CandidateSet) -> list[Candidate]:
    """Successful candidates with duplicate texts (after trimming) removed; first id wins."""
    seen: set[str] = set()
    out = []
    for c in cset.successes:
        key = c.text.strip()
        if key not in seen:
            seen.add(key)
            out.append(c)
    return out


def judge(cset: CandidateSet, gateway: Gateway) -> Verdict | Ambiguous:
    shown = distinct_candidates(cset)
    if len(shown) < 2:
        return Ambiguous("fewer than two distinct candidates")
    bindings = {
        "question": cset.x.question,
        "passage": cset.x.passage,
        "facts": cset.x.facts,
        "output": format_outputs(shown),
    }
    prompt = render(get_template("dpo_judge"), bindings)
    parsed = None
    for suffix in ("", REASK_SUFFIX):  # one re-ask on an unparseable reply
        req = ChatRequest(gateway.model_for("dpo_judge"), prompt + suffix, GREEDY, "dpo_judge")
        raw = gateway.chat(req).text
        parsed = parse_verdict(raw)
        if parsed is not None:
            break
    if parsed is None:
        return Ambiguous("unparseable judge reply", raw)
    best, worst = parsed
    ids = {c.id for c in shown}
    if best not in ids or worst not in ids:
        return Ambiguous("judge named an unknown candidate", raw)
    if best == worst:
        return Ambiguous("judge found no quality difference", raw)
    return Verdict(best, worst, raw)


def preference_from(cset: CandidateSet, verdict: Verdict) -> PreferenceExample | None:
    by_id = {c.id: c.text for c in cset.candidates}
    chosen, rejected = by_id[verdict.best_id], by_id[verdict.worst_id]
    if chosen.strip() == rejected.strip():
        return None
    return PreferenceExample(cset.x.prompt(), chosen, rejected, cset.x.round, verdict.raw)


@dataclass
class BuildResult:
    examples: list[PreferenceExample] = field(default_factory=list)
    consumed: int = 0
    discarded: int = 0
    ambiguous: int = 0

    @property
    def status(self) -> str:
        return "ok" if self.examples else "no data"


def _process(x: KAInput, grid: Sequence[DecodingParams], gateway: Gateway) -> PreferenceExample | Ambiguous | None:
    cset = sample_candidates(x, grid, gateway)
    if not cset.usable:
        return None
    verdict = judge(cset, gateway)
    if isinstance(verdict, Ambiguous):
        return verdict
    return preference_from(cset, verdict) or Ambiguous("chosen and rejected texts are equal")


def _cursor_path(out_path: Path) -> Path:
    return out_path.with_name(out_path.name + ".cursor")


def _write_cursor(path: Path, consumed: int, emitted: int, offset: int) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps({"consumed": consumed, "emitted": emitted, "offset": offset}), encoding="utf-8")
    os.replace(tmp, path)


def _chunks(it: Iterator[KAInput], size: int) -> Iterator[list[KAInput]]:
    while chunk := list(itertools.islice(it, size)):
        yield chunk


def build_dataset(
    inputs: Iterable[KAInput],
    grid: Sequence[DecodingParams],
    gateway: Gateway,
    target_count: int,
    out_path: str | Path | None = None,
    resume: bool = False,
    workers: int = 1,
) -> BuildResult:
    """Sample, judge and filter until ``target_count`` pairs or the inputs run out.

    With ``out_path`` every accepted pair is appended as JSONL and a
    ``.cursor`` sidecar records how many inputs were consumed; ``resume``
    continues from it and produces the same file as an uninterrupted run.
    """
    result = BuildResult()
    fh = cursor = None
    it = iter(inputs)
    if out_path is not None:
        out_path = Path(out_path)
        cursor = _cursor_path(out_path)
        if resume and cursor.exists():
            state = json.loads(cursor.read_text(encoding="utf-8"))
            with open(out_path, "r+b") as f:
                f.truncate(state["offset"])
            with open(out_path, encoding="utf-8") as f:
                for line in f:
                    obj = json.loads(line)
                    result.examples.append(PreferenceExample(**obj))
            result.consumed = state["consumed"]
            it = itertools.islice(it, result.consumed, None)
        fh = open(out_path, "ab" if resume and cursor.exists() else "wb")
        if not (resume and cursor.exists()):
            _write_cursor(cursor, 0, 0, 0)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        if len(result.examples) >= target_count:
            it = iter(())
        for chunk in _chunks(it, max(1, workers) * 4):
            outcomes = pool.map(lambda x: _process(x, grid, gateway), chunk) if pool else (
                _process(x, grid, gateway) for x in chunk)
            for outcome in outcomes:
                result.consumed += 1
                if outcome is None:
                    result.discarded += 1
                elif isinstance(outcome, Ambiguous):
                    result.ambiguous += 1
                else:
                    result.examples.append(outcome)
                    if fh is not None:
                        fh.write((outcome.to_json() + "\n").encode("utf-8"))
                if fh is not None:
                    fh.flush()
                    os.fsync(fh.fileno())
                    _write_cursor(cursor, result.consumed, len(result.examples), fh.tell())
                if len(result.examples) >= target_count:
                    break
            if len(result.examples) >= target_count:
                break
    finally:
        if pool is not None:
            pool.shutdown()
        if fh is not None:
            fh.close()
    if not result.examples:
        log.warning("no preference pairs produced (%d ambiguous, %d discarded)", result.ambiguous, result.discarded)
    return result


def load_ka_inputs(path: str | Path) -> list[KAInput]:
    """JSONL of ``{id, question, passage, facts, round}`` records."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out.append(KAInput(str(obj["id"]), obj["question"], obj["passage"], obj["facts"],
                                   int(obj.get("round", 1))))
    return out
