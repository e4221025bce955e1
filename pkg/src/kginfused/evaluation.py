"""QA metrics (Acc / F1 / EM / Avg) and dataset loading."""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)
_BINARY = {"yes", "no"}


@dataclass
class QAExample:
    id: str
    question: str
    gold_answers: list[str]
    gold_passage_ids: list[str] | None = None

    def __post_init__(self) -> None:
        if not self.gold_answers:
            raise ValueError(f"example {self.id!r} has no gold answers")


def normalize(text: str) -> str:
    """Lowercase, drop punctuation and English articles, collapse whitespace."""
    text = text.lower()
    text = "".join(ch for ch in text if ch not in _PUNCT)
    text = _ARTICLES.sub(" ", text)
    return " ".join(text.split())


def exact_match(pred: str, golds: Sequence[str]) -> int:
    p = normalize(pred)
    return int(any(p == normalize(g) for g in golds))


def _token_f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    common = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred_tokens)
    recall = common / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def f1(pred: str, golds: Sequence[str]) -> float:
    p = normalize(pred).split()
    return max(_token_f1(p, normalize(g).split()) for g in golds)


def _contains(haystack: list[str], needle: list[str]) -> bool:
    if not needle:
        return True
    n = len(needle)
    return any(haystack[i : i + n] == needle for i in range(len(haystack) - n + 1))


def accuracy(pred: str, golds: Sequence[str]) -> int:
    """1 if some normalized gold appears as a contiguous token run in the prediction.

    Yes/no golds are judged on the prediction's first token only, so
    "no, because yes..." does not count as containing "yes".
    """
    p = normalize(pred).split()
    norm_golds = [normalize(g) for g in golds]
    if all(g in _BINARY for g in norm_golds):
        return int(bool(p) and p[0] in norm_golds)
    return int(any(_contains(p, g.split()) for g in norm_golds))


def retrieval_recall(retrieved_ids: Sequence[str], gold_ids: Sequence[str]) -> float:
    gold = set(gold_ids)
    if not gold:
        raise ValueError("no gold passage ids")
    return len(gold & set(retrieved_ids)) / len(gold)


@dataclass
class ExampleScore:
    id: str
    acc: int
    f1: float
    em: int
    missing: bool = False


@dataclass
class MetricReport:
    acc: float
    f1: float
    em: float
    per_example: list[ExampleScore] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    recall: float | None = None

    @property
    def avg(self) -> float:
        return (self.acc + self.f1 + self.em) / 3

    def row(self) -> str:
        return " & ".join(f"{100 * v:.1f}" for v in (self.acc, self.f1, self.em, self.avg))

    def to_dict(self) -> dict:
        full = {"acc": self.acc, "f1": self.f1, "em": self.em, "avg": self.avg}
        d = {
            "n": len(self.per_example),
            "metrics": {k: round(100 * v, 1) for k, v in full.items()},
            "full_precision": full,
            "missing_ids": self.missing,
            "per_example": [vars(s) for s in self.per_example],
        }
        if self.recall is not None:
            d["retrieval_recall"] = self.recall
        return d


def evaluate(
    batch: Iterable[tuple[str | None, QAExample]],
    retrieved: dict[str, Sequence[str]] | None = None,
) -> MetricReport:
    """Average per-example metrics; a ``None`` prediction scores zero and is flagged."""
    scores: list[ExampleScore] = []
    missing: list[str] = []
    recalls: list[float] = []
    for pred, ex in batch:
        if pred is None:
            missing.append(ex.id)
            scores.append(ExampleScore(ex.id, 0, 0.0, 0, missing=True))
            continue
        scores.append(ExampleScore(ex.id, accuracy(pred, ex.gold_answers), f1(pred, ex.gold_answers),
                                   exact_match(pred, ex.gold_answers)))
        if retrieved is not None and ex.gold_passage_ids and ex.id in retrieved:
            recalls.append(retrieval_recall(retrieved[ex.id], ex.gold_passage_ids))
    if not scores:
        raise ValueError("empty evaluation batch")
    n = len(scores)
    return MetricReport(
        acc=sum(s.acc for s in scores) / n,
        f1=sum(s.f1 for s in scores) / n,
        em=sum(s.em for s in scores) / n,
        per_example=scores,
        missing=missing,
        recall=sum(recalls) / len(recalls) if recalls else None,
    )


def load_dataset(path: str | Path) -> list[QAExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            answers = obj.get("answers", obj.get("answer"))
            if isinstance(answers, str):
                answers = [answers]
            out.append(QAExample(str(obj["id"]), obj["question"], list(answers),
                                 obj.get("gold_passage_ids")))
    return out


def load_predictions(path: str | Path) -> dict[str, str]:
    preds = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                preds[str(obj["id"])] = obj["answer"]
    return preds


def evaluate_files(predictions_path: str | Path, dataset_path: str | Path) -> MetricReport:
    preds = load_predictions(predictions_path)
    return evaluate((preds.get(ex.id), ex) for ex in load_dataset(dataset_path))
