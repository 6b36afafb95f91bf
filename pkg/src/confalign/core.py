"""Shared record types, the verbalized-confidence text format, and JSONL I/O."""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator, Literal, Optional, Sequence

ParseCause = Literal["missing_confidence", "out_of_range", "missing_answer"]
RecordKind = Literal["preference_pairs", "scored_samples", "qa_items"]


class ParseError(ValueError):
    """Raised when a verbalized answer cannot be parsed; ``cause`` names why."""

    def __init__(self, cause: ParseCause, text: str):
        super().__init__(f"{cause}: {text!r}")
        self.cause = cause
        self.text = text


class RecordError(ValueError):
    """Malformed or inconsistent dataset record."""


def _check_unit(value: float, what: str = "confidence") -> float:
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"{what} must lie in [0, 1], got {value!r}")
    return value


@dataclass(frozen=True)
class ScoredSample:
    prompt_id: str
    prompt_tokens: tuple[int, ...]
    response_tokens: tuple[int, ...]
    confidence: float
    quality: float
    correct: Optional[bool] = None

    def __post_init__(self):
        _check_unit(self.confidence)

    def to_record(self) -> "ScoredRecord":
        if self.correct is None:
            raise RecordError(f"sample {self.prompt_id} has no correctness label")
        return ScoredRecord(
            prompt_id=self.prompt_id,
            response=" ".join(str(t) for t in self.response_tokens),
            confidence=self.confidence,
            quality=self.quality,
            correct=self.correct,
        )


@dataclass(frozen=True)
class PreferencePair:
    prompt_tokens: tuple[int, ...]
    chosen_tokens: tuple[int, ...]
    rejected_tokens: tuple[int, ...]

    def __post_init__(self):
        if tuple(self.chosen_tokens) == tuple(self.rejected_tokens):
            raise ValueError("chosen and rejected responses must differ")


@dataclass(frozen=True)
class VerbalizedOutput:
    answer_text: str
    confidence: float

    def __post_init__(self):
        _check_unit(self.confidence)


# JSONL record schemas. Field order is the on-disk key order.


@dataclass(frozen=True)
class PreferenceRecord:
    prompt: str
    chosen: str
    rejected: str


@dataclass(frozen=True)
class ScoredRecord:
    prompt_id: str
    response: str
    confidence: float
    quality: float
    correct: bool


@dataclass(frozen=True)
class QAItem:
    prompt_id: str
    question: str
    gold_answer: str
    ambiguity: float


RECORD_TYPES: dict[str, type] = {
    "preference_pairs": PreferenceRecord,
    "scored_samples": ScoredRecord,
    "qa_items": QAItem,
}
_KIND_OF = {cls: kind for kind, cls in RECORD_TYPES.items()}


@dataclass(frozen=True)
class DatasetManifest:
    path: Path
    record_kind: RecordKind
    count: Optional[int] = None

    def __post_init__(self):
        if self.record_kind not in RECORD_TYPES:
            raise ValueError(f"unknown record kind {self.record_kind!r}")
        if self.count is not None and self.count < 0:
            raise ValueError("count must be nonnegative")


# ---------------------------------------------------------------------------
# Text format

_ANSWER_RE = re.compile(r"### Answer:[ \t]*([^\n]*)")
_CONF_MARK = "### Confidence:"
_NUMBER_RE = re.compile(r"\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)")


def format_prompt(question: str, answer: str, confidence: float) -> str:
    """Render one question/answer/confidence block, confidence to one decimal."""
    if not (0.0 <= confidence <= 1.0):
        raise ValueError(f"confidence must lie in [0, 1], got {confidence!r}")
    return f"### Question: {question}.\n### Answer: {answer}.\n### Confidence: {confidence:.1f}."


def parse_confidence(text: str) -> VerbalizedOutput:
    """Extract the answer and the first stated confidence from model output.

    Only the first ``### Confidence:`` marker is read.
    """
    answer = _ANSWER_RE.search(text)
    if answer is None:
        raise ParseError("missing_answer", text)
    answer_text = answer.group(1).strip()
    if answer_text.endswith("."):
        answer_text = answer_text[:-1].rstrip()

    at = text.find(_CONF_MARK)
    if at < 0:
        raise ParseError("missing_confidence", text)
    number = _NUMBER_RE.match(text, at + len(_CONF_MARK))
    if number is None:
        raise ParseError("missing_confidence", text)
    value = float(number.group(1))
    if not (0.0 <= value <= 1.0):
        raise ParseError("out_of_range", text)
    return VerbalizedOutput(answer_text, value)


# ---------------------------------------------------------------------------
# JSONL I/O


def _validate(kind: str, obj: object, lineno: int):
    cls = RECORD_TYPES[kind]
    if not isinstance(obj, dict):
        raise RecordError(f"line {lineno}: expected a JSON object")
    names = [f.name for f in fields(cls)]
    if set(obj) != set(names):
        raise RecordError(f"line {lineno}: expected keys {names}, got {sorted(obj)}")
    values = {}
    for f in fields(cls):
        v = obj[f.name]
        if f.type == "str":
            ok = isinstance(v, str)
        elif f.type == "bool":
            ok = isinstance(v, bool)
        else:
            ok = isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)
            v = float(v) if ok else v
        if not ok:
            raise RecordError(f"line {lineno}: field {f.name!r} has wrong type {type(v).__name__}")
        values[f.name] = v
    return cls(**values)


def iter_records(manifest: DatasetManifest) -> Iterator:
    with open(manifest.path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            yield _validate(manifest.record_kind, obj, lineno)


def read_records(manifest: DatasetManifest) -> list:
    records = list(iter_records(manifest))
    if manifest.count is not None and manifest.count != len(records):
        raise RecordError(
            f"{manifest.path}: manifest declares {manifest.count} records, found {len(records)}"
        )
    return records


def record_kind_of(records: Sequence) -> Optional[str]:
    kinds = {_KIND_OF.get(type(r)) for r in records}
    if None in kinds:
        raise RecordError("unsupported record type")
    if len(kinds) > 1:
        raise RecordError(f"mixed record kinds: {sorted(kinds)}")
    return kinds.pop() if kinds else None


def write_records(records: Iterable, path, record_kind: Optional[str] = None) -> DatasetManifest:
    """Write homogeneous records as JSON lines and return the manifest.

    ``record_kind`` is needed only when ``records`` is empty.
    """
    records = list(records)
    kind = record_kind_of(records) or record_kind
    if kind is None:
        raise RecordError("record_kind is required when writing zero records")
    if record_kind is not None and kind != record_kind:
        raise RecordError(f"records are {kind}, not {record_kind}")
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r)) + "\n")
    return DatasetManifest(path, kind, len(records))
