"""Annotated receipt data model and JSONL corpus IO.

A corpus is a list of receipts, each carrying its raw text (newlines
preserved) and per-category lists of ground-truth surface forms. An empty
list means the category has no value on that receipt; the distinguished
"no value" answer is represented as Python ``None`` in memory and as the
literal string ``"None"`` at file and prompt boundaries.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

#: Literal used for the no-value answer at prompt/file boundaries.
NONE_LITERAL = "None"

#: A surface form, or None meaning "no value for this category".
Answer = str | None


class Split(Enum):
    """Corpus partition label."""

    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"


class NECategory(Enum):
    """The six receipt NE categories, in canonical reporting order.

    Each member carries its Japanese label (used in prompts and file
    schemas) and whether the category is numeric (scoring keeps digits
    only for numeric categories).
    """

    SHOPNAME = ("shopname", "店名", False)
    ADDRESS = ("address", "住所", False)
    ITEM1 = ("item1", "品目_1", False)
    TELEPHONE = ("telephone", "電話番号", True)
    DATE = ("date", "日付", True)
    TOTAL = ("total", "合計", True)

    def __init__(self, key: str, japanese_label: str, numeric: bool):
        self.key = key
        self.japanese_label = japanese_label
        self.numeric = numeric

    @classmethod
    def from_label(cls, label: str) -> NECategory:
        """Resolve a category from its Japanese label or English key."""
        for cat in cls:
            if label in (cat.japanese_label, cat.key):
                return cat
        raise KeyError(f"unknown NE category: {label!r}")

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"NECategory.{self.name}"


#: Japanese labels in canonical order, for schema validation.
CATEGORY_LABELS = tuple(cat.japanese_label for cat in NECategory)


class CorpusFormatError(ValueError):
    """Raised when a corpus file violates the JSONL schema."""


def answer_to_text(answer: str | None) -> str:
    """Serialize an answer, mapping None to the "None" literal."""
    return NONE_LITERAL if answer is None else answer


def answer_from_text(text: str) -> str | None:
    """Parse an answer string, mapping the "None" literal back to None."""
    return None if text == NONE_LITERAL else text


@dataclass
class ReceiptRecord:
    """One receipt: id, full text, and ground-truth NEs per category.

    ``truth`` always contains every category key; construction fills
    missing categories with empty lists.
    """

    id: str
    text: str
    truth: dict[NECategory, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.id:
            raise ValueError("receipt id must be non-empty")
        if not self.text:
            raise ValueError(f"receipt {self.id!r}: text must be non-empty")
        self.truth = {cat: list(self.truth.get(cat, [])) for cat in NECategory}


def first_truth(record: ReceiptRecord, cat: NECategory) -> str | None:
    """First ground-truth surface form for a category, or None if absent.

    Training answers use only the first annotated NE of each category;
    the remaining candidates still count as valid at scoring time.
    """
    forms = record.truth[cat]
    return forms[0] if forms else None


@dataclass
class Corpus:
    """An ordered list of receipts under one split label."""

    split: Split
    records: list[ReceiptRecord]

    def __post_init__(self):
        seen: set[str] = set()
        for rec in self.records:
            if rec.id in seen:
                raise CorpusFormatError(f"duplicate receipt id {rec.id!r}")
            seen.add(rec.id)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_id(self, record_id: str) -> ReceiptRecord:
        for rec in self.records:
            if rec.id == record_id:
                return rec
        raise KeyError(record_id)


def _parse_truth(raw: object, line_no: int, record_id: str) -> dict[NECategory, list[str]]:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise CorpusFormatError(f"line {line_no}: 'truth' must be an object")
    truth: dict[NECategory, list[str]] = {}
    for key, forms in raw.items():
        try:
            cat = NECategory.from_label(key)
        except KeyError:
            raise CorpusFormatError(
                f"line {line_no}: unknown category key {key!r}"
            ) from None
        if not isinstance(forms, list) or not all(isinstance(f, str) for f in forms):
            raise CorpusFormatError(
                f"line {line_no}: truth[{key!r}] must be a list of strings"
            )
        if NONE_LITERAL in forms:
            warnings.warn(
                f"receipt {record_id!r}: ground-truth surface form literally "
                f"equal to {NONE_LITERAL!r} in {key!r}; it will be "
                "indistinguishable from the no-value answer at the prompt "
                "boundary",
                stacklevel=3,
            )
        truth[cat] = list(forms)
    return truth


def load_corpus(path: "str | Path", split: Split) -> Corpus:
    """Load a corpus from a JSONL file.

    Each line is an object ``{"id", "text", "truth"}`` where ``truth``
    maps Japanese category labels to lists of surface forms. Categories
    absent from a line are normalized to empty lists; a wholly missing
    ``truth`` key means no annotations (useful for raw OCR text files).
    Text is taken verbatim, with no Unicode normalization.
    """
    path = Path(path)
    records: list[ReceiptRecord] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"line {line_no}: malformed JSON: {exc}") from None
            if not isinstance(obj, dict):
                raise CorpusFormatError(f"line {line_no}: expected an object")
            for field_name in ("id", "text"):
                if field_name not in obj:
                    raise CorpusFormatError(
                        f"line {line_no}: missing required field {field_name!r}"
                    )
                if not isinstance(obj[field_name], str):
                    raise CorpusFormatError(
                        f"line {line_no}: field {field_name!r} must be a string"
                    )
            record_id = obj["id"]
            if record_id in seen:
                raise CorpusFormatError(f"line {line_no}: duplicate receipt id {record_id!r}")
            seen.add(record_id)
            truth = _parse_truth(obj.get("truth"), line_no, record_id)
            try:
                records.append(ReceiptRecord(id=record_id, text=obj["text"], truth=truth))
            except ValueError as exc:
                raise CorpusFormatError(f"line {line_no}: {exc}") from None
    return Corpus(split=split, records=records)


def record_to_json(record: ReceiptRecord) -> dict:
    return {
        "id": record.id,
        "text": record.text,
        "truth": {cat.japanese_label: record.truth[cat] for cat in NECategory},
    }


def save_corpus(corpus: Corpus, path: "str | Path") -> None:
    """Write a corpus back to JSONL; reloading yields an equal corpus."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for rec in corpus.records:
            fh.write(json.dumps(record_to_json(rec), ensure_ascii=False) + "\n")
