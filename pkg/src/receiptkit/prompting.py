"""Prompt construction and completion parsing for the extraction task.

Prompts are declarative sentences the model completes. A training prompt
embeds the answer and the terminator; the inference prompt stops right
after the response marker and the model is expected to produce
"<answer>です。". Byte-exactness matters: the leading space and the exact
marker strings keep instruction/response matching unambiguous across
tokenizers, so the builders never mutate the receipt text.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .corpus import NECategory, answer_from_text, answer_to_text


class TemplateAmbiguityError(ValueError):
    """Raised when an input would make template markers non-unique."""


@dataclass(frozen=True)
class PromptTemplate:
    """The fixed prompt scaffold; defaults are the standard values."""

    instruction_marker: str = "### Question:"
    response_marker: str = "\n ### は:"
    terminator: str = "です。"
    leading_space: bool = True

    def __post_init__(self):
        if not self.instruction_marker or not self.response_marker:
            raise ValueError("template markers must be non-empty")
        if self.instruction_marker == self.response_marker:
            raise ValueError("instruction and response markers must differ")

    @property
    def is_default(self) -> bool:
        return self == DEFAULT_TEMPLATE

    def digest(self) -> str:
        payload = json.dumps(
            [self.instruction_marker, self.response_marker, self.terminator, self.leading_space],
            ensure_ascii=False,
        )
        return hashlib.blake2b(payload.encode("utf-8"), digest_size=8).hexdigest()


DEFAULT_TEMPLATE = PromptTemplate()


class PromptKind(Enum):
    TRAINING = "training"
    INFERENCE = "inference"


@dataclass(frozen=True)
class PromptSample:
    """A built prompt plus its provenance."""

    receipt_id: str
    category: NECategory
    kind: PromptKind
    text: str
    answer: str | None = None
    repeat: int = 0


@dataclass(frozen=True)
class Completion:
    """A parsed backend output."""

    raw: str
    answer: str | None
    terminated: bool


@dataclass(frozen=True)
class TemplateDiagnostics:
    """Marker occurrence counts for one prompt; both should be exactly 1."""

    instruction_count: int
    response_count: int

    @property
    def ok(self) -> bool:
        return self.instruction_count == 1 and self.response_count == 1


def _check_receipt_text(receipt_text: str, template: PromptTemplate) -> None:
    if not receipt_text:
        raise ValueError("receipt text must be non-empty")
    for name, marker in (
        ("instruction marker", template.instruction_marker),
        ("response marker", template.response_marker),
    ):
        if marker in receipt_text:
            raise TemplateAmbiguityError(
                f"receipt text contains the {name} {marker!r}; "
                "template matching would be ambiguous"
            )


def _prompt_head(receipt_text: str, cat: NECategory, template: PromptTemplate) -> str:
    lead = " " if template.leading_space else ""
    return (
        lead
        + template.instruction_marker
        + " "
        + receipt_text
        + "の"
        + cat.japanese_label
        + template.response_marker
    )


def build_training_prompt(
    receipt_text: str,
    cat: NECategory,
    answer: str | None,
    *,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    receipt_id: str = "",
    repeat: int = 0,
) -> PromptSample:
    """Build a training prompt ending with "<answer>です。".

    A None answer is serialized as the "None" literal. Answers that
    contain the terminator are rejected: they would break the parse
    round trip.
    """
    _check_receipt_text(receipt_text, template)
    answer_text = answer_to_text(answer)
    if template.terminator in answer_text:
        raise TemplateAmbiguityError(
            f"answer {answer_text!r} contains the terminator "
            f"{template.terminator!r}"
        )
    text = _prompt_head(receipt_text, cat, template) + " " + answer_text + template.terminator
    return PromptSample(
        receipt_id=receipt_id,
        category=cat,
        kind=PromptKind.TRAINING,
        text=text,
        answer=answer,
        repeat=repeat,
    )


def build_inference_prompt(
    receipt_text: str,
    cat: NECategory,
    *,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    receipt_id: str = "",
    repeat: int = 0,
) -> PromptSample:
    """Build an inference prompt ending right after the response marker."""
    _check_receipt_text(receipt_text, template)
    return PromptSample(
        receipt_id=receipt_id,
        category=cat,
        kind=PromptKind.INFERENCE,
        text=_prompt_head(receipt_text, cat, template),
        repeat=repeat,
    )


def parse_completion(raw: str, template: PromptTemplate = DEFAULT_TEMPLATE) -> Completion:
    """Extract the answer from a raw completion.

    The answer is everything before the first terminator occurrence,
    whitespace-stripped; anything after is discarded. Without a
    terminator the whole (stripped) output counts as the answer and is
    still scored. The "None" literal maps to the no-value answer.
    """
    idx = raw.find(template.terminator)
    if idx >= 0:
        answer_text = raw[:idx].strip()
        terminated = True
    else:
        answer_text = raw.strip()
        terminated = False
    return Completion(raw=raw, answer=answer_from_text(answer_text), terminated=terminated)


def check_template_integrity(
    sample: PromptSample, template: PromptTemplate = DEFAULT_TEMPLATE
) -> TemplateDiagnostics:
    """Count marker occurrences in a built prompt (diagnostics only)."""
    return TemplateDiagnostics(
        instruction_count=sample.text.count(template.instruction_marker),
        response_count=sample.text.count(template.response_marker),
    )


# --- prompt batch files -------------------------------------------------------

def write_prompt_batch(samples: list[PromptSample], path: str | Path) -> None:
    """Write prompts to JSONL; the "text" field is normative, byte for byte."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in samples:
            obj: dict = {
                "receipt_id": s.receipt_id,
                "category": s.category.japanese_label,
                "kind": s.kind.value,
                "text": s.text,
            }
            if s.kind is PromptKind.TRAINING:
                obj["answer"] = answer_to_text(s.answer)
            if s.repeat:
                obj["repeat"] = s.repeat
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_prompt_batch(path: str | Path) -> list[PromptSample]:
    samples = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            kind = PromptKind(obj["kind"])
            answer = None
            if kind is PromptKind.TRAINING:
                answer = answer_from_text(obj.get("answer", ""))
            samples.append(
                PromptSample(
                    receipt_id=obj["receipt_id"],
                    category=NECategory.from_label(obj["category"]),
                    kind=kind,
                    text=obj["text"],
                    answer=answer,
                    repeat=obj.get("repeat", 0),
                )
            )
    return samples
