"""Character confusion model: estimation from parallel text and corruption.

The confusion matrix is a unigram substitution channel estimated from
(clean, OCR) text pairs by minimum-edit-distance alignment. Corruption is
the reverse direction: seeded, per-character随substitution used to build
the synthetic "ocr1"/"ocr10" training variants. Everything is
deterministic given the inputs and a seed; per-sample seeds are derived
by a stable hash so generation order never matters.
"""

from __future__ import annotations

import hashlib
import json
import random
import warnings
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .corpus import Corpus, NECategory, ReceiptRecord, Split, answer_from_text, answer_to_text, first_truth

_PROB_TOLERANCE = 1e-9


@dataclass
class ConfusionMatrix:
    """Per-character substitution model.

    entries maps a source character to (replacement, probability) pairs;
    the per-source probabilities sum to the total substitution
    probability of that character. Alignment insertion/deletion counts
    and the raw counts behind the probabilities ride along for
    re-estimation but do not affect equality.
    """

    entries: dict[str, list[tuple[str, float]]]
    counts: dict[tuple[str, str], int] | None = field(default=None, compare=False)
    source_totals: dict[str, int] | None = field(default=None, compare=False)
    insertions: int = field(default=0, compare=False)
    deletions: int = field(default=0, compare=False)

    def __post_init__(self):
        for source, pairs in self.entries.items():
            if len(source) != 1:
                raise ValueError(f"source must be a single character, got {source!r}")
            seen = set()
            total = 0.0
            for repl, prob in pairs:
                if len(repl) != 1:
                    raise ValueError(f"replacement must be a single character, got {repl!r}")
                if repl == source:
                    raise ValueError(f"self-substitution {source!r} -> {repl!r}")
                if repl in seen:
                    raise ValueError(f"duplicate pair {source!r} -> {repl!r}")
                seen.add(repl)
                if not 0.0 < prob <= 1.0:
                    raise ValueError(
                        f"probability for {source!r} -> {repl!r} out of (0, 1]: {prob}"
                    )
                total += prob
            if total > 1.0 + _PROB_TOLERANCE:
                raise ValueError(
                    f"substitution probabilities for {source!r} sum to {total} > 1"
                )

    def p_sub(self, source: str) -> float:
        """Total probability that ``source`` gets substituted."""
        return sum(p for _, p in self.entries.get(source, ()))

    def pair_count(self) -> int:
        return sum(len(pairs) for pairs in self.entries.values())

    def sources(self) -> set[str]:
        return set(self.entries)


def _codepoints(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32)


def _align_pair(truth: str, ocr: str):
    """Minimum-edit-distance alignment with unit costs.

    Returns (substitutions, insertions, deletions) where substitutions
    is the list of aligned (truth_char, ocr_char) pairs with differing
    characters. Ties in the backtrace prefer the diagonal, i.e. a
    substitution over an insertion+deletion pair.
    """
    n, m = len(truth), len(ocr)
    if m == 0:
        return [], 0, n
    if n == 0:
        return [], m, 0
    a = _codepoints(truth)
    b = _codepoints(ocr)
    cols = np.arange(m + 1, dtype=np.int32)
    dist = np.empty((n + 1, m + 1), dtype=np.int32)
    dist[0] = cols
    row = np.empty(m + 1, dtype=np.int32)
    for i in range(1, n + 1):
        # Vertical/diagonal candidates, then propagate insertions left to
        # right: dist[i][j] = j + min_{k<=j}(row[k] - k).
        row[0] = i
        np.minimum(dist[i - 1, 1:] + 1, dist[i - 1, :-1] + (b != a[i - 1]), out=row[1:])
        np.subtract(row, cols, out=row)
        np.minimum.accumulate(row, out=row)
        np.add(row, cols, out=dist[i])
    substitutions: list[tuple[str, str]] = []
    insertions = deletions = 0
    i, j = n, m
    while i > 0 and j > 0:
        cost = 0 if truth[i - 1] == ocr[j - 1] else 1
        if dist[i, j] == dist[i - 1, j - 1] + cost:
            if cost:
                substitutions.append((truth[i - 1], ocr[j - 1]))
            i -= 1
            j -= 1
        elif dist[i, j] == dist[i - 1, j] + 1:
            deletions += 1
            i -= 1
        else:
            insertions += 1
            j -= 1
    deletions += i
    insertions += j
    substitutions.reverse()
    return substitutions, insertions, deletions


def estimate_confusion_matrix(pairs: list[tuple[str, str]]) -> ConfusionMatrix:
    """Estimate the substitution channel from (clean, OCR) text pairs.

    Each pair is aligned by minimum edit distance; every aligned
    substitution a->b is counted, and P(a->b) = count(a->b) divided by
    the number of occurrences of a across all clean texts. Insertions
    and deletions are tallied but excluded from the matrix.
    """
    if not pairs:
        raise ValueError("cannot estimate a confusion matrix from zero text pairs")
    sub_counts: Counter[tuple[str, str]] = Counter()
    source_totals: Counter[str] = Counter()
    insertions = deletions = 0
    for idx, (truth_text, ocr_text) in enumerate(pairs):
        if not truth_text:
            raise ValueError(f"pair {idx}: clean text must be non-empty")
        source_totals.update(truth_text)
        subs, ins, dels = _align_pair(truth_text, ocr_text)
        sub_counts.update(subs)
        insertions += ins
        deletions += dels
    entries: dict[str, list[tuple[str, float]]] = {}
    for (source, repl), count in sorted(sub_counts.items()):
        entries.setdefault(source, []).append((repl, count / source_totals[source]))
    return ConfusionMatrix(
        entries=entries,
        counts=dict(sub_counts),
        source_totals=dict(source_totals),
        insertions=insertions,
        deletions=deletions,
    )


def derive_seed(base_seed: int, record_id: str, repeat: int, label: str = "") -> int:
    """Stable 64-bit seed for one (record, repeat) sample.

    A keyed hash rather than arithmetic, so sample seeds are independent
    of record order and safe to compute in parallel.
    """
    payload = f"{base_seed}\x1f{record_id}\x1f{repeat}\x1f{label}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")


def corrupt_text(text: str, matrix: ConfusionMatrix, seed: int) -> str:
    """Apply the substitution channel to a text, deterministically.

    Each character is independently replaced with its per-source
    conditional distribution (one uniform draw per matrix character);
    characters outside the matrix are kept. Output length always equals
    input length.
    """
    rng = random.Random(seed)
    out: list[str] = []
    entries = matrix.entries
    for ch in text:
        pairs = entries.get(ch)
        if not pairs:
            out.append(ch)
            continue
        u = rng.random()
        acc = 0.0
        chosen = ch
        for repl, prob in pairs:
            acc += prob
            if u < acc:
                chosen = repl
                break
        out.append(chosen)
    return "".join(out)


def insert_newline_noise(text: str, rate: float, seed: int) -> str:
    """Extension hook: randomly insert newline characters after positions.

    Disabled by default everywhere (rate 0.0). Note this changes text
    length, unlike the substitution channel.
    """
    if rate <= 0.0:
        return text
    rng = random.Random(seed)
    out: list[str] = []
    for ch in text:
        out.append(ch)
        if rng.random() < rate:
            out.append("\n")
    return "".join(out)


class Variant(Enum):
    """Training-data corruption variant."""

    TRUTH = "truth"
    OCR1 = "ocr1"
    OCR10 = "ocr10"


@dataclass(frozen=True)
class CorruptionSpec:
    """How to derive a training variant: which channel, seed, repeats."""

    variant: Variant
    base_seed: int = 0
    newline_rate: float = 0.0  # extension hook, off by default

    def __post_init__(self):
        if self.base_seed < 0:
            raise ValueError("base_seed must be unsigned")
        if not 0.0 <= self.newline_rate < 1.0:
            raise ValueError("newline_rate must be in [0, 1)")

    @property
    def repeats(self) -> int:
        return 10 if self.variant is Variant.OCR10 else 1


@dataclass(frozen=True)
class VariantSample:
    """One generated training text with its (clean) per-category answers."""

    record_id: str
    repeat: int
    text: str
    answers: dict[NECategory, str | None]

    def __post_init__(self):
        object.__setattr__(self, "answers", dict(self.answers))


def generate_training_variant(
    corpus: Corpus, matrix: ConfusionMatrix, spec: CorruptionSpec
) -> list[VariantSample]:
    """Generate the corrupted (or clean) training samples for a corpus.

    Answers always come from the uncorrupted record: the target the
    model learns is the correct surface form regardless of input noise.
    Output is sorted by (record id, repeat index) and is reproducible
    from base_seed alone.
    """
    if corpus.split is not Split.TRAIN:
        raise ValueError(f"training variants require the train split, got {corpus.split.value}")
    if spec.variant is not Variant.TRUTH and matrix.pair_count() == 0:
        warnings.warn(
            "confusion matrix is empty: the generated variant degenerates to "
            "the clean texts",
            stacklevel=2,
        )
    samples: list[VariantSample] = []
    for record in sorted(corpus.records, key=lambda r: r.id):
        answers = {cat: first_truth(record, cat) for cat in NECategory}
        for repeat in range(spec.repeats):
            if spec.variant is Variant.TRUTH:
                text = record.text
            else:
                text = corrupt_text(
                    record.text, matrix, derive_seed(spec.base_seed, record.id, repeat)
                )
                if spec.newline_rate > 0.0:
                    text = insert_newline_noise(
                        text,
                        spec.newline_rate,
                        derive_seed(spec.base_seed, record.id, repeat, label="newline"),
                    )
            samples.append(
                VariantSample(record_id=record.id, repeat=repeat, text=text, answers=answers)
            )
    return samples


# --- file formats -------------------------------------------------------------

_TSV_ESCAPES = {"\\": "\\\\", "\t": "\\t", "\n": "\\n", "\r": "\\r"}
_TSV_UNESCAPES = {"\\\\": "\\", "\\t": "\t", "\\n": "\n", "\\r": "\r"}


def _escape_char(ch: str) -> str:
    return _TSV_ESCAPES.get(ch, ch)


def _unescape_char(text: str) -> str:
    return _TSV_UNESCAPES.get(text, text)


def save_confusion_matrix(
    matrix: ConfusionMatrix,
    path: str | Path,
    *,
    counts_sidecar: str | Path | None = None,
) -> None:
    """Write the matrix as TSV (source, replacement, probability).

    Control characters are backslash-escaped so newline confusions
    survive the row-oriented format. The optional sidecar keeps the raw
    counts for re-estimation.
    """
    lines = ["source_char\treplacement_char\tprobability"]
    for source in sorted(matrix.entries):
        for repl, prob in matrix.entries[source]:
            lines.append(f"{_escape_char(source)}\t{_escape_char(repl)}\t{prob!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    if counts_sidecar is not None:
        side = ["kind\tsource_char\treplacement_char\tcount"]
        for (source, repl), count in sorted((matrix.counts or {}).items()):
            side.append(f"substitution\t{_escape_char(source)}\t{_escape_char(repl)}\t{count}")
        for source, total in sorted((matrix.source_totals or {}).items()):
            side.append(f"source_total\t{_escape_char(source)}\t\t{total}")
        side.append(f"insertions\t\t\t{matrix.insertions}")
        side.append(f"deletions\t\t\t{matrix.deletions}")
        Path(counts_sidecar).write_text("\n".join(side) + "\n", encoding="utf-8")


def load_confusion_matrix(path: str | Path) -> ConfusionMatrix:
    entries: dict[str, list[tuple[str, float]]] = {}
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for line_no, line in enumerate(lines, start=1):
        if line_no == 1 and line.startswith("source_char"):
            continue
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise ValueError(f"{path}: line {line_no}: expected 3 tab-separated fields")
        source = _unescape_char(fields[0])
        repl = _unescape_char(fields[1])
        entries.setdefault(source, []).append((repl, float(fields[2])))
    return ConfusionMatrix(entries=entries)


def write_variant(samples: list[VariantSample], path: str | Path) -> None:
    """Write generated samples to JSONL with "None"-literal answers."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in samples:
            obj = {
                "id": s.record_id,
                "repeat": s.repeat,
                "text": s.text,
                "answers": {
                    cat.japanese_label: answer_to_text(s.answers[cat]) for cat in NECategory
                },
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


def read_variant(path: str | Path) -> list[VariantSample]:
    samples = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            answers = {
                NECategory.from_label(label): answer_from_text(text)
                for label, text in obj["answers"].items()
            }
            for cat in NECategory:
                answers.setdefault(cat, None)
            samples.append(
                VariantSample(
                    record_id=obj["id"],
                    repeat=obj.get("repeat", 0),
                    text=obj["text"],
                    answers=answers,
                )
            )
    return samples


def variant_to_corpus(samples: list[VariantSample], split: Split) -> Corpus:
    """View generated samples as a corpus (e.g. to extract from noisy text).

    Repeat indexes above zero get an "id#repeat" suffix to keep ids
    unique; answers become single-candidate truth lists.
    """
    records = []
    for s in samples:
        rid = s.record_id if s.repeat == 0 else f"{s.record_id}#{s.repeat}"
        truth = {
            cat: [ans] if ans is not None else [] for cat, ans in s.answers.items()
        }
        records.append(ReceiptRecord(id=rid, text=s.text, truth=truth))
    return Corpus(split=split, records=records)
