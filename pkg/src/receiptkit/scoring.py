"""Answer normalization, TP/FP/FN judging, and weighted F-measure scoring.

Extracted answers and ground-truth candidates are normalized the same way
(whitespace and punctuation removed, full-width ASCII folded to half-width,
numeric categories reduced to digits) and compared by exact string match.
Per-category precision/recall/F_beta roll up into a single equal-weight
F_final used for configuration selection.
"""

from __future__ import annotations

import csv
import io
import json
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .corpus import Corpus, NECategory, Split

# Full-width ASCII block (U+FF01..U+FF5E) maps to ASCII by a fixed offset;
# the full-width currency/sign block (U+FFE0..U+FFE6) needs explicit targets.
# Half-width katakana are deliberately left untouched.
_WIDTH_FOLD = {code: code - 0xFEE0 for code in range(0xFF01, 0xFF5F)}
_WIDTH_FOLD.update(
    {
        0xFFE0: 0x00A2,  # ￠ -> ¢
        0xFFE1: 0x00A3,  # ￡ -> £
        0xFFE2: 0x00AC,  # ￢ -> ¬
        0xFFE3: 0x00AF,  # ￣ -> ¯
        0xFFE4: 0x00A6,  # ￤ -> ¦
        0xFFE5: 0x00A5,  # ￥ -> ¥
        0xFFE6: 0x20A9,  # ￦ -> ₩
    }
)

_CURRENCY_SIGNS = frozenset("¥￥")
_DIGITS = frozenset("0123456789")


class Judgement(Enum):
    TP = "TP"
    FP = "FP"
    FN = "FN"


@dataclass(frozen=True)
class ScoringConfig:
    """Metric parameters.

    beta weighs precision over recall in F_beta (beta < 1 favours
    precision); weights combine the six category scores into F_final.
    strip_currency_signs additionally removes ¥/￥ from non-numeric
    categories before matching (numeric ones drop them anyway).
    """

    beta: float = 0.5
    weights: tuple[float, ...] = (1.0,) * 6
    strip_currency_signs: bool = False

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if len(self.weights) != len(NECategory):
            raise ValueError(f"need {len(NECategory)} weights, got {len(self.weights)}")
        if any(w < 0 for w in self.weights):
            raise ValueError("weights must be non-negative")
        if sum(self.weights) <= 0:
            raise ValueError("weight sum must be positive")


def _is_punctuation(ch: str) -> bool:
    # Unicode P* plus the ideographic symbol/punctuation block (〒, 々, ...).
    return unicodedata.category(ch).startswith("P") or 0x3001 <= ord(ch) <= 0x303F


def normalize(s: str, cat: NECategory, *, strip_currency_signs: bool = False) -> str:
    """Canonicalize a surface form for matching.

    Steps, in order: drop whitespace; drop punctuation; fold full-width
    characters with half-width counterparts to the half-width form; for
    numeric categories keep ASCII digits only.
    """
    kept = []
    for ch in s:
        if ch.isspace() or _is_punctuation(ch):
            continue
        if strip_currency_signs and not cat.numeric and ch in _CURRENCY_SIGNS:
            continue
        kept.append(ch)
    folded = "".join(kept).translate(_WIDTH_FOLD)
    if cat.numeric:
        return "".join(ch for ch in folded if ch in _DIGITS)
    return folded


def judge(
    answer: str | None,
    truth_list: list[str],
    cat: NECategory,
    config: ScoringConfig = ScoringConfig(),
) -> Judgement:
    """Classify one answer against the ground-truth candidates.

    None vs no ground truth is a TP (correctly reported absence); None
    vs existing ground truth is an FN. A string answer is a TP only if
    its normalization exactly matches some candidate's normalization;
    empty-after-normalization answers never match.
    """
    if answer is None:
        return Judgement.TP if not truth_list else Judgement.FN
    norm = normalize(answer, cat, strip_currency_signs=config.strip_currency_signs)
    if not norm:
        return Judgement.FP
    for candidate in truth_list:
        if norm == normalize(candidate, cat, strip_currency_signs=config.strip_currency_signs):
            return Judgement.TP
    return Judgement.FP


@dataclass(frozen=True)
class CategoryScore:
    category: NECategory
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f_beta: float


@dataclass(frozen=True)
class ScoreReport:
    """Per-category scores plus the aggregated F_final for one run."""

    per_category: tuple[CategoryScore, ...]
    f_final: float
    split: Split | None = None
    config_id: str = ""
    iterations: int | None = None

    def score_for(self, cat: NECategory) -> CategoryScore:
        for cs in self.per_category:
            if cs.category is cat:
                return cs
        raise KeyError(cat)


def score_category(
    cat: NECategory,
    judgements: list[Judgement],
    config: ScoringConfig = ScoringConfig(),
) -> CategoryScore:
    """Precision, recall and F_beta from a list of judgements.

    Zero-denominator precision/recall (and the resulting F_beta) are
    defined as 0.0 so the scorer is total.
    """
    counts = Counter(judgements)
    tp, fp, fn = counts[Judgement.TP], counts[Judgement.FP], counts[Judgement.FN]
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    b2 = config.beta**2
    if precision > 0 and recall > 0:
        f_beta = (1 + b2) * precision * recall / (b2 * precision + recall)
    else:
        f_beta = 0.0
    return CategoryScore(cat, tp, fp, fn, precision, recall, f_beta)


def aggregate(
    per_category: list[CategoryScore],
    config: ScoringConfig = ScoringConfig(),
    *,
    split: Split | None = None,
    config_id: str = "",
    iterations: int | None = None,
) -> ScoreReport:
    """Combine the six category scores into F_final (weighted mean)."""
    by_cat = {}
    for cs in per_category:
        if cs.category in by_cat:
            raise ValueError(f"duplicate category score: {cs.category.key}")
        by_cat[cs.category] = cs
    missing = [cat.key for cat in NECategory if cat not in by_cat]
    if missing:
        raise ValueError(f"missing category scores: {', '.join(missing)}")
    ordered = tuple(by_cat[cat] for cat in NECategory)
    total_w = sum(config.weights)
    f_final = sum(w * cs.f_beta for w, cs in zip(config.weights, ordered)) / total_w
    return ScoreReport(
        per_category=ordered,
        f_final=f_final,
        split=split,
        config_id=config_id,
        iterations=iterations,
    )


def select_best_config(reports: list[ScoreReport]) -> str:
    """Pick the config id with the best validation F_final.

    Ties fall to the fewest training iterations (missing iteration
    counts sort last), then to the lexicographically smallest config id.
    """
    if not reports:
        raise ValueError("no reports to select from")
    for rep in reports:
        if rep.split is not Split.VALIDATION:
            raise ValueError(
                f"config {rep.config_id!r}: selection requires validation-split "
                f"reports, got {rep.split.value if rep.split else None!r}"
            )
    best = min(
        reports,
        key=lambda r: (
            -r.f_final,
            r.iterations if r.iterations is not None else math.inf,
            r.config_id,
        ),
    )
    return best.config_id


# --- scoring of prediction tables -------------------------------------------

def judge_predictions(rows, corpus: Corpus, config: ScoringConfig = ScoringConfig()):
    """Judge a prediction table against a corpus, per category.

    Every (receipt, category) pair of the corpus must appear exactly
    once in ``rows``; missing or unknown pairs are an error listing the
    offenders. Returns {category: [Judgement, ...]}.
    """
    by_id = {rec.id: rec for rec in corpus.records}
    seen: set[tuple[str, NECategory]] = set()
    judgements: dict[NECategory, list[Judgement]] = {cat: [] for cat in NECategory}
    for row in rows:
        rec = by_id.get(row.receipt_id)
        if rec is None:
            raise ValueError(f"prediction for unknown receipt {row.receipt_id!r}")
        key = (row.receipt_id, row.category)
        if key in seen:
            raise ValueError(
                f"duplicate prediction for ({row.receipt_id}, {row.category.key})"
            )
        seen.add(key)
        judgements[row.category].append(
            judge(row.answer, rec.truth[row.category], row.category, config)
        )
    missing = [
        f"({rec.id}, {cat.key})"
        for rec in corpus.records
        for cat in NECategory
        if (rec.id, cat) not in seen
    ]
    if missing:
        raise ValueError(f"predictions missing pairs: {', '.join(missing)}")
    return judgements


def score_predictions(
    rows,
    corpus: Corpus,
    config: ScoringConfig = ScoringConfig(),
    *,
    config_id: str = "",
    iterations: int | None = None,
) -> ScoreReport:
    """Full scoring pipeline: judge, score each category, aggregate."""
    judgements = judge_predictions(rows, corpus, config)
    per_cat = [score_category(cat, judgements[cat], config) for cat in NECategory]
    return aggregate(
        per_cat,
        config,
        split=corpus.split,
        config_id=config_id,
        iterations=iterations,
    )


# --- report rendering and persistence ----------------------------------------

def _pct(value: float) -> str:
    return f"{value * 100:.1f}"


def _category_rows(report: ScoreReport) -> list[tuple[str, str, str, str]]:
    rows = []
    for cs in report.per_category:
        label = f"{cs.category.japanese_label} ({cs.category.key})"
        rows.append((label, _pct(cs.precision), _pct(cs.recall), _pct(cs.f_beta)))
    return rows


def render_csv(report: ScoreReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["Category", "Precision", "Recall", "F_beta"])
    for row in _category_rows(report):
        writer.writerow(row)
    writer.writerow(["F_final", "", "", _pct(report.f_final)])
    return buf.getvalue()


def render_markdown(report: ScoreReport) -> str:
    lines = [
        "| Category | Precision | Recall | F_beta |",
        "| --- | ---: | ---: | ---: |",
    ]
    for label, p, r, f in _category_rows(report):
        lines.append(f"| {label} | {p} | {r} | {f} |")
    lines.append(f"| **F_final** | | | **{_pct(report.f_final)}** |")
    return "\n".join(lines) + "\n"


def report_to_json(report: ScoreReport) -> dict:
    return {
        "config_id": report.config_id,
        "split": report.split.value if report.split else None,
        "iterations": report.iterations,
        "f_final": report.f_final,
        "per_category": [
            {
                "category": cs.category.japanese_label,
                "tp": cs.tp,
                "fp": cs.fp,
                "fn": cs.fn,
                "precision": cs.precision,
                "recall": cs.recall,
                "f_beta": cs.f_beta,
            }
            for cs in report.per_category
        ],
    }


def report_from_json(obj: dict) -> ScoreReport:
    per_cat = tuple(
        CategoryScore(
            category=NECategory.from_label(item["category"]),
            tp=item["tp"],
            fp=item["fp"],
            fn=item["fn"],
            precision=item["precision"],
            recall=item["recall"],
            f_beta=item["f_beta"],
        )
        for item in obj["per_category"]
    )
    return ScoreReport(
        per_category=per_cat,
        f_final=obj["f_final"],
        split=Split(obj["split"]) if obj.get("split") else None,
        config_id=obj.get("config_id", ""),
        iterations=obj.get("iterations"),
    )


def save_report(report: ScoreReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report_to_json(report), ensure_ascii=False, indent=2) + "\n",
        encoding="utf-8",
    )


def load_report(path: str | Path) -> ScoreReport:
    return report_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
