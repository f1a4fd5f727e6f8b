"""Top-k accuracy: micro (per sample), macro (per class) and head/tail macro breakdowns."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

REPORT_KEYS = (
    "micro_top1",
    "micro_top3",
    "macro_top1",
    "macro_top3",
    "head_macro_top1",
    "head_macro_top3",
    "tail_macro_top1",
    "tail_macro_top3",
)


@dataclass(frozen=True)
class HeadTailSplit:
    threshold: int
    head_classes: frozenset
    tail_classes: frozenset

    def __contains__(self, c) -> bool:
        return c in self.head_classes or c in self.tail_classes


def head_tail_split(train_counts, threshold: int) -> HeadTailSplit:
    """Class ``c`` is head iff its training count exceeds ``threshold``.

    ``train_counts`` is a sequence indexed by class or a ``{class: count}`` mapping.
    """
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    items = train_counts.items() if isinstance(train_counts, Mapping) else enumerate(train_counts)
    head, tail = set(), set()
    for c, n in items:
        (head if n > threshold else tail).add(c)
    return HeadTailSplit(threshold, frozenset(head), frozenset(tail))


@dataclass
class EvalReport:
    micro_top1: float
    micro_top3: float
    macro_top1: float
    macro_top3: float
    head_macro_top1: float
    head_macro_top3: float
    tail_macro_top1: float
    tail_macro_top3: float
    num_head: int = 0
    num_tail: int = 0

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in REPORT_KEYS}


def topk_hit(ranked_classes: Sequence[int], label: int, k: int) -> bool:
    if k < 1:
        raise ValueError("k must be at least 1")
    return label in list(ranked_classes[:k])


def _macro(acc: dict, classes) -> float:
    vals = [acc[c] for c in sorted(classes) if c in acc]
    return 100.0 * float(np.mean(vals)) if vals else 0.0


def evaluate_rankings(rankings: np.ndarray, labels: np.ndarray, split: HeadTailSplit) -> EvalReport:
    """Score precomputed rankings (N, >=3) against labels."""
    rankings = np.asarray(rankings)
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) == 0:
        raise ValueError("empty test set")
    missing = sorted({int(c) for c in labels} - set(split.head_classes) - set(split.tail_classes))
    if missing:
        raise ValueError(f"test class {missing[0]} is absent from the head/tail split")
    hit1 = rankings[:, 0] == labels
    hit3 = np.any(rankings[:, :3] == labels[:, None], axis=1)
    acc1, acc3 = {}, {}
    for c in np.unique(labels):
        sel = labels == c
        acc1[int(c)] = hit1[sel].mean()
        acc3[int(c)] = hit3[sel].mean()
    present = set(acc1)
    head = present & split.head_classes
    tail = present & split.tail_classes
    return EvalReport(
        micro_top1=100.0 * hit1.mean(),
        micro_top3=100.0 * hit3.mean(),
        macro_top1=_macro(acc1, present),
        macro_top3=_macro(acc3, present),
        head_macro_top1=_macro(acc1, head),
        head_macro_top3=_macro(acc3, head),
        tail_macro_top1=_macro(acc1, tail),
        tail_macro_top3=_macro(acc3, tail),
        num_head=len(head),
        num_tail=len(tail),
    )


def evaluate(model_infer: Callable, test_features, test_labels, split: HeadTailSplit) -> EvalReport:
    """Run the visual-only ranking function on the test features and score it.

    ``model_infer(features)`` maps an (N, D) array to per-row class rankings with at
    least three entries (for example ``CoTrainModel.topk(X, 3)``).
    """
    X = np.asarray(test_features, dtype=np.float64)
    return evaluate_rankings(np.asarray(model_infer(X)), np.asarray(test_labels), split)


def format_pair(top1: float, top3: float) -> str:
    """Table-style cell: ``"62.68 (79.02)"``."""
    return f"{top1:.2f} ({top3:.2f})"


def render_report(report: EvalReport, header: Sequence[str] = ()) -> str:
    """Stable ``key=value`` lines followed by a small human-readable table."""
    lines = list(header)
    lines += [f"{k}={getattr(report, k):.4f}" for k in REPORT_KEYS]
    lines.append(f"num_head_classes={report.num_head}")
    lines.append(f"num_tail_classes={report.num_tail}")
    lines.append("")
    lines.append(f"{'':8}{'top1 (top3)':>18}")
    lines.append(f"{'overall':8}{format_pair(report.micro_top1, report.micro_top3):>18}")
    lines.append(f"{'macro':8}{format_pair(report.macro_top1, report.macro_top3):>18}")
    lines.append(f"{'head':8}{format_pair(report.head_macro_top1, report.head_macro_top3):>18}")
    lines.append(f"{'tail':8}{format_pair(report.tail_macro_top1, report.tail_macro_top3):>18}")
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        key, sep, value = line.partition("=")
        if sep and key in REPORT_KEYS:
            out[key] = float(value)
    return out


@dataclass(frozen=True)
class UvStats:
    trading_uv: int
    visiting_uv: int


def uv_conversion_rate(stats: UvStats) -> float:
    """Trading unique visitors over visiting unique visitors."""
    if stats.visiting_uv <= 0:
        raise ValueError("visiting_uv must be positive")
    if not 0 <= stats.trading_uv <= stats.visiting_uv:
        raise ValueError("trading_uv must lie in [0, visiting_uv]")
    return stats.trading_uv / stats.visiting_uv


def relative_gain(old: float, new: float) -> float:
    if old == 0:
        raise ValueError("relative gain undefined for a zero baseline")
    return (new - old) / old

