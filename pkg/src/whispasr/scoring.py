"""Edit-distance error rates (PER / CER) and relative-reduction arithmetic."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence


@dataclass(frozen=True)
class EditCounts:
    substitutions: int
    insertions: int
    deletions: int

    @property
    def total(self) -> int:
        return self.substitutions + self.insertions + self.deletions


def edit_distance(ref: Sequence, hyp: Sequence) -> EditCounts:
    """Unit-cost Levenshtein alignment of ``hyp`` against ``ref``.

    The breakdown comes from one optimal backtrace that prefers a
    substitution (or match) over a deletion over an insertion.
    """
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        d[i][0] = i
    for j in range(1, m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        ri = ref[i - 1]
        row, prev = d[i], d[i - 1]
        for j in range(1, m + 1):
            row[j] = min(prev[j - 1] + (ri != hyp[j - 1]), prev[j] + 1, row[j - 1] + 1)
    s = ins = dels = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and d[i][j] == d[i - 1][j] + 1:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditCounts(int(s), ins, dels)


@dataclass
class ScoreRow:
    utt_id: str
    ref_len: int
    edits: EditCounts


@dataclass
class ScoreReport:
    rows: list[ScoreRow]
    metadata: dict = field(default_factory=dict)

    @property
    def error_rate(self) -> float:
        return error_rate(self.rows)


def error_rate(rows: Sequence[ScoreRow]) -> float:
    """Corpus-level rate: 100 * total edits / total reference length."""
    ref_total = sum(r.ref_len for r in rows)
    if ref_total <= 0:
        raise ValueError("total reference length is zero")
    return 100.0 * sum(r.edits.total for r in rows) / ref_total


def relative_reduction(baseline_pct: float, new_pct: float) -> float:
    if baseline_pct <= 0:
        raise ValueError("baseline error rate must be positive")
    return 100.0 * (baseline_pct - new_pct) / baseline_pct


def score_pairs(pairs, metadata=None) -> ScoreReport:
    """pairs: iterable of (utt_id, ref_tokens, hyp_tokens)."""
    rows = [ScoreRow(u, len(r), edit_distance(r, h)) for u, r, h in pairs]
    return ScoreReport(rows, dict(metadata or {}))


def write_report_csv(report: ScoreReport, path) -> Path:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "ref_len", "sub", "ins", "del", "err"])
        for r in report.rows:
            e = r.edits
            w.writerow([r.utt_id, r.ref_len, e.substitutions, e.insertions, e.deletions, e.total])
        tot = [sum(getattr(r.edits, k) for r in report.rows)
               for k in ("substitutions", "insertions", "deletions")]
        w.writerow([f"TOTAL ({report.error_rate:.2f}%)", sum(r.ref_len for r in report.rows),
                    *tot, sum(tot)])
    return Path(path)


def format_table(report: ScoreReport) -> str:
    lines = [f"{'id':<24}{'ref':>6}{'sub':>6}{'ins':>6}{'del':>6}{'err':>6}"]
    for r in report.rows:
        e = r.edits
        lines.append(f"{r.utt_id:<24}{r.ref_len:>6}{e.substitutions:>6}{e.insertions:>6}"
                     f"{e.deletions:>6}{e.total:>6}")
    for k, v in report.metadata.items():
        lines.append(f"# {k}: {v}")
    lines.append(f"error rate: {report.error_rate:.2f}%")
    return "\n".join(lines)
