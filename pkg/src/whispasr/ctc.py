"""CTC loss, best-path and prefix-beam decoding, and LM rescoring."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .nn import logsumexp

BLANK = 0
NEG_INF = -np.inf


class InfeasibleAlignmentError(ValueError):
    pass


class Vocabulary:
    """Output symbols with the CTC blank at index 0.

    ``tokenizer`` decides how transcripts render as text: ``char`` joins
    symbols with no separator, ``phone`` joins them with spaces.
    """

    def __init__(self, symbols: Sequence[str], tokenizer: str = "char", blank: str = "<b>"):
        symbols = list(symbols)
        if blank in symbols:
            raise ValueError("blank must not appear among the symbols")
        if len(set(symbols)) != len(symbols):
            raise ValueError("vocabulary symbols must be unique")
        if tokenizer not in ("char", "phone"):
            raise ValueError(f"unknown tokenizer {tokenizer!r}")
        if tokenizer == "char" and any(len(s) != 1 for s in symbols):
            raise ValueError("char tokenizer needs single-character symbols")
        self.symbols = [blank] + symbols
        self.tokenizer = tokenizer
        self.index = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def labels(self) -> list[str]:
        return self.symbols[1:]

    def encode(self, transcript: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self.index[s] for s in transcript], dtype=np.int64)
        except KeyError as e:
            raise ValueError(f"symbol {e.args[0]!r} not in vocabulary") from None

    def decode(self, indices) -> list[str]:
        return [self.symbols[i] for i in indices]

    def to_text(self, symbols: Sequence[str]) -> str:
        return ("" if self.tokenizer == "char" else " ").join(symbols)

    def tokenize(self, text: str) -> list[str]:
        return list(text.strip()) if self.tokenizer == "char" else text.split()

    def save(self, path) -> Path:
        Path(path).write_text(json.dumps({"symbols": self.labels, "tokenizer": self.tokenizer}) + "\n")
        return Path(path)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        d = json.loads(Path(path).read_text())
        return cls(d["symbols"], d.get("tokenizer", "char"))


def n_repeats(labels) -> int:
    labels = np.asarray(labels)
    return int(np.sum(labels[1:] == labels[:-1])) if len(labels) > 1 else 0


def is_feasible(n_frames: int, labels) -> bool:
    return n_frames >= len(labels) + n_repeats(labels)


def ctc_loss(log_probs: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Negative log-likelihood of ``labels`` and its gradient wrt ``log_probs``.

    ``log_probs`` is (T, V) with blank in column 0.  The gradient treats each
    entry as a free variable, so it is exact for unnormalized inputs too.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    T, V = lp.shape
    L = len(labels)
    if np.any(labels == BLANK):
        raise ValueError("label sequence contains the blank index")
    if not is_feasible(T, labels):
        raise InfeasibleAlignmentError(
            f"infeasible alignment: {T} frames for {L} labels with {n_repeats(labels)} repeats")
    S = 2 * L + 1
    ext = np.zeros(S, dtype=np.int64)
    ext[1::2] = labels
    # states s may jump from s-2 when s is a label differing from the one two back
    skip = np.zeros(S, dtype=bool)
    if L > 1:
        skip[3::2] = labels[1:] != labels[:-1]
    emit = lp[:, ext]

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    if S > 1:
        alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        a1 = _shift(prev, 1)
        a2 = np.where(skip, _shift(prev, 2), NEG_INF)
        alpha[t] = _lse3(prev, a1, a2) + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = emit[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = emit[T - 1, S - 2]
    skip_next = np.zeros(S, dtype=bool)
    skip_next[: max(S - 2, 0)] = skip[2:]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1]
        b1 = _shift(nxt, -1)
        b2 = np.where(skip_next, _shift(nxt, -2), NEG_INF)
        beta[t] = _lse3(nxt, b1, b2) + emit[t]

    ends = [alpha[T - 1, S - 1]] + ([alpha[T - 1, S - 2]] if S > 1 else [])
    log_like = float(logsumexp(np.array(ends)))
    # alpha * beta double counts the emission at t
    occ = alpha + beta - emit - log_like
    grad = np.zeros((T, V))
    np.add.at(grad, (slice(None), ext), -np.exp(occ))
    return -log_like, grad


def _shift(x: np.ndarray, k: int) -> np.ndarray:
    """``x`` moved ``k`` places right (left if negative); vacated slots hold -inf."""
    out = np.full_like(x, NEG_INF)
    if abs(k) < len(x):
        if k >= 0:
            out[k:] = x[: len(x) - k]
        else:
            out[:k] = x[-k:]
    return out


def _lse3(a, b, c):
    m = np.maximum(np.maximum(a, b), c)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = safe + np.log(np.exp(a - safe) + np.exp(b - safe) + np.exp(c - safe))
    return np.where(np.isfinite(m), out, NEG_INF)


def collapse(path) -> list[int]:
    out = []
    prev = None
    for s in path:
        s = int(s)
        if s != prev and s != BLANK:
            out.append(s)
        prev = s
    return out


def greedy_decode(log_probs: np.ndarray) -> list[int]:
    # argmax returns the first maximum, i.e. the lowest index on ties
    return collapse(np.argmax(log_probs, axis=1))


class LanguageModelScorer(Protocol):
    def initial_state(self): ...
    def score(self, state, symbol: int) -> tuple[float, object]: ...
    def final_score(self, state) -> float: ...


@dataclass
class Hypothesis:
    labels: tuple[int, ...]
    log_p_blank: float = NEG_INF
    log_p_nonblank: float = NEG_INF
    lm_score: float = 0.0
    lm_state: object = None
    score: float = NEG_INF

    @property
    def ctc_score(self) -> float:
        return float(np.logaddexp(self.log_p_blank, self.log_p_nonblank))


def fused_score(ctc: float, lm: float, length: int, beta: float, gamma: float) -> float:
    return ctc + beta * lm + gamma * length


def beam_decode(log_probs: np.ndarray, beam_width: int, lm: LanguageModelScorer | None = None,
                beta: float = 0.0, gamma: float = 0.0) -> list[Hypothesis]:
    """Prefix beam search; returns hypotheses ranked by fused score.

    LM scores (with ``beta``) are added as prefixes extend; the end-of-sentence
    term is added once the last frame is consumed.  Label index ``k`` is
    passed to the LM as ``k``; the scorer owns the mapping.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    lp = np.asarray(log_probs, dtype=np.float64)
    T, V = lp.shape
    use_lm = lm is not None and beta != 0.0
    root = Hypothesis((), 0.0, NEG_INF, 0.0, lm.initial_state() if use_lm else None)
    beams: dict[tuple[int, ...], Hypothesis] = {(): root}

    for t in range(T):
        row = lp[t]
        nxt: dict[tuple[int, ...], Hypothesis] = {}

        def entry(prefix, parent, lm_add=0.0, lm_state=None):
            h = nxt.get(prefix)
            if h is None:
                if prefix == parent.labels:
                    h = Hypothesis(prefix, lm_score=parent.lm_score, lm_state=parent.lm_state)
                else:
                    h = Hypothesis(prefix, lm_score=parent.lm_score + lm_add, lm_state=lm_state)
                nxt[prefix] = h
            return h

        for prefix, h in beams.items():
            total = h.ctc_score
            # stay on the same prefix through blank
            e = entry(prefix, h)
            e.log_p_blank = np.logaddexp(e.log_p_blank, total + row[BLANK])
            if prefix:
                last = prefix[-1]
                e.log_p_nonblank = np.logaddexp(e.log_p_nonblank, h.log_p_nonblank + row[last])
            for k in range(1, V):
                new = prefix + (k,)
                if new in nxt:
                    lm_add, lm_state = 0.0, None
                elif use_lm:
                    lm_add, lm_state = lm.score(h.lm_state, k)
                else:
                    lm_add, lm_state = 0.0, None
                e = entry(new, h, lm_add, lm_state)
                if prefix and k == prefix[-1]:
                    # repeated symbol needs a blank in between
                    e.log_p_nonblank = np.logaddexp(e.log_p_nonblank, h.log_p_blank + row[k])
                else:
                    e.log_p_nonblank = np.logaddexp(e.log_p_nonblank, total + row[k])

        for h in nxt.values():
            h.score = fused_score(h.ctc_score, h.lm_score, len(h.labels), beta, gamma)
        ranked = sorted(nxt.values(), key=lambda h: (-h.score, h.labels))
        beams = {h.labels: h for h in ranked[:beam_width]}

    out = []
    for h in beams.values():
        lm_total = h.lm_score + (lm.final_score(h.lm_state) if use_lm else 0.0)
        out.append(Hypothesis(h.labels, float(h.log_p_blank), float(h.log_p_nonblank), lm_total,
                              h.lm_state, fused_score(h.ctc_score, lm_total, len(h.labels), beta, gamma)))
    out.sort(key=lambda h: (-h.score, h.labels))
    return out


@dataclass
class ScoredHypothesis:
    labels: tuple[int, ...]
    ctc_score: float
    lm_score: float = 0.0
    score: float = field(default=0.0)


def rescore_nbest(nbest: Sequence[Hypothesis], lm: LanguageModelScorer | None, beta: float,
                  gamma: float) -> list[ScoredHypothesis]:
    """Re-rank an n-best list by CTC + beta * LM (with end marker) + gamma * length.

    Sorting is stable, so ties keep their input order; the input list is not modified.
    """
    rows = []
    for h in nbest:
        lm_total = sequence_lm_score(lm, h.labels) if lm is not None else 0.0
        rows.append(ScoredHypothesis(tuple(h.labels), h.ctc_score, lm_total,
                                     fused_score(h.ctc_score, lm_total, len(h.labels), beta, gamma)))
    return sorted(rows, key=lambda r: -r.score)


def sequence_lm_score(lm: LanguageModelScorer, labels) -> float:
    state = lm.initial_state()
    total = 0.0
    for k in labels:
        s, state = lm.score(state, int(k))
        total += s
    return total + lm.final_score(state)


def write_nbest_tsv(path, rows) -> Path:
    """rows: iterable of (utt_id, rank, fused, ctc, lm, text)."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for utt, rank, fused, ctc, lm, text in rows:
            f.write(f"{utt}\t{rank}\t{fused:.6f}\t{ctc:.6f}\t{lm:.6f}\t{text}\n")
    return Path(path)
