"""Manifests, sentence-level splits, training mixes, and a synthetic parallel corpus."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import lfilter

from .features import SAMPLE_RATE, AudioClip, write_wav

log = logging.getLogger(__name__)

STYLES = ("normal", "whisper", "pseudo_whisper")
MIX_STRATEGIES = ("mix_random", "oversample_whisper", "whisper_only", "normal_only")


@dataclass
class UtteranceRecord:
    id: str
    source: str
    transcript: list[str]
    speaker: str
    style: str
    sentence_id: str

    def __post_init__(self):
        self.transcript = list(self.transcript)
        if not self.transcript:
            raise ValueError(f"{self.id}: empty transcript")
        if self.style not in STYLES:
            raise ValueError(f"{self.id}: unknown style {self.style!r}")


class Manifest:
    def __init__(self, records: Iterable[UtteranceRecord] = ()):
        self.records = list(records)
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})[:3]
            raise ValueError(f"duplicate record ids in manifest: {dup}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __add__(self, other: "Manifest") -> "Manifest":
        return Manifest(self.records + other.records)

    def by_style(self, *styles: str) -> "Manifest":
        return Manifest(r for r in self.records if r.style in styles)

    def sentence_ids(self) -> set[str]:
        return {r.sentence_id for r in self.records}

    def save(self, path) -> Path:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for r in self.records:
                f.write(json.dumps(asdict(r), ensure_ascii=False) + "\n")
        return Path(path)

    @classmethod
    def load(cls, path) -> "Manifest":
        base = Path(path).parent
        recs = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    d = json.loads(line)
                    src = Path(d["source"])
                    if not src.is_absolute() and not src.exists():
                        d["source"] = str(base / src)
                    recs.append(UtteranceRecord(**d))
        return cls(recs)


@dataclass(frozen=True)
class SplitSpec:
    n_train: int = 400
    n_dev: int = 25
    n_test: int = 25
    seed: int = 0


def fisher_yates(items: list, seed: int) -> list:
    out = list(items)
    rng = np.random.default_rng(seed)
    for i in range(len(out) - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        out[i], out[j] = out[j], out[i]
    return out


def partition_by_sentence(m: Manifest, s: SplitSpec) -> tuple[Manifest, Manifest, Manifest]:
    """Split whole sentences (every rendition together) into train/dev/test."""
    sentences = sorted(m.sentence_ids())
    want = s.n_train + s.n_dev + s.n_test
    if len(sentences) != want:
        raise ValueError(f"manifest has {len(sentences)} distinct sentences, split asks for {want}")
    order = fisher_yates(sentences, s.seed)
    dev = set(order[s.n_train:s.n_train + s.n_dev])
    test = set(order[s.n_train + s.n_dev:])
    parts: tuple[list, list, list] = ([], [], [])
    for r in m:
        parts[2 if r.sentence_id in test else 1 if r.sentence_id in dev else 0].append(r)
    return Manifest(parts[0]), Manifest(parts[1]), Manifest(parts[2])


def _shuffled(records: list, seed: int) -> list:
    rng = np.random.default_rng(seed)
    return [records[i] for i in rng.permutation(len(records))]


def build_training_mix(strategy: str, sources: Sequence[Manifest], seed: int) -> Manifest:
    if strategy not in MIX_STRATEGIES:
        raise ValueError(f"unknown mix strategy {strategy!r}")
    if not sources:
        raise ValueError("no source manifests")
    records = [r for m in sources for r in m]
    if strategy == "whisper_only":
        picked = [r for r in records if r.style == "whisper"]
    elif strategy == "normal_only":
        picked = [r for r in records if r.style == "normal"]
    elif strategy == "mix_random":
        picked = records
    else:
        whisper = [r for r in records if r.style == "whisper"]
        if not whisper:
            raise ValueError("oversample_whisper needs at least one whisper record")
        n_normal = sum(r.style == "normal" for r in records)
        rounds = max(1, math.ceil(n_normal / len(whisper)))
        picked = [r for r in records if r.style != "whisper"]
        for k in range(rounds):
            for r in whisper:
                picked.append(r if k == 0 else UtteranceRecord(
                    f"{r.id}-rep{k}", r.source, r.transcript, r.speaker, r.style, r.sentence_id))
    if not picked:
        log.warning("training mix %s selected no records", strategy)
    return Manifest(_shuffled(picked, seed))


# -- synthetic parallel corpus -------------------------------------------------

# vowel-like formant centre frequencies (Hz)
DEFAULT_TEMPLATES: dict[str, tuple[float, float, float]] = {
    "a": (730.0, 1090.0, 2440.0),
    "e": (530.0, 1840.0, 2480.0),
    "i": (270.0, 2290.0, 3010.0),
    "o": (570.0, 840.0, 2410.0),
    "u": (300.0, 870.0, 2240.0),
}
FORMANT_BANDWIDTHS = (80.0, 100.0, 120.0)
SYMBOL_MS = 120
XFADE_MS = 20
EDGE_MS = 60
WHISPER_FORMANT_SHIFT = 1.10
WHISPER_GAIN_DB = -12.0


@dataclass
class ToyCorpus:
    manifest: Manifest
    audio: dict[str, AudioClip]
    pitch_hz: dict[str, float] = field(default_factory=dict)


def resonator(freq: float, bw: float, sr: int = SAMPLE_RATE):
    r = math.exp(-math.pi * bw / sr)
    theta = 2 * math.pi * freq / sr
    a = [1.0, -2 * r * math.cos(theta), r * r]
    return [sum(a)], a  # unit gain at DC


def formant_filter(x: np.ndarray, formants, sr: int = SAMPLE_RATE) -> np.ndarray:
    for f, bw in zip(formants, FORMANT_BANDWIDTHS):
        b, a = resonator(f, bw, sr)
        x = lfilter(b, a, x)
    return x


def pulse_train(n: int, pitch_hz: float, sr: int, phase: float = 0.0) -> np.ndarray:
    x = np.zeros(n)
    period = sr / pitch_hz
    pos = np.arange(phase, n, period)
    x[pos.astype(int)] = 1.0
    return x


def _render(symbols, templates, excitation: np.ndarray, shift: float, sr: int) -> np.ndarray:
    seg = int(SYMBOL_MS * sr / 1000)
    fade = int(XFADE_MS * sr / 1000)
    out = np.zeros(seg * len(symbols) + fade)
    ramp_in = np.linspace(0.0, 1.0, fade)
    for k, s in enumerate(symbols):
        start = k * seg
        piece = formant_filter(excitation[start:start + seg + fade], [f * shift for f in templates[s]], sr)
        env = np.ones(seg + fade)
        if k > 0:
            env[:fade] = ramp_in
        env[seg:] = ramp_in[::-1]
        out[start:start + seg + fade] += piece * env
    edge = np.zeros(int(EDGE_MS * sr / 1000))
    return np.concatenate([edge, out, edge])


def _transition_matrix(symbols, rng):
    n = len(symbols)
    P = rng.dirichlet(np.full(n, 0.5), size=n) if n > 1 else np.ones((1, 1))
    if n > 1:
        np.fill_diagonal(P, 0.0)
        P /= P.sum(axis=1, keepdims=True)
    return P


def synth_toy_corpus(n_sentences: int, vocab=None, seed: int = 0, n_speakers: int = 1,
                     out_dir=None, min_len: int = 3, max_len: int = 8) -> ToyCorpus:
    """Parallel normal/whisper renditions of random symbol sentences.

    ``vocab`` maps symbol -> (F1, F2, F3); a plain symbol list picks from the
    default templates.  Sentences follow a seeded first-order Markov chain
    without self-transitions, so adjacent symbols always differ.
    """
    if vocab is None:
        vocab = DEFAULT_TEMPLATES
    if not isinstance(vocab, dict):
        vocab = {s: DEFAULT_TEMPLATES[s] for s in vocab}
    if not vocab:
        raise ValueError("empty vocabulary")
    if len(set(map(tuple, vocab.values()))) != len(vocab):
        raise ValueError("formant templates must be distinct")
    symbols = sorted(vocab)
    sr = SAMPLE_RATE
    rng = np.random.default_rng(seed)
    P = _transition_matrix(symbols, rng)
    speakers = [(f"spk{k}", 1.0 + 0.04 * (k - (n_speakers - 1) / 2)) for k in range(n_speakers)]
    records, audio, pitches = [], {}, {}
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for si in range(n_sentences):
        length = int(rng.integers(min_len, max_len + 1))
        cur = int(rng.integers(len(symbols)))
        seq = [cur]
        for _ in range(length - 1):
            cur = int(rng.choice(len(symbols), p=P[cur]))
            seq.append(cur)
        transcript = [symbols[i] for i in seq]
        sid = f"s{si:04d}"
        for spk, scale in speakers:
            templates = {s: tuple(f * scale for f in fm) for s, fm in vocab.items()}
            pitch = float(rng.uniform(100.0, 140.0)) / scale
            n = int(SYMBOL_MS * sr / 1000) * len(seq) + int(XFADE_MS * sr / 1000)
            voiced = _render(transcript, templates, pulse_train(n, pitch, sr, rng.uniform(0, 20)), 1.0, sr)
            voiced *= 0.5 / np.max(np.abs(voiced))
            noise = _render(transcript, templates, rng.standard_normal(n), WHISPER_FORMANT_SHIFT, sr)
            target_rms = np.sqrt(np.mean(voiced ** 2)) * 10 ** (WHISPER_GAIN_DB / 20)
            whisper = noise * target_rms / np.sqrt(np.mean(noise ** 2))
            floor = 1e-4 * rng.standard_normal((2, len(voiced)))
            for style, x in (("normal", voiced + floor[0]), ("whisper", whisper + floor[1])):
                uid = f"{sid}-{spk}-{style}"
                clip = AudioClip(np.clip(x, -1.0, 1.0), sr)
                src = f"{uid}.wav"
                if out is not None:
                    write_wav(out / src, clip)
                    src = str(out / src)
                audio[uid] = clip
                pitches[uid] = pitch
                records.append(UtteranceRecord(uid, src, transcript, spk, style, sid))
    return ToyCorpus(Manifest(records), audio, pitches)


def harmonicity(x: np.ndarray, lag: int) -> float:
    """Normalized autocorrelation at ``lag``."""
    x = np.asarray(x, dtype=np.float64) - np.mean(x)
    return float(np.dot(x[:-lag], x[lag:]) / np.dot(x, x))
