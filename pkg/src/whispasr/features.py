"""Acoustic front-end: STFT magnitudes, log-Mel filterbank, deltas, normalization.

Also holds the on-disk formats the front-end touches: 16 kHz PCM16 WAV
input and the ``WFE1`` feature file.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
FEATURE_MAGIC = b"WFE1"
NORM_EPS = 1e-8


class UtteranceTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")


@dataclass(frozen=True)
class FeatureConfig:
    n_fft: int = 512
    win_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 80
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0
    add_delta: bool = True
    delta_window: int = 2
    log_floor: float = 1e-10
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        if self.n_mels < 2:
            raise ValueError("n_mels must be >= 2")
        if self.win_ms < self.hop_ms:
            raise ValueError("win_ms must be >= hop_ms")
        if not (0 <= self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2):
            raise ValueError("need 0 <= fmin_hz < fmax_hz <= sample_rate/2")
        if self.win_samples > self.n_fft:
            raise ValueError("window longer than n_fft")
        if self.log_floor <= 0:
            raise ValueError("log_floor must be positive")

    @property
    def win_samples(self) -> int:
        return int(round(self.win_ms * self.sample_rate_hz / 1000))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_ms * self.sample_rate_hz / 1000))


@dataclass
class FeatureMatrix:
    data: np.ndarray
    n_mels: int
    frame_hop_ms: int = 10

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValueError("feature matrix must be T x D with T >= 1")
        if self.data.shape[1] not in (self.n_mels, 2 * self.n_mels):
            raise ValueError(f"D={self.data.shape[1]} incompatible with n_mels={self.n_mels}")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def has_delta(self) -> bool:
        return self.data.shape[1] == 2 * self.n_mels

    @property
    def static(self) -> np.ndarray:
        return self.data[:, : self.n_mels]

    def replace(self, data: np.ndarray) -> "FeatureMatrix":
        return FeatureMatrix(data, self.n_mels, self.frame_hop_ms)


def hann_window(n: int) -> np.ndarray:
    # periodic Hann, as used for spectral analysis
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def frame_signal(samples: np.ndarray, win: int, hop: int) -> np.ndarray:
    if len(samples) < win:
        raise UtteranceTooShortError(
            f"utterance too short: {len(samples)} samples < one window of {win}")
    n_frames = 1 + (len(samples) - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    return samples[idx]


def stft_magnitude(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    """Magnitude spectrogram, shape (T, n_fft // 2 + 1); trailing partial window dropped."""
    if clip.sample_rate_hz != cfg.sample_rate_hz:
        raise ValueError(f"expected {cfg.sample_rate_hz} Hz audio, got {clip.sample_rate_hz}")
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.size == 0:
        raise UtteranceTooShortError("utterance too short: empty clip")
    frames = frame_signal(x, cfg.win_samples, cfg.hop_samples) * hann_window(cfg.win_samples)
    return np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FeatureConfig) -> np.ndarray:
    """Triangular filters equally spaced on the Mel scale, shape (n_mels, n_fft // 2 + 1)."""
    n_bins = cfg.n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * cfg.sample_rate_hz / cfg.n_fft
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz), cfg.n_mels + 2))
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_hz - lo) / (mid - lo)
        falling = (hi - bin_hz) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def log_mel(mag: np.ndarray, cfg: FeatureConfig) -> FeatureMatrix:
    energy = np.asarray(mag, dtype=np.float64) ** 2
    mel = energy @ mel_filterbank(cfg).T
    return FeatureMatrix(np.log(np.maximum(mel, cfg.log_floor)), cfg.n_mels, int(round(cfg.hop_ms)))


def delta(x: np.ndarray, window_n: int = 2) -> np.ndarray:
    """Regression deltas along time with replicate padding at the edges."""
    if window_n < 1:
        raise ValueError("window_n must be >= 1")
    T = x.shape[0]
    padded = np.concatenate([np.repeat(x[:1], window_n, 0), x, np.repeat(x[-1:], window_n, 0)])
    num = np.zeros_like(x, dtype=np.float64)
    for n in range(1, window_n + 1):
        num += n * (padded[window_n + n: window_n + n + T] - padded[window_n - n: window_n - n + T])
    return num / (2 * sum(n * n for n in range(1, window_n + 1)))


def add_delta(fm: FeatureMatrix, window_n: int = 2) -> FeatureMatrix:
    if fm.has_delta:
        raise ValueError("features already carry deltas")
    return fm.replace(np.concatenate([fm.data, delta(fm.data, window_n)], axis=1))


def normalize(fm: FeatureMatrix, eps: float = NORM_EPS) -> FeatureMatrix:
    """Per-utterance mean/variance normalization of every feature dimension."""
    x = fm.data
    mean = x.mean(axis=0)
    var = ((x - mean) ** 2).mean(axis=0)
    scale = np.where(var < eps, np.sqrt(eps), np.sqrt(var))
    return fm.replace((x - mean) / scale)


def extract_features(clip: AudioClip, cfg: FeatureConfig) -> FeatureMatrix:
    fm = log_mel(stft_magnitude(clip, cfg), cfg)
    if cfg.add_delta:
        fm = add_delta(fm, cfg.delta_window)
    return normalize(fm)


def read_wav(path) -> AudioClip:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError(f"{path}: expected mono PCM16 WAV")
        if w.getframerate() != SAMPLE_RATE:
            raise ValueError(f"{path}: sample rate {w.getframerate()} Hz not supported "
                             f"(expected {SAMPLE_RATE})")
        raw = w.readframes(w.getnframes())
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return AudioClip(pcm, SAMPLE_RATE)


def write_wav(path, clip: AudioClip) -> Path:
    pcm = np.clip(np.round(np.asarray(clip.samples) * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clip.sample_rate_hz)
        w.writeframes(pcm.tobytes())
    return Path(path)


def write_features(path, fm: FeatureMatrix) -> Path:
    T, D = fm.data.shape
    header = FEATURE_MAGIC + struct.pack("<IIII", T, D, fm.n_mels, fm.frame_hop_ms)
    Path(path).write_bytes(header + fm.data.astype("<f4").tobytes())
    return Path(path)


def read_features(path) -> FeatureMatrix:
    blob = Path(path).read_bytes()
    if blob[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a WFE1 feature file")
    T, D, nu, hop = struct.unpack_from("<IIII", blob, 4)
    if len(blob) != 20 + 4 * T * D:
        raise ValueError(f"{path}: truncated feature file")
    data = np.frombuffer(blob, dtype="<f4", offset=20).reshape(T, D).astype(np.float64)
    return FeatureMatrix(data, nu, hop)


def load_features(path, cfg: FeatureConfig | None = None) -> FeatureMatrix:
    """Feature file as stored, or WAV run through the front-end."""
    path = Path(path)
    if path.suffix.lower() == ".wav":
        return extract_features(read_wav(path), cfg or FeatureConfig())
    return read_features(path)
