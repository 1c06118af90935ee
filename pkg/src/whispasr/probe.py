"""Frequency-importance probe.

A learnable vector w over Mel bins is softmax-normalized to w_hat and used
to attenuate the features of a frozen model, x'[t, f] = x[t, f] * exp(-w_hat[f] / r).
Gradient *ascent* on the CTC loss then moves mass onto the bins whose
suppression hurts recognition most.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import ctc
from .encoder import AcousticModel
from .features import FeatureMatrix


def softmax(w: np.ndarray) -> np.ndarray:
    e = np.exp(w - np.max(w))
    return e / e.sum()


def _factors(fm: FeatureMatrix, w_hat: np.ndarray, r: float) -> np.ndarray:
    if r <= 0:
        raise ValueError("scaling factor r must be positive")
    if len(w_hat) != fm.n_mels:
        raise ValueError(f"weight vector has {len(w_hat)} bins, features have {fm.n_mels}")
    f = np.exp(-np.asarray(w_hat, dtype=np.float64) / r)
    # delta coefficients share their static bin's factor
    return np.tile(f, fm.data.shape[1] // fm.n_mels)


def suppress(fm: FeatureMatrix, w_hat: np.ndarray, r: float) -> FeatureMatrix:
    if abs(float(np.sum(w_hat)) - 1.0) > 1e-6:
        raise ValueError("w_hat must sum to 1")
    return fm.replace(fm.data * _factors(fm, w_hat, r))


@dataclass
class FrequencyWeightProbe:
    n_mels: int
    r: float = 1.0
    learning_rate: float = 0.1
    n_steps: int = 200
    batch_size: int = 8
    w: np.ndarray = None  # type: ignore[assignment]
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.r <= 0:
            raise ValueError("scaling factor r must be positive")
        if self.w is None:
            self.w = np.zeros(self.n_mels)
        self.w = np.asarray(self.w, dtype=np.float64)
        if self.w.shape != (self.n_mels,):
            raise ValueError("w must have one entry per Mel bin")

    @property
    def w_hat(self) -> np.ndarray:
        return softmax(self.w)


def probe_loss_and_grad(model: AcousticModel, batch: Sequence[tuple[FeatureMatrix, np.ndarray]],
                        w: np.ndarray, r: float) -> tuple[float, np.ndarray]:
    """Mean CTC loss of the suppressed batch and its gradient wrt the raw weights ``w``."""
    w_hat = softmax(w)
    g_hat = np.zeros_like(w_hat)
    total = 0.0
    for fm, labels in batch:
        factors = _factors(fm, w_hat, r)
        post, cache = model.forward(fm.data * factors)
        loss, dlogp = ctc.ctc_loss(post.log_probs, labels)
        dx = model.backward(dlogp, cache)
        # d x'/d w_hat_f = -x * factor / r, summed over frames and over static + delta blocks
        contrib = (dx * fm.data * factors).sum(axis=0).reshape(-1, fm.n_mels).sum(axis=0)
        g_hat += -contrib / r
        total += loss
    n = len(batch)
    g_hat /= n
    return total / n, w_hat * (g_hat - np.dot(w_hat, g_hat))


def fit_frequency_weights(model: AcousticModel, data: Sequence[tuple[FeatureMatrix, np.ndarray]],
                          probe: FrequencyWeightProbe, rng: np.random.Generator) -> np.ndarray:
    """Stochastic gradient ascent of the CTC loss over ``w``; the model stays untouched.

    ``data`` holds (features, label indices) pairs.  Per-step mean losses
    are appended to ``probe.history``.
    """
    if not data:
        raise ValueError("probe needs at least one utterance")
    live = [k for k, p in model.params.items() if not p.frozen]
    if live:
        raise ValueError(f"model parameters must be frozen, found trainable {live[:3]}")
    for _ in range(probe.n_steps):
        take = min(probe.batch_size, len(data))
        idx = rng.choice(len(data), size=take, replace=False)
        loss, grad = probe_loss_and_grad(model, [data[i] for i in idx], probe.w, probe.r)
        probe.history.append(loss)
        probe.w = probe.w + probe.learning_rate * grad
    model.params.zero_grad()
    return probe.w_hat


def write_weights_csv(path, w_hat: np.ndarray) -> Path:
    with open(path, "w", newline="\n") as f:
        f.write("bin_index,weight\n")
        for i, v in enumerate(w_hat):
            f.write(f"{i},{v:.8f}\n")
    return Path(path)
