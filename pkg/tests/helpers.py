"""Shared oracles and constructed tasks for the test suite."""

from __future__ import annotations

import itertools

import numpy as np

from whispasr.encoder import AcousticModel, EncoderConfig, init_params
from whispasr.features import FeatureMatrix
from whispasr.optim import OptimizerConfig
from whispasr.trainer import Example, train


def fd_check(f, x: np.ndarray, analytic: np.ndarray, step=1e-5, rtol=1e-3, atol=1e-6, max_checks=None,
             rng=None):
    """Central finite differences of scalar ``f`` at ``x`` (modified in place) against ``analytic``.

    Returns the worst relative error among entries with |analytic| > atol and
    asserts the absolute error elsewhere.
    """
    idx = list(np.ndindex(x.shape))
    if max_checks is not None and len(idx) > max_checks:
        rng = rng or np.random.default_rng(0)
        idx = [idx[i] for i in rng.choice(len(idx), max_checks, replace=False)]
    worst = 0.0
    for i in idx:
        old = x[i]
        x[i] = old + step
        up = f()
        x[i] = old - step
        down = f()
        x[i] = old
        num = (up - down) / (2 * step)
        a = analytic[i]
        if abs(a) > atol:
            worst = max(worst, abs(num - a) / max(abs(a), abs(num)))
        else:
            assert abs(num - a) < 10 * atol, (i, num, a)
    assert worst <= rtol, worst
    return worst


def enumerate_ctc_prob(probs: np.ndarray, labels) -> float:
    """Sum over every frame path whose collapse is ``labels``."""
    T, V = probs.shape
    total = 0.0
    target = list(labels)
    for path in itertools.product(range(V), repeat=T):
        out, prev = [], None
        for s in path:
            if s != prev and s != 0:
                out.append(s)
            prev = s
        if out == target:
            total += float(np.prod(probs[np.arange(T), path]))
    return total


def random_log_probs(rng, T, V, scale=2.0):
    z = rng.normal(scale=scale, size=(T, V))
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def high_band_task(n: int, seed: int, nu: int = 16, n_symbols: int = 3, seg: int = 8):
    """Utterances whose symbol identity lives only in the top half of the bins.

    Each symbol is a fixed random pattern over bins nu/2..nu-1 held for
    ``seg`` frames; the bottom half is fresh Gaussian noise everywhere.
    """
    rng = np.random.default_rng(seed)
    patterns = np.random.default_rng(1234).normal(size=(n_symbols + 1, nu // 2)) * 1.5
    patterns[0] = 0.0  # inter-symbol gap
    out = []
    for k in range(n):
        L = int(rng.integers(2, 5))
        labels = [int(rng.integers(1, n_symbols + 1))]
        while len(labels) < L:
            s = int(rng.integers(1, n_symbols + 1))
            if s != labels[-1]:
                labels.append(s)
        rows = [np.zeros(nu // 2)] * 2
        for s in labels:
            rows += [patterns[s]] * seg + [patterns[0]] * 2
        top = np.array(rows) + 0.1 * rng.normal(size=(len(rows), nu // 2))
        bottom = rng.normal(size=top.shape)
        fm = FeatureMatrix(np.hstack([bottom, top]), nu, 10)
        out.append(Example(f"u{k}", fm, np.array(labels), [str(s) for s in labels]))
    return out


def train_high_band_model(seed: int = 0, steps: int = 400):
    data = high_band_task(40, seed)
    cfg = EncoderConfig(n_mels=16, in_channels=1, extractor="standard", conv_channels=(4, 8),
                        n_layers=1, units_per_direction=8, vocab_size=4)
    model = AcousticModel(cfg, init_params(cfg, seed))
    train(model, data, OptimizerConfig(kind="adam", learning_rate=3e-3, batch_size=1, max_steps=steps,
                                       seed=seed))
    return model, data


ACCEPTANCE_LINES: list[str] = []


def report(number: int, title: str, ok: bool, detail: str = "") -> None:
    """Print and remember one acceptance verdict line, then fail the test if it did not hold."""
    line = f"AC{number:02d} {'PASS' if ok else 'FAIL'} {title}" + (f": {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line
