"""SpecAugment masking with a frequency-weighted choice of mask origin.

The lower edge f0 of a frequency mask is drawn from a uniform (UNI),
linearly decreasing (LIN) or geometrically decreasing (GEO) distribution,
so low Mel bins get masked more often under LIN/GEO.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureMatrix

ORIGIN_KINDS = ("UNI", "LIN", "GEO")


@dataclass(frozen=True)
class MaskPolicy:
    F1: int = 0
    F2: int = 27
    n_freq_masks: int = 2
    origin_dist: str = "UNI"
    geo_rho: float = 0.95
    time_mask_T: int = 40
    n_time_masks: int = 1

    def __post_init__(self):
        if self.origin_dist not in ORIGIN_KINDS:
            raise ValueError(f"origin_dist must be one of {ORIGIN_KINDS}")
        if not 0 <= self.F1 <= self.F2:
            raise ValueError("need 0 <= F1 <= F2")
        if not 0.0 < self.geo_rho < 1.0:
            raise ValueError("geo_rho must lie in (0, 1)")
        if self.time_mask_T < 0 or self.n_time_masks < 0 or self.n_freq_masks < 0:
            raise ValueError("mask counts and widths must be non-negative")

    def validate_for(self, nu: int) -> None:
        if self.F2 >= nu:
            raise ValueError(f"F2={self.F2} must be < nu={nu}")


def origin_weights(kind: str, support: int, geo_rho: float = 0.95) -> np.ndarray:
    """Normalized probabilities of f0 = 0 .. support-1."""
    f0 = np.arange(support, dtype=np.float64)
    if kind == "UNI":
        w = np.ones(support)
    elif kind == "LIN":
        w = support - f0
    elif kind == "GEO":
        w = geo_rho ** f0
    else:
        raise ValueError(f"unknown origin distribution {kind!r}")
    return w / w.sum()


def sample_freq_mask(policy: MaskPolicy, nu: int, rng: np.random.Generator) -> tuple[int, int]:
    policy.validate_for(nu)
    width = int(rng.integers(policy.F1, policy.F2 + 1))
    support = nu - width
    if width == 0 or support <= 0:
        return 0, 0
    p = origin_weights(policy.origin_dist, support, policy.geo_rho)
    f0 = int(rng.choice(support, p=p))
    return f0, width


def sample_time_mask(policy: MaskPolicy, T: int, rng: np.random.Generator) -> tuple[int, int]:
    if policy.time_mask_T == 0:
        return 0, 0
    width = int(rng.integers(0, policy.time_mask_T + 1))
    if width == 0 or T - width <= 0:
        return 0, 0
    return int(rng.integers(0, T - width)), width


def apply_mask(fm: FeatureMatrix, masks, value: float = 0.0) -> FeatureMatrix:
    """Set frequency bands [f0, f0 + df) to ``value``; deltas get the same band."""
    nu = fm.n_mels
    out = fm.data.copy()
    for f0, df in masks:
        if df == 0:
            continue
        if f0 < 0 or df < 0 or f0 + df > nu:
            raise ValueError(f"mask ({f0}, {df}) outside [0, {nu})")
        out[:, f0:f0 + df] = value
        if fm.has_delta:
            out[:, nu + f0:nu + f0 + df] = value
    return fm.replace(out)


def apply_time_mask(fm: FeatureMatrix, masks, value: float = 0.0) -> FeatureMatrix:
    out = fm.data.copy()
    for t0, dt in masks:
        if dt == 0:
            continue
        if t0 < 0 or t0 + dt > fm.n_frames:
            raise ValueError(f"time mask ({t0}, {dt}) outside [0, {fm.n_frames})")
        out[t0:t0 + dt] = value
    return fm.replace(out)


def spec_augment(fm: FeatureMatrix, policy: MaskPolicy, rng: np.random.Generator) -> FeatureMatrix:
    freq = [sample_freq_mask(policy, fm.n_mels, rng) for _ in range(policy.n_freq_masks)]
    out = apply_mask(fm, freq)
    times = [sample_time_mask(policy, fm.n_frames, rng) for _ in range(policy.n_time_masks)]
    return apply_time_mask(out, times)


def origin_histogram(policy: MaskPolicy, nu: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Counts of sampled f0 over ``n`` draws; zero-width draws have no origin and are not counted."""
    counts = np.zeros(nu, dtype=np.int64)
    for _ in range(n):
        f0, df = sample_freq_mask(policy, nu, rng)
        if df:
            counts[f0] += 1
    return counts
