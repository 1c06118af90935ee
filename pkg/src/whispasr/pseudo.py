"""Pseudo-whisper generation: DTW / FastDTW alignment of parallel utterances,
a frame-mapping voice-conversion network, and bulk pseudo-corpus output.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Manifest, UtteranceRecord
from .features import FeatureConfig, FeatureMatrix, load_features, write_features
from .optim import Optimizer, OptimizerConfig
from .params import ParamStore

log = logging.getLogger(__name__)

FASTDTW_MIN_SIZE = 16


@dataclass
class AlignmentPath:
    pairs: list[tuple[int, int]]
    cost: float

    def is_valid(self, n: int, m: int) -> bool:
        p = self.pairs
        if not p or p[0] != (0, 0) or p[-1] != (n - 1, m - 1):
            return False
        return all((i2 - i1, j2 - j1) in ((1, 0), (0, 1), (1, 1))
                   for (i1, j1), (i2, j2) in zip(p, p[1:]))


def _as_array(x) -> np.ndarray:
    a = x.data if isinstance(x, FeatureMatrix) else np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if len(a) == 0:
        raise ValueError("cannot align an empty sequence")
    return a


def _dtw(a: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> AlignmentPath:
    """DTW restricted to columns lo[i]..hi[i] (inclusive) of each row i."""
    n, m = len(a), len(b)
    D = np.full((n, m), np.inf)
    for i in range(n):
        l, h = lo[i], hi[i] + 1
        c = np.sqrt(((a[i] - b[l:h]) ** 2).sum(axis=1))
        if i == 0:
            best = np.full(h - l, np.inf)
            best[0] = 0.0 if l == 0 else np.inf
        else:
            prev = D[i - 1]
            up = prev[l:h]
            diag = np.concatenate([[prev[l - 1] if l > 0 else np.inf], prev[l:h - 1]])
            best = np.minimum(diag, up)
        row = D[i]
        left = row[l - 1] if l > 0 else np.inf
        for k in range(h - l):
            left = c[k] + min(best[k], left)
            row[l + k] = left
    cost = float(D[n - 1, m - 1])
    if not np.isfinite(cost):
        raise ValueError("search window does not connect the corners")
    i, j = n - 1, m - 1
    pairs = [(i, j)]
    while i > 0 or j > 0:
        # predecessor preference on ties: diagonal, then (i-1, j), then (i, j-1)
        cands = []
        if i > 0 and j > 0:
            cands.append((D[i - 1, j - 1], i - 1, j - 1))
        if i > 0:
            cands.append((D[i - 1, j], i - 1, j))
        if j > 0:
            cands.append((D[i, j - 1], i, j - 1))
        _, i, j = min(cands, key=lambda c: c[0])
        pairs.append((i, j))
    pairs.reverse()
    return AlignmentPath(pairs, cost)


def dtw_align(a, b) -> AlignmentPath:
    """Exact DTW under Euclidean frame distance with steps (1,0), (0,1), (1,1)."""
    a, b = _as_array(a), _as_array(b)
    n, m = len(a), len(b)
    return _dtw(a, b, np.zeros(n, dtype=int), np.full(n, m - 1))


def _coarsen(x: np.ndarray) -> np.ndarray:
    n = len(x)
    even = x[: n - n % 2].reshape(n // 2, 2, -1).mean(axis=1)
    return np.vstack([even, x[-1:]]) if n % 2 else even


def _expand_window(path, n, m, radius):
    lo = np.full(n, m, dtype=int)
    hi = np.full(n, -1, dtype=int)
    for i, j in path:
        r0, r1 = max(0, 2 * i - radius), min(n - 1, 2 * i + 1 + radius)
        lo[r0:r1 + 1] = np.minimum(lo[r0:r1 + 1], max(0, 2 * j - radius))
        hi[r0:r1 + 1] = np.maximum(hi[r0:r1 + 1], min(m - 1, 2 * j + 1 + radius))
    return lo, hi


def fastdtw_align(a, b, radius: int = 10, min_size: int = FASTDTW_MIN_SIZE) -> AlignmentPath:
    """Multiresolution DTW approximation: halve both sequences, align recursively,
    then refine within ``radius`` cells of the projected coarse path."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    a, b = _as_array(a), _as_array(b)
    n, m = len(a), len(b)
    if n <= max(min_size, radius + 2) or m <= max(min_size, radius + 2):
        return dtw_align(a, b)
    coarse = fastdtw_align(_coarsen(a), _coarsen(b), radius, min_size)
    lo, hi = _expand_window(coarse.pairs, n, m, radius)
    return _dtw(a, b, lo, hi)


# -- frame-mapping voice conversion -----------------------------------------

@dataclass(frozen=True)
class VcConfig:
    feature_dim: int
    context_frames: int = 4
    hidden_layers: int = 4
    hidden_units: int = 256
    activation: str = "relu"
    loss: str = "mse"

    def __post_init__(self):
        if self.context_frames < 0:
            raise ValueError("context_frames must be >= 0")
        if self.hidden_layers < 1 or self.hidden_units < 1:
            raise ValueError("need at least one hidden layer and unit")
        if self.activation != "relu" or self.loss != "mse":
            raise ValueError("only ReLU activations with MSE loss are supported")

    @property
    def input_dim(self) -> int:
        return (2 * self.context_frames + 1) * self.feature_dim


def stack_context(x: np.ndarray, c: int) -> np.ndarray:
    """Rows t-c..t+c concatenated per frame, edges replicate-padded."""
    T = len(x)
    idx = np.clip(np.arange(T)[:, None] + np.arange(-c, c + 1)[None, :], 0, T - 1)
    return x[idx].reshape(T, -1)


def aligned_pairs(normal: np.ndarray, whisper: np.ndarray, path: AlignmentPath,
                  context: int) -> tuple[np.ndarray, np.ndarray]:
    """One training example per path pair: normal frame with context -> whisper frame."""
    src = stack_context(normal, context)
    i, j = np.array(path.pairs).T
    return src[i], whisper[j]


class VcModel:
    def __init__(self, cfg: VcConfig, params: ParamStore | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else self._init(seed)

    def _init(self, seed):
        rng = np.random.default_rng(seed)
        store = ParamStore()
        n_in = self.cfg.input_dim
        for k in range(self.cfg.hidden_layers):
            b = 1.0 / np.sqrt(n_in)
            store.add(f"vc.l{k}.w", rng.uniform(-b, b, (n_in, self.cfg.hidden_units)), k)
            store.add(f"vc.l{k}.b", np.zeros(self.cfg.hidden_units), k)
            n_in = self.cfg.hidden_units
        b = 1.0 / np.sqrt(n_in)
        store.add("vc.out.w", rng.uniform(-b, b, (n_in, self.cfg.feature_dim)), self.cfg.hidden_layers)
        store.add("vc.out.b", np.zeros(self.cfg.feature_dim), self.cfg.hidden_layers)
        return store

    @classmethod
    def from_params(cls, params: ParamStore) -> "VcModel":
        layers = sum(1 for k in params if k.startswith("vc.l") and k.endswith(".w"))
        n_in, units = params.value("vc.l0.w").shape
        dim = params.value("vc.out.w").shape[1]
        context = (n_in // dim - 1) // 2
        return cls(VcConfig(dim, context, layers, units), params)

    def forward(self, X: np.ndarray):
        acts = [X]
        h = X
        for k in range(self.cfg.hidden_layers):
            h = np.maximum(h @ self.params.value(f"vc.l{k}.w") + self.params.value(f"vc.l{k}.b"), 0.0)
            acts.append(h)
        return h @ self.params.value("vc.out.w") + self.params.value("vc.out.b"), acts

    def loss_and_grad(self, X: np.ndarray, Y: np.ndarray) -> float:
        """Mean squared error over all output elements; gradients accumulate."""
        out, acts = self.forward(X)
        diff = out - Y
        loss = float(np.mean(diff * diff))
        d = 2.0 * diff / diff.size
        self.params.accumulate("vc.out.w", acts[-1].T @ d)
        self.params.accumulate("vc.out.b", d.sum(axis=0))
        d = d @ self.params.value("vc.out.w").T
        for k in range(self.cfg.hidden_layers - 1, -1, -1):
            d = d * (acts[k + 1] > 0)
            self.params.accumulate(f"vc.l{k}.w", acts[k].T @ d)
            self.params.accumulate(f"vc.l{k}.b", d.sum(axis=0))
            d = d @ self.params.value(f"vc.l{k}.w").T
        return loss

    def mse(self, X: np.ndarray, Y: np.ndarray) -> float:
        out, _ = self.forward(X)
        return float(np.mean((out - Y) ** 2))


def vc_train(X: np.ndarray, Y: np.ndarray, cfg: VcConfig, opt_cfg: OptimizerConfig,
             callback=None) -> VcModel:
    """Fit the frame mapping on aligned (context input, target frame) rows."""
    if len(X) == 0:
        raise ValueError("empty VC training set")
    if X.shape[1] != cfg.input_dim or Y.shape[1] != cfg.feature_dim:
        raise ValueError("training arrays do not match the VC configuration")
    model = VcModel(cfg, seed=opt_cfg.seed)
    opt = Optimizer(model.params, opt_cfg)
    rng = np.random.default_rng([opt_cfg.seed, 3])
    order = np.array([], dtype=int)
    bs = min(opt_cfg.batch_size, len(X))
    for step in range(opt_cfg.max_steps):
        if len(order) < bs:
            order = np.concatenate([order, rng.permutation(len(X))])
        idx, order = order[:bs], order[bs:]
        model.params.zero_grad()
        loss = model.loss_and_grad(X[idx], Y[idx])
        opt.step()
        if callback is not None:
            callback(step + 1, loss)
    return model


def vc_apply(model: VcModel, fm: FeatureMatrix) -> FeatureMatrix:
    D = fm.data.shape[1]
    if model.cfg.feature_dim != D:
        raise ValueError(f"VC model maps {model.cfg.feature_dim}-dim frames, features are {D}-dim")
    out, _ = model.forward(stack_context(fm.data, model.cfg.context_frames))
    return fm.replace(out)


def build_vc_training_set(pairs: Sequence[tuple[FeatureMatrix, FeatureMatrix]], context: int,
                          radius: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Align each (normal, whisper) pair on static features and stack all path pairs."""
    xs, ys = [], []
    for normal, whisper in pairs:
        path = fastdtw_align(normal.static, whisper.static, radius)
        x, y = aligned_pairs(normal.data, whisper.data, path, context)
        xs.append(x)
        ys.append(y)
    return np.vstack(xs), np.vstack(ys)


def generate_pseudo_corpus(model: VcModel, normal: Manifest, out_dir,
                           feature_cfg: FeatureConfig | None = None) -> Manifest:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for r in normal:
        try:
            fm = load_features(r.source, feature_cfg)
        except (OSError, ValueError) as e:
            log.warning("skipping %s: %s", r.id, e)
            continue
        uid = f"{r.id}-pw"
        path = write_features(out / f"{uid}.wfe", vc_apply(model, fm))
        records.append(UtteranceRecord(uid, str(path), r.transcript, r.speaker, "pseudo_whisper",
                                       r.sentence_id))
    if not records:
        raise ValueError("no record could be converted")
    return Manifest(records)
