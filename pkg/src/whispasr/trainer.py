"""Training loops: CTC pre-training, layer-wise transfer fine-tuning, evaluation."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import ctc
from .augment import MaskPolicy, spec_augment
from .corpus import Manifest
from .encoder import AcousticModel, EncoderConfig, init_params, pooled
from .features import FeatureConfig, FeatureMatrix, load_features
from .optim import Optimizer, OptimizerConfig, optimizer_step  # noqa: F401  (re-exported)
from .params import ParamStore
from .kvconfig import format_kv_config, parse_kv_config  # noqa: F401  (re-exported)
from .scoring import edit_distance

log = logging.getLogger(__name__)

PRETRAIN_OPT = OptimizerConfig(kind="adam", learning_rate=1e-3)
FINETUNE_OPT = OptimizerConfig(kind="sgd", learning_rate=1e-2)


class TrainingAborted(RuntimeError):
    pass


@dataclass
class Example:
    id: str
    features: FeatureMatrix
    labels: np.ndarray
    transcript: list[str]


def load_examples(manifest: Manifest, vocab: ctc.Vocabulary,
                  feature_cfg: FeatureConfig | None = None) -> list[Example]:
    return [Example(r.id, load_features(r.source, feature_cfg), vocab.encode(r.transcript),
                    list(r.transcript)) for r in manifest]


def feasible(ex: Example) -> bool:
    T = ex.features.n_frames
    return T >= 4 and ctc.is_feasible(pooled(T), ex.labels)


def screen(examples: Sequence[Example]) -> list[Example]:
    """Drop utterances CTC cannot align; abort when more than half are unusable."""
    keep = [e for e in examples if feasible(e)]
    skipped = len(examples) - len(keep)
    if skipped:
        log.warning("skipping %d of %d utterances with infeasible alignments", skipped, len(examples))
    if not examples or skipped * 2 > len(examples):
        raise TrainingAborted(f"{skipped} of {len(examples)} utterances infeasible")
    return keep


def utterance_loss(model: AcousticModel, fm: FeatureMatrix, labels) -> float:
    """Forward + backward for one utterance; returns its CTC loss."""
    post, cache = model.forward(fm)
    loss, grad = ctc.ctc_loss(post.log_probs, labels)
    model.backward(grad, cache)
    return loss


def greedy_transcripts(model: AcousticModel, examples: Sequence[Example]) -> list[list[int]]:
    return [ctc.greedy_decode(model.posteriorgram(e.features).log_probs) for e in examples]


def error_rate_pct(model: AcousticModel, examples: Sequence[Example]) -> float:
    hyps = greedy_transcripts(model, examples)
    edits = sum(edit_distance(list(e.labels), h).total for e, h in zip(examples, hyps))
    return 100.0 * edits / sum(len(e.labels) for e in examples)


def train(model: AcousticModel, examples: Sequence[Example], opt_cfg: OptimizerConfig,
          mask_policy: MaskPolicy | None = None, dev: Sequence[Example] | None = None,
          eval_every: int = 0, log_path=None, checkpoint_dir=None, checkpoint_every: int = 0,
          callback: Callable[[int, float], None] | None = None) -> AcousticModel:
    """Mini-batch CTC training of the model's non-frozen parameters.

    Batches come from seeded per-epoch permutations; every drawn utterance
    is augmented afresh with ``mask_policy``.  Gradients are averaged over
    the batch in draw order, so a run is reproducible bit for bit.
    """
    examples = screen(examples)
    opt = Optimizer(model.params, opt_cfg)
    order_rng = np.random.default_rng([opt_cfg.seed, 1])
    aug_rng = np.random.default_rng([opt_cfg.seed, 2])
    order: list[int] = []
    writer = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "mean_loss", "dev_cer", "wall_ms"])
    t0 = time.perf_counter()
    try:
        for step in range(1, opt_cfg.max_steps + 1):
            model.params.zero_grad()
            total = 0.0
            for _ in range(opt_cfg.batch_size):
                if not order:
                    order = list(order_rng.permutation(len(examples))[::-1])
                ex = examples[order.pop()]
                fm = ex.features
                if mask_policy is not None:
                    fm = spec_augment(fm, mask_policy, aug_rng)
                total += utterance_loss(model, fm, ex.labels)
            for _, p in model.params.items():
                if not p.frozen:
                    p.grad /= opt_cfg.batch_size
            opt.step()
            mean_loss = total / opt_cfg.batch_size
            if callback is not None:
                callback(step, mean_loss)
            if writer is not None:
                do_eval = dev and eval_every and (step % eval_every == 0 or step == opt_cfg.max_steps)
                cer = f"{error_rate_pct(model, dev):.4f}" if do_eval else ""
                writer.writerow([step, f"{mean_loss:.6f}", cer, int(1000 * (time.perf_counter() - t0))])
            if checkpoint_dir is not None and checkpoint_every and step % checkpoint_every == 0:
                model.params.save(Path(checkpoint_dir) / f"step{step:06d}.wck")
    finally:
        if writer is not None:
            fh.close()
    return model


def pretrain(examples: Sequence[Example], enc_cfg: EncoderConfig, mask_policy: MaskPolicy | None,
             opt_cfg: OptimizerConfig = PRETRAIN_OPT, **kwargs) -> ParamStore:
    """Train a freshly initialized encoder (seeded by ``opt_cfg.seed``) on ``examples``."""
    model = AcousticModel(enc_cfg, init_params(enc_cfg, opt_cfg.seed))
    train(model, examples, opt_cfg, mask_policy, **kwargs)
    return model.params


@dataclass
class TransferPlan:
    pretrained: object  # checkpoint path or ParamStore
    finetune_bottom_k: int = 0
    include_extractor: bool = True
    include_output_layer: bool = False


def unfrozen_groups(plan: TransferPlan, n_layers: int) -> list[int]:
    """Layer groups to train: the bottom k of [extractor?, rnn 1..n], plus the output layer on request."""
    ladder = ([0] if plan.include_extractor else []) + list(range(1, n_layers + 1))
    k = plan.finetune_bottom_k
    if not 0 <= k <= len(ladder):
        raise ValueError(f"finetune_bottom_k={k} outside [0, {len(ladder)}] layer groups")
    groups = ladder[:k]
    if plan.include_output_layer:
        groups.append(n_layers + 1)
    return groups


def finetune_layerwise(plan: TransferPlan, data: Sequence[Example],
                       opt_cfg: OptimizerConfig = FINETUNE_OPT,
                       mask_policy: MaskPolicy | None = None, **kwargs) -> ParamStore:
    """Fine-tune only the bottom layer groups of a pretrained encoder.

    Everything outside the chosen groups, frozen flags included, leaves
    exactly as it came in.
    """
    src = plan.pretrained
    store = ParamStore.load(src) if not isinstance(src, ParamStore) else src.copy()
    model = AcousticModel.from_params(store)
    groups = unfrozen_groups(plan, model.cfg.n_layers)
    if not groups:
        log.info("finetune: no layer groups selected, checkpoint unchanged")
        return store
    flags = store.frozen_flags()
    store.set_trainable_groups(groups)
    try:
        train(model, data, opt_cfg, mask_policy, **kwargs)
    finally:
        store.restore_flags(flags)
    return store
