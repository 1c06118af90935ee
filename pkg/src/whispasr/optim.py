"""Optimizers over a ParamStore: SGD, SGD with momentum, Adam; global-norm clipping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParamStore

OPTIMIZERS = ("sgd", "sgd_momentum", "adam")


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip_norm: float = 5.0  # <= 0 disables clipping
    batch_size: int = 4
    max_steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"optimizer kind must be one of {OPTIMIZERS}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("batch_size must be >= 1 and max_steps >= 0")


class Optimizer:
    def __init__(self, params: ParamStore, cfg: OptimizerConfig):
        self.params = params
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros(p.shape) for k, p in params.items()}
        self.v = {k: np.zeros(p.shape) for k, p in params.items()} if cfg.kind == "adam" else {}
        self.last_grad_norm = 0.0

    def trainable(self):
        return [(k, p) for k, p in self.params.items() if not p.frozen]

    def clip_scale(self) -> float:
        for k, p in self.trainable():
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteGradientError(f"non-finite gradient in {k!r}")
        norm = float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for _, p in self.trainable())))
        self.last_grad_norm = norm
        c = self.cfg.grad_clip_norm
        return c / norm if c > 0 and norm > c else 1.0

    def step(self) -> None:
        cfg = self.cfg
        scale = self.clip_scale()
        self.t += 1
        lr = cfg.learning_rate
        for k, p in self.trainable():
            g = p.grad * scale if scale != 1.0 else p.grad
            if cfg.kind == "sgd":
                p.value -= lr * g
            elif cfg.kind == "sgd_momentum":
                self.m[k] = cfg.momentum * self.m[k] + g
                p.value -= lr * self.m[k]
            else:
                self.m[k] = cfg.beta1 * self.m[k] + (1 - cfg.beta1) * g
                self.v[k] = cfg.beta2 * self.v[k] + (1 - cfg.beta2) * g * g
                mhat = self.m[k] / (1 - cfg.beta1 ** self.t)
                vhat = self.v[k] / (1 - cfg.beta2 ** self.t)
                p.value -= lr * mhat / (np.sqrt(vhat) + cfg.eps)


def optimizer_step(params: ParamStore, opt: Optimizer) -> ParamStore:
    opt.step()
    return params
