"""Character-level GRU language model for beam fusion and n-best rescoring."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .optim import Optimizer, OptimizerConfig
from .params import ParamStore

BOS = "<s>"
EOS = "</s>"


@dataclass(frozen=True)
class LmConfig:
    symbols: tuple[str, ...]
    units: int = 64
    layers: int = 1
    kind: str = "gru"

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))
        if BOS in self.symbols or EOS in self.symbols:
            raise ValueError("sentence markers must not be acoustic symbols")
        if len(set(self.symbols)) != len(self.symbols) or not self.symbols:
            raise ValueError("LM symbols must be unique and non-empty")
        if self.kind != "gru":
            raise ValueError("only the GRU language model is implemented")

    @property
    def n_in(self) -> int:
        return len(self.symbols) + 1  # symbols + BOS

    @property
    def n_out(self) -> int:
        return len(self.symbols) + 1  # symbols + EOS


def init_lm_params(cfg: LmConfig, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    n_in, U = cfg.n_in, cfg.units
    for layer in range(cfg.layers):
        b = 1.0 / np.sqrt(n_in)
        store.add(f"lm.l{layer}.w_ih", rng.uniform(-b, b, (3 * U, n_in)), layer)
        b = 1.0 / np.sqrt(U)
        store.add(f"lm.l{layer}.w_hh", rng.uniform(-b, b, (3 * U, U)), layer)
        store.add(f"lm.l{layer}.b_ih", np.zeros(3 * U), layer)
        store.add(f"lm.l{layer}.b_hh", np.zeros(3 * U), layer)
        n_in = U
    b = 1.0 / np.sqrt(U)
    store.add("lm.out.w", rng.uniform(-b, b, (U, cfg.n_out)), cfg.layers)
    store.add("lm.out.b", np.zeros(cfg.n_out), cfg.layers)
    return store


class CharLM:
    """GRU LM over ``cfg.symbols``.

    States are immutable tuples ``(hiddens, next_log_probs)`` so the same
    prefix always yields the same state.  :meth:`score` takes acoustic label
    indices (1-based, blank = 0); :meth:`lm_score` takes symbol strings.
    """

    def __init__(self, cfg: LmConfig, params: ParamStore | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_lm_params(cfg, seed)
        self.index = {s: i for i, s in enumerate(cfg.symbols)}

    @classmethod
    def from_params(cls, symbols: Sequence[str], params: ParamStore) -> "CharLM":
        layers = len({k.split(".")[1] for k in params if k.startswith("lm.l")})
        units = params.value("lm.out.w").shape[0]
        return cls(LmConfig(tuple(symbols), units, layers), params)

    def _layer(self, i):
        p = self.params
        return {k: p.value(f"lm.l{i}.{k}") for k in ("w_ih", "w_hh", "b_ih", "b_hh")}

    def _advance(self, hiddens, in_index):
        x = np.zeros(self.cfg.n_in)
        x[in_index] = 1.0
        new = []
        for i, h in enumerate(hiddens):
            p = self._layer(i)
            h, _ = nn.gru_step(p["w_ih"] @ x + p["b_ih"], h, p)
            new.append(h)
            x = h
        logp = nn.log_softmax(x @ self.params.value("lm.out.w") + self.params.value("lm.out.b"))
        return tuple(new), logp

    def initial_state(self):
        zeros = tuple(np.zeros(self.cfg.units) for _ in range(self.cfg.layers))
        return self._advance(zeros, self.cfg.n_in - 1)

    def score(self, state, symbol: int):
        """Log P(label ``symbol`` | state) and the state after consuming it."""
        k = int(symbol) - 1
        if not 0 <= k < len(self.cfg.symbols):
            raise ValueError(f"label index {symbol} outside the LM vocabulary")
        hiddens, logp = state
        return float(logp[k]), self._advance(hiddens, k)

    def final_score(self, state) -> float:
        return float(state[1][-1])

    def lm_score(self, prefix: Sequence[str], next_symbol: str, state=None):
        if state is None:
            state = self.initial_state()
            for s in prefix:
                _, state = self.score(state, self._label(s))
        if next_symbol == EOS:
            return self.final_score(state), state
        return self.score(state, self._label(next_symbol))

    def _label(self, s: str) -> int:
        if s not in self.index:
            raise ValueError(f"unknown LM symbol {s!r}")
        return self.index[s] + 1

    def sequence_log_prob(self, symbols: Sequence[str], with_eos: bool = True) -> float:
        state = self.initial_state()
        total = 0.0
        for s in symbols:
            lp, state = self.score(state, self._label(s))
            total += lp
        return total + (self.final_score(state) if with_eos else 0.0)

    # -- training -----------------------------------------------------------

    def loss_and_grad(self, symbols: Sequence[str]) -> tuple[float, int]:
        """Summed cross-entropy of one sentence (incl. end marker); grads accumulate."""
        ids = [self._label(s) - 1 for s in symbols]
        n_in = self.cfg.n_in
        inputs = [n_in - 1] + ids
        targets = ids + [self.cfg.n_out - 1]
        X = np.zeros((len(inputs), n_in))
        X[np.arange(len(inputs)), inputs] = 1.0
        caches, h = [], X
        for i in range(self.cfg.layers):
            p = self._layer(i)
            h, c = nn.gru_forward(h, p)
            caches.append((p, c))
        w, b = self.params.value("lm.out.w"), self.params.value("lm.out.b")
        logp, _ = nn.affine_log_softmax_forward(h, w, b)
        rows = np.arange(len(targets))
        loss = -float(logp[rows, targets].sum())
        dlogp = np.zeros_like(logp)
        dlogp[rows, targets] = -1.0
        dh, g = nn.affine_log_softmax_backward(dlogp, logp, h, w)
        self.params.accumulate("lm.out.w", g["w"])
        self.params.accumulate("lm.out.b", g["b"])
        for i in range(self.cfg.layers - 1, -1, -1):
            p, c = caches[i]
            dh, g = nn.gru_backward(dh, c, p)
            for k, v in g.items():
                self.params.accumulate(f"lm.l{i}.{k}", v)
        return loss, len(targets)

    def perplexity(self, corpus: Sequence[Sequence[str]]) -> float:
        nll = sum(-self.sequence_log_prob(s) for s in corpus)
        return float(np.exp(nll / sum(len(s) + 1 for s in corpus)))


def lm_train(corpus: Sequence[Sequence[str]], cfg: LmConfig, opt_cfg: OptimizerConfig,
             log=None) -> CharLM:
    """Minimize per-character cross-entropy with minibatches drawn by ``opt_cfg.seed``."""
    corpus = [list(s) for s in corpus]
    if not corpus:
        raise ValueError("empty LM training corpus")
    lm = CharLM(cfg, seed=opt_cfg.seed)
    opt = Optimizer(lm.params, opt_cfg)
    rng = np.random.default_rng(opt_cfg.seed + 1)
    order: list[int] = []
    for step in range(opt_cfg.max_steps):
        lm.params.zero_grad()
        total, count = 0.0, 0
        for _ in range(opt_cfg.batch_size):
            if not order:
                order = list(rng.permutation(len(corpus)))
            l, n = lm.loss_and_grad(corpus[order.pop()])
            total, count = total + l, count + n
        for _, p in lm.params.items():
            p.grad /= count
        opt.step()
        if log is not None:
            log(step, total / count)
    return lm
