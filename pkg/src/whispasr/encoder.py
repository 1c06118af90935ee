"""CTC acoustic encoder: CNN extractor (standard or frequency-divided), stacked
bidirectional LSTM/GRU, and a log-softmax output projection.

Layer groups (``layer_index``): 0 = extractor, 1..n_layers = recurrent layers,
n_layers + 1 = output projection.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .features import FeatureMatrix
from .params import ParamStore


class ConfigError(ValueError):
    pass


class UtteranceTooShortForModel(ValueError):
    pass


CHANNEL_PRESETS: dict[str, tuple[int, int]] = {
    "toy": (8, 16),
    "small": (16, 32),
    "standard": (64, 128),
}


def pooled(n: int) -> int:
    """Size after two ceil-mode 2x poolings."""
    return -(-(-(-n // 2)) // 2)


def default_split(channels: tuple[int, int]) -> tuple[int, int]:
    c = channels[-1]
    return c // 2, 3 * c // 2


@dataclass
class Posteriorgram:
    log_probs: np.ndarray
    downsample_factor: int = 4

    @property
    def n_frames(self) -> int:
        return self.log_probs.shape[0]


@dataclass
class EncoderConfig:
    n_mels: int = 80
    in_channels: int = 2
    extractor: str = "standard"
    conv_channels: tuple[int, int] = CHANNEL_PRESETS["toy"]
    low_high_channel_split: tuple[int, int] | None = None
    recurrent_kind: str = "gru"
    n_layers: int = 2
    units_per_direction: int = 16
    vocab_size: int = 6

    def __post_init__(self):
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        if len(self.conv_channels) != 2 or min(self.conv_channels) < 1:
            raise ConfigError("conv_channels must be two positive channel counts")
        if self.extractor not in ("standard", "freq_divided"):
            raise ConfigError(f"unknown extractor {self.extractor!r}")
        if self.recurrent_kind not in nn.GATES:
            raise ConfigError(f"unknown recurrent kind {self.recurrent_kind!r}")
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.in_channels not in (1, 2):
            raise ConfigError("in_channels must be 1 (static) or 2 (static + delta)")
        if self.vocab_size < 2:
            raise ConfigError("vocab_size must include blank and at least one symbol")
        if self.extractor == "freq_divided":
            if self.low_high_channel_split is None:
                self.low_high_channel_split = default_split(self.conv_channels)
            self.low_high_channel_split = tuple(int(c) for c in self.low_high_channel_split)
            check_budget(self.n_mels, self.conv_channels, self.low_high_channel_split)

    @property
    def branch_channels(self) -> dict[str, tuple[int, int]]:
        c1, c2 = self.conv_channels
        lo, hi = self.low_high_channel_split
        return {"low": (max(1, round(c1 * lo / c2)), lo), "high": (max(1, round(c1 * hi / c2)), hi)}

    @property
    def extractor_width(self) -> int:
        if self.extractor == "standard":
            return self.conv_channels[1] * pooled(self.n_mels)
        lo, hi = self.low_high_channel_split
        return (lo + hi) * pooled(self.n_mels // 2)


def check_budget(n_mels: int, channels, split) -> None:
    """Frequency-divided output width must equal the standard one; low branch gets fewer filters."""
    c_low, c_high = split
    if n_mels % 2:
        raise ConfigError("frequency-divided extractor needs an even number of Mel bins")
    if not 0 < c_low < c_high:
        raise ConfigError(f"need 0 < c_low < c_high, got ({c_low}, {c_high})")
    standard = channels[-1] * pooled(n_mels)
    divided = (c_low + c_high) * pooled(n_mels // 2)
    if standard != divided:
        raise ConfigError(f"channel split ({c_low}, {c_high}) gives width {divided}, "
                          f"standard extractor gives {standard}")


def _uniform(rng, shape, fan_in, gain=1.0):
    bound = gain / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# He-uniform bound for ReLU convolutions; 1/sqrt(fan_in) shrinks the signal ~6x per conv layer
RELU_GAIN = np.sqrt(6.0)


def _add_cnn(store, rng, prefix, cin, channels):
    for bi, cout in enumerate(channels):
        for ci in range(2):
            store.add(f"{prefix}.b{bi}.conv{ci}.w", _uniform(rng, (cout, cin, 3, 3), cin * 9, RELU_GAIN), 0)
            store.add(f"{prefix}.b{bi}.conv{ci}.b", np.zeros(cout), 0)
            cin = cout


def _add_rnn_direction(store, rng, prefix, kind, n_in, units, layer_index):
    g = nn.GATES[kind]
    store.add(f"{prefix}.w_ih", _uniform(rng, (g * units, n_in), n_in), layer_index)
    store.add(f"{prefix}.w_hh", _uniform(rng, (g * units, units), units), layer_index)
    if kind == "lstm":
        b = np.zeros(4 * units)
        b[units:2 * units] = 1.0
        store.add(f"{prefix}.b", b, layer_index)
    else:
        store.add(f"{prefix}.b_ih", np.zeros(3 * units), layer_index)
        store.add(f"{prefix}.b_hh", np.zeros(3 * units), layer_index)


def init_params(cfg: EncoderConfig, seed: int) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    if cfg.extractor == "standard":
        _add_cnn(store, rng, "ext", cfg.in_channels, cfg.conv_channels)
    else:
        for branch, chans in cfg.branch_channels.items():
            _add_cnn(store, rng, f"ext.{branch}", cfg.in_channels, chans)
    n_in = cfg.extractor_width
    U = cfg.units_per_direction
    for layer in range(cfg.n_layers):
        for d in ("fwd", "bwd"):
            _add_rnn_direction(store, rng, f"rnn.l{layer}.{d}", cfg.recurrent_kind, n_in, U, layer + 1)
        n_in = 2 * U
    store.add("proj.w", _uniform(rng, (2 * U, cfg.vocab_size), 2 * U), cfg.n_layers + 1)
    store.add("proj.b", np.zeros(cfg.vocab_size), cfg.n_layers + 1)
    return store


def config_from_params(store: ParamStore, n_mels: int | None = None) -> EncoderConfig:
    """Recover the architecture from parameter names and shapes."""
    names = store.names()
    divided = any(n.startswith("ext.low.") for n in names)
    last = "ext.high.b1.conv1.w" if divided else "ext.b1.conv1.w"
    first = "ext.low.b0.conv0.w" if divided else "ext.b0.conv0.w"
    layers = sorted({int(m.group(1)) for n in names if (m := re.match(r"rnn\.l(\d+)\.", n))})
    kind = "lstm" if "rnn.l0.fwd.b" in store else "gru"
    U = store.value("rnn.l0.fwd.w_hh").shape[1]
    width = store.value("rnn.l0.fwd.w_ih").shape[1]
    if divided:
        lo = store.value("ext.low.b1.conv1.w").shape[0]
        hi = store.value(last).shape[0]
        c2 = (lo + hi) // 2
        c1 = (store.value("ext.low.b0.conv1.w").shape[0] + store.value("ext.high.b0.conv1.w").shape[0]) // 2
        split = (lo, hi)
    else:
        c1 = store.value("ext.b0.conv1.w").shape[0]
        c2 = store.value(last).shape[0]
        split = None
    if n_mels is None:
        per = width // ((split[0] + split[1]) if divided else c2)
        n_mels = 4 * per * (2 if divided else 1)
    return EncoderConfig(
        n_mels=n_mels, in_channels=store.value(first).shape[1],
        extractor="freq_divided" if divided else "standard",
        conv_channels=(c1, c2), low_high_channel_split=split,
        recurrent_kind=kind, n_layers=len(layers), units_per_direction=U,
        vocab_size=store.value("proj.w").shape[1])


def _params(store, prefix):
    n = len(prefix) + 1
    return {k[n:]: store.value(k) for k in store if k.startswith(prefix + ".")}


def _cnn_forward(x, store, prefix):
    caches = []
    for bi in range(2):
        for ci in range(2):
            name = f"{prefix}.b{bi}.conv{ci}"
            x, cc = nn.conv3x3_forward(x, store.value(name + ".w"), store.value(name + ".b"))
            x, mask = nn.relu_forward(x)
            caches.append(("conv", name, cc, mask))
        x, pc = nn.maxpool2_forward(x)
        caches.append(("pool", None, pc, None))
    C, T2, F2 = x.shape
    return x.transpose(1, 0, 2).reshape(T2, C * F2), (caches, x.shape)


def _cnn_backward(dflat, cache, store, prefix):
    caches, (C, T2, F2) = cache
    d = dflat.reshape(T2, C, F2).transpose(1, 0, 2)
    for kind, name, cc, mask in reversed(caches):
        if kind == "pool":
            d = nn.maxpool2_backward(d, cc)
        else:
            d = d * mask
            d, g = nn.conv3x3_backward(d, cc, store.value(name + ".w"))
            store.accumulate(name + ".w", g["w"])
            store.accumulate(name + ".b", g["b"])
    return d


def feature_tensor(fm: FeatureMatrix | np.ndarray, n_mels: int, in_channels: int) -> np.ndarray:
    """(T, D) feature matrix as a (channel, time, Mel-bin) tensor; deltas become channel 1."""
    if isinstance(fm, FeatureMatrix):
        data, n_mels = fm.data, fm.n_mels
    else:
        data = np.asarray(fm, dtype=np.float64)
    T, D = data.shape
    if D != in_channels * n_mels:
        raise ValueError(f"feature width {D} does not match {in_channels} x {n_mels}")
    return data.reshape(T, in_channels, n_mels).transpose(1, 0, 2)


def extract_standard(x: np.ndarray, store: ParamStore):
    """Two VGG blocks over x of shape (channels, T, Mel); returns (T', D') and cache."""
    if x.shape[1] < 4:
        raise UtteranceTooShortForModel("utterance too short after downsampling")
    return _cnn_forward(x, store, "ext")


def extract_freq_divided(x: np.ndarray, store: ParamStore):
    if x.shape[1] < 4:
        raise UtteranceTooShortForModel("utterance too short after downsampling")
    half = x.shape[2] // 2
    lo, clo = _cnn_forward(x[:, :, :half], store, "ext.low")
    hi, chi = _cnn_forward(x[:, :, half:], store, "ext.high")
    return np.concatenate([lo, hi], axis=1), (clo, chi, lo.shape[1], half)


def recurrent_forward(h: np.ndarray, store: ParamStore, kind: str, layers: int):
    caches = []
    for layer in range(layers):
        pf, pb = _params(store, f"rnn.l{layer}.fwd"), _params(store, f"rnn.l{layer}.bwd")
        h, c = nn.birnn_forward(kind, h, pf, pb)
        caches.append((pf, pb, c))
    return h, caches


def recurrent_backward(dh: np.ndarray, caches, store: ParamStore, kind: str):
    for layer in range(len(caches) - 1, -1, -1):
        pf, pb, c = caches[layer]
        dh, gf, gb = nn.birnn_backward(kind, dh, c, pf, pb)
        for d, g in (("fwd", gf), ("bwd", gb)):
            for k, v in g.items():
                store.accumulate(f"rnn.l{layer}.{d}.{k}", v)
    return dh


def project(h: np.ndarray, store: ParamStore) -> Posteriorgram:
    logp, _ = nn.affine_log_softmax_forward(h, store.value("proj.w"), store.value("proj.b"))
    return Posteriorgram(logp)


@dataclass
class AcousticModel:
    cfg: EncoderConfig
    params: ParamStore = field(default=None)  # type: ignore[assignment]
    seed: int = 0

    def __post_init__(self):
        if self.params is None:
            self.params = init_params(self.cfg, self.seed)

    @classmethod
    def from_params(cls, store: ParamStore, n_mels: int | None = None) -> "AcousticModel":
        return cls(config_from_params(store, n_mels), store)

    def output_frames(self, n_frames: int) -> int:
        return pooled(n_frames)

    def forward(self, fm):
        cfg = self.cfg
        x = feature_tensor(fm, cfg.n_mels, cfg.in_channels)
        if cfg.extractor == "standard":
            h, ext_cache = extract_standard(x, self.params)
        else:
            h, ext_cache = extract_freq_divided(x, self.params)
        h, rnn_cache = recurrent_forward(h, self.params, cfg.recurrent_kind, cfg.n_layers)
        post = project(h, self.params)
        return post, (x.shape, ext_cache, rnn_cache, h, post.log_probs)

    def posteriorgram(self, fm) -> Posteriorgram:
        return self.forward(fm)[0]

    def backward(self, dlogp: np.ndarray, cache) -> np.ndarray:
        """Accumulate parameter gradients; return the gradient wrt the (T, D) input."""
        cfg = self.cfg
        xshape, ext_cache, rnn_cache, h, logp = cache
        store = self.params
        dh, g = nn.affine_log_softmax_backward(dlogp, logp, h, store.value("proj.w"))
        store.accumulate("proj.w", g["w"])
        store.accumulate("proj.b", g["b"])
        dh = recurrent_backward(dh, rnn_cache, store, cfg.recurrent_kind)
        if cfg.extractor == "standard":
            dx = _cnn_backward(dh, ext_cache, store, "ext")
        else:
            clo, chi, wlo, half = ext_cache
            dx = np.concatenate([_cnn_backward(dh[:, :wlo], clo, store, "ext.low"),
                                 _cnn_backward(dh[:, wlo:], chi, store, "ext.high")], axis=2)
        C, T, F = xshape
        return dx.transpose(1, 0, 2).reshape(T, C * F)
