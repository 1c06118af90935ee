"""``whispasr`` command line: one subcommand per workflow step.

Every option can come from a flat ``key = value`` config file (``--config``)
or from a flag; flags win.  The fully resolved option set of each run is
written next to its main output.
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .kvconfig import format_kv_config, parse_kv_config

log = logging.getLogger("whispasr")

REQUIRED = object()


class UsageError(Exception):
    pass


def _bool(s) -> bool:
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


@dataclass(frozen=True)
class Key:
    name: str
    type: Callable
    default: object
    help: str
    choices: tuple = ()

    def with_default(self, default) -> "Key":
        return Key(self.name, self.type, default, self.help, self.choices)

    @property
    def flag(self) -> str:
        return "--" + self.name.replace("_", "-")


FEATURE_KEYS = [
    Key("n_mels", int, 80, "Mel bins"),
    Key("n_fft", int, 512, "FFT size"),
    Key("win_ms", float, 25.0, "analysis window length in ms"),
    Key("hop_ms", float, 10.0, "frame hop in ms"),
    Key("fmin_hz", float, 0.0, "lowest filterbank frequency"),
    Key("fmax_hz", float, 8000.0, "highest filterbank frequency"),
    Key("add_delta", _bool, True, "append delta features"),
    Key("delta_window", int, 2, "delta regression half-window"),
]
MASK_KEYS = [
    Key("mask_origin", str, "none", "frequency-mask origin distribution (none disables augmentation)",
        ("none", "UNI", "LIN", "GEO")),
    Key("mask_f1", int, 0, "minimum frequency-mask width"),
    Key("mask_f2", int, 27, "maximum frequency-mask width"),
    Key("n_freq_masks", int, 2, "frequency masks per utterance"),
    Key("geo_rho", float, 0.95, "ratio of the GEO origin distribution"),
    Key("time_mask_t", int, 40, "maximum time-mask width in frames"),
    Key("n_time_masks", int, 1, "time masks per utterance"),
]
ENCODER_KEYS = [
    Key("extractor", str, "freq_divided", "CNN extractor", ("standard", "freq_divided")),
    Key("conv_channels", str, "toy", "channel preset (toy/small/standard) or 'c1,c2'"),
    Key("low_high_split", str, "", "freq_divided output channels 'low,high' (empty = default split)"),
    Key("recurrent_kind", str, "gru", "recurrent cell", ("gru", "lstm")),
    Key("n_layers", int, 2, "bidirectional recurrent layers"),
    Key("units", int, 16, "units per direction"),
]


def _opt_keys(kind="adam", lr=1e-3, batch=1, steps=1000):
    return [
        Key("optimizer", str, kind, "optimizer", ("sgd", "sgd_momentum", "adam")),
        Key("learning_rate", float, lr, "learning rate"),
        Key("momentum", float, 0.9, "momentum for sgd_momentum"),
        Key("grad_clip_norm", float, 5.0, "global gradient-norm clip (<= 0 disables)"),
        Key("batch_size", int, batch, "utterances (or rows) per step"),
        Key("max_steps", int, steps, "optimizer steps"),
    ]


DATA_KEYS = [
    Key("train_manifest", str, REQUIRED, "training manifest(s), comma separated"),
    Key("mix", str, "mix_random", "training-mix strategy",
        ("mix_random", "oversample_whisper", "whisper_only", "normal_only")),
    Key("limit", int, 0, "use only the first N records of the mix (0 = all)"),
    Key("vocab", str, REQUIRED, "vocabulary JSON"),
    Key("dev_manifest", str, "", "dev manifest for CER in the training log"),
    Key("eval_every", int, 0, "dev evaluation interval in steps"),
    Key("checkpoint_every", int, 0, "intermediate checkpoint interval in steps"),
]


# -- helpers -----------------------------------------------------------------

def _save_manifest(m, path) -> Path:
    """Save with sources relative to the manifest's directory."""
    from .corpus import Manifest, UtteranceRecord
    path = Path(path)
    base = path.parent.resolve()
    recs = [UtteranceRecord(r.id, os.path.relpath(Path(r.source).resolve(), base), r.transcript,
                            r.speaker, r.style, r.sentence_id) for r in m]
    return Manifest(recs).save(path)


def _feature_cfg(c):
    from .features import FeatureConfig
    return FeatureConfig(c["n_fft"], c["win_ms"], c["hop_ms"], c["n_mels"], c["fmin_hz"],
                         c["fmax_hz"], c["add_delta"], c["delta_window"])


def _mask_policy(c):
    from .augment import MaskPolicy
    if c["mask_origin"] == "none":
        return None
    return MaskPolicy(c["mask_f1"], c["mask_f2"], c["n_freq_masks"], c["mask_origin"], c["geo_rho"],
                      c["time_mask_t"], c["n_time_masks"])


def _opt_cfg(c):
    from .optim import OptimizerConfig
    return OptimizerConfig(kind=c["optimizer"], learning_rate=c["learning_rate"], momentum=c["momentum"],
                           grad_clip_norm=c["grad_clip_norm"], batch_size=c["batch_size"],
                           max_steps=c["max_steps"], seed=c["seed"])


def _pair(s: str) -> tuple[int, int]:
    parts = [int(p) for p in s.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated integers, got {s!r}")
    return parts[0], parts[1]


def _training_examples(c):
    from .corpus import Manifest, build_training_mix
    from .ctc import Vocabulary
    from .trainer import load_examples
    vocab = Vocabulary.load(c["vocab"])
    sources = [Manifest.load(p) for p in c["train_manifest"].split(",") if p.strip()]
    mix = build_training_mix(c["mix"], sources, c["seed"])
    records = list(mix)[: c["limit"]] if c["limit"] > 0 else list(mix)
    if not records:
        raise ValueError("training mix is empty")
    fc = _feature_cfg(c)
    examples = load_examples(Manifest(records), vocab, fc)
    dev = load_examples(Manifest.load(c["dev_manifest"]), vocab, fc) if c["dev_manifest"] else None
    return vocab, examples, dev


def _train_kwargs(c, out: Path):
    kw = {"dev": None, "eval_every": c["eval_every"], "log_path": Path(f"{out}.log.csv")}
    if c["checkpoint_every"] > 0:
        d = Path(f"{out}.ckpts")
        d.mkdir(parents=True, exist_ok=True)
        kw.update(checkpoint_dir=d, checkpoint_every=c["checkpoint_every"])
    return kw


def _read_hyp_file(path, vocab) -> list[tuple[str, list[str]]]:
    """``id<TAB>text`` lines, or plain text lines keyed by line number."""
    rows = []
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        uid, text = line.split("\t", 1) if "\t" in line else (f"line{n}", line)
        rows.append((uid, vocab.tokenize(text)))
    return rows


def _read_refs(path, vocab):
    if str(path).endswith(".jsonl"):
        from .corpus import Manifest
        return [(r.id, list(r.transcript)) for r in Manifest.load(path)]
    return _read_hyp_file(path, vocab)


# -- subcommands -------------------------------------------------------------

def cmd_synth_data(c):
    from .corpus import DEFAULT_TEMPLATES, synth_toy_corpus
    from .ctc import Vocabulary
    out = Path(c["out_dir"])
    symbols = list(c["symbols"])
    unknown = [s for s in symbols if s not in DEFAULT_TEMPLATES]
    if unknown:
        raise ValueError(f"no formant template for symbols {unknown}")
    corpus = synth_toy_corpus(c["n_sentences"], symbols, seed=c["seed"], n_speakers=c["n_speakers"],
                              out_dir=out / "wav", min_len=c["min_len"], max_len=c["max_len"])
    vocab = Vocabulary(sorted(symbols))
    text = out / "transcripts.txt"
    seen, lines = set(), []
    for r in corpus.manifest:
        if r.sentence_id not in seen:
            seen.add(r.sentence_id)
            lines.append(vocab.to_text(r.transcript))
    text.write_text("".join(t + "\n" for t in lines), encoding="utf-8")
    return [_save_manifest(corpus.manifest, out / "manifest.jsonl"), vocab.save(out / "vocab.json"),
            text, out / "wav"]


def cmd_partition(c):
    from .corpus import Manifest, SplitSpec, partition_by_sentence
    out = Path(c["out_dir"])
    parts = partition_by_sentence(Manifest.load(c["manifest"]),
                                  SplitSpec(c["n_train"], c["n_dev"], c["n_test"], c["seed"]))
    return [_save_manifest(m, out / f"{name}.jsonl") for name, m in zip(("train", "dev", "test"), parts)]


def cmd_featurize(c):
    from .corpus import Manifest, UtteranceRecord
    from .features import load_features, write_features
    out = Path(c["out_dir"])
    feats = out / "feats"
    feats.mkdir(parents=True, exist_ok=True)
    fc = _feature_cfg(c)
    recs = []
    for r in Manifest.load(c["manifest"]):
        path = write_features(feats / f"{r.id}.wfe", load_features(r.source, fc))
        recs.append(UtteranceRecord(r.id, str(path), r.transcript, r.speaker, r.style, r.sentence_id))
    return [_save_manifest(Manifest(recs), out / "manifest.jsonl"), feats]


def cmd_augment_stats(c):
    import numpy as np
    from .augment import origin_histogram, origin_weights
    policy = _mask_policy(c)
    if policy is None:
        raise ValueError("augment-stats needs a mask origin distribution")
    nu = c["n_mels"]
    counts = origin_histogram(policy, nu, c["n_samples"], np.random.default_rng(c["seed"]))
    # exact marginal of f0 over the uniformly drawn widths
    expected = np.zeros(nu)
    widths = range(policy.F1, policy.F2 + 1)
    for w in widths:
        if w > 0 and nu - w > 0:
            expected[: nu - w] += origin_weights(policy.origin_dist, nu - w, policy.geo_rho)
    expected /= max(expected.sum(), 1e-300)
    out = Path(c["out"])
    with open(out, "w", newline="\n") as f:
        f.write("f0,count,empirical,expected\n")
        total = max(int(counts.sum()), 1)
        for i in range(nu):
            f.write(f"{i},{counts[i]},{counts[i] / total:.6f},{expected[i]:.6f}\n")
    return [out]


def cmd_train(c):
    from .encoder import EncoderConfig
    from .trainer import pretrain
    vocab, examples, dev = _training_examples(c)
    first = examples[0].features
    channels = c["conv_channels"]
    from .encoder import CHANNEL_PRESETS
    conv = CHANNEL_PRESETS[channels] if channels in CHANNEL_PRESETS else _pair(channels)
    split = _pair(c["low_high_split"]) if c["low_high_split"] else None
    enc = EncoderConfig(n_mels=first.n_mels, in_channels=2 if first.has_delta else 1,
                        extractor=c["extractor"], conv_channels=conv, low_high_channel_split=split,
                        recurrent_kind=c["recurrent_kind"], n_layers=c["n_layers"],
                        units_per_direction=c["units"], vocab_size=len(vocab))
    out = Path(c["out"])
    kw = _train_kwargs(c, out)
    kw["dev"] = dev
    store = pretrain(examples, enc, _mask_policy(c), _opt_cfg(c), **kw)
    return [store.save(out), kw["log_path"]] + ([kw["checkpoint_dir"]] if "checkpoint_dir" in kw else [])


def cmd_finetune(c):
    from .trainer import TransferPlan, finetune_layerwise
    out = Path(c["out"])
    if c["bottom_k"] == 0 and not c["include_output_layer"]:
        log.warning("finetune: bottom_k=0 selects no layers; checkpoint copied unchanged")
        shutil.copyfile(c["pretrained"], out)
        return [out]
    vocab, examples, dev = _training_examples(c)
    plan = TransferPlan(c["pretrained"], c["bottom_k"], c["include_extractor"], c["include_output_layer"])
    kw = _train_kwargs(c, out)
    kw["dev"] = dev
    store = finetune_layerwise(plan, examples, _opt_cfg(c), _mask_policy(c), **kw)
    return [store.save(out), kw["log_path"]] + ([kw["checkpoint_dir"]] if "checkpoint_dir" in kw else [])


def cmd_probe(c):
    import numpy as np
    from .corpus import Manifest
    from .ctc import Vocabulary
    from .encoder import AcousticModel
    from .params import ParamStore
    from .probe import FrequencyWeightProbe, fit_frequency_weights, write_weights_csv
    from .trainer import feasible, load_examples
    store = ParamStore.load(c["checkpoint"])
    store.freeze_all()
    vocab = Vocabulary.load(c["vocab"])
    examples = [e for e in load_examples(Manifest.load(c["manifest"]), vocab, _feature_cfg(c)) if feasible(e)]
    model = AcousticModel.from_params(store, examples[0].features.n_mels if examples else None)
    probe = FrequencyWeightProbe(model.cfg.n_mels, c["r"], c["probe_lr"], c["probe_steps"], c["batch_size"])
    w_hat = fit_frequency_weights(model, [(e.features, e.labels) for e in examples], probe,
                                  np.random.default_rng(c["seed"]))
    out = Path(c["out"])
    write_weights_csv(out, w_hat)
    return [out]


def _parallel_pairs(manifest, fc):
    from .features import load_features
    normal = {(r.sentence_id, r.speaker): r for r in manifest if r.style == "normal"}
    pairs = []
    for r in manifest:
        if r.style == "whisper" and (r.sentence_id, r.speaker) in normal:
            n = normal[(r.sentence_id, r.speaker)]
            pairs.append((load_features(n.source, fc), load_features(r.source, fc)))
    if not pairs:
        raise ValueError("manifest holds no parallel normal/whisper pairs")
    return pairs


def cmd_vc_train(c):
    from .corpus import Manifest
    from .pseudo import VcConfig, build_vc_training_set, vc_train
    pairs = _parallel_pairs(Manifest.load(c["manifest"]), _feature_cfg(c))
    X, Y = build_vc_training_set(pairs, c["context_frames"], c["radius"])
    cfg = VcConfig(Y.shape[1], c["context_frames"], c["hidden_layers"], c["hidden_units"])
    model = vc_train(X, Y, cfg, _opt_cfg(c))
    log.info("vc-train: %d aligned frames, final train MSE %.5f", len(X), model.mse(X, Y))
    return [model.params.save(Path(c["out"]))]


def _load_vc(path):
    from .params import ParamStore
    from .pseudo import VcModel
    return VcModel.from_params(ParamStore.load(path))


def cmd_vc_apply(c):
    from .features import load_features, write_features
    from .pseudo import vc_apply
    fm = vc_apply(_load_vc(c["vc"]), load_features(c["input"], _feature_cfg(c)))
    return [write_features(Path(c["out"]), fm)]


def cmd_gen_pseudo(c):
    from .corpus import Manifest
    from .pseudo import generate_pseudo_corpus
    out = Path(c["out_dir"])
    normal = Manifest.load(c["manifest"]).by_style("normal")
    if not len(normal):
        raise ValueError("manifest has no normal-style records")
    pseudo = generate_pseudo_corpus(_load_vc(c["vc"]), normal, out / "feats", _feature_cfg(c))
    return [_save_manifest(pseudo, out / "manifest.jsonl"), out / "feats"]


def cmd_lm_train(c):
    from .charlm import LmConfig, lm_train
    from .ctc import Vocabulary
    vocab = Vocabulary.load(c["vocab"])
    if c["text"].endswith(".jsonl"):
        from .corpus import Manifest
        seen, corpus = set(), []
        for r in Manifest.load(c["text"]):
            if r.sentence_id not in seen:
                seen.add(r.sentence_id)
                corpus.append(list(r.transcript))
    else:
        corpus = [vocab.tokenize(line) for line in Path(c["text"]).read_text(encoding="utf-8").splitlines()
                  if line.strip()]
    lm = lm_train(corpus, LmConfig(tuple(vocab.labels), c["lm_units"], c["lm_layers"]), _opt_cfg(c))
    log.info("lm-train: training perplexity %.4f", lm.perplexity(corpus))
    return [lm.params.save(Path(c["out"]))]


def cmd_decode(c):
    from . import ctc
    from .charlm import CharLM
    from .corpus import Manifest
    from .encoder import AcousticModel
    from .features import load_features
    from .params import ParamStore
    vocab = ctc.Vocabulary.load(c["vocab"])
    manifest = Manifest.load(c["manifest"])
    fc = _feature_cfg(c)
    model = None
    lm = CharLM.from_params(vocab.labels, ParamStore.load(c["lm"])) if c["lm"] else None
    out = Path(c["out"])
    nbest_path = Path(f"{out}.nbest.tsv")
    hyp_lines, nbest_rows = [], []
    for r in manifest:
        fm = load_features(r.source, fc)
        if model is None:
            model = AcousticModel.from_params(ParamStore.load(c["checkpoint"]), fm.n_mels)
        lp = model.posteriorgram(fm).log_probs
        if lm is not None and c["lm_mode"] == "fusion":
            ranked = [ctc.ScoredHypothesis(h.labels, h.ctc_score, h.lm_score, h.score)
                      for h in ctc.beam_decode(lp, c["beam_width"], lm, c["beta"], c["gamma"])]
        else:
            nbest = ctc.beam_decode(lp, c["beam_width"])
            ranked = ctc.rescore_nbest(nbest, lm, c["beta"] if lm is not None else 0.0, c["gamma"])
        ranked = ranked[: c["nbest"]]
        for k, h in enumerate(ranked, 1):
            nbest_rows.append((r.id, k, h.score, h.ctc_score, h.lm_score, vocab.to_text(vocab.decode(h.labels))))
        best = vocab.to_text(vocab.decode(ranked[0].labels)) if ranked else ""
        hyp_lines.append(f"{r.id}\t{best}\n")
    out.write_text("".join(hyp_lines), encoding="utf-8")
    return [out, ctc.write_nbest_tsv(nbest_path, nbest_rows)]


def cmd_score(c):
    from .ctc import Vocabulary
    from .scoring import format_table, score_pairs, write_report_csv
    vocab = Vocabulary.load(c["vocab"]) if c["vocab"] else Vocabulary([], "char")
    refs = _read_refs(c["ref"], vocab)
    hyps = dict(_read_hyp_file(c["hyp"], vocab))
    missing = [u for u, _ in refs if u not in hyps]
    if missing:
        raise ValueError(f"{len(missing)} reference ids missing from the hypotheses, e.g. {missing[0]}")
    report = score_pairs([(u, r, hyps[u]) for u, r in refs], {"ref": c["ref"], "hyp": c["hyp"]})
    metric = "PER" if vocab.tokenizer == "phone" else "CER"
    log.info("\n%s", format_table(report))
    print(f"{metric} {report.error_rate:.2f}%")
    return [write_report_csv(report, Path(c["out"]))] if c["out"] else []


@dataclass
class Command:
    name: str
    help: str
    keys: list
    run: Callable
    stochastic: bool = False
    output: str = "out"  # key naming the main output (file or directory)


COMMANDS = [
    Command("synth-data", "render a synthetic parallel normal/whisper corpus", [
        Key("out_dir", str, REQUIRED, "output directory"),
        Key("n_sentences", int, 50, "distinct sentences"),
        Key("n_speakers", int, 1, "speakers per sentence"),
        Key("symbols", str, "aeiou", "symbol inventory (single characters)"),
        Key("min_len", int, 3, "minimum sentence length"),
        Key("max_len", int, 8, "maximum sentence length"),
    ], cmd_synth_data, True, "out_dir"),
    Command("partition", "split a manifest into train/dev/test by sentence", [
        Key("manifest", str, REQUIRED, "input manifest"),
        Key("out_dir", str, REQUIRED, "output directory"),
        Key("n_train", int, 400, "train sentences"),
        Key("n_dev", int, 25, "dev sentences"),
        Key("n_test", int, 25, "test sentences"),
    ], cmd_partition, True, "out_dir"),
    Command("featurize", "compute log-Mel (+delta) features for a manifest", [
        Key("manifest", str, REQUIRED, "input manifest"),
        Key("out_dir", str, REQUIRED, "output directory"),
        *FEATURE_KEYS,
    ], cmd_featurize, False, "out_dir"),
    Command("augment-stats", "histogram of sampled frequency-mask origins", [
        Key("out", str, REQUIRED, "output CSV"),
        Key("n_mels", int, 80, "Mel bins"),
        Key("n_samples", int, 100000, "mask draws"),
        *[k.with_default("UNI") if k.name == "mask_origin" else k for k in MASK_KEYS],
    ], cmd_augment_stats, True),
    Command("train", "CTC pre-training of a fresh encoder", [
        Key("out", str, REQUIRED, "output checkpoint"),
        *DATA_KEYS, *ENCODER_KEYS, *_opt_keys(), *MASK_KEYS, *FEATURE_KEYS,
    ], cmd_train, True),
    Command("finetune", "layer-wise transfer: fine-tune the bottom k layer groups", [
        Key("out", str, REQUIRED, "output checkpoint"),
        Key("pretrained", str, REQUIRED, "pretrained checkpoint"),
        Key("bottom_k", int, 0, "bottom layer groups to unfreeze (0 = keep checkpoint)"),
        Key("include_extractor", _bool, True, "count the CNN extractor as the first group"),
        Key("include_output_layer", _bool, False, "also fine-tune the projection layer"),
        *DATA_KEYS, *_opt_keys("sgd", 1e-2, 1, 300), *MASK_KEYS, *FEATURE_KEYS,
    ], cmd_finetune, True),
    Command("probe", "learn frequency-importance weights of a frozen model", [
        Key("out", str, REQUIRED, "output CSV of softmax weights"),
        Key("checkpoint", str, REQUIRED, "model checkpoint"),
        Key("manifest", str, REQUIRED, "probe data"),
        Key("vocab", str, REQUIRED, "vocabulary JSON"),
        Key("r", float, 1.0, "suppression scale"),
        Key("probe_lr", float, 0.1, "ascent step size"),
        Key("probe_steps", int, 200, "ascent steps"),
        Key("batch_size", int, 8, "utterances per step"),
        *FEATURE_KEYS,
    ], cmd_probe, True),
    Command("vc-train", "train the normal-to-whisper frame mapping", [
        Key("out", str, REQUIRED, "output checkpoint"),
        Key("manifest", str, REQUIRED, "manifest with parallel normal/whisper records"),
        Key("context_frames", int, 4, "context frames on each side"),
        Key("hidden_layers", int, 4, "hidden ReLU layers"),
        Key("hidden_units", int, 32, "hidden layer width"),
        Key("radius", int, 10, "FastDTW radius"),
        *_opt_keys("adam", 1e-3, 32, 2000), *FEATURE_KEYS,
    ], cmd_vc_train, True),
    Command("vc-apply", "convert one feature file", [
        Key("out", str, REQUIRED, "output feature file"),
        Key("vc", str, REQUIRED, "VC checkpoint"),
        Key("input", str, REQUIRED, "input features (.wfe) or audio (.wav)"),
        *FEATURE_KEYS,
    ], cmd_vc_apply),
    Command("gen-pseudo", "convert every normal record into pseudo whisper features", [
        Key("out_dir", str, REQUIRED, "output directory"),
        Key("vc", str, REQUIRED, "VC checkpoint"),
        Key("manifest", str, REQUIRED, "source manifest (normal records are used)"),
        *FEATURE_KEYS,
    ], cmd_gen_pseudo, False, "out_dir"),
    Command("lm-train", "train the character language model", [
        Key("out", str, REQUIRED, "output checkpoint"),
        Key("text", str, REQUIRED, "training text (one transcript per line) or a .jsonl manifest"),
        Key("vocab", str, REQUIRED, "vocabulary JSON"),
        Key("lm_units", int, 64, "GRU units"),
        Key("lm_layers", int, 1, "GRU layers"),
        *_opt_keys("adam", 1e-2, 8, 500),
    ], cmd_lm_train, True),
    Command("decode", "beam-search decoding with optional LM rescoring or fusion", [
        Key("out", str, REQUIRED, "output hypotheses (id<TAB>text)"),
        Key("checkpoint", str, REQUIRED, "acoustic model checkpoint"),
        Key("manifest", str, REQUIRED, "utterances to decode"),
        Key("vocab", str, REQUIRED, "vocabulary JSON"),
        Key("lm", str, "", "LM checkpoint (empty = no LM)"),
        Key("lm_mode", str, "rescore", "how the LM enters", ("rescore", "fusion")),
        Key("beam_width", int, 8, "beam width"),
        Key("nbest", int, 8, "hypotheses kept per utterance"),
        Key("beta", float, 0.3, "LM weight"),
        Key("gamma", float, 0.0, "length bonus"),
        *FEATURE_KEYS,
    ], cmd_decode),
    Command("score", "error rate of hypotheses against references", [
        Key("ref", str, REQUIRED, "references: text lines or a .jsonl manifest"),
        Key("hyp", str, REQUIRED, "hypotheses: text lines"),
        Key("vocab", str, "", "vocabulary JSON (sets the tokenizer; default characters)"),
        Key("out", str, "", "optional report CSV"),
    ], cmd_score),
]

ALL_KEYS = {k.name for cmd in COMMANDS for k in cmd.keys} | {"seed", "threads", "log_level"}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="whispasr", description="Whispered-speech CTC recognition toolkit.")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for cmd in COMMANDS:
        sp = sub.add_parser(cmd.name, help=cmd.help, description=cmd.help)
        sp.add_argument("--config", help="key = value config file (flags override it)")
        seed_help = "random seed (required)" if cmd.stochastic else "random seed (unused)"
        sp.add_argument("--seed", type=int, default=None, help=seed_help)
        sp.add_argument("--threads", type=int, default=None, help="worker cap (default: 1)")
        sp.add_argument("--log-level", default=None, choices=("debug", "info", "warning", "error"),
                        help="logging verbosity (default: warning)")
        for k in cmd.keys:
            d = "required" if k.default is REQUIRED else f"default: {k.default}"
            sp.add_argument(k.flag, dest=k.name, default=None, choices=k.choices or None,
                            type=str if k.type is _bool else k.type, help=f"{k.help} ({d})")
        sp.set_defaults(_cmd=cmd)
    return p


def resolve(cmd: Command, args: argparse.Namespace) -> dict:
    """Defaults < config file < flags, every value converted and checked."""
    file_cfg = {}
    if args.config:
        try:
            file_cfg = parse_kv_config(Path(args.config).read_text(encoding="utf-8"))
        except OSError as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from None
        except ValueError as e:
            raise UsageError(f"{args.config}: {e}") from None
        unknown = sorted(set(file_cfg) - ALL_KEYS)
        if unknown:
            raise UsageError(f"{args.config}: unknown keys {unknown}")
    keys = cmd.keys + [Key("seed", int, None, ""), Key("threads", int, 1, ""),
                       Key("log_level", str, "warning", "", ("debug", "info", "warning", "error"))]
    out = {}
    for k in keys:
        raw = getattr(args, k.name, None)
        if raw is None:
            raw = file_cfg.get(k.name, k.default)
        if raw is REQUIRED:
            raise UsageError(f"{cmd.name}: missing required option {k.flag}")
        try:
            val = k.type(raw) if raw is not None else None
        except ValueError as e:
            raise UsageError(f"{cmd.name}: bad value for {k.name}: {e}") from None
        if k.choices and val not in k.choices:
            raise UsageError(f"{cmd.name}: {k.name} must be one of {list(k.choices)}")
        out[k.name] = val
    if cmd.stochastic and out["seed"] is None:
        raise UsageError(f"{cmd.name}: --seed is required")
    if out["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    return out


def _resolved_path(cmd: Command, c: dict) -> Path:
    if cmd.output == "out_dir":
        return Path(c["out_dir"]) / f"{cmd.name}.resolved.cfg"
    if c.get("out"):
        return Path(f"{c['out']}.resolved.cfg")
    return None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cmd: Command = args._cmd
    try:
        c = resolve(cmd, args)
    except UsageError as e:
        parser.exit(2, f"whispasr: error: {e}\n")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(c["threads"])
    logging.basicConfig(level=c["log_level"].upper(), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        if cmd.output == "out_dir":
            Path(c["out_dir"]).mkdir(parents=True, exist_ok=True)
        elif c.get("out"):
            Path(c["out"]).parent.mkdir(parents=True, exist_ok=True)
        artifacts = cmd.run(c)
        rp = _resolved_path(cmd, c)
        if rp is not None:
            shown = {k: v for k, v in c.items() if k != "log_level"}
            rp.write_text(f"# whispasr {cmd.name}\n" + format_kv_config(
                {k: ("" if v is None else v) for k, v in shown.items()}), encoding="utf-8")
            artifacts.append(rp)
    except Exception as e:  # noqa: BLE001  (reported as a runtime failure)
        log.debug("failure", exc_info=True)
        print(f"whispasr: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    for a in artifacts:
        print(a)
    return 0


if __name__ == "__main__":
    sys.exit(main())
