import subprocess
import sys

import pytest

from whispasr.cli import main
from whispasr.corpus import Manifest
from whispasr.params import ParamStore


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    w = tmp_path_factory.mktemp("cli")
    assert main(["synth-data", "--out-dir", str(w / "data"), "--n-sentences", "6", "--max-len", "4",
                 "--seed", "1"]) == 0
    assert main(["featurize", "--manifest", str(w / "data" / "manifest.jsonl"), "--out-dir", str(w / "feats"),
                 "--n-mels", "16"]) == 0
    assert main(["train", "--out", str(w / "pre.wck"), "--train-manifest", str(w / "feats" / "manifest.jsonl"),
                 "--vocab", str(w / "data" / "vocab.json"), "--n-mels", "16", "--units", "4",
                 "--conv-channels", "2,4", "--max-steps", "3", "--seed", "0"]) == 0
    return w


def test_synth_and_featurize_outputs(work):
    m = Manifest.load(work / "feats" / "manifest.jsonl")
    assert len(m) == 12 and {r.style for r in m} == {"normal", "whisper"}
    assert all(r.source.endswith(".wfe") for r in m)
    assert (work / "data" / "transcripts.txt").read_text().count("\n") == 6
    assert (work / "feats" / "featurize.resolved.cfg").exists()


def test_train_writes_log_and_resolved_config(work):
    header = (work / "pre.wck.log.csv").read_text().splitlines()[0]
    assert header == "step,mean_loss,dev_cer,wall_ms"
    cfg = (work / "pre.wck.resolved.cfg").read_text()
    assert "max_steps = 3" in cfg and "seed = 0" in cfg


def test_finetune_bottom_k_zero_copies_checkpoint(work, capsys):
    code, out, _ = run(["finetune", "--out", work / "ft0.wck", "--pretrained", work / "pre.wck",
                        "--train-manifest", work / "feats" / "manifest.jsonl",
                        "--vocab", work / "data" / "vocab.json", "--bottom-k", "0", "--seed", "0"], capsys)
    assert code == 0
    assert (work / "ft0.wck").read_bytes() == (work / "pre.wck").read_bytes()
    assert str(work / "ft0.wck") in out


def test_finetune_bottom_k_one_moves_only_extractor(work, capsys):
    code, _, _ = run(["finetune", "--out", work / "ft1.wck", "--pretrained", work / "pre.wck",
                      "--train-manifest", work / "feats" / "manifest.jsonl", "--mix", "whisper_only",
                      "--vocab", work / "data" / "vocab.json", "--bottom-k", "1", "--max-steps", "2",
                      "--n-mels", "16", "--seed", "0"], capsys)
    assert code == 0
    pre, ft = ParamStore.load(work / "pre.wck"), ParamStore.load(work / "ft1.wck")
    for name, p in pre.items():
        same = p.value.tobytes() == ft.value(name).tobytes()
        assert same or p.layer_index == 0, name


def test_decode_and_score(work, capsys):
    code, _, _ = run(["decode", "--out", work / "hyp.txt", "--checkpoint", work / "pre.wck",
                      "--manifest", work / "feats" / "manifest.jsonl", "--vocab", work / "data" / "vocab.json",
                      "--n-mels", "16", "--beam-width", "2"], capsys)
    assert code == 0
    assert len((work / "hyp.txt").read_text().splitlines()) == 12
    assert (work / "hyp.txt.nbest.tsv").exists()
    code, out, _ = run(["score", "--ref", work / "feats" / "manifest.jsonl", "--hyp", work / "hyp.txt",
                        "--vocab", work / "data" / "vocab.json", "--out", work / "report.csv"], capsys)
    assert code == 0 and out.startswith("CER ")


def test_score_identical_files(tmp_path, capsys):
    (tmp_path / "a.txt").write_text("hello world\nsecond line\n")
    code, out, _ = run(["score", "--ref", tmp_path / "a.txt", "--hyp", tmp_path / "a.txt"], capsys)
    assert code == 0
    assert out.splitlines()[0] == "CER 0.00%"


def test_augment_stats(tmp_path, capsys):
    code, out, _ = run(["augment-stats", "--out", tmp_path / "h.csv", "--n-mels", "20", "--n-samples", "500",
                        "--mask-origin", "LIN", "--mask-f1", "1", "--mask-f2", "5", "--seed", "0"], capsys)
    assert code == 0 and str(tmp_path / "h.csv") in out
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "f0,count,empirical,expected" and len(lines) == 21
    assert sum(int(l.split(",")[1]) for l in lines[1:]) == 500


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "a.cfg"
    cfg.write_text("n_samples = 300\nn_mels = 10\nmask_f1 = 1\nmask_f2 = 5\nseed = 2\n")
    code, _, _ = run(["augment-stats", "--config", cfg, "--out", tmp_path / "h.csv", "--n-mels", "12"], capsys)
    assert code == 0
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert len(lines) == 13
    assert sum(int(l.split(",")[1]) for l in lines[1:]) == 300


def test_usage_errors_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("no_such_key = 1\n")
    with pytest.raises(SystemExit) as e:
        main(["augment-stats", "--config", str(cfg), "--out", str(tmp_path / "h.csv"), "--seed", "0"])
    assert e.value.code == 2
    assert "no_such_key" in capsys.readouterr().err
    with pytest.raises(SystemExit) as e:
        main(["augment-stats", "--out", str(tmp_path / "h.csv")])
    assert e.value.code == 2
    assert "--seed" in capsys.readouterr().err
    with pytest.raises(SystemExit) as e:
        main(["score", "--ref", "x"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["augment-stats", "--config", str(tmp_path / "missing.cfg"), "--out", "h.csv", "--seed", "0"])
    assert e.value.code == 2


def test_runtime_error_exits_1(tmp_path, capsys):
    code, out, err = run(["score", "--ref", tmp_path / "missing.txt", "--hyp", tmp_path / "missing.txt"], capsys)
    assert code == 1
    assert err.startswith("whispasr: error:") and out == ""


def test_help_lists_defaults():
    res = subprocess.run([sys.executable, "-m", "whispasr", "decode", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "default: 0.3" in res.stdout and "default: rescore" in res.stdout
    top = subprocess.run([sys.executable, "-m", "whispasr", "--help"], capture_output=True, text=True)
    for name in ("featurize", "synth-data", "partition", "augment-stats", "train", "finetune", "probe",
                 "vc-train", "vc-apply", "gen-pseudo", "decode", "score"):
        assert name in top.stdout


def test_lm_train_from_manifest(work, capsys):
    code, out, _ = run(["lm-train", "--out", work / "lm.wck", "--text", work / "feats" / "manifest.jsonl",
                        "--vocab", work / "data" / "vocab.json", "--lm-units", "4", "--max-steps", "2",
                        "--seed", "0"], capsys)
    assert code == 0 and str(work / "lm.wck") in out
    assert ParamStore.load(work / "lm.wck").names()[0].startswith("lm.")
