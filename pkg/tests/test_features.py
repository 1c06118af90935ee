import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from whispasr import features as F
from whispasr.features import AudioClip, FeatureConfig, FeatureMatrix


def test_stft_frame_count_and_zero_input():
    cfg = FeatureConfig()
    mag = F.stft_magnitude(AudioClip(np.zeros(16000)), cfg)
    assert mag.shape == (1 + (16000 - 400) // 160, 257)
    assert not mag.any()


def test_stft_too_short():
    with pytest.raises(F.UtteranceTooShortError, match="too short"):
        F.stft_magnitude(AudioClip(np.zeros(100)), FeatureConfig())


def test_sinusoid_energy_concentrates_in_its_bin():
    cfg = FeatureConfig()
    k = 40
    t = np.arange(16000) / 16000
    x = 0.5 * np.sin(2 * np.pi * k * 16000 / cfg.n_fft * t)
    power = F.stft_magnitude(AudioClip(x), cfg) ** 2
    share = power[:, k - 1:k + 2].sum(axis=1) / power.sum(axis=1)
    assert share.min() >= 0.9


def test_parseval_per_frame():
    cfg = FeatureConfig()
    x = np.random.default_rng(0).uniform(-1, 1, 4000)
    mag = F.stft_magnitude(AudioClip(x), cfg)
    frames = F.frame_signal(x, cfg.win_samples, cfg.hop_samples) * F.hann_window(cfg.win_samples)
    n = cfg.n_fft
    # one-sided spectrum: interior bins count twice
    spec = mag ** 2
    full = spec[:, 0] + spec[:, -1] + 2 * spec[:, 1:-1].sum(axis=1)
    np.testing.assert_allclose(full / n, (frames ** 2).sum(axis=1), rtol=1e-6)


def test_log_mel_flat_and_zero_frames():
    cfg = FeatureConfig()
    fb = F.mel_filterbank(cfg)
    flat = F.log_mel(np.ones((1, 257)), cfg).data[0]
    np.testing.assert_allclose(flat, np.log(fb.sum(axis=1)), rtol=1e-12)
    zero = F.log_mel(np.zeros((1, 257)), cfg).data[0]
    np.testing.assert_allclose(zero, np.log(cfg.log_floor))


def test_log_mel_scale_shift_and_monotone():
    cfg = FeatureConfig()
    mag = np.random.default_rng(1).uniform(0.5, 2.0, (3, 257))
    base = F.log_mel(mag, cfg).data
    np.testing.assert_allclose(F.log_mel(3.0 * mag, cfg).data - base, 2 * np.log(3.0), atol=1e-9)
    bumped = mag.copy()
    bumped[:, 50] += 1.0
    assert (F.log_mel(bumped, cfg).data >= base).all()


def _delta_oracle(x, N):
    T = len(x)
    den = 2 * sum(n * n for n in range(1, N + 1))
    out = np.zeros_like(x)
    for t in range(T):
        for n in range(1, N + 1):
            out[t] += n * (x[min(t + n, T - 1)] - x[max(t - n, 0)])
    return out / den


def test_delta_matches_direct_summation():
    x = np.random.default_rng(2).normal(size=(10, 4))
    np.testing.assert_allclose(F.delta(x, 2), _delta_oracle(x, 2), atol=1e-9)


def test_delta_constant_and_ramp():
    assert not F.delta(np.full((8, 3), 2.5), 2).any()
    ramp = 0.7 * np.arange(12.0)[:, None]
    np.testing.assert_allclose(F.delta(ramp, 2)[2:-2], 0.7, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(1, 3))
def test_delta_linear(a, b, N):
    rng = np.random.default_rng(5)
    x, y = rng.normal(size=(7, 2)), rng.normal(size=(7, 2))
    np.testing.assert_allclose(F.delta(a * x + b * y, N), a * F.delta(x, N) + b * F.delta(y, N), atol=1e-9)


def test_add_delta_width():
    fm = FeatureMatrix(np.random.default_rng(0).normal(size=(6, 5)), 5, 10)
    out = F.add_delta(fm)
    assert out.data.shape == (6, 10) and out.has_delta
    np.testing.assert_array_equal(out.static, fm.data)


def test_normalize_moments_constant_and_idempotent():
    x = np.random.default_rng(3).normal(3.0, 2.0, size=(50, 6))
    x[:, 2] = 4.0
    out = F.normalize(FeatureMatrix(x, 6, 10)).data
    live = [0, 1, 3, 4, 5]
    assert np.abs(out[:, live].mean(axis=0)).max() < 1e-9
    np.testing.assert_allclose(out[:, live].var(axis=0), 1.0, atol=1e-6)
    assert not out[:, 2].any()
    again = F.normalize(FeatureMatrix(out, 6, 10)).data
    np.testing.assert_allclose(again, out, atol=1e-9)


def test_config_validation():
    for bad in (dict(n_mels=1), dict(win_ms=5.0, hop_ms=10.0), dict(fmax_hz=9000.0), dict(fmin_hz=8000.0)):
        with pytest.raises(ValueError):
            FeatureConfig(**bad)


def test_pipeline_deterministic_and_wav_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    clip = AudioClip(rng.uniform(-0.5, 0.5, 8000))
    cfg = FeatureConfig(n_mels=40)
    a, b = F.extract_features(clip, cfg), F.extract_features(clip, cfg)
    assert a.data.tobytes() == b.data.tobytes()
    assert a.data.shape[1] == 80 and np.isfinite(a.data).all()
    wav = F.write_wav(tmp_path / "x.wav", clip)
    back = F.read_wav(wav)
    assert np.abs(back.samples - clip.samples).max() < 1 / 32767
    fm = F.load_features(wav, cfg)
    assert fm.data.shape == a.data.shape


def test_wav_rejects_other_rates(tmp_path):
    import wave
    with wave.open(str(tmp_path / "r.wav"), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(8000)
        w.writeframes(b"\0\0" * 100)
    with pytest.raises(ValueError, match="sample rate"):
        F.read_wav(tmp_path / "r.wav")


def test_feature_file_layout(tmp_path):
    fm = FeatureMatrix(np.arange(12, dtype=float).reshape(3, 4), 2, 10)
    p = F.write_features(tmp_path / "f.wfe", fm)
    blob = p.read_bytes()
    assert blob[:4] == b"WFE1" and len(blob) == 20 + 4 * 12
    back = F.read_features(p)
    assert (back.data == fm.data).all() and back.n_mels == 2 and back.frame_hop_ms == 10
    (tmp_path / "bad.wfe").write_bytes(blob[:-4])
    with pytest.raises(ValueError, match="truncated"):
        F.read_features(tmp_path / "bad.wfe")
