import numpy as np
import pytest

from whispasr.optim import NonFiniteGradientError, Optimizer, OptimizerConfig, optimizer_step
from whispasr.params import ParamStore


def _store():
    s = ParamStore()
    s.add("a", np.array([1.0, -2.0]), 0)
    s.add("b", np.arange(6.0).reshape(2, 3), 1, frozen=True)
    s.add("c", np.array(3.5), 2)
    return s


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    s = _store()
    s.round_to_f32()
    blob = s.to_bytes()
    assert blob[:4] == b"WCK1"
    back = ParamStore.load(s.save(tmp_path / "m.wck"))
    assert back.to_bytes() == blob
    assert back["b"].frozen and back["b"].layer_index == 1 and back.value("c").shape == ()
    with pytest.raises(ValueError):
        ParamStore.from_bytes(blob + b"\0")
    with pytest.raises(ValueError):
        ParamStore.from_bytes(b"XXXX" + blob[4:])


def test_groups_and_flags():
    s = _store()
    flags = s.frozen_flags()
    s.set_trainable_groups([1])
    assert [p.frozen for _, p in s.items()] == [True, False, True]
    s.restore_flags(flags)
    assert s.frozen_flags() == flags
    s.accumulate("a", np.ones(2))
    s["b"].frozen = True
    s.accumulate("b", np.ones((2, 3)))
    assert s["a"].grad.sum() == 2 and not s["b"].grad.any()


def test_sgd_exact_and_frozen_untouched():
    s = _store()
    before = s.value("b").copy()
    s.accumulate("a", np.array([0.5, 1.0]))
    optimizer_step(s, Optimizer(s, OptimizerConfig(kind="sgd", learning_rate=0.1, grad_clip_norm=0)))
    np.testing.assert_array_equal(s.value("a"), [1.0 - 0.05, -2.0 - 0.1])
    assert s.value("b").tobytes() == before.tobytes()


def test_clipping_halves_norm_ten():
    s = ParamStore()
    s.add("p", np.zeros(2), 0)
    s.accumulate("p", np.array([6.0, 8.0]))
    opt = Optimizer(s, OptimizerConfig(kind="sgd", learning_rate=1.0, grad_clip_norm=5.0))
    opt.step()
    np.testing.assert_allclose(s.value("p"), [-3.0, -4.0])


def test_adam_quadratic_converges():
    s = ParamStore()
    s.add("p", np.array(5.0), 0)
    opt = Optimizer(s, OptimizerConfig(kind="adam", learning_rate=0.1))
    for _ in range(500):
        s.zero_grad()
        s.accumulate("p", 2 * (s.value("p") - 1.3))
        opt.step()
    assert abs(float(s.value("p")) - 1.3) < 1e-3


def test_momentum_accumulates():
    s = ParamStore()
    s.add("p", np.array(0.0), 0)
    opt = Optimizer(s, OptimizerConfig(kind="sgd_momentum", learning_rate=1.0, momentum=0.5, grad_clip_norm=0))
    for _ in range(2):
        s.zero_grad()
        s.accumulate("p", np.array(1.0))
        opt.step()
    assert float(s.value("p")) == -(1.0 + 1.5)


def test_nan_gradient_names_entry():
    s = _store()
    s.accumulate("c", np.array(np.nan))
    with pytest.raises(NonFiniteGradientError, match="'c'"):
        Optimizer(s, OptimizerConfig()).step()


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(learning_rate=0)
    with pytest.raises(ValueError):
        OptimizerConfig(kind="rmsprop")
