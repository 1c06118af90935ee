import numpy as np
import pytest

from whispasr.charlm import EOS, CharLM, LmConfig, lm_train
from whispasr.nn import logsumexp
from whispasr.optim import OptimizerConfig

from helpers import fd_check


def _zero_lm(symbols="abc"):
    lm = CharLM(LmConfig(tuple(symbols), units=4))
    for _, p in lm.params.items():
        p.value[...] = 0.0
    return lm


def test_zero_model_is_uniform():
    lm = _zero_lm()
    lp, _ = lm.lm_score([], "a")
    assert lp == pytest.approx(-np.log(4))  # three symbols + end marker


def test_stepwise_sum_equals_sequence_score_and_normalizes():
    lm = CharLM(LmConfig(tuple("abc"), units=5), seed=3)
    seq = list("abcab")
    state, total = None, 0.0
    prefix = []
    for s in seq:
        lp, state = lm.lm_score(prefix, s, state)
        total += lp
        prefix.append(s)
        assert abs(logsumexp(state[1])) < 1e-6
    total += lm.lm_score(prefix, EOS, state)[0]
    assert total == pytest.approx(lm.sequence_log_prob(seq), abs=1e-9)
    # same prefix -> same next-step scores
    a = lm.lm_score(list("ab"), "c")[0]
    b = lm.lm_score(list("ab"), "c")[0]
    assert a == b


def test_unknown_symbol_and_marker_validation():
    lm = CharLM(LmConfig(tuple("ab"), units=3))
    with pytest.raises(ValueError):
        lm.lm_score([], "z")
    with pytest.raises(ValueError):
        LmConfig(("a", "</s>"))


def test_lm_gradients():
    lm = CharLM(LmConfig(tuple("abc"), units=3, layers=2), seed=1)
    seq = list("abcca")
    lm.params.zero_grad()
    lm.loss_and_grad(seq)
    for _, p in lm.params.items():
        fd_check(lambda: -lm.sequence_log_prob(seq), p.value, p.grad.copy(), max_checks=10)


def test_memorization_run():
    cfg = LmConfig(tuple("abcde"), units=16)
    lm = lm_train([list("abcde")] * 200, cfg, OptimizerConfig(kind="adam", learning_rate=1e-2,
                                                               batch_size=4, max_steps=500, seed=0))
    assert lm.perplexity([list("abcde")]) < 1.1


def test_bigram_memorization():
    cfg = LmConfig(tuple("ab"), units=8)
    lm = lm_train([list("abababab")] * 20, cfg, OptimizerConfig(kind="adam", learning_rate=1e-2,
                                                                batch_size=2, max_steps=300, seed=0))
    assert np.exp(lm.lm_score(list("aba"), "b")[0]) > 0.9


def test_zero_steps_is_initial_model_and_seeded():
    cfg = LmConfig(tuple("ab"), units=4)
    corpus = [list("abba")]
    a = lm_train(corpus, cfg, OptimizerConfig(max_steps=0, seed=5))
    b = CharLM(cfg, seed=5)
    assert a.perplexity(corpus) == b.perplexity(corpus)
    with pytest.raises(ValueError):
        lm_train([], cfg, OptimizerConfig(max_steps=1))


def test_loss_decreases_on_random_text():
    rng = np.random.default_rng(0)
    corpus = [list(rng.choice(list("abcd"), size=8)) for _ in range(30)]
    losses = []
    lm_train(corpus, LmConfig(tuple("abcd"), units=8),
             OptimizerConfig(kind="adam", learning_rate=1e-2, batch_size=4, max_steps=50, seed=0),
             log=lambda s, l: losses.append(l))
    avg = np.convolve(losses, np.ones(5) / 5, mode="valid")
    assert avg[-1] < avg[0]


def test_scorer_protocol_uses_label_indices():
    lm = CharLM(LmConfig(tuple("ab"), units=3), seed=2)
    s0 = lm.initial_state()
    lp, _ = lm.score(s0, 2)
    assert lp == pytest.approx(lm.lm_score([], "b")[0])
    with pytest.raises(ValueError):
        lm.score(s0, 0)
