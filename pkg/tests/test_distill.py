import numpy as np
import pytest

from grain import autodiff as ad
from grain.autodiff import no_grad
from grain.distill import (
    DistillConfig,
    backprop_with_separation,
    build_layer_map,
    distill_losses,
)
from grain.errors import ContractError, ParameterError
from grain.model import HiddenStates, ModelConfig, encoder_forward, init_model
from grain.pruning import raw_importance, register_units


def tiny_config(**kw):
    base = dict(d=8, d_h=4, n_heads=2, d_f=16, n_layers=2, vocab=16, seq_len=8,
                n_classes=2)
    base.update(kw)
    return ModelConfig(**base)


def forward_pair(student, teacher, tokens):
    with no_grad():
        t_states = encoder_forward(teacher, tokens)
    s_states = encoder_forward(student, tokens)
    return s_states, t_states


def test_build_layer_map():
    lm = build_layer_map(4, 4, "full", d=8)
    assert lm.pairs == [(i, i) for i in range(5)]
    for p in lm.mappings:
        np.testing.assert_array_equal(p.value, np.eye(8, dtype=np.float32))
    assert build_layer_map(4, 4, "logits-only", d=8).pairs == []
    with pytest.raises(ParameterError):
        build_layer_map(4, 4, "pyramid", d=8)
    with pytest.raises(ContractError):
        build_layer_map(4, 6, "full", d=8)


def test_identical_models_give_zero_hidden_loss():
    cfg = tiny_config()
    teacher = init_model(cfg, seed=0, dtype=np.float64)
    student = teacher.copy()
    tokens = np.array([[1, 2, 3, 4, 5, 6, 7, 8]])
    s, t = forward_pair(student, teacher, tokens)
    lm = build_layer_map(cfg.n_layers, cfg.n_layers, "full", cfg.d, dtype=np.float64)
    _, l_hidden = distill_losses(s, t, DistillConfig(), lm)
    assert l_hidden.item() == 0.0


def test_hidden_weight_zero_short_circuits():
    cfg = tiny_config()
    teacher = init_model(cfg, seed=1)
    student = init_model(cfg, seed=2)
    tokens = np.array([[1, 2, 3, 0, 0, 0, 0, 0]])
    s, t = forward_pair(student, teacher, tokens)
    lm = build_layer_map(cfg.n_layers, cfg.n_layers, "full", cfg.d)
    _, l_hidden = distill_losses(s, t, DistillConfig(hidden_weight=0.0), lm)
    assert l_hidden.item() == 0.0
    assert not l_hidden.needs_grad


def test_hidden_loss_hand_case():
    # one pair, identity mapping, H_s = [1, 0], H_t = [0, 0] -> mse 0.5
    h_s = ad.tensor(np.array([[[1.0, 0.0]]]))
    h_t = ad.tensor(np.array([[[0.0, 0.0]]]))
    logits = ad.tensor(np.zeros((1, 2)))
    student = HiddenStates(states=[h_s], logits=logits)
    teacher = HiddenStates(states=[h_t], logits=logits)
    lm = build_layer_map(0, 0, "full", d=2, dtype=np.float64)
    _, l_hidden = distill_losses(student, teacher, DistillConfig(), lm)
    assert l_hidden.item() == 0.5


def test_teacher_gets_no_gradient():
    cfg = tiny_config()
    teacher = init_model(cfg, seed=3, dtype=np.float64)
    teacher.set_trainable(False)
    student = init_model(cfg, seed=4, dtype=np.float64)
    tokens = np.array([[1, 2, 3, 4, 0, 0, 0, 0], [5, 6, 7, 8, 9, 0, 0, 0]])
    s, t = forward_pair(student, teacher, tokens)
    lm = build_layer_map(cfg.n_layers, cfg.n_layers, "full", cfg.d, dtype=np.float64)
    l_ce, l_hidden = distill_losses(s, t, DistillConfig(), lm)
    backprop_with_separation(l_ce, l_hidden)
    for p in teacher.parameters():
        assert np.all(p.grad_ce == 0.0)
        assert np.all(p.grad_aux == 0.0)
    assert any(np.abs(p.grad_ce).sum() > 0 for p in student.parameters())
    assert any(np.abs(p.grad_aux).sum() > 0 for p in student.parameters())


def test_separation_keeps_importance_invariant_to_hidden_weight():
    # frozen parameters, fixed batch: raw importance must be identical for
    # hidden_weight 0 and 1 at 64-bit precision
    cfg = tiny_config()
    teacher = init_model(cfg, seed=5, dtype=np.float64)
    teacher.set_trainable(False)
    student = init_model(cfg, seed=6, dtype=np.float64)
    reg = register_units(student)
    rng = np.random.default_rng(7)
    tokens = rng.integers(1, cfg.vocab, size=(4, cfg.seq_len))
    lm = build_layer_map(cfg.n_layers, cfg.n_layers, "full", cfg.d, dtype=np.float64)

    maps = {}
    for hw in (0.0, 1.0):
        student.zero_grads()
        lm.zero_grads()
        s, t = forward_pair(student, teacher, tokens)
        l_ce, l_hidden = distill_losses(s, t, DistillConfig(hidden_weight=hw), lm)
        backprop_with_separation(l_ce, l_hidden)
        maps[hw] = raw_importance(student, reg)
    np.testing.assert_allclose(maps[0.0], maps[1.0], atol=1e-12, rtol=0)


def test_no_separation_changes_importance():
    cfg = tiny_config()
    teacher = init_model(cfg, seed=8, dtype=np.float64)
    teacher.set_trainable(False)
    student = init_model(cfg, seed=9, dtype=np.float64)
    reg = register_units(student)
    tokens = np.random.default_rng(10).integers(1, cfg.vocab, size=(4, cfg.seq_len))
    lm = build_layer_map(cfg.n_layers, cfg.n_layers, "full", cfg.d, dtype=np.float64)

    def importance(separate):
        student.zero_grads()
        lm.zero_grads()
        s, t = forward_pair(student, teacher, tokens)
        l_ce, l_hidden = distill_losses(s, t, DistillConfig(), lm)
        backprop_with_separation(l_ce, l_hidden, separate=separate)
        return raw_importance(student, reg)

    separated = importance(True)
    mixed = importance(False)
    assert np.abs(separated - mixed).max() > 0


def test_no_separation_total_gradient_matches_separated():
    # both modes hand the optimizer the same total gradient
    cfg = tiny_config()
    teacher = init_model(cfg, seed=11, dtype=np.float64)
    teacher.set_trainable(False)
    student = init_model(cfg, seed=12, dtype=np.float64)
    tokens = np.random.default_rng(13).integers(1, cfg.vocab, size=(3, cfg.seq_len))
    lm = build_layer_map(cfg.n_layers, cfg.n_layers, "full", cfg.d, dtype=np.float64)

    def totals(separate):
        student.zero_grads()
        lm.zero_grads()
        s, t = forward_pair(student, teacher, tokens)
        l_ce, l_hidden = distill_losses(s, t, DistillConfig(), lm)
        backprop_with_separation(l_ce, l_hidden, separate=separate)
        return [p.grad_total().copy() for p in student.parameters()]

    for a, b in zip(totals(True), totals(False)):
        np.testing.assert_allclose(a, b, atol=1e-12)


def test_mismatched_sequence_lengths_rejected():
    cfg = tiny_config()
    teacher = init_model(cfg, seed=14)
    student = init_model(cfg, seed=15)
    with no_grad():
        t = encoder_forward(teacher, np.array([[1, 2, 3, 4]]))
    s = encoder_forward(student, np.array([[1, 2, 3, 4, 5, 6]]))
    lm = build_layer_map(cfg.n_layers, cfg.n_layers, "full", cfg.d)
    with pytest.raises(ContractError):
        distill_losses(s, t, DistillConfig(), lm)
