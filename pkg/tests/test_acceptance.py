"""Acceptance criteria for the desk-scale build, one test per criterion.

Each test prints a single pass/fail line (run with `pytest -s` to see them
live). The full pruning runs are shared across criteria through module
fixtures: one fixed teacher, then three seeds each of the standard run
(alpha=0.3), the random-score ablation, and the unregularized run (alpha=0).
"""

import time

import numpy as np
import pytest

from op_cases import OP_CASES, extra_cases

from grain.autodiff import grad_check, no_grad
from grain.checkpoint import checkpoint_bytes
from grain.config import RunConfig
from grain.data import batch_iter, gen_synthetic
from grain.distill import DistillConfig, backprop_with_separation, build_layer_map, distill_losses
from grain.embedding import svd_truncate
from grain.model import ModelConfig, compact, encoder_forward, init_model, model_density
from grain.pipeline import evaluate, run_grain, train_teacher
from grain.pruning import (
    ScheduleParams,
    apply_struct_reg,
    density_schedule,
    raw_importance,
    register_units,
)
from grain.report import build_report

DESK = ModelConfig()  # d=64, d_h=16, n_heads=4, d_f=256, L=4, q=64, n=32, K=2
UNIT_FRACTION = 2 * DESK.d / DESK.prunable_total()
SEEDS = (0, 1, 2)
RUN_EPOCHS = 12


def report_line(criterion, ok, detail):
    print(f"[criterion {criterion}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"criterion {criterion}: {detail}"


def desk_run_config(**kw):
    cfg = RunConfig()
    cfg.epochs = RUN_EPOCHS
    for key, value in kw.items():
        setattr(cfg, key, value)
    return cfg


@pytest.fixture(scope="module")
def dataset():
    return gen_synthetic(vocab=DESK.vocab, seq_len=DESK.seq_len, count=2560,
                         seed=1234)


@pytest.fixture(scope="module")
def teacher(dataset):
    model, accuracy = train_teacher(desk_run_config(), dataset)
    model.dev_accuracy = accuracy
    return model


def _timed_runs(config_for_seed, teacher, dataset):
    out = {}
    for seed in SEEDS:
        cfg = config_for_seed(seed)
        start = time.monotonic()
        student, trace = run_grain(cfg, teacher, dataset)
        out[seed] = (student, trace, time.monotonic() - start)
    return out


@pytest.fixture(scope="module")
def grain_runs(teacher, dataset):
    return _timed_runs(lambda s: desk_run_config(seed=s), teacher, dataset)


@pytest.fixture(scope="module")
def random_runs(teacher, dataset):
    return _timed_runs(lambda s: desk_run_config(seed=s, mode="random-score"),
                       teacher, dataset)


@pytest.fixture(scope="module")
def alpha0_runs(teacher, dataset):
    return _timed_runs(lambda s: desk_run_config(seed=s, alpha=0.0),
                       teacher, dataset)


def test_criterion_1_gradient_suite():
    start = time.monotonic()
    worst = 0.0
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        for name, fn, shapes in OP_CASES + extra_cases(seed):
            inputs = [rng.standard_normal(s) for s in shapes]
            err = grad_check(fn, inputs, seed=seed)
            worst = max(worst, err)
            assert err < 1e-5, f"{name} seed {seed}: rel err {err:.2e}"
    elapsed = time.monotonic() - start
    report_line(1, worst < 1e-5 and elapsed < 60.0,
                f"all ops below 1e-5 (worst {worst:.2e}), {elapsed:.1f}s < 60s")


def test_criterion_2_scheduler_exactness():
    sp = ScheduleParams(0.2, 0.4, 0.05)
    exact_warm = density_schedule(0.1, sp) == 1.0
    exact_end = density_schedule(0.4, sp) == 0.05
    mid = density_schedule(0.3, sp)
    report_line(2, exact_warm and exact_end and abs(mid - 0.16875) < 1e-12,
                f"s(0.1)=1 and s(0.4)=0.05 exactly, s(0.3)={mid!r}")


def test_criterion_3_mask_compact_equivalence(grain_runs):
    student = grain_runs[0][0]
    compacted = compact(student)
    rng = np.random.default_rng(99)
    worst = 0.0
    for _ in range(10):  # 10 batches of 10 inputs
        length = int(rng.integers(DESK.seq_len // 2, DESK.seq_len + 1))
        tokens = rng.integers(1, DESK.vocab, size=(10, length))
        a = encoder_forward(student, tokens).logits.data
        b = encoder_forward(compacted, tokens).logits.data
        worst = max(worst, float(np.abs(a - b).max()))
    report_line(3, worst <= 1e-5,
                f"max |logit difference| over 100 inputs = {worst:.2e} <= 1e-5")


def test_criterion_4_gradient_separation_invariance(dataset):
    teacher64 = init_model(DESK, seed=11, dtype=np.float64)
    teacher64.set_trainable(False)
    student64 = init_model(DESK, seed=12, dtype=np.float64)
    registry = register_units(student64)
    layer_map = build_layer_map(DESK.n_layers, DESK.n_layers, "full", DESK.d,
                                dtype=np.float64)
    ids, _ = next(batch_iter(dataset.train, 32, DESK.seq_len, seed=0, epoch=0))
    maps = {}
    for hw in (0.0, 1.0):
        student64.zero_grads()
        layer_map.zero_grads()
        with no_grad():
            t_states = encoder_forward(teacher64, ids)
        s_states = encoder_forward(student64, ids)
        l_ce, l_hidden = distill_losses(s_states, t_states,
                                        DistillConfig(hidden_weight=hw), layer_map)
        backprop_with_separation(l_ce, l_hidden)
        maps[hw] = raw_importance(student64, registry)
    gap = float(np.abs(maps[0.0] - maps[1.0]).max())
    report_line(4, gap <= 1e-12,
                f"importance maps at hidden_weight 0 vs 1 differ by {gap:.2e} <= 1e-12")


def test_criterion_5_density_tracking(grain_runs):
    worst_gap = -1.0
    final_ok = True
    for seed, (student, trace, _) in grain_runs.items():
        idx = {c: i for i, c in enumerate(trace.columns)}
        for row in trace.rows:
            if row[idx["step"]] == 0:
                continue
            gap = row[idx["target_density"]] - row[idx["actual_density"]]
            assert gap >= 0.0, f"seed {seed}: actual density above target"
            worst_gap = max(worst_gap, gap)
        final_ok &= abs(model_density(student) - 0.05) < UNIT_FRACTION
    report_line(5, worst_gap < UNIT_FRACTION and final_ok,
                f"worst target-actual gap {worst_gap:.6f} < {UNIT_FRACTION:.6f}; "
                f"final densities within one unit of 0.05")


def test_criterion_6_method_beats_random(teacher, dataset, grain_runs, random_runs):
    teacher_acc = teacher.dev_accuracy
    assert teacher_acc >= 0.95, f"teacher accuracy {teacher_acc:.4f} below 0.95"
    grain_accs = [evaluate(run[0], dataset.dev)[0] for run in grain_runs.values()]
    random_accs = [evaluate(run[0], dataset.dev)[0] for run in random_runs.values()]
    durations = [run[2] for run in grain_runs.values()] + \
                [run[2] for run in random_runs.values()]
    gap = float(np.mean(grain_accs) - np.mean(random_accs))
    retention = float(np.mean(grain_accs)) / teacher_acc
    # retention >= 0.85 is a soft target: recorded, never a hard failure
    print(f"[criterion 6] teacher={teacher_acc:.4f} "
          f"grain={np.mean(grain_accs):.4f} random={np.mean(random_accs):.4f} "
          f"retention={retention:.3f} ({'meets' if retention >= 0.85 else 'below'} "
          f"0.85 soft target)")
    report_line(6, gap >= 0.05 and max(durations) < 900.0,
                f"grain beats random by {gap * 100:.1f} points (>= 5); "
                f"slowest run {max(durations):.0f}s < 900s")


def test_criterion_7_structreg_defragments(grain_runs, alpha0_runs):
    reg_heads, reg_vph, plain_heads, plain_vph = [], [], [], []
    for seed in SEEDS:
        reg_report = build_report(grain_runs[seed][0])
        plain_report = build_report(alpha0_runs[seed][0])
        reg_heads.append(reg_report.total_heads)
        reg_vph.append(reg_report.mean_value_per_head)
        plain_heads.append(plain_report.total_heads)
        plain_vph.append(plain_report.mean_value_per_head)
    fewer = float(np.mean(reg_heads)) < float(np.mean(plain_heads))
    fuller = float(np.mean(reg_vph)) > float(np.mean(plain_vph))
    report_line(7, fewer and fuller,
                f"alpha=0.3 heads {reg_heads} (mean {np.mean(reg_heads):.2f}) < "
                f"alpha=0 heads {plain_heads} (mean {np.mean(plain_heads):.2f}); "
                f"value units/head {np.mean(reg_vph):.2f} > {np.mean(plain_vph):.2f}")


def test_criterion_8_regularizer_properties():
    model = init_model(DESK, seed=13)
    registry = register_units(model)
    rng = np.random.default_rng(14)
    ok = True
    for trial in range(200):
        scores = rng.uniform(0, 10, size=len(registry))
        alpha = rng.uniform(0.01, 2.0)
        for block in model.blocks:
            for head in block.heads:
                live = rng.integers(0, DESK.d_h + 1)
                head.value_mask[:] = 0
                head.value_mask[:live] = 1
        out = apply_struct_reg(scores, registry, alpha)
        ok &= bool(np.all(out <= scores + 1e-15)) and bool(np.all(out >= 0))
        for (layer, head_idx), base in registry._value_base.items():
            head = model.blocks[layer].heads[head_idx]
            if head.live_value == 0:
                ok &= bool(np.all(out[base:base + DESK.d_h] == 0.0))
    # monotone in head density with the raw score fixed
    head = model.blocks[0].heads[0]
    base = registry._value_base[(0, 0)]
    ones = np.ones(len(registry))
    prev = -1.0
    for live in range(DESK.d_h + 1):
        head.value_mask[:] = 0
        head.value_mask[:live] = 1
        value = apply_struct_reg(ones, registry, 0.3)[base]
        ok &= value >= prev
        prev = value
    report_line(8, ok, "IS_r <= IS, zero at D=0, monotone in D over randomized tables")


def test_criterion_9_svd_properties():
    rng = np.random.default_rng(15)
    e = rng.standard_normal((16, 8))
    full = svd_truncate(e, rank=8)
    recon_err = np.linalg.norm(e - full.reconstruct()) / np.linalg.norm(e)
    monotone = True
    for _ in range(5):
        m = rng.standard_normal((16, 8))
        errs = [np.linalg.norm(m - svd_truncate(m, r).reconstruct()) for r in range(1, 9)]
        monotone &= all(a >= b - 1e-10 for a, b in zip(errs, errs[1:]))
    counts_exact = all(
        svd_truncate(e, r).param_count() == (16 + 8) * r for r in (1, 3, 8)
    )
    report_line(9, recon_err < 1e-8 and monotone and counts_exact,
                f"full-rank error {recon_err:.2e} < 1e-8; error non-increasing in r; "
                f"factorized count equals (q+d)*r")


def test_criterion_10_determinism(teacher, dataset):
    cfg_a = desk_run_config(epochs=3)
    cfg_a.schedule.s_f = 0.3
    cfg_b = desk_run_config(epochs=3)
    cfg_b.schedule.s_f = 0.3
    model_a, trace_a = run_grain(cfg_a, teacher, dataset)
    model_b, trace_b = run_grain(cfg_b, teacher, dataset)
    same_ckpt = checkpoint_bytes(model_a) == checkpoint_bytes(model_b)
    same_trace = trace_a.to_csv() == trace_b.to_csv()
    report_line(10, same_ckpt and same_trace,
                "identical seed and config give byte-identical checkpoints and traces")
