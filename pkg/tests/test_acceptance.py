"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import json
import math
import time
import warnings
from dataclasses import replace

import numpy as np
import pytest

from mmfall.augment import AugmentConfig, apply_augmentation, augment_windows, mixup, rotate_xy
from mmfall.autograd import (BatchNormState, Tensor, activation, batch_norm, conv1d_same, dropout, grad_check,
                             linear, lstm_sequence, scaled_dot_product_attention)
from mmfall.bench import benchmark_latency
from mmfall.data.rebalance import oversample, rebalance_split
from mmfall.data.recordings import (ACC_COUNTS_PER_G, GYRO_COUNTS_PER_DPS, RawRecording, normalize_units,
                                    preprocess, segment_windows)
from mmfall.data.splits import make_splits
from mmfall.data.synthetic import synth_activity_windows, synth_generate
from mmfall.data.windows import Batch
from mmfall.errors import NormalizationError
from mmfall.experiment import ExperimentConfig, run_experiment
from mmfall.losses import LossConfig, binary_cross_entropy, composite_loss, cross_entropy, focal_loss
from mmfall.metrics import auc_roc, binary_metrics, confusion_matrix
from mmfall.model import ModelConfig, forward, init_model, mha_forward
from mmfall.training import (CONV_PREFIXES, TrainConfig, epochs_to_threshold, phase1_config, train,
                             transfer_finetune, transfer_pretrain, validate)

from conftest import make_window, tiny_config

# small network for the multi-seed statistical criteria (8 and 9)
SMALL = dict(conv_channels=16, physio_dim_out=8, lstm_layers=1, lstm_hidden=16, attn_heads=2, context_dim=16)


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail, level=None):
        tag = level or ("PASS" if ok else "FAIL")
        with capsys.disabled():
            print(f"\nCRITERION {n:>2} {tag}: {detail}")
    return emit


# -- 1 -----------------------------------------------------------------------------------

def test_criterion_01_gradients(verdict):
    rng = np.random.default_rng(0)
    T = lambda *shape: Tensor(rng.normal(size=shape))   # noqa: E731
    checks = {}
    x, w, b = T(3, 4), T(4, 5), T(5)
    checks["linear"] = grad_check(lambda: (linear(x, w, b) ** 2).sum(), [x, w, b])
    xc, k, kb = T(2, 7, 3), T(4, 3, 5), T(4)
    checks["conv1d_same"] = grad_check(lambda: (conv1d_same(xc, k, kb) ** 2).sum(), [xc, k, kb])
    xb, g, be = T(2, 5, 3), T(3), T(3)
    wb = rng.normal(size=(2, 5, 3))
    for mode in (True, False):
        checks[f"batch_norm[train={mode}]"] = grad_check(
            lambda: (batch_norm(xb, g, be, BatchNormState.fresh(3), mode) * wb).sum(), [xb, g, be])
    xd = T(4, 6)
    checks["dropout"] = grad_check(lambda: (dropout(xd, 0.3, True, np.random.default_rng(1)) ** 2).sum(), [xd])
    for mode in ("relu", "sigmoid", "tanh", "softmax_lastdim"):
        xa = Tensor(rng.normal(size=(3, 4)) + 0.05)
        wa = rng.normal(size=(3, 4))
        checks[f"activation[{mode}]"] = grad_check(lambda: (activation(xa, mode) * wa).sum(), [xa])
    xl, wih, whh, bl = T(2, 5, 3), T(3, 16), T(4, 16), T(16)
    wl = rng.normal(size=(2, 5, 4))
    for rev in (False, True):
        checks[f"lstm[reverse={rev}]"] = grad_check(
            lambda: (lstm_sequence(xl, wih, whh, bl, reverse=rev) * wl).sum(), [xl, wih, whh, bl])
    q, kk, v = T(2, 4, 3), T(2, 4, 3), T(2, 4, 3)
    checks["attention"] = grad_check(lambda: (scaled_dot_product_attention(q, kk, v)[0] ** 2).sum(), [q, kk, v])
    c = tiny_config()
    pm = init_model(c, 0)
    h = T(2, 5, 8)
    checks["multi_head_attention"] = grad_check(lambda: (mha_forward(h, pm, 2)[0] ** 2).sum(),
                                                [h] + [pm[n] for n in pm.names() if n.startswith("attn.")])
    pf = Tensor(rng.uniform(0.05, 0.95, size=6))
    yf = rng.integers(0, 2, size=6)
    checks["focal_loss"] = grad_check(lambda: focal_loss(pf, yf), [pf])
    checks["bce"] = grad_check(lambda: binary_cross_entropy(pf, yf), [pf])
    z = T(4, 6)
    checks["cross_entropy"] = grad_check(lambda: cross_entropy(z, np.array([0, 3, 5, 1])), [z])
    batch = Batch.from_windows([make_window(T=12, seed=1, y_fall=1, y_act=3), make_window(T=12, seed=2)])
    checks["composite_loss(tiny model)"] = grad_check(
        lambda: composite_loss(forward(batch, pm, c), batch, LossConfig()), list(pm.tensors.values()))

    start = time.perf_counter()
    full = ModelConfig()
    fp = init_model(full, 0)
    fb = Batch.from_windows([make_window(seed=3, y_fall=1, y_act=3), make_window(seed=4)])
    checks["full model, B=2"] = grad_check(lambda: composite_loss(forward(fb, fp, full), fb, LossConfig()),
                                           list(fp.tensors.values()))
    full_s = time.perf_counter() - start

    failed = [n for n, r in checks.items() if not r.passed]
    worst = max(r.max_rel_err for r in checks.values())
    ok = not failed and full_s < 120.0
    verdict(1, ok, f"{len(checks)} grad checks, worst rel err {worst:.2e}, full-model check {full_s:.1f}s"
            + (f", failed: {failed}" if failed else ""))
    assert ok


# -- 2 -----------------------------------------------------------------------------------

def test_criterion_02_dimension_chain(verdict):
    c = ModelConfig()
    batch = Batch.from_windows([make_window(seed=0), make_window(seed=1, y_fall=1, y_act=3)])
    out = forward(batch, init_model(c, 0), c)
    a = out.activations
    shapes = {"acc_features": (2, 100, 192), "gyro_features": (2, 100, 192), "physio_features": (2, 100, 32),
              "fused": (2, 100, 416), "lstm": (2, 100, 256), "context": (2, 128)}
    bad = {k: a[k].shape for k, s in shapes.items() if a[k].shape != s}
    p = out.p_fall.data
    ok = (not bad and out.p_fall.shape == (2,) and bool(((p > 0) & (p < 1)).all())
          and np.abs(out.activity_probs().sum(axis=1) - 1).max() <= 1e-6
          and np.abs(out.attention_weights.sum(axis=-1) - 1).max() <= 1e-6)
    verdict(2, ok, "motion 2x100x192, physio 2x100x32, fused 2x100x416, BiLSTM 2x100x256, context 2x128"
            + (f"; mismatches {bad}" if bad else ""))
    assert ok


# -- 3 -----------------------------------------------------------------------------------

def test_criterion_03_loss_oracles(verdict):
    fl = focal_loss([0.5], [1], 0.25, 2.0).item()
    e1 = abs(fl - 0.25 * 0.25 * math.log(2))
    rng = np.random.default_rng(3)
    e2 = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 65))
        p = rng.uniform(1e-4, 1 - 1e-4, size=n)
        y = rng.integers(0, 2, size=n)
        e2 = max(e2, abs(focal_loss(p, y, 0.5, 0.0).item() - 0.5 * binary_cross_entropy(p, y).item()))
    e3 = abs(cross_entropy(np.zeros((5, 6)), [0, 1, 2, 3, 5]).item() - math.log(6))
    ok = e1 <= 1e-9 and e2 <= 1e-9 and e3 <= 1e-12
    verdict(3, ok, f"focal hand value err {e1:.1e}; gamma=0 focal vs 0.5*BCE max err {e2:.1e} over 1000 batches; "
                   f"uniform CE err {e3:.1e}")
    assert ok


# -- 4 -----------------------------------------------------------------------------------

def _pairwise_auc(p, y):
    pos, neg = p[y == 1], p[y == 0]
    diff = pos[:, None] - neg[None, :]
    return float(((diff > 0) + 0.5 * (diff == 0)).mean())


def test_criterion_04_metric_oracles(verdict):
    rng = np.random.default_rng(4)
    auc_err, count_bad = 0.0, 0
    for _ in range(100):
        n = int(rng.integers(2, 201))
        y = rng.integers(0, 2, size=n)
        y[0], y[1] = 0, 1
        p = rng.integers(0, 20, size=n) / 19.0            # coarse grid: many ties
        auc_err = max(auc_err, abs(auc_roc(p, y) - _pairwise_auc(p, y)))
    for _ in range(100):
        n = int(rng.integers(1, 201))
        y = rng.integers(0, 2, size=n)
        p = rng.random(n)
        thr = float(rng.uniform(0.1, 0.9))
        m = binary_metrics(p, y, thr)
        tp = fp = fn = tn = 0
        for pi, yi in zip(p, y):
            if pi >= thr:
                tp, fp = tp + (yi == 1), fp + (yi == 0)
            else:
                fn, tn = fn + (yi == 1), tn + (yi == 0)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        if m.confusion != [[tn, fp], [fn, tp]] or (m.precision, m.recall) != (prec, rec) or abs(m.f1 - f1) > 1e-12:
            count_bad += 1
        pred, truth = rng.integers(0, 6, size=n), rng.integers(0, 6, size=n)
        ref = np.zeros((6, 6), dtype=int)
        for t_, p_ in zip(truth, pred):
            ref[t_, p_] += 1
        if not (confusion_matrix(pred, truth) == ref).all():
            count_bad += 1
    ok = auc_err <= 1e-9 and count_bad == 0
    verdict(4, ok, f"AUC vs pairwise oracle max err {auc_err:.1e} (100 tied instances); "
                   f"{count_bad} count mismatches over 100 instances")
    assert ok


# -- 5 -----------------------------------------------------------------------------------

def test_criterion_05_augmentation(verdict):
    rng = np.random.default_rng(5)
    planar, z_exact = 0.0, True
    for _ in range(1000):
        x = rng.normal(size=(50, 3))
        y = rotate_xy(x, rng.uniform(-np.pi, np.pi))
        planar = max(planar, float(np.abs(np.hypot(y[:, 0], y[:, 1]) - np.hypot(x[:, 0], x[:, 1])).max()))
        z_exact &= y[:, 2].tobytes() == x[:, 2].tobytes()
    w = make_window(seed=5)
    ids = [
        apply_augmentation(w, "jitter", AugmentConfig(jitter_sigma=0.0), rng).A.tobytes() == w.A.tobytes(),
        apply_augmentation(w, "time_shift", AugmentConfig(), rng, shift=0).A.tobytes() == w.A.tobytes(),
        augment_windows([w, make_window(seed=6)], AugmentConfig(enabled=False), 0).A.tobytes()
        == Batch.from_windows([w, make_window(seed=6)]).A.tobytes(),
    ]
    mix_err = 0.0
    for i in range(200):
        a, b = make_window(seed=i), make_window(seed=1000 + i)
        m, lam, _ = mixup(a, b, 0.2, rng)
        for u, v, o in ((a.A, b.A, m.A), (a.G, b.G, m.G), (a.P, b.P, m.P)):
            mix_err = max(mix_err, float(np.abs(o - (lam * u + (1 - lam) * v)).max()))
    ok = planar <= 1e-9 and z_exact and all(ids) and mix_err <= 1e-12
    verdict(5, ok, f"rotation planar-norm err {planar:.1e}, z bit-exact {z_exact}; identities {ids}; "
                   f"mixup err {mix_err:.1e}")
    assert ok


# -- 6 -----------------------------------------------------------------------------------

def test_criterion_06_pipeline(verdict):
    corpus = [make_window(T=4, subject=f"s{s:02d}", seed=s * 10 + i) for s in range(12) for i in range(2)]
    leaks = 0
    for seed in range(1000):
        for strategy in ("subject_70_15_15", "kfold", "loso"):
            for sp in make_splits(corpus, strategy, seed=seed, k=5):
                tr, va, te = ({w.subject_id for w in part} for part in (sp.train, sp.val, sp.test))
                leaks += bool(tr & va or tr & te or va & te)
    count_bad = 0
    for n in range(100, 1001, 7):
        rec = RawRecording("s", "D01", False, np.ones((n, 3)), np.zeros((n, 3)), 200.0, normalized=True)
        count_bad += len(segment_windows(rec, 100, 0.5)) != (n - 100) // 50 + 1
    raw = RawRecording("s", "D01", False, [[16384.0, 0, 0]], [[131.0, 0, 0]], 200.0)
    once = preprocess(raw)
    exact = once.acc[0, 0] == 16384.0 / ACC_COUNTS_PER_G == 1.0 and once.gyro[0, 0] == 131.0 / GYRO_COUNTS_PER_DPS
    try:
        normalize_units(once)
        refused = False
    except NormalizationError:
        refused = True
    twice_safe = preprocess(once).acc[0, 0] == 1.0
    ws = [make_window(T=8, y_fall=int(i % 10 == 0), y_act=3 if i % 10 == 0 else 0, subject=f"s{i % 6}", seed=i)
          for i in range(120)]
    sp = make_splits(ws, seed=0)[0]
    val_ids, test_ids = [id(w) for w in sp.val], [id(w) for w in sp.test]
    rb = rebalance_split(sp, "oversample")
    untouched = [id(w) for w in rb.val] == val_ids and [id(w) for w in rb.test] == test_ids
    grew = len(rb.train) > len(sp.train) and len(oversample(sp.train)) == len(rb.train)
    ok = leaks == 0 and count_bad == 0 and exact and refused and twice_safe and untouched and grew
    verdict(6, ok, f"{leaks} subject leaks over 1000 seeds x 3 strategies; {count_bad} window-count mismatches; "
                   f"scaling exact {exact}, double scaling refused {refused}; val/test untouched {untouched}")
    assert ok


# -- 7 -----------------------------------------------------------------------------------

def test_criterion_07_end_to_end(verdict, tmp_path):
    cfg = ExperimentConfig.from_dict({"seed": 0, "train": {"max_epochs": 30}})
    assert (cfg.data.n_subjects, cfg.data.split, cfg.model) == (40, "subject_70_15_15", ModelConfig())
    start = time.perf_counter()
    res = run_experiment(cfg, tmp_path / "e2e")
    minutes = (time.perf_counter() - start) / 60
    rep, base = res["report"], res["baselines"]
    falls = sum(w.y_fall for s in (res["split"].train, res["split"].val, res["split"].test) for w in s)
    total = sum(len(s) for s in (res["split"].train, res["split"].val, res["split"].test))
    ok = rep.f1 >= 0.90 and rep.f1 > base["threshold"]["f1"] and "f1" in base["knn"]
    verdict(7, ok, f"model F1 {rep.f1:.3f} (P {rep.precision:.3f} R {rep.recall:.3f} AUC {rep.auc_roc}); "
                   f"threshold F1 {base['threshold']['f1']:.3f}; KNN F1 {base['knn']['f1']:.3f}; "
                   f"{falls}/{total} fall windows; {len(res['state'].history)} epochs in {minutes:.1f} min")
    assert ok


# -- 8 -----------------------------------------------------------------------------------

def test_criterion_08_focal_vs_bce(verdict):
    mc = ModelConfig(**SMALL)
    table = []
    for seed in range(5):
        # one fall per 21 windows per subject: 20:1
        sp = make_splits(synth_generate(40, 21, 1 / 21, seed=seed), "subject_70_15_15", seed)[0]
        row = {"seed": seed}
        for main in ("focal", "bce"):
            cfg = TrainConfig(max_epochs=30, seed=seed, loss=LossConfig(main_loss=main))
            params, _ = train(init_model(mc, seed), mc, sp, cfg)
            row[main] = validate(params, mc, sp.test, cfg.loss)[1].recall
        table.append(row)
    med_focal = float(np.median([r["focal"] for r in table]))
    med_bce = float(np.median([r["bce"] for r in table]))
    ok = med_bce <= med_focal
    seeds = "; ".join(f"seed {r['seed']}: focal {r['focal']:.3f} bce {r['bce']:.3f}" for r in table)
    if not ok:
        warnings.warn(f"BCE median recall {med_bce:.3f} exceeds focal {med_focal:.3f} ({seeds})")
    verdict(8, ok, f"median recall focal {med_focal:.3f} vs BCE {med_bce:.3f} [{seeds}]",
            level=None if ok else "WARN")


# -- 9 -----------------------------------------------------------------------------------

def test_criterion_09_transfer(verdict):
    mc = ModelConfig(**SMALL)
    motion = replace(mc, modalities=("acc", "gyro"))
    max_epochs = 20
    runs, frozen_ok = [], True
    for seed in range(3):
        target = make_splits(synth_generate(16, 20, 0.1, seed=seed), "subject_70_15_15", seed)[0]
        source = synth_activity_windows(20, 20, seed=seed + 100)
        cfg = TrainConfig(max_epochs=max_epochs, seed=seed)
        p1, _, _ = transfer_pretrain(motion, source, replace(cfg, max_epochs=10))
        snaps = {}

        def grab(epoch, params, state):
            snaps[epoch] = b"".join(params[n].data.tobytes() for n in params.names() if n.startswith(CONV_PREFIXES))

        _, st_t = transfer_finetune((phase1_config(motion), p1), target, mc, cfg, unfreeze_after=10,
                                    on_epoch_start=grab)
        frozen_ok &= len({snaps[e] for e in range(10)}) == 1 and snaps[10] == snaps[9]
        _, st_s = train(init_model(mc, seed), mc, target, cfg)
        runs.append((st_t, st_s))
    # threshold: a quarter of the median first-epoch validation loss of the scratch runs
    tau = 0.25 * float(np.median([s.history[0].val_loss for _, s in runs]))

    def epochs(state, level):
        e = epochs_to_threshold(state, level)
        return max_epochs + 1 if e is None else e

    med_t = float(np.median([epochs(t, tau) for t, _ in runs]))
    med_s = float(np.median([epochs(s, tau) for _, s in runs]))
    sweep = ", ".join(f"tau={lv:.2f}: {np.median([epochs(t, lv) for t, _ in runs]):.0f} vs "
                      f"{np.median([epochs(s, lv) for _, s in runs]):.0f}" for lv in (0.3, 0.2, 0.15, 0.1, 0.05))
    ok = med_t <= med_s and frozen_ok
    verdict(9, ok, f"median epochs to val loss <= {tau:.3f}: transfer {med_t:.0f} vs scratch {med_s:.0f}; "
                   f"convs bit-identical while frozen {frozen_ok}; sweep (transfer vs scratch) {sweep}")
    assert ok


# -- 10 ----------------------------------------------------------------------------------

def test_criterion_10_latency(verdict):
    c = ModelConfig()
    rep = benchmark_latency((c, init_model(c, 0)), iters=2000, warmup=50)
    ok = rep.mean_ms < 50.0 and rep.measured_iters >= 2000 and rep.p50_ms <= rep.p95_ms
    verdict(10, ok, f"mean {rep.mean_ms:.2f} ms, p50 {rep.p50_ms:.2f}, p95 {rep.p95_ms:.2f}, max {rep.max_ms:.2f} "
                    f"over {rep.measured_iters} iters ({rep.platform_label})")
    assert ok


# -- 11 ----------------------------------------------------------------------------------

def test_criterion_11_determinism(verdict, tmp_path):
    cfg = ExperimentConfig.from_dict({
        "seed": 7,
        "data": {"n_subjects": 8, "windows_per_subject": 10, "fall_fraction": 0.2, "window_len": 40},
        "model": {"window_len": 40, "kernel_sizes": [3, 5], "conv_channels": 4, "physio_dim_out": 3,
                  "lstm_layers": 1, "lstm_hidden": 4, "attn_heads": 2, "context_dim": 6},
        "train": {"max_epochs": 3, "batch_size": 16},
    })
    a = run_experiment(cfg, tmp_path / "a")
    b = run_experiment(cfg, tmp_path / "b")
    same_hist = a["state"].history == b["state"].history
    files = ("reports/eval_report.json", "csv/history.csv", "model.ckpt")
    same_files = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files)
    ok = same_hist and same_files and json.loads((tmp_path / "a" / files[0]).read_text())["n_samples"] > 0
    verdict(11, ok, f"history identical {same_hist}; eval report, history CSV and checkpoint byte-identical {same_files}")
    assert ok
