"""End-to-end acceptance checks, one test per criterion.

Each test records a single ``ACCEPTANCE <n> PASS|FAIL`` line through the
``acceptance`` fixture; the lines are listed together at the end of the run.
"""
import json
import time

import numpy as np
import pytest

from involnet.cli import EXIT_OK, RunConfig, dispatch, prepare_dataset
from involnet.involution import InvolutionSpec, apply_kernels, inv_forward
from involnet.model import ModelVariant, build_model, model_to_bytes, storage_size_mb, summarize
from involnet.train import epoch_log_csv, evaluate, metrics_from_confusion, train

from test_involution import check_involution_gradients, oracle_involution, random_weights
from test_layers import (bn_grad_errors, conv_grad_errors, dense_grad_errors, pool_grad_errors,
                         xent_grad_errors)
from test_model import TABLE_1

GRAD_TOL = 1e-4
ORACLE_TOL = 1e-12


def test_1_table_reproduction(acceptance):
    start = time.perf_counter()
    s = summarize(build_model(ModelVariant("hybrid", 3)))
    rows = [(r.kind, r.output_shape, r.params) for r in s.rows]
    aux_ok = all(r.aux_shape == (48, 48, 9, 1, 1) for r in s.rows if r.kind == "Involution")
    totals = (s.total, s.trainable, s.non_trainable)
    elapsed = time.perf_counter() - start
    ok = rows == TABLE_1 and aux_ok and totals == (356_624, 356_234, 390) and elapsed < 1
    acceptance(1, "layer table for hybrid(3)", ok, f"totals {totals}, {elapsed:.2f}s")


def test_2_storage_constants(acceptance):
    inv_total = summarize(build_model("inv-only")).total
    hybrid_mb = round(storage_size_mb(build_model("hybrid")), 2)
    inv_mb = round(storage_size_mb(build_model("inv-only")), 2)
    ok = inv_total == 885_200 and hybrid_mb == 1.36 and inv_mb == 3.38
    acceptance(2, "inv-only params and storage sizes", ok,
               f"inv-only {inv_total}, {hybrid_mb} MB / {inv_mb} MB")


def test_3_hybrid_family(acceptance):
    start = time.perf_counter()
    x = np.random.default_rng(0).random((1, 48, 48, 3))
    bad = []
    for n in range(7):
        model = build_model(ModelVariant("hybrid", n), seed=n)
        out = model.forward(x)
        if summarize(model).total != 356_546 + 26 * n or out.shape != (1, 2) or not np.all(np.isfinite(out)):
            bad.append(n)
    elapsed = time.perf_counter() - start
    acceptance(3, "hybrid(n) totals and forward for n=0..6", not bad and elapsed < 10,
               f"failing n={bad}, {elapsed:.2f}s")


def test_4_gradient_suite(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    checks = {
        "involution": lambda: check_involution_gradients(rng, train=bool(rng.integers(2))),
        "conv2d": lambda: (conv_grad_errors(rng), None),
        "maxpool": lambda: (pool_grad_errors(rng), None),
        "batchnorm": lambda: (bn_grad_errors(rng), None),
        "dense": lambda: (dense_grad_errors(rng), None),
        "softmax-xent": lambda: (xent_grad_errors(rng), None),
    }
    worst = {}
    ok = True
    for name, check in checks.items():
        worst[name] = 0.0
        for _ in range(5):
            errors, zero = check()
            worst[name] = max(worst[name], max(errors.values()))
            if zero is not None:
                # train-mode BN cancels the reduce bias; its gradient must vanish
                ok &= zero[0] < 1e-12 and zero[1] < 1e-8
    ok &= all(v < GRAD_TOL for v in worst.values())
    elapsed = time.perf_counter() - start
    ok &= elapsed < 120
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    acceptance(4, "finite-difference gradients (5 instances per layer)", ok, f"{detail}; {elapsed:.1f}s")


def test_5_oracle_equivalence(acceptance):
    start = time.perf_counter()
    rng = np.random.default_rng(55)
    worst = 0.0
    for _ in range(20):
        c = int(rng.choice([1, 3]))
        shape = (int(rng.integers(1, 3)), int(rng.integers(1, 7)), int(rng.integers(1, 7)), c)
        spec = InvolutionSpec(c, 3, 1, 2)
        w = random_weights(spec, rng)
        x = rng.normal(size=shape)
        mode = bool(rng.integers(2))
        y, kernels, _ = inv_forward(x, {k: v.copy() for k, v in w.items()}, spec, mode)
        y_ref, k_ref = oracle_involution(x, w, spec, mode)
        worst = max(worst, np.abs(y - y_ref).max(), np.abs(kernels - k_ref).max())
    elapsed = time.perf_counter() - start
    acceptance(5, "involution vs nested-loop oracle (20 instances)", worst < ORACLE_TOL and elapsed < 10,
               f"max diff {worst:.1e}, {elapsed:.2f}s")


def test_6_involution_properties(acceptance):
    rng = np.random.default_rng(66)
    spec = InvolutionSpec(3, 3, 1, 2)
    w = random_weights(spec, rng)

    x = np.broadcast_to(rng.normal(size=3), (2, 8, 8, 3)).copy()
    _, kernels, _ = inv_forward(x, w, spec)
    uniform = np.abs(kernels - kernels[0, 0, 0]).max()

    x = rng.normal(size=(1, 12, 12, 3))
    dy, dx = 2, 3
    xs = np.roll(x, (dy, dx), axis=(1, 2))
    y, _, _ = inv_forward(x, w, spec)
    ys, _, _ = inv_forward(xs, w, spec)
    shift = np.abs(ys[0, dy + 1:-1, dx + 1:-1] - y[0, 1:-1 - dy, 1:-1 - dx]).max()

    single = InvolutionSpec(1, 3, 1, 1)
    y, kernels, _ = inv_forward(x, w, spec)
    sharing = all(np.array_equal(apply_kernels(x[..., c:c + 1], kernels, single)[..., 0], y[..., c])
                  for c in range(3))

    ok = uniform <= 1e-12 and shift <= 1e-9 and sharing
    acceptance(6, "kernel uniformity, shift equivariance, channel sharing", ok,
               f"uniformity {uniform:.1e}, shift {shift:.1e}, sharing exact={sharing}")


@pytest.fixture(scope="module")
def synthetic_run():
    cfg = RunConfig(command="train", synthetic=250, seed=7, epochs=3)
    ds = prepare_dataset(cfg)
    runs = []
    for _ in range(2):
        model, records = train(build_model("hybrid", seed=cfg.seed), ds, cfg.train_config())
        runs.append((model, records))
    return ds, runs


def test_7_synthetic_end_to_end(acceptance, synthetic_run):
    ds, runs = synthetic_run
    (m1, r1), (m2, r2) = runs
    x, y = ds.arrays("test")
    metrics = evaluate(m1, x, y)
    same = model_to_bytes(m1) == model_to_bytes(m2) and epoch_log_csv(r1) == epoch_log_csv(r2)
    sizes = ds.split_sizes()
    ok = metrics.accuracy >= 90.0 and same and sizes == {"train": 1600, "val": 50, "test": 50}
    acceptance(7, "synthetic hybrid(3) test accuracy >= 90%, deterministic", ok,
               f"acc {metrics.accuracy:.1f} recall {metrics.recall:.1f} f1 {metrics.f1:.1f} "
               f"after {len(r1)} epochs, identical reruns={same}")


def test_8_ablation_report(acceptance, tmp_path):
    argv = ["ablate", "--synthetic", "250", "--augment", "off", "--epochs", "1", "--seed", "7",
            "--out-dir", str(tmp_path)]
    code = dispatch(argv)
    rows = json.loads((tmp_path / "report.json").read_text()) if code == EXIT_OK else []
    csv_lines = (tmp_path / "report.csv").read_text().splitlines() if code == EXIT_OK else []
    ok = (code == EXIT_OK and len(rows) == 7 and len(csv_lines) == 8
          and [r["params"] for r in rows] == [356_546 + 26 * n for n in range(7)]
          and [r["variant"] for r in rows] == [ModelVariant("hybrid", n).label for n in range(7)])
    trend = " ".join(f"{r['accuracy']:.0f}" for r in rows)
    acceptance(8, "ablate writes a 7-row report for n=0..6", ok, f"accuracy by n: {trend}")


def test_9_metrics(acceptance, synthetic_run):
    a = metrics_from_confusion([[3, 1], [1, 3]])
    b = metrics_from_confusion([[8, 2], [4, 6]])
    c = metrics_from_confusion([[5, 0], [0, 5]])
    p, r = np.array([8 / 12, 6 / 8]), np.array([0.8, 0.6])
    b_f1 = 100 * np.mean(2 * p * r / (p + r))
    examples = ((a.accuracy, a.recall, a.f1) == (75.0, 75.0, 75.0)
                and (b.accuracy, b.recall) == (70.0, 70.0) and abs(b.f1 - b_f1) < 1e-12
                and (c.accuracy, c.recall, c.f1) == (100.0, 100.0, 100.0))
    ds, runs = synthetic_run
    sums = True
    for model, _ in runs:
        for split in ("val", "test"):
            x, y = ds.arrays(split)
            sums &= int(evaluate(model, x, y).confusion.sum()) == len(y)
    acceptance(9, "metric examples and confusion totals", examples and sums,
               f"examples exact={examples}, confusion sums={sums}")


def test_10_cli_train_determinism(acceptance, tmp_path):
    outputs = []
    for name in ("a", "b"):
        argv = ["train", "--synthetic", "40", "--epochs", "2", "--seed", "7",
                "--out-dir", str(tmp_path / name)]
        assert dispatch(argv) == EXIT_OK
        outputs.append([(tmp_path / name / f).read_bytes() for f in ("model.ivcn", "epochs.csv")])
    ok = outputs[0] == outputs[1]
    acceptance(10, "two train runs give byte-identical model.ivcn and epochs.csv", ok,
               f"model {len(outputs[0][0])} bytes")
