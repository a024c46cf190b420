"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 7-9 are desk-scale training runs.  They execute against real
CIFAR-10 when PBNN_CIFAR10_DIR points at the binary-format directory and
are skipped otherwise; synthetic twins at identical scale, thresholds, and
code path always run.  Desk runs are cached and shared across criteria.

Run with `pytest tests/test_acceptance.py -v` (the per-criterion lines are
echoed in the terminal summary).  Expect roughly 30-45 minutes for the
desk-scale runs on a laptop-class CPU.
"""

import os
import subprocess
import sys
import time

import numpy as np
import pytest

from pbnn.binarize import (
    binarize_det,
    binarize_stoch,
    hard_sigmoid,
    keyed_rng,
    theta_pwl,
    theta_pwl_backward,
    theta_tanh,
    theta_tanh_backward,
)
from pbnn.binary import extract_binary_params
from pbnn.config import RunConfig
from pbnn.data import load_cifar10, subset, synthetic_dataset
from pbnn.layers import BatchNorm, Conv2d, Dense, bn_sign_shortcut, maxpool_forward
from pbnn.network import (
    Network,
    benchmark_architecture,
    parameter_memory,
    tiny_architecture,
)
from pbnn.optim import lr_schedule, v_schedule
from pbnn.train import Trainer
from tests.conftest import record_criterion
from tests.support import probe_loss

CIFAR_DIR = os.environ.get("PBNN_CIFAR10_DIR")
needs_cifar = pytest.mark.skipif(
    not CIFAR_DIR,
    reason="set PBNN_CIFAR10_DIR to the CIFAR-10 binary directory to run",
)

DESK_EPOCHS = 10
DESK_TRAIN = 5000
DESK_TEST = 1000

_run_cache: dict = {}


def desk_config(regime, backend, seed, frac_bits=None, data="synthetic"):
    return RunConfig(
        regime=regime, backend=backend, frac_bits=frac_bits, epochs=DESK_EPOCHS,
        batch_size=8, seed=seed, arch="tiny", data=data,
        data_dir=CIFAR_DIR if data == "cifar10" else None,
        subset=DESK_TRAIN if data == "cifar10" else None,
        test_subset=DESK_TEST if data == "cifar10" else None,
        synthetic_train=DESK_TRAIN, synthetic_test=DESK_TEST,
        out="unused", figures=False,
    )


def desk_run(regime, backend, seed, frac_bits=None, data="synthetic", hooks=None):
    """Train (or reuse) one desk-scale configuration; returns (trainer, wall)."""
    key = (regime, backend, seed, frac_bits, data)
    if key in _run_cache and hooks is None:
        return _run_cache[key]
    cfg = desk_config(regime, backend, seed, frac_bits, data)
    if data == "cifar10":
        train, test = load_cifar10(cfg.data_dir)
        train, test = subset(train, DESK_TRAIN), subset(test, DESK_TEST)
    else:
        train = synthetic_dataset(DESK_TRAIN, seed=101, snr=1.0)
        test = synthetic_dataset(DESK_TEST, seed=202, snr=1.0, split="test")
    trainer = Trainer(cfg, train, test)
    start = time.perf_counter()
    trainer.fit(on_epoch=hooks)
    wall = time.perf_counter() - start
    _run_cache[key] = (trainer, wall)
    return trainer, wall


# --- fast structural criteria -----------------------------------------------


def test_criterion_5_schedule_endpoints():
    ok = (
        v_schedule(0, 50) == 1.0
        and v_schedule(49, 50) == 1000.0
        and lr_schedule(0) == 1e-3
        and lr_schedule(20) == 1e-4
        and lr_schedule(40) == 1e-5
    )
    record_criterion(5, ok, "schedule endpoints exact: v(0)=1, v(49)=1000, "
                            "eta(0)=1e-3, eta(20)=1e-4, eta(40)=1e-5")


def test_criterion_6_shape_chain():
    expected = [
        (128, 32, 32), (128, 32, 32), (128, 16, 16), (128, 16, 16),
        (256, 16, 16), (256, 8, 8), (256, 8, 8), (512, 8, 8), (512, 4, 4),
        (1024,), (1024,), (10,),
    ]
    chain = [shape for _, shape in benchmark_architecture().shape_chain()]
    record_criterion(6, chain == expected,
                     f"benchmark architecture reproduces all {len(expected)} output shapes")


def test_criterion_1_gradient_correctness():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    cases = 0
    failures = []

    def fd_check(f, x, analytic, n_coords=6, h=1e-5, rtol=1e-3, atol=1e-6):
        nonlocal cases, failures
        flat = x.reshape(-1)
        coords = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
        for c in coords:
            xp, xm = flat.copy(), flat.copy()
            xp[c] += h
            xm[c] -= h
            num = (f(xp.reshape(x.shape)) - f(xm.reshape(x.shape))) / (2 * h)
            ana = analytic.reshape(-1)[c]
            if abs(ana - num) > atol + rtol * max(abs(ana), abs(num)):
                failures.append((f.__name__ if hasattr(f, "__name__") else "case", ana, num))
        cases += 1

    def margin(shape, scale):
        u = rng.uniform(-0.8, 0.8, size=shape)
        sat = rng.random(shape) < 0.3
        return np.where(sat, np.sign(u) * rng.uniform(1.2, 2.0, shape), u) / scale

    for i in range(45):
        regime = "real" if i % 2 else "progressive"
        scale = 1.0 if regime == "real" else float(rng.uniform(1.5, 12.0))
        conv = Conv2d(2, 3, dtype=np.float64, rng=np.random.default_rng(i))
        conv.weight = margin(conv.weight.shape, scale)
        conv.bias = margin(conv.bias.shape, scale)
        x = rng.normal(size=(2, 2, 4, 4))
        probe = rng.normal(size=(2, 3, 4, 4))
        y, tape = conv.forward(x, regime=regime, scale=scale)
        grad_x, grads = conv.backward(probe, tape)

        def f_x(v, conv=conv, regime=regime, scale=scale, probe=probe):
            return probe_loss(conv.forward(v, regime=regime, scale=scale)[0], probe)

        def f_w(v, conv=conv, x=x, regime=regime, scale=scale, probe=probe):
            saved = conv.weight
            conv.weight = v
            out = probe_loss(conv.forward(x, regime=regime, scale=scale)[0], probe)
            conv.weight = saved
            return out

        fd_check(f_x, x, grad_x)
        fd_check(f_w, conv.weight, grads["weight"])

    for i in range(45):
        regime = "real" if i % 2 else "progressive"
        scale = 1.0 if regime == "real" else float(rng.uniform(1.5, 12.0))
        fc = Dense(12, 5, dtype=np.float64, rng=np.random.default_rng(100 + i))
        fc.weight = margin(fc.weight.shape, scale)
        fc.bias = margin(fc.bias.shape, scale)
        x = rng.normal(size=(6, 12))
        probe = rng.normal(size=(6, 5))
        y, tape = fc.forward(x, regime=regime, scale=scale)
        grad_x, grads = fc.backward(probe, tape)

        def f_x(v, fc=fc, regime=regime, scale=scale, probe=probe):
            return probe_loss(fc.forward(v, regime=regime, scale=scale)[0], probe)

        def f_w(v, fc=fc, x=x, regime=regime, scale=scale, probe=probe):
            saved = fc.weight
            fc.weight = v
            out = probe_loss(fc.forward(x, regime=regime, scale=scale)[0], probe)
            fc.weight = saved
            return out

        fd_check(f_x, x, grad_x)
        fd_check(f_w, fc.weight, grads["weight"])

    for i in range(40):
        bn = BatchNorm(4, dtype=np.float64)
        bn.gamma = rng.normal(size=4)
        bn.beta = rng.normal(size=4)
        x = rng.normal(size=(8, 4))
        probe = rng.normal(size=(8, 4))
        y, tape = bn.forward(x, training=True)
        grad_x, d_gamma, d_beta = bn.backward(probe, tape)

        def f_x(v, bn=bn, probe=probe):
            saved = bn.running_mean.copy(), bn.running_std.copy()
            out = probe_loss(bn.forward(v, training=True)[0], probe)
            bn.running_mean, bn.running_std = saved
            return out

        fd_check(f_x, x, grad_x)

    for i in range(40):
        x = rng.permutation(64).astype(np.float64).reshape(1, 1, 8, 8)
        probe = rng.normal(size=(1, 1, 4, 4))
        y, idx = maxpool_forward(x)
        from pbnn.layers import maxpool_backward

        grad_x = maxpool_backward(probe, idx)

        def f_x(v, probe=probe):
            return probe_loss(maxpool_forward(v)[0], probe)

        fd_check(f_x, x, grad_x, h=1e-4)

    for i in range(30):
        scale = float(rng.uniform(1.0, 20.0))
        latent = margin((7,), scale)
        upstream = rng.normal(size=7)
        ana_pwl = theta_pwl_backward(upstream, latent, scale)
        ana_tanh = theta_tanh_backward(upstream, latent, scale)

        def f_pwl(v, scale=scale, upstream=upstream):
            return probe_loss(theta_pwl(v, scale), upstream)

        def f_tanh(v, scale=scale, upstream=upstream):
            return probe_loss(theta_tanh(v, scale), upstream)

        fd_check(f_pwl, latent, ana_pwl)
        fd_check(f_tanh, latent, ana_tanh, h=1e-6)

    wall = time.perf_counter() - start
    ok = not failures and cases >= 200 and wall < 60.0
    record_criterion(
        1, ok,
        f"{cases} random instances FD-checked at rel<=1e-3 in {wall:.1f}s"
        + (f"; {len(failures)} mismatches" if failures else ""),
    )


def test_criterion_2_bn_shortcut_oracle():
    rng = np.random.default_rng(77)
    start = time.perf_counter()
    n = 10_000
    gamma = rng.normal(size=n)
    gamma = np.where(gamma == 0.0, 1.0, gamma)
    bn = BatchNorm(n, dtype=np.float64)
    bn.gamma = gamma
    bn.beta = rng.normal(size=n)
    bn.running_mean = rng.normal(size=n)
    bn.running_std = rng.uniform(0.1, 3.0, size=n)
    data = rng.normal(size=(1, n)) * 3
    got = bn_sign_shortcut(data, bn)
    y, _ = bn.forward(data, training=False)
    want = binarize_det(y)
    wall = time.perf_counter() - start
    exact = bool((got == want).all())
    record_criterion(2, exact and wall < 10.0,
                     f"threshold shortcut == sign(BN eval) on {n} random tuples "
                     f"in {wall:.2f}s")


def test_criterion_3_stochastic_calibration():
    n = 100_000
    worst = 0.0
    ok = True
    for i, theta in enumerate((-1.0, -0.5, 0.0, 0.5, 1.0)):
        rho = float(hard_sigmoid(theta))
        draws = binarize_stoch(np.full(n, theta), keyed_rng(5150, 2, i))
        p_hat = float((draws == 1.0).mean())
        bound = 3.0 * np.sqrt(rho * (1.0 - rho) / n)
        dev = abs(p_hat - rho)
        worst = max(worst, dev - bound)
        ok = ok and dev <= bound
    record_criterion(3, ok, f"P(+1) within 3-sigma binomial bounds at 5 thetas, "
                            f"{n} draws each (worst slack {-worst:.2e})")


# --- desk-scale runs ---------------------------------------------------------


def _min_saturation(trainer, scale):
    sats = []
    for block in trainer.net.blocks:
        layer = getattr(block, "conv", None) or getattr(block, "fc", None)
        if layer is not None and layer.binarized:
            theta = theta_pwl(layer.weight, scale)
            sats.append(float((np.abs(theta) > 0.99).mean()))
    return min(sats)


def _criterion_4(data):
    grid = np.concatenate([np.linspace(-1.5, -0.0011, 40_000),
                           np.linspace(0.0011, 1.5, 40_000)])
    grid_ok = bool((theta_pwl(grid, 1000.0) == binarize_det(grid)).all())

    trajectory = []

    def hooks(trainer, record):
        if record.epoch > 0:
            trajectory.append(
                _min_saturation(trainer, trainer.scale_for(record.epoch - 1))
            )

    trainer, _ = desk_run("progressive", "real32", seed=1, data=data, hooks=hooks)
    params = extract_binary_params(trainer.net)
    signs_ok = all(
        np.isin(e["weight"], (-1, 1)).all() and np.isin(e["bias"], (-1, 1)).all()
        for e in params.entries if e["kind"] in ("conv", "fc")
    )
    final_sat = _min_saturation(trainer, 1000.0)
    monotone_ok = all(b >= a for a, b in zip(trajectory, trajectory[1:]))
    record_criterion(
        4, grid_ok and signs_ok and final_sat >= 0.95 and monotone_ok,
        f"pwl==sign for |latent|>=0.0011 on 80k grid; extraction binary; "
        f"saturation non-decreasing over {len(trajectory)} epochs to "
        f"{final_sat:.3f} >= 0.95 ({data})",
    )


def test_criterion_4_progressive_convergence_synthetic():
    _criterion_4("synthetic")


@needs_cifar
def test_criterion_4_progressive_convergence_cifar():
    _criterion_4("cifar10")


def _criterion_7(data):
    trainer, wall = desk_run("progressive", "real32", seed=1, data=data)
    acc = trainer.final_accuracy()
    ok = acc >= 0.40 and wall <= 900.0
    record_criterion(
        7, ok,
        f"tiny/progressive/real32 seed 1, {DESK_TRAIN}/{DESK_TEST} x "
        f"{DESK_EPOCHS} epochs: accuracy {acc:.3f} >= 0.40, wall {wall:.0f}s <= 900s "
        f"({data})",
    )


def test_criterion_7_desk_scale_synthetic():
    _criterion_7("synthetic")


@needs_cifar
def test_criterion_7_desk_scale_cifar():
    _criterion_7("cifar10")


def _criterion_8(data):
    prog, det = [], []
    for seed in (1, 2, 3):
        prog.append(desk_run("progressive", "real32", seed, data=data)[0].final_accuracy())
        det.append(desk_run("deterministic", "real32", seed, data=data)[0].final_accuracy())
    mean_prog, mean_det = float(np.mean(prog)), float(np.mean(det))
    acc_ok = mean_prog >= mean_det - 0.02

    mems = {
        regime: parameter_memory(Network(tiny_architecture(), regime, seed=0))[
            "total_bytes"
        ]
        for regime in ("progressive", "deterministic", "stochastic")
    }
    mem_ok = mems["progressive"] < mems["deterministic"] and \
        mems["progressive"] < mems["stochastic"]
    record_criterion(
        8, acc_ok and mem_ok,
        f"3-seed means: progressive {mean_prog:.3f} vs deterministic {mean_det:.3f} "
        f"(tolerance -0.02); memory {mems['progressive']} < "
        f"{mems['deterministic']}/{mems['stochastic']} bytes ({data})",
    )


def test_criterion_8_regime_comparison_synthetic():
    _criterion_8("synthetic")


@needs_cifar
def test_criterion_8_regime_comparison_cifar():
    _criterion_8("cifar10")


def _criterion_9(data):
    range_checks = []

    def hooks(trainer, record):
        trainer.verify_in_range(trainer.test_ds.images[:64])
        range_checks.append(record.epoch)

    fx, _ = desk_run("progressive", "fx16", seed=1, data=data, hooks=hooks)
    real, _ = desk_run("progressive", "real32", seed=1, data=data)
    gap = abs(fx.final_accuracy() - real.final_accuracy())
    in_range_ok = len(range_checks) == DESK_EPOCHS + 1
    record_criterion(
        9, gap <= 0.05 and in_range_ok,
        f"fx16(Q16.8) {fx.final_accuracy():.3f} vs real32 "
        f"{real.final_accuracy():.3f}, gap {gap:.3f} (tolerance 0.05); "
        f"in-range verified after {len(range_checks)} evaluations ({data})",
    )


def test_criterion_9_fixed_point_fidelity_synthetic():
    _criterion_9("synthetic")


@needs_cifar
def test_criterion_9_fixed_point_fidelity_cifar():
    _criterion_9("cifar10")


def test_criterion_10_determinism(tmp_path):
    flags = ["--subset", "96", "--test-subset", "48", "--epochs", "3",
             "--seed", "1", "--backend", "fx16", "--no-figures", "--out", "run"]
    for cwd in ("a", "b"):
        (tmp_path / cwd).mkdir()
        res = subprocess.run(
            [sys.executable, "-m", "pbnn.cli", "train", *flags],
            cwd=tmp_path / cwd, capture_output=True, text=True, timeout=600,
        )
        assert res.returncode == 0, res.stderr

    def load_csv(cwd):
        with open(tmp_path / cwd / "run" / "metrics.csv") as f:
            return f.read().splitlines()

    a, b = load_csv("a"), load_csv("b")
    head_ok = a[:2] == b[:2]
    rows_ok = [",".join(x.split(",")[:-1]) for x in a[2:]] == [
        ",".join(x.split(",")[:-1]) for x in b[2:]
    ]

    def load_ck(cwd):
        with np.load(tmp_path / cwd / "run" / "checkpoint.npz") as z:
            return {k: z[k].copy() for k in z.files}

    ck_a, ck_b = load_ck("a"), load_ck("b")
    state_ok = ck_a.keys() == ck_b.keys()
    for key in ck_a:
        if key == "meta/records":  # wall-seconds column is measured, not computed
            state_ok = state_ok and np.array_equal(
                ck_a[key][:, :5], ck_b[key][:, :5], equal_nan=True
            )
        else:
            state_ok = state_ok and np.array_equal(ck_a[key], ck_b[key])

    # checkpoint-resume reproducing the uninterrupted run bit-exactly on the
    # fixed backend is asserted at library level in tests/test_checkpoint.py;
    # rerun the core here so the criterion stands alone
    from pbnn.checkpoint import load_trainer, save_checkpoint

    train = synthetic_dataset(96, seed=101, snr=1.0)
    test = synthetic_dataset(48, seed=202, snr=1.0, split="test")
    cfg = desk_config("progressive", "fx16", seed=1)
    cfg = RunConfig(**{**cfg.__dict__, "epochs": 4, "subset": None,
                       "synthetic_train": 96, "synthetic_test": 48})
    full = Trainer(cfg, train, test)
    full.fit()
    part = Trainer(cfg, train, test)
    part.records.append(full.records[0])
    for epoch in range(2):
        part.run_epoch(epoch)
    ck = str(tmp_path / "resume.npz")
    save_checkpoint(part, ck)
    resumed = load_trainer(ck, train, test)
    resumed.fit()
    resume_ok = all(
        np.array_equal(a.get(), b.get())
        for a, b in zip(full.net.slots(), resumed.net.slots())
    )
    record_criterion(
        10, head_ok and rows_ok and state_ok and resume_ok,
        "identical (seed, config) runs byte-identical (wall-clock field masked, "
        "see ledger); fx16 resume reproduces the uninterrupted run bit-exactly",
    )
