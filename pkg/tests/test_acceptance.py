"""Acceptance checks. Each test prints one PASS/FAIL line in the terminal summary.

Run just this module with ``pytest tests/test_acceptance.py -v``.
"""

import csv
import subprocess
import sys
import time

import numpy as np
import pytest

from gearnet import autodiff as ad
from gearnet.autodiff import Tensor
from gearnet.backbones import MlpSpec, Mlp, init_backbone, bone_loss, param_hash, predict_probs
from gearnet.data import DomainPairSpec, build_transition_matrix, inject_noise, make_domain_pair
from gearnet.engine import GearNetConfig, backward_step, forward_step, fresh_model, pretrain, run, with_beta
from gearnet.harness import parse_config, per_seed_accuracy, run_experiment
from gearnet.losses import cross_entropy, kl_divergence, symmetric_kl, total_loss

from conftest import numerical_grad, rel_error


def random_probs(rng, shape):
    z = rng.normal(size=shape) * 2
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def quick_pair(seed=0, rotation=40.0):
    spec = DomainPairSpec(n_classes=4, n_features=2, n_source=500, n_target=500, rotation_deg=rotation, seed=seed)
    return make_domain_pair(spec, build_transition_matrix("uniform", 4, 0.2))


QUICK = dict(steps=3, epochs=30)


def test_criterion_1_gradients(report):
    start = time.perf_counter()
    spec = MlpSpec((3, 8, 4), init_scale=0.5)
    worst = {"ce": 0.0, "kl": 0.0, "kl_rev": 0.0, "skl": 0.0, "total": 0.0}
    for seed in range(100):
        rng = np.random.default_rng(seed)
        net = Mlp(spec, seed)
        x = Tensor(rng.normal(size=(6, 3)))
        y = rng.integers(0, 4, 6)
        fixed = Tensor(random_probs(rng, (6, 4)))
        losses = {
            "ce": lambda: cross_entropy(net(x), y),
            "kl": lambda: kl_divergence(ad.softmax(net(x)), fixed),
            "kl_rev": lambda: kl_divergence(fixed, ad.softmax(net(x))),
            "skl": lambda: symmetric_kl(ad.softmax(net(x)), fixed),
            "total": lambda: total_loss(cross_entropy(net(x), y),
                                        symmetric_kl(ad.softmax(net(x)), fixed), 0.1).total,
        }
        for name, f in losses.items():
            ad.zero_grads(net.parameters())
            ad.backward(f())
            for p in net.parameters():
                fd = numerical_grad(lambda: f().item(), p.data, h=1e-5)
                worst[name] = max(worst[name], rel_error(p.grad, fd))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) < 1e-4 and elapsed < 60
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(1, ok, f"max relative gradient error over 100 seeds: {detail} (< 1e-4); {elapsed:.1f}s (< 60s)")
    assert ok


def test_criterion_2_noise_fidelity(report):
    start = time.perf_counter()
    n = 100_000  # draws per true class
    worst_freq, worst_row = 0.0, 0.0
    for kind in ("uniform", "flip"):
        for k in (2, 3, 31):
            for rho in (0.2, 0.4):
                tm = build_transition_matrix(kind, k, rho)
                worst_row = max(worst_row, float(np.abs(tm.q.sum(axis=1) - 1).max()))
                y = np.repeat(np.arange(k), n)
                noisy = inject_noise(y, tm, seed=k * 10 + int(rho * 10))
                counts = np.zeros((k, k))
                np.add.at(counts, (y, noisy), 1)
                worst_freq = max(worst_freq, float(np.abs(counts / n - tm.q).max()))
    elapsed = time.perf_counter() - start
    ok = worst_freq < 0.01 and worst_row <= 1e-12 and elapsed < 60
    report(2, ok, f"max |freq - Q| = {worst_freq:.4f} (< 0.01), max |row sum - 1| = {worst_row:.1e} "
                  f"(<= 1e-12); {elapsed:.1f}s (< 60s)")
    assert ok


def test_criterion_3_loss_identities(report):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst_self, worst_swap, exact = 0.0, 0.0, True
    for _ in range(10_000):
        k = int(rng.integers(2, 10))
        p, q = random_probs(rng, (1, k)), random_probs(rng, (1, k))
        tp, tq = Tensor(p), Tensor(q)
        worst_self = max(worst_self, abs(kl_divergence(tp, tp).item()))
        worst_swap = max(worst_swap, abs(symmetric_kl(tp, tq).item() - symmetric_kl(tq, tp).item()))
        sup, guide, beta = Tensor(rng.exponential()), Tensor(rng.exponential()), float(rng.uniform(0, 2))
        exact &= total_loss(sup, guide, beta).total.item() == sup.item() + beta * guide.item()
    elapsed = time.perf_counter() - start
    ok = worst_self <= 1e-7 and worst_swap <= 1e-7 and exact and elapsed < 10
    report(3, ok, f"max kl(p,p) = {worst_self:.1e}, max swap gap = {worst_swap:.1e} (<= 1e-7), "
                  f"total exact: {exact}; {elapsed:.1f}s (< 10s)")
    assert ok


def test_criterion_4_structure(report):
    start = time.perf_counter()
    data = quick_pair()
    cfg = GearNetConfig(**QUICK)
    problems = []

    state = pretrain(cfg, data, evaluate=False)
    for step in range(1, 2 * cfg.steps + 1):
        labels_before = state.pseudo_labels.copy()
        if step % 2:
            frozen = param_hash(state.f)
            backward_step(state, cfg, data, evaluate=False)
            if param_hash(state.f) != frozen:
                problems.append(f"step {step}: forward model changed during backward step")
            if not np.array_equal(state.pseudo_labels, labels_before):
                problems.append(f"step {step}: pseudo-labels changed during backward step")
        else:
            frozen = param_hash(state.f_dual)
            forward_step(state, cfg, data, evaluate=False)
            if param_hash(state.f_dual) != frozen:
                problems.append(f"step {step}: dual model changed during forward step")
            refreshed = np.argmax(predict_probs(state.f, data.target.x), axis=1)
            if not np.array_equal(state.pseudo_labels, refreshed):
                problems.append(f"step {step}: pseudo-labels not refreshed")

    expected = ["pretrain"] + ["backward", "forward"] * 3
    if state.directions != expected:
        problems.append(f"directions {state.directions}")
    init_hashes = [r.init_hash for r in state.history]
    for rec in state.history:
        if rec.init_hash != param_hash(fresh_model(cfg, data, rec.step)):
            problems.append(f"step {rec.step}: init does not match its seeded fresh model")
        if rec.step and rec.dual_hash_before != rec.dual_hash_after:
            problems.append(f"step {rec.step}: recorded dual hash changed")
        if rec.pseudo_labels_updated != (rec.direction in ("pretrain", "forward")):
            problems.append(f"step {rec.step}: refresh flag wrong")
    if len(set(init_hashes)) != len(init_hashes):
        problems.append("steps share an initialization")

    # the driver reproduces the manual loop
    auto = run(cfg, data, evaluate=False)
    if [r.model_hash for r in auto.history] != [r.model_hash for r in state.history]:
        problems.append("run() diverges from explicit steps")
    elapsed = time.perf_counter() - start
    ok = not problems and elapsed < 120
    report(4, ok, f"M=3 quick preset, directions {'/'.join(d[0] for d in state.directions)}, "
                  f"{len(problems)} structural violations; {elapsed:.1f}s (< 120s)")
    assert ok, problems


def test_criterion_5_beta_zero(report):
    start = time.perf_counter()
    data = quick_pair()
    cfg = with_beta(GearNetConfig(reinit="aligned", **QUICK), 0.0)
    state = run(cfg, data, evaluate=False)
    base = state.history[0]
    forwards = [r for r in state.history if r.direction == "forward"]
    same_trace = all(r.super_trace == base.super_trace for r in forwards)
    same_model = all(r.model_hash == base.model_hash for r in forwards)
    elapsed = time.perf_counter() - start
    ok = len(forwards) == 3 and same_trace and same_model and elapsed < 120
    report(5, ok, f"{len(forwards)} beta=0 forward steps, loss traces identical to pretraining: {same_trace}, "
                  f"final parameters identical: {same_model}; {elapsed:.1f}s (< 120s)")
    assert ok


CRITERION_6_CFG = """
[data]
family = gaussians
classes = 4
features = 2
rotation = 40

[noise]
kind = uniform
rate = 0.2

[gearnet]
backbone = standard

[experiment]
preset = quick
seed = 0
repeats = 10
baseline = true
ablation = true
"""


@pytest.mark.slow
def test_criterion_6_desk_scale_improvement(report):
    start = time.perf_counter()
    result = run_experiment(parse_config(CRITERION_6_CFG))
    acc = per_seed_accuracy(result.records)
    seeds = sorted(acc["gearnet"])
    base = np.array([acc["baseline"][s]["final"] for s in seeds])
    best1 = np.array([acc["gearnet"][s]["best"] for s in seeds])
    best0 = np.array([acc["gearnet_beta0"][s]["best"] for s in seeds])
    gain_vs_base = float(np.median(best1) - np.median(base))
    gain_vs_ablation = float(np.median(best1 - best0))
    elapsed = time.perf_counter() - start
    ok = (not result.failures and len(seeds) == 10
          and gain_vs_base >= 0.03 and gain_vs_ablation >= 0.01 and elapsed < 900)
    report(6, ok, f"median best-step GearNet {np.median(best1):.3f} vs baseline {np.median(base):.3f}: "
                  f"+{gain_vs_base:.3f} (>= 0.03; paired median +{np.median(best1 - base):.3f}); "
                  f"beta=0.1 vs beta=0 paired median +{gain_vs_ablation:.3f} (>= 0.01; "
                  f"difference of medians +{np.median(best1) - np.median(best0):.3f}); {elapsed:.0f}s (< 900s)")
    assert ok


def test_criterion_7_backbone_equivalence(report):
    start = time.perf_counter()
    spec = MlpSpec((2, 16, 3), init_scale=0.5)
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        xl, yl, xu = Tensor(rng.normal(size=(12, 2))), rng.integers(0, 3, 12), Tensor(rng.normal(size=(12, 2)))
        for kind, hyper in (("coteaching", dict(keep_rate=1.0)), ("dann", dict(dann_lambda=0.0))):
            other = init_backbone(kind, spec, seed, **hyper)
            std = init_backbone("standard", spec, seed + 1000)
            for p, q in zip(std.classifiers[0].parameters(), other.classifiers[0].parameters()):
                p.data[...] = q.data
            ad.backward(bone_loss(other, xl, yl, xu))
            ad.backward(bone_loss(std, xl, yl, xu))
            for p, q in zip(std.classifiers[0].parameters(), other.classifiers[0].parameters()):
                worst = max(worst, float(np.abs(p.grad - q.grad).max()))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 60
    report(7, ok, f"co-teaching (keep_rate=1) and DANN (lambda=0) classifier gradients vs standard, "
                  f"20 seeds: max |diff| = {worst:.1e} (<= 1e-6); {elapsed:.1f}s (< 60s)")
    assert ok


CRITERION_8_CFG = """
[data]
classes = 4
rotation = 40

[noise]
kind = uniform
rate = 0.2

[experiment]
preset = quick
seed = 11
repeats = 2
baseline = true
ablation = true
"""


def _without_seconds(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    col = rows[0].index("seconds")
    return [r[:col] + r[col + 1:] for r in rows]


@pytest.mark.slow
def test_criterion_8_determinism(report, tmp_path):
    start = time.perf_counter()
    cfg = tmp_path / "exp.ini"
    cfg.write_text(CRITERION_8_CFG)
    outputs = []
    for i in range(2):
        out = tmp_path / f"metrics{i}.csv"
        proc = subprocess.run([sys.executable, "-m", "gearnet", "run", str(cfg), "--out", str(out)],
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outputs.append(out)
    a, b = _without_seconds(outputs[0]), _without_seconds(outputs[1])
    identical = "\n".join(map(",".join, a)).encode() == "\n".join(map(",".join, b)).encode()
    elapsed = time.perf_counter() - start
    ok = identical and len(a) > 1 and elapsed < 300
    report(8, ok, f"two executions, {len(a) - 1} rows each, byte-identical without the seconds column: "
                  f"{identical}; {elapsed:.1f}s (< 300s)")
    assert ok
