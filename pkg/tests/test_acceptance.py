"""Acceptance checks, one group per numbered criterion.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary ends with
one PASS/FAIL line per criterion (see conftest.py). Criterion 8 trains the
default model end to end and takes a few minutes on one core.
"""

import csv
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from neuroplastic.config import SplitSpec, TrainConfig
from neuroplastic.data_io import SyntheticSpec, gen_synthetic
from neuroplastic.growth import GrowthConfig, GrowthEvent, GrowthLog, GrowthPolicy, replay, should_grow
from neuroplastic.memory import FlatMemoryIndex
from neuroplastic.metrics import ConfusionMatrix, paired_ttest, report_from_confusion
from neuroplastic.model import NeuroClassifier
from neuroplastic.numerics import (
    AdamConfig,
    AdamState,
    BatchNorm,
    Parameter,
    Tensor,
    adam_step,
    batchnorm,
    cross_entropy,
    grad_check,
    logit,
    softmax_cross_entropy,
    softmax_rows,
)
from neuroplastic.training import Trainer, checkpoint_bytes, split_dataset

from reference_data import (
    BASELINE_RUNS,
    GARBAGE_ACCURACY_PCT,
    GARBAGE_CONFUSION,
    GARBAGE_MACRO,
    GARBAGE_REPORT,
    PRINTED_T,
    PROPOSED_RUNS,
)


def r2(x):
    return math.floor(x * 100 + 0.5 + 1e-9) / 100


# 1 ---------------------------------------------------------------------------

C1 = pytest.mark.criterion(1, "metrics reproduce the published confusion-matrix report")


@C1
def test_c1_accuracy():
    start = time.perf_counter()
    r = report_from_confusion(ConfusionMatrix(np.array(GARBAGE_CONFUSION)))
    assert r.accuracy == 2082 / 2143
    assert round(r.accuracy * 100, 2) == GARBAGE_ACCURACY_PCT
    assert (r2(r.macro_precision), r2(r.macro_recall), r2(r.macro_f1)) == GARBAGE_MACRO
    assert time.perf_counter() - start < 1.0


@C1
@pytest.mark.parametrize("c", range(10))
def test_c1_per_class(c):
    got = report_from_confusion(ConfusionMatrix(np.array(GARBAGE_CONFUSION))).per_class[c]
    assert (r2(got.precision), r2(got.recall), r2(got.f1)) == GARBAGE_REPORT[c]


# 2 ---------------------------------------------------------------------------


@pytest.mark.criterion(2, "paired t-test on the published accuracy lists")
def test_c2_ttest():
    start = time.perf_counter()
    r = paired_ttest(PROPOSED_RUNS, BASELINE_RUNS)
    elapsed = time.perf_counter() - start
    assert abs(r.mean_diff - 4.2967) <= 5e-4
    assert 0.25 <= r.sd <= 0.26
    assert 38 <= r.t <= 42
    # Documented deviation: the inputs give t = 41.35 (se = 0.1039); the
    # printed 38.47 does not follow from them.
    assert abs(r.t - PRINTED_T) > 2.0
    print(f"t recomputed={r.t:.4f} printed={PRINTED_T} p={r.p_value:.3e}")
    assert elapsed < 1.0


# 3 ---------------------------------------------------------------------------


@pytest.mark.criterion(3, "gradient check over fusion + 2 soft-gated blocks + head")
@pytest.mark.parametrize("seed,gamma", [(0, 0.9), (1, 0.3), (2, 0.6)])
def test_c3_gradcheck(seed, gamma):
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    m = NeuroClassifier(8, 3, d_prime=8, n_blocks=2, initial_gate=logit(gamma), rng=rng)
    e, r = rng.normal(size=(4, 8)), rng.normal(size=(4, 8))
    y = rng.integers(0, 3, size=4)
    rep = grad_check(lambda: softmax_cross_entropy(m(e, r, hard=False).logits, y)[0],
                     m.parameters(), h=1e-6)
    assert rep.n_checked == m.census().total
    assert rep.max_rel_error < 1e-5, rep
    assert time.perf_counter() - start < 60


# 4 ---------------------------------------------------------------------------

C4 = pytest.mark.criterion(4, "Adam closed-form first step and 3-step recurrence")


@C4
def test_c4_first_step():
    p = Parameter("p", [[0.0]])
    p.grad = np.array([[1.0]])
    adam_step([p], {"p": AdamState.fresh((1, 1))}, AdamConfig(alpha=1e-3))
    assert abs(p.value[0, 0] - (-1e-3)) / 1e-3 < 1e-8


@C4
def test_c4_recurrence():
    a, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    grads = [0.5, -1.0, 2.0]
    # hand-unrolled moments for g = 0.5, -1, 2
    m_ref = [0.05, -0.055, 0.1505]
    v_ref = [0.00025, 0.00124975, 0.00524850025]
    p = Parameter("p", [[1.0]])
    states = {"p": AdamState.fresh((1, 1))}
    theta = 1.0
    for t, g in enumerate(grads, start=1):
        p.grad = np.array([[g]])
        adam_step([p], states, AdamConfig(a, b1, b2, eps))
        assert abs(states["p"].m[0, 0] - m_ref[t - 1]) < 1e-12
        assert abs(states["p"].v[0, 0] - v_ref[t - 1]) < 1e-12
        theta -= a * (m_ref[t - 1] / (1 - b1 ** t)) / (math.sqrt(v_ref[t - 1] / (1 - b2 ** t)) + eps)
        assert abs(p.value[0, 0] - theta) < 1e-12


# 5 ---------------------------------------------------------------------------


def _naive_ids(points, query, k):
    d = [(sum((float(a) - float(b)) ** 2 for a, b in zip(p, query)), i) for i, p in enumerate(points)]
    return [i for _, i in sorted(d)[:k]]


@pytest.mark.criterion(5, "exact k-NN matches an independent naive scan")
def test_c5_knn_oracle():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    pts = rng.normal(size=(500, 16))
    idx = FlatMemoryIndex(16)
    idx.add_batch(pts, rng.integers(0, 10, size=500))
    stored = pts.astype(np.float32).astype(np.float64)
    queries = rng.normal(size=(50, 16))
    for k in (1, 5, 10):
        for q in queries:
            assert [r.insertion_id for r, _ in idx.search_knn(q, k)] == _naive_ids(stored, q, k)
    assert time.perf_counter() - start < 5.0


# 6 ---------------------------------------------------------------------------

C6 = pytest.mark.criterion(6, "hard/soft gating exactness")


def _gated_model(n_blocks=3, seed=0):
    return NeuroClassifier(8, 3, d_prime=8, n_blocks=n_blocks, rng=np.random.default_rng(seed))


@C6
def test_c6_hard_skip_bitwise():
    m = _gated_model()
    for b, g in zip(m.blocks, (0.0, -2.0, -7.0)):
        b.gate.value[...] = g
    z = Tensor(np.random.default_rng(1).normal(size=(5, 8)))
    out = m.forward(z, hard=True)
    assert not any(out.fired)
    head = z.value @ m.head_weight.value.T + m.head_bias.value
    assert out.logits.value.tobytes() == head.tobytes()


@C6
def test_c6_soft_zero_gamma_matches():
    m = _gated_model()
    for b in m.blocks:
        b.gate.value[...] = -1e4
    z = Tensor(np.random.default_rng(1).normal(size=(5, 8)))
    assert m.forward(z, hard=False).logits.value.tobytes() == m.forward(z, hard=True).logits.value.tobytes()


@C6
def test_c6_high_gate_agreement():
    # Soft and hard differ by (1 - gamma) * (M(h) - h) per block; at g = 10 that
    # is 4.5e-5 * |M(h) - h|, so agreement within 1e-6 needs blocks close to
    # the identity on the input. Random blocks get there by g = 20.
    m = _gated_model()
    rng = np.random.default_rng(3)
    for b in m.blocks:
        b.weight.value = np.eye(8) + 1e-3 * rng.normal(size=(8, 8))
        b.gate.value[...] = 10.0
    z = Tensor(np.random.default_rng(4).uniform(0.5, 1.5, size=(5, 8)))
    gap = np.max(np.abs(m.forward(z, hard=False).logits.value - m.forward(z, hard=True).logits.value))
    assert gap < 1e-6

    rand = _gated_model(seed=7)
    zr = Tensor(np.random.default_rng(5).normal(size=(5, 8)))
    for b in rand.blocks:
        b.gate.value[...] = 20.0
    gap = np.max(np.abs(rand.forward(zr, hard=False).logits.value - rand.forward(zr, hard=True).logits.value))
    assert gap < 1e-6


# 7 ---------------------------------------------------------------------------

C7 = pytest.mark.criterion(7, "growth fires once at epoch 6 and leaves the network intact")


@C7
def test_c7_growth_event():
    cfg = GrowthConfig(policy=GrowthPolicy.SLOPE_WINDOW, interval=3, epsilon=1e-3, grow_count=3,
                       initial_blocks=15)
    losses = {1: 0.7, 2: 0.55, 3: 0.449, 4: 0.4493, 5: 0.4491, 6: 0.4489}
    rng = np.random.default_rng(0)
    model = NeuroClassifier(8, 3, d_prime=8, n_blocks=15, rng=rng).eval()
    z = Tensor(np.random.default_rng(1).normal(size=(16, 8)))
    log, history = GrowthLog(), []
    for t in range(1, 7):
        history.append((t, losses[t]))
        event = should_grow(history, cfg, len(model.blocks), log)
        if event is None:
            continue
        before = {p.id: p.value.tobytes() for p in model.parameters()}
        logits_before = model.forward(z).logits.value.tobytes()
        model.grow(event.blocks_added, t, rng)
        log.record(event)
        after = {p.id: p.value.tobytes() for p in model.parameters()}
        assert all(after[k] == v for k, v in before.items())
        assert model.forward(z).logits.value.tobytes() == logits_before
    assert [(e.epoch, e.blocks_added) for e in log.events] == [(6, 3)]
    assert len(model.blocks) == 18


@C7
def test_c7_replay_narrative():
    events = [GrowthEvent(e, 3, "improvement-delta", ()) for e in (12, 15, 18)]
    assert replay(events, 15) == 24


# 8 ---------------------------------------------------------------------------


def _cli(*args, cwd):
    env = dict(os.environ, OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1", MKL_NUM_THREADS="1")
    return subprocess.run([sys.executable, "-m", "neuroplastic", *map(str, args)],
                          cwd=cwd, env=env, capture_output=True, text=True)


def _kv(stdout):
    return dict(line.split("=", 1) for line in stdout.splitlines() if "=" in line)


@pytest.mark.slow
@pytest.mark.criterion(8, "end-to-end synthetic run reaches >= 0.95 test accuracy")
def test_c8_end_to_end(tmp_path):
    proc = _cli("synth", "--classes", 10, "--dim", 64, "--per-class", 500, "--seed", 42,
                "--out", "d.npeb", cwd=tmp_path)
    assert proc.returncode == 0, proc.stderr
    assert _kv(proc.stdout)["n"] == "5000"

    start = time.perf_counter()
    proc = _cli("train", "--data", "d.npeb", "--out-model", "m.npmc", "--log", "log.csv", cwd=tmp_path)
    elapsed = time.perf_counter() - start
    assert proc.returncode == 0, proc.stderr
    last = proc.stdout.splitlines()[-1]
    assert last.startswith("test_accuracy=")
    acc = float(last.split("=", 1)[1])
    print(f"test_accuracy={acc} wall={elapsed:.1f}s")
    assert acc >= 0.95
    assert elapsed < 300
    rows = list(csv.DictReader((tmp_path / "log.csv").open()))
    assert len(rows) == 20

    # the first epochs do not depend on the total epoch budget, so a short
    # rerun with the same seed must reproduce the log prefix byte for byte
    proc = _cli("train", "--data", "d.npeb", "--out-model", "m3.npmc", "--log", "log3.csv",
                "--epochs", 3, cwd=tmp_path)
    assert proc.returncode == 0, proc.stderr
    full_lines = (tmp_path / "log.csv").read_text().splitlines()
    assert (tmp_path / "log3.csv").read_text().splitlines() == full_lines[:4]

    for flag in ("--no-memory", "--no-growth"):
        proc = _cli("train", "--data", "d.npeb", "--out-model", f"m{flag}.npmc", "--log", f"log{flag}.csv",
                    flag, cwd=tmp_path)
        assert proc.returncode == 0, proc.stderr
        print(f"{flag}: test_accuracy={_kv(proc.stdout)['test_accuracy']}")
        proc = _cli("eval", "--model", f"m{flag}.npmc", "--data", "d.npeb", "--report", f"r{flag}.json",
                    cwd=tmp_path)
        assert proc.returncode == 0, proc.stderr


# 9 ---------------------------------------------------------------------------

C9 = pytest.mark.criterion(9, "determinism, resume equivalence and bitwise persistence")


@pytest.fixture(scope="module")
def small_split():
    ds = gen_synthetic(SyntheticSpec(4, 12, 60, seed=9))
    return split_dataset(ds, SplitSpec(seed=1))


def _cfg(epochs):
    return TrainConfig(epochs=epochs, batch_size=16, d_prime=16, seed=3,
                       growth=GrowthConfig(policy="absolute-threshold", lam=0.0,
                                           initial_blocks=4, max_blocks=16))


@C9
def test_c9_identical_runs(small_split):
    train, val, _ = small_split
    logs = []
    for _ in range(2):
        tr = Trainer(_cfg(5), 12, 4)
        tr.fit(train, val)
        logs.append(tr.log_csv().encode())
    assert logs[0] == logs[1]


@C9
def test_c9_resume(small_split, tmp_path):
    train, val, _ = small_split
    full = Trainer(_cfg(5), 12, 4)
    full.fit(train, val)
    part = Trainer(_cfg(5), 12, 4)
    part.fit(train, val, epochs=3)
    part.save_checkpoint(tmp_path / "p.npmc")
    resumed = Trainer.load_checkpoint(tmp_path / "p.npmc")
    resumed.fit(train, val, epochs=5)
    assert [r.as_list() for r in resumed.rows] == [r.as_list() for r in full.rows]
    assert resumed.log_csv() == full.log_csv()


@C9
def test_c9_round_trips(small_split, tmp_path):
    train, val, test = small_split
    tr = Trainer(_cfg(3), 12, 4)
    tr.fit(train, val)
    tr.save_checkpoint(tmp_path / "a.npmc")
    blob = (tmp_path / "a.npmc").read_bytes()
    back = Trainer.load_checkpoint(tmp_path / "a.npmc")
    assert checkpoint_bytes(back) == blob
    assert back.evaluate(test).probs.tobytes() == tr.evaluate(test).probs.tobytes()

    tr.memory.save(tmp_path / "m.npmi")
    mem = FlatMemoryIndex.load(tmp_path / "m.npmi")
    assert mem == tr.memory
    assert mem.to_bytes() == (tmp_path / "m.npmi").read_bytes()


# 10 --------------------------------------------------------------------------

C10 = pytest.mark.criterion(10, "softmax, cross-entropy and batch-norm invariants")


@C10
def test_c10_softmax_rows():
    rng = np.random.default_rng(0)
    logits = rng.normal(scale=20.0, size=(10_000, 10))
    p = softmax_rows(Tensor(logits)).value
    assert np.max(np.abs(p.sum(axis=1) - 1.0)) <= 1e-9


@C10
def test_c10_uniform_ce():
    loss = cross_entropy(Tensor(np.full((5, 10), 0.1)), [0, 1, 2, 3, 9]).item()
    assert abs(loss - math.log(10)) <= 1e-12


@C10
def test_c10_batchnorm_columns():
    # The epsilon inside sqrt(var + eps) shrinks the output variance by
    # v / (v + eps); inputs with variance 100 keep that below 1e-6 here.
    rng = np.random.default_rng(1)
    bn = BatchNorm(6)
    bn.scale.value = rng.uniform(0.5, 2.0, size=(1, 6))
    bn.shift.value = rng.normal(size=(1, 6))
    out = batchnorm(Tensor(rng.normal(2.0, 10.0, size=(64, 6))), bn).value
    assert np.max(np.abs(out.mean(axis=0) - bn.shift.value[0])) <= 1e-6
    assert np.max(np.abs(out.var(axis=0) - bn.scale.value[0] ** 2)) <= 1e-6
