"""Acceptance criteria 1-11.

Every test prints one ``[criterion N] PASS|FAIL`` line (visible without -s)
before asserting, so a run of this module is its own report.
"""

import math
import time

import numpy as np
import pytest

from dampc.cli import run as cli_run
from dampc.controller import ControllerParams, controller_greedy, controller_sample, reinforce_update
from dampc.data import shifted_blobs_task
from dampc.nn import BatchNorm, Linear, Mode, Param, cross_entropy, relu, sgd_nesterov_step
from dampc.numerics import Rng
from dampc.search_space import (ArchitectureChoice, CellChoice, FCSize, SkipFrom, SuperGraph,
                                count_configurations, decision_arities, decode_decisions,
                                enumerate_architectures, instantiate_child, parse_arch, serialize_arch)
from dampc.similarity import (CORAL, KL_GAUSS, MMD_LINEAR, MMD_RBF, PC, SimilarityKind, cmd, coral, cosine,
                              kl_diag_gaussian, mmd, population_correlation)
from dampc import training
from dampc.training import TrainConfig, evaluate, loss_identity_residual, lr_at, search, train_fixed

from helpers import central_diff, pc_margin, rel_err


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return emit


def brute_pc(S, T):
    a = sum(max(cosine(s, t) for t in T) for s in S) / len(S)
    b = sum(max(cosine(s, t) for s in S) for t in T) / len(T)
    return a + b


def random_pair(r, max_n=16, max_d=8):
    d = int(r.integers(1, max_d + 1))
    return r.normal(size=(int(r.integers(1, max_n + 1)), d)), r.normal(size=(int(r.integers(1, max_n + 1)), d))


ARCH1 = ArchitectureChoice(1, (CellChoice(FCSize.SAME, SkipFrom.AFTER_BN),), (), 0, 0)


@pytest.fixture(scope="module")
def task():
    return shifted_blobs_task(seed=0, n_per_class=200, d=16, n_classes=4, shift_norm=3.0)


def test_c1_pc_oracle(verdict):
    r = np.random.default_rng(0)
    pairs = [random_pair(r) for _ in range(100)]
    # one-time load of the compiled kernel is reported, not counted
    tj = time.perf_counter()
    population_correlation(*pairs[0])
    t_jit = time.perf_counter() - tj
    t0 = time.perf_counter()
    fast = [population_correlation(S, T).value for S, T in pairs]
    t_fast = time.perf_counter() - t0
    err = max(abs(f - brute_pc(S, T)) for f, (S, T) in zip(fast, pairs))
    t_total = time.perf_counter() - t0
    ok = err <= 1e-12 and t_total < 1.0
    verdict(1, ok, f"max |fast - oracle| = {err:.2e} (tol 1e-12); fast {t_fast:.3f}s, with oracle {t_total:.3f}s (< 1s); kernel load {t_jit:.3f}s")
    assert ok


def test_c2_pc_invariants(verdict):
    r = np.random.default_rng(1)
    worst = {"symmetry": 0.0, "bounds": 0.0, "permutation": 0.0, "scaling": 0.0, "rotation": 0.0}
    for _ in range(50):
        S, T = random_pair(r)
        v = population_correlation(S, T).value
        worst["symmetry"] = max(worst["symmetry"], abs(v - population_correlation(T, S).value))
        worst["bounds"] = max(worst["bounds"], max(0.0, abs(v) - 2.0))
        Sp, Tp = S[r.permutation(len(S))], T[r.permutation(len(T))]
        worst["permutation"] = max(worst["permutation"], abs(population_correlation(Sp, Tp).value - v))
        Ss = S * r.uniform(0.01, 100.0, (len(S), 1))
        Ts = T * r.uniform(0.01, 100.0, (len(T), 1))
        worst["scaling"] = max(worst["scaling"], abs(population_correlation(Ss, Ts).value - v))
        Q, _ = np.linalg.qr(r.normal(size=(S.shape[1], S.shape[1])))
        worst["rotation"] = max(worst["rotation"], abs(population_correlation(S @ Q, T @ Q).value - v))
    ok = all(w <= 1e-9 for w in worst.values())
    verdict(2, ok, "worst deviation " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (tol 1e-9)")
    assert ok


def _grad_families():
    """Yield (family, analytic, numeric) for 20 instances of each differentiable piece."""
    for seed in range(20):
        r = np.random.default_rng(100 + seed)

        while True:
            S, T = r.normal(size=(4, 3)), r.normal(size=(5, 3))
            if pc_margin(S, T) > 1e-4:
                break
        sig = population_correlation(S, T, grad=True)
        f = lambda: population_correlation(S, T).value
        yield "pc", np.concatenate([sig.grad_source.ravel(), sig.grad_target.ravel()]), \
            np.concatenate([central_diff(f, S).ravel(), central_diff(f, T).ravel()])

        S, T = r.normal(size=(5, 3)), r.normal(size=(6, 3)) + 0.3
        for name, fn in (("mmd_linear", lambda a, b, g: mmd(a, b, MMD_LINEAR, grad=g)),
                         ("mmd_rbf", lambda a, b, g: mmd(a, b, SimilarityKind("mmd_rbf", gammas=(0.2, 0.5, 1.0)), grad=g)),
                         ("coral", lambda a, b, g: coral(a, b, grad=g)),
                         ("cmd", lambda a, b, g: cmd(np.tanh(a), np.tanh(b), grad=g)),
                         ("kl", lambda a, b, g: kl_diag_gaussian(a, b, grad=g))):
            if name == "cmd":
                s = cmd(np.tanh(S), np.tanh(T))
                gs = s.grad_source * (1 - np.tanh(S) ** 2)
                gt = s.grad_target * (1 - np.tanh(T) ** 2)
            else:
                s = fn(S, T, True)
                gs, gt = s.grad_source, s.grad_target
            f = lambda fn=fn: fn(S, T, False).value
            yield name, np.concatenate([gs.ravel(), gt.ravel()]), \
                np.concatenate([central_diff(f, S).ravel(), central_diff(f, T).ravel()])

        X = r.normal(size=(3, 4))
        R = r.normal(size=(3, 2))
        lin = Linear(4, 2, Rng(seed))
        _, back = lin.forward(X)
        dX = back(R)
        f = lambda: float((lin.forward(X)[0] * R).sum())
        yield "linear", np.concatenate([dX.ravel(), lin.W.grad.ravel(), lin.b.grad.ravel()]), \
            np.concatenate([central_diff(f, X).ravel(), central_diff(f, lin.W.value).ravel(),
                            central_diff(f, lin.b.value).ravel()])

        X = r.normal(size=(8, 5))
        R = r.normal(size=(8, 5))
        bn = BatchNorm(5)
        bn.gamma.value[...] = r.uniform(0.5, 2.0, 5)
        bn.beta.value[...] = r.normal(size=5)
        _, back = bn.forward(X, Mode.TRAIN, track_stats=False)
        dX = back(R)
        f = lambda: float((bn.forward(X, Mode.TRAIN, track_stats=False)[0] * R).sum())
        yield "batch_norm", np.concatenate([dX.ravel(), bn.gamma.grad.ravel(), bn.beta.grad.ravel()]), \
            np.concatenate([central_diff(f, X).ravel(), central_diff(f, bn.gamma.value).ravel(),
                            central_diff(f, bn.beta.value).ravel()])

        X = r.normal(size=(4, 5))
        X[np.abs(X) < 1e-3] = 0.5
        R = r.normal(size=X.shape)
        _, back = relu(X)
        yield "relu", back(R), central_diff(lambda: float((relu(X)[0] * R).sum()), X)

        L, y = r.normal(size=(5, 4)), r.integers(0, 4, 5)
        yield "cross_entropy", cross_entropy(L, y)[1], central_diff(lambda: cross_entropy(L, y)[0], L)

        n = int(r.integers(1, 4))
        arch = decode_decisions([int(r.integers(a)) for a in decision_arities(n)], n)
        sg = SuperGraph(8, 3, dropout_rate=0.3, seed=seed)
        child = instantiate_child(sg, arch)
        X = r.normal(size=(4, 8))

        def loss():
            _, pc, logits, _ = child.forward(X, Mode.TRAIN, Rng(seed), track_stats=False)
            return float(pc.sum() + logits.sum())

        _, pc, logits, back = child.forward(X, Mode.TRAIN, Rng(seed), track_stats=False)
        dX = back(np.ones_like(pc), np.ones_like(logits))
        ps = child.params()
        yield "child_network", np.concatenate([dX.ravel()] + [p.grad.ravel() for p in ps]), \
            np.concatenate([central_diff(loss, X).ravel()] + [central_diff(loss, p.value).ravel() for p in ps])


def test_c3_gradient_suite(verdict):
    t0 = time.perf_counter()
    worst, counts = {}, {}
    for fam, a, n in _grad_families():
        worst[fam] = max(worst.get(fam, 0.0), rel_err(a, n))
        counts[fam] = counts.get(fam, 0) + 1
    dt = time.perf_counter() - t0
    ok = all(v <= 1e-4 for v in worst.values()) and min(counts.values()) >= 20 and dt < 30.0
    verdict(3, ok, f"{len(worst)} families x {min(counts.values())} instances, worst rel err "
            f"{max(worst.values()):.1e} ({max(worst, key=worst.get)}), {dt:.1f}s (< 30s)")
    assert ok


def test_c4_census(verdict):
    counts = [count_configurations(n) for n in (1, 2, 3)]
    distinct = len({serialize_arch(a) for a in enumerate_architectures(3)})
    formula = [(2 * 3) ** n * 2 ** (n - 1) * n**2 for n in (1, 2, 3)]
    ok = counts == [6, 288, 7776] == formula and distinct == 7776
    verdict(4, ok, f"counts {counts}, exhaustive N=3 serializations {distinct}")
    assert ok


def test_c5_bandit(verdict):
    t0 = time.perf_counter()
    archs = list(enumerate_architectures(1))
    wins = 0
    for seed in range(10):
        best = archs[seed % 6]
        ctrl = ControllerParams.init(1, Rng(seed))
        rng = Rng(10_000 + seed)
        for _ in range(2000):
            tr = controller_sample(ctrl, rng)
            reinforce_update(ctrl, tr, 1.0 if tr.arch == best else -1.0)
        wins += controller_greedy(ctrl) == best
    dt = time.perf_counter() - t0
    ok = wins >= 9 and dt < 60.0
    verdict(5, ok, f"greedy = best in {wins}/10 seeds after 2000 updates, {dt:.1f}s (< 60s)")
    assert ok


def test_c6_uniform_log_prob(verdict):
    ctrl = ControllerParams.init(3, Rng(0)).zero_heads()
    rng = Rng(1)
    err = max(abs(controller_sample(ctrl, rng).log_prob + math.log(7776)) for _ in range(200))
    ok = err <= 1e-9
    verdict(6, ok, f"max |log_prob + ln 7776| = {err:.1e} over 200 samples (tol 1e-9)")
    assert ok


def test_c7_schedule_optimizer(verdict):
    lrs = [lr_at(p) for p in range(10_000)]
    decreasing = all(b < a for a, b in zip(lrs, lrs[1:]))
    g, lr, m = 0.37, 0.1, 0.9
    p = Param([2.0])
    for _ in range(2):
        p.grad[...] = g
        sgd_nesterov_step([p], lr, m)
    v1 = -lr * g
    w1 = 2.0 + m * v1 - lr * g
    v2 = m * v1 - lr * g
    w2 = w1 + m * v2 - lr * g
    err = abs(p.value[0] - w2)
    ok = lr_at(0) == 0.1 and decreasing and err <= 1e-15
    verdict(7, ok, f"lr_at(0) = {lr_at(0)}, strictly decreasing {decreasing}, Nesterov residual {err:.1e}")
    assert ok


def _fixed_run(task, **kw):
    s, t, truth = task
    cfg = TrainConfig(epochs=30, n_cells=1, seed=0, **kw)
    sg, hist = train_fixed(ARCH1, s, t, cfg)
    return evaluate(sg, ARCH1, truth), hist, cfg


def test_c8_desk_effect(verdict, task, capsys):
    t0 = time.perf_counter()
    acc_pc, _, _ = _fixed_run(task, lam=1.0, similarity=PC)
    acc_src, _, _ = _fixed_run(task, lam=0.0, similarity=None)
    # attribution control: target batches forwarded (batch-norm statistics
    # refreshed) but no similarity gradient
    acc_fwd, _, _ = _fixed_run(task, lam=0.0, similarity=PC)
    acc_nobn, _, _ = _fixed_run(task, lam=1.0, similarity=PC, track_target_bn_stats=False)
    dt = time.perf_counter() - t0
    margin = 100.0 * (acc_pc - acc_src)
    ok = acc_pc > acc_src and margin >= 5.0 and dt < 120.0
    verdict(8, ok, f"target acc PC {acc_pc:.4f} vs source-only {acc_src:.4f}, margin {margin:+.1f} pts (>= 5), "
            f"{dt:.1f}s")
    with capsys.disabled():
        print(f"[criterion 8] control: lam=0 with target forwarded {acc_fwd:.4f}; "
              f"lam=1 PC without target BN stats {acc_nobn:.4f}")
    assert ok


def test_c9_search_end_to_end(verdict, task):
    s, t, truth = task
    t0 = time.perf_counter()
    cfg = TrainConfig(epochs=40, n_cells=3, seed=0, lam=1.0, similarity=PC)
    res = search(s, t, cfg)
    dt = time.perf_counter() - t0
    acc = evaluate(res.supergraph, res.final_arch, truth)
    ctrl_res = search(s, t, TrainConfig(epochs=40, n_cells=3, seed=0, lam=0.0, similarity=None))
    acc_ctrl = evaluate(ctrl_res.supergraph, ctrl_res.final_arch, truth)
    h = res.history
    reward_exact = all(m.reward == -m.mean_loss for m in h)
    one_each = len(h) == 40 and all(m.sampled_arch and parse_arch(m.sampled_arch).n_cells == 3 for m in h)
    no_retrain = not any(hasattr(training, n) for n in ("retrain", "train_from_scratch", "finetune"))
    ok = dt < 300.0 and reward_exact and one_each and no_retrain
    verdict(9, ok, f"40 epochs in {dt:.1f}s, reward = -mean_loss exact {reward_exact}, "
            f"final arch target acc {acc:.4f} from shared weights (source-only search {acc_ctrl:.4f})")
    assert ok


def test_c10_ablation_swap(verdict, task):
    s, t, _ = task
    results = []
    for kind in (MMD_RBF, CORAL, SimilarityKind("cmd"), KL_GAUSS):
        cfg = TrainConfig(epochs=30, n_cells=1, seed=0, lam=1.0, similarity=kind)
        sg, hist = train_fixed(ARCH1, s, t, cfg)
        acc = evaluate(sg, ARCH1, task[2])
        res = max(loss_identity_residual(m, cfg) for m in hist)
        results.append((kind.name, len(hist), res, acc))
    ok = all(n == 30 and r <= 1e-9 for _, n, r, _ in results)
    verdict(10, ok, "; ".join(f"{k}: {n} epochs, identity residual {r:.1e}, acc {a:.4f}" for k, n, r, a in results))
    assert ok


def test_c11_determinism(verdict, tmp_path):
    data = tmp_path / "data"
    assert cli_run(["gen-data", "--out", str(data), "--n-per-class", "50", "--d", "8", "--seed", "3"]) == 0
    base = ["search", "--source", str(data / "source.csv"), "--target", str(data / "target.csv"),
            "--target-truth", str(data / "target_truth.csv"), "--epochs", "5", "--n-cells", "2"]
    assert cli_run(base + ["--output-dir", str(tmp_path / "a")]) == 0
    first_cfg = (tmp_path / "a" / "config.json").read_bytes()
    first = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert cli_run(["search", "--config", str(tmp_path / "a" / "config.json")]) == 0
    same_cfg = (tmp_path / "a" / "config.json").read_bytes() == first_cfg
    ok = same_cfg and (tmp_path / "a" / "metrics.csv").read_bytes() == first
    verdict(11, ok, f"identical config.json {same_cfg}, metrics.csv byte-identical across runs "
            f"({len(first)} bytes)")
    assert ok
