"""Acceptance criteria 1-13, each at its stated tolerance.

A summary line per criterion is printed at the end of the pytest run.
"""

import json
import subprocess
import sys
import time
import warnings

import numpy as np

from conftest import make_dataset
from spectramin.augment import TECHNIQUES, augment
from spectramin.datasets import split_leave_one_out, split_three_per_species
from spectramin.evalharness import ExperimentConfig, accuracy_ci, pca_project, run_experiment, summarize
from spectramin.fusion import fuse_average, fuse_multiply, fuse_square_multiply
from spectramin.learners import (
    CnnArchitecture, Conv, Dense, ExponentialMovingAverage, MaxPool, Prediction,
    predict_knn, train_extra_trees, train_knn_weighted,
)
from spectramin.learners.cnn import two_stream_network
from spectramin.learners.nn import Network, cross_entropy_loss
from spectramin.libs import (
    composition_mae, default_line_table, element_weight_vectors, estimate_composition_cosine,
    synth_libs_spectrum,
)
from spectramin.libs.composition import ElementComposition
from spectramin.libs.formula import parse_formula_counts
from spectramin.spectra import LIBS_GRID
from test_learners_classic import naive_knn
from test_libs import GOLDEN


def test_criterion_01_fusion_beats_singles(record):
    start = time.perf_counter()
    cfg = ExperimentConfig.from_dict({
        "datasets": {"a": {"synthetic": "complementary_pair", "params": {"part": "a"}},
                     "b": {"synthetic": "complementary_pair", "params": {"part": "b"}}},
        # k covers the whole training set; see README
        "classifiers": [{"name": "knn-a", "model": "knn", "dataset": "a", "params": {"k": 200}},
                        {"name": "knn-b", "model": "knn", "dataset": "b", "params": {"k": 200}}],
        "fusions": [{"name": "mul", "rule": "mul", "a": "knn-a", "b": "knn-b"}],
        "n_runs": 5,
    })
    methods = summarize(run_experiment(cfg))["methods"]
    elapsed = time.perf_counter() - start
    a, b, fused = (methods[k]["mean_accuracy"] for k in ("knn-a", "knn-b", "mul"))
    record(f"A {a:.3f}, B {b:.3f}, Mul-p {fused:.3f}, {elapsed:.1f}s")
    assert a <= 0.60 and b <= 0.60
    assert fused >= 0.95
    assert elapsed < 30


def test_criterion_02_fusion_algebra(record):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(1000):
        c = int(rng.integers(2, 10))
        a, b = rng.dirichlet(np.ones(c)), rng.dirichlet(np.ones(c))
        cls = tuple(f"c{i}" for i in range(c))
        p, q = Prediction(a, cls), Prediction(b, cls)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            pairs = [(fuse_average(p, q).scores, (a + b) / np.sum(a + b)),
                     (fuse_multiply(p, q).scores, a * b / np.sum(a * b)),
                     (fuse_square_multiply(p, q).scores, a * a * b / np.sum(a * a * b))]
        for got, want in pairs:
            worst = max(worst, float(np.max(np.abs(got - want))))
        u = Prediction.uniform(cls)
        worst = max(worst, float(np.max(np.abs(fuse_multiply(p, u).scores - a))))
    # Sq-p is not symmetric
    p, q = Prediction([0.8, 0.2], ("x", "y")), Prediction([0.5, 0.5], ("x", "y"))
    asym = not np.allclose(fuse_square_multiply(p, q).scores, fuse_square_multiply(q, p).scores)
    record(f"max error {worst:.2e}, Sq-p asymmetric: {asym}")
    assert worst <= 1e-12
    assert asym


def _gradcheck(net, inputs, y, seed):
    rng = np.random.default_rng(seed)
    params = [rng.normal(0, 0.5, p.shape) for p in net.init_params(rng, np.float64)]

    def loss():
        return cross_entropy_loss(net.forward(inputs, params)[0], y)[0]

    logits, cache = net.forward(inputs, params)
    grads = net.backward(cross_entropy_loss(logits, y)[1], cache, params)
    h = 1e-4
    worst = largest_err = largest_grad = 0.0
    for p, g in zip(params, grads):
        largest_grad = max(largest_grad, float(np.max(np.abs(g))))
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + h
            hi = loss()
            p[i] = old - h
            lo = loss()
            p[i] = old
            num = (hi - lo) / (2 * h)
            err = abs(num - g[i])
            largest_err = max(largest_err, err)
            if err > 1e-6:
                worst = max(worst, err / max(abs(num), abs(g[i])))
    assert largest_grad > 1e-2  # the check is not vacuous
    return worst, largest_err


def test_criterion_03_gradients(record):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    toy = CnnArchitecture((Conv(3, 3), MaxPool(2), Conv(4, 3), Dense(5), Dense(2, "softmax")), 16)
    e1, a1 = _gradcheck(Network.single(toy), [rng.normal(size=(4, 16))], np.array([0, 1, 1, 0]), 0)
    b = CnnArchitecture((Conv(2, 5), MaxPool(2), Conv(3, 1), Dense(2, "softmax")), 20)
    a = CnnArchitecture((Conv(3, 3), MaxPool(2), Conv(2, 1), Dense(4), Dense(2, "softmax")), 18)
    two = two_stream_network(a, b)
    e2, a2 = _gradcheck(two, [rng.normal(size=(3, 18)), rng.normal(size=(3, 20))], np.array([1, 0, 1]), 1)
    elapsed = time.perf_counter() - start
    record(f"max abs. error {max(a1, a2):.1e}, worst rel. error above floor {max(e1, e2):.1e}, "
           f"{elapsed:.1f}s")
    assert e1 <= 1e-3 and e2 <= 1e-3
    assert elapsed < 60


def test_criterion_04_ema(record):
    rng = np.random.default_rng(4)
    worst = 0.0
    for d in (0.0, 0.9, 0.999):
        s0 = float(rng.normal())
        w = rng.normal(size=100)
        ema = ExponentialMovingAverage([np.array(s0)], d)
        for wi in w:
            ema.update([np.array(wi)])
        n = w.size
        closed = d ** n * s0 + (1 - d) * sum(d ** (n - 1 - i) * w[i] for i in range(n))
        worst = max(worst, abs(float(ema.shadow[0]) - closed))
    record(f"max deviation {worst:.2e}")
    assert worst <= 1e-12


def test_criterion_05_raman_benchmark(record):
    start = time.perf_counter()
    cfg = ExperimentConfig.from_dict({
        "datasets": {"raman": {"synthetic": "raman_library",
                               "params": {"n_classes": 20, "per_class": 10, "seed": 0}}},
        "classifiers": [{"model": "ensemble6", "dataset": "raman"}],
        "n_runs": 5,
    })
    m = summarize(run_experiment(cfg))["methods"]["ensemble6"]
    elapsed = time.perf_counter() - start
    record(f"{100 * m['mean_accuracy']:.2f}% ± {100 * m['ci95_half_width']:.2f} (95% CI), "
           f"{elapsed:.0f}s")
    assert m["mean_accuracy"] >= 0.90
    assert m["ci95_half_width"] is not None
    assert elapsed < 600


def test_criterion_06_knn_oracle(record):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(200):
        n, d, c = int(rng.integers(3, 20)), int(rng.integers(2, 12)), int(rng.integers(2, 5))
        labels = np.concatenate([np.arange(c), rng.integers(0, c, max(n - c, 0))])
        model = train_knn_weighted(make_dataset(rng.random((labels.size, d)), labels),
                                   int(rng.integers(1, labels.size + 1)))
        q = rng.random(d)
        got = predict_knn(model, q)
        want = naive_knn(model.reference.astype(float), model.labels, c, model.k, q)
        assert got.argmax == int(np.argmax(want))
        worst = max(worst, float(np.max(np.abs(got.scores - want))))
    record(f"max score difference {worst:.1e}")
    assert worst <= 1e-12


def test_criterion_07_extra_trees(record):
    rng = np.random.default_rng(7)
    x = rng.random((50, 6))
    y = (x @ np.array([1.0, -2.0, 0.5, 0.0, 1.5, -1.0]) > -0.25).astype(int)
    ds = make_dataset(x, y)
    a = train_extra_trees(ds, n_trees=50, seed=11)
    b = train_extra_trees(ds, n_trees=50, seed=11)
    acc = float(np.mean(a.predict_proba(x).argmax(1) == y))
    same = np.array_equal(a.predict_proba(x), b.predict_proba(x))
    record(f"train accuracy {acc:.3f}, identical reruns: {same}")
    assert acc == 1.0 and same


def test_criterion_08_libs_estimator(record):
    lines = default_line_table()
    vecs = element_weight_vectors(lines, LIBS_GRID)
    hits = 0
    for el in vecs:
        _, sims = estimate_composition_cosine(synth_libs_spectrum({el: 1.0}, lines), lines,
                                              element_vectors=vecs)
        hits += max(sims, key=sims.get) == el
    rng = np.random.default_rng(8)
    elements = sorted(vecs)
    maes = []
    for _ in range(100):
        pick = rng.choice(elements, 3, replace=False)
        truth = ElementComposition.from_amounts(dict(zip(pick, rng.dirichlet(np.ones(3)))))
        est, _ = estimate_composition_cosine(synth_libs_spectrum(truth, lines), lines, element_vectors=vecs)
        maes.append(composition_mae(est, truth))
    record(f"pure-element argmax {hits}/{len(vecs)}, mixture MAE {np.mean(maes):.4f}")
    assert hits == len(vecs) and len(vecs) >= 10
    assert np.mean(maes) <= 0.10


def test_criterion_09_formula_golden(record):
    ok = sum(parse_formula_counts(f) == {k: v for k, v in counts.items()} for f, counts in GOLDEN.items())
    record(f"{ok}/{len(GOLDEN)} exact")
    assert len(GOLDEN) == 20 and ok == 20


def test_criterion_10_augmentation(record):
    rng = np.random.default_rng(10)
    x = rng.random((30, 40))
    y = np.repeat(np.arange(3), 10)
    ds = make_dataset(x, y)
    for name in TECHNIQUES:
        out = augment(ds, name, 1)
        assert np.array_equal(np.bincount(out.labels), 2 * np.bincount(y)), name
        assert out.values.min() >= 0.0 and out.values.max() <= 1.0, name
    draws = 0
    for seed in range(100):
        syn = augment(ds, "smote", seed)
        for c in range(3):
            members = x[y == c]
            new = syn.values[30:][syn.labels[30:] == c]
            assert np.all(new >= members.min(0) - 1e-12) and np.all(new <= members.max(0) + 1e-12)
            draws += len(new)
    record(f"{len(TECHNIQUES)} techniques doubled, {draws} SMOTE draws inside hull")
    assert draws >= 1000


def test_criterion_11_splits(record):
    rng = np.random.default_rng(11)
    counts = rng.integers(1, 9, size=12)
    labels = np.repeat(np.arange(counts.size), counts)
    ds = make_dataset(rng.random((labels.size, 5)), labels)
    for seed in range(100):
        for plan, rule in ((split_three_per_species(ds, seed), lambda n: min(n, 3)),
                           (split_leave_one_out(ds, seed), lambda n: n - 1 if n >= 2 else n)):
            tr, te = set(plan.train_indices.tolist()), set(plan.test_indices.tolist())
            assert not tr & te and tr | te == set(range(len(ds)))
            per = np.bincount(labels[plan.train_indices], minlength=counts.size)
            assert all(per[c] == rule(counts[c]) for c in range(counts.size))
    record("200 plans checked")


def test_criterion_12_statistics(record):
    mean, half = accuracy_ci([0.8, 1.0])
    rng = np.random.default_rng(12)
    x = rng.normal(size=(60, 5)) * np.array([3.0, 2.0, 1.0, 0.5, 0.1])
    _, var = pca_project(x, 5)
    c = x - x.mean(0)
    ref = np.sort(np.linalg.eigvalsh(c.T @ c / (len(x) - 1)))[::-1]
    err = float(np.max(np.abs(var - ref)))
    record(f"mean {mean:.5f}, half-width {half:.5f}, PCA error {err:.1e}")
    assert abs(mean - 0.9) <= 1e-5 and abs(half - 0.19599) <= 1e-5
    assert err <= 1e-6


def _evaluate(config, out, jobs):
    proc = subprocess.run([sys.executable, "-m", "spectramin.cli", "evaluate", "--config", str(config),
                           "--out", str(out), "--jobs", str(jobs)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    return (out / "results.json").read_bytes()


def test_criterion_13_determinism(tmp_path, record):
    config = tmp_path / "experiment.json"
    config.write_text(json.dumps({
        "name": "determinism",
        "datasets": {"a": {"synthetic": "complementary_pair",
                           "params": {"n_classes": 8, "per_class": 6, "part": "a"}},
                     "b": {"synthetic": "complementary_pair",
                           "params": {"n_classes": 8, "per_class": 6, "part": "b"}}},
        "classifiers": [{"name": "knn-a", "model": "knn", "dataset": "a"},
                        {"name": "trees-b", "model": "trees", "dataset": "b", "params": {"n_trees": 20}},
                        {"name": "svm-a", "model": "svm", "dataset": "a"}],
        "fusions": [{"rule": "ave", "a": "knn-a", "b": "trees-b"},
                    {"rule": "svm", "a": "svm-a", "b": "trees-b"}],
        "augment": {"technique": "smote"},
        "n_runs": 8,
    }))
    first = _evaluate(config, tmp_path / "r1", 1)
    second = _evaluate(config, tmp_path / "r2", 1)
    parallel = _evaluate(config, tmp_path / "r4", 4)
    same_numbers = json.loads(first)["summary"] == json.loads(parallel)["summary"]
    record(f"jobs=1 byte-identical: {first == second}, jobs=4 same numbers: {same_numbers}")
    assert first == second
    assert same_numbers
