"""Repeated-split experiments, accuracy statistics and analysis exports.

An experiment names one or more datasets, the classifiers trained on them and
the fusion rules that combine pairs of classifiers.  Every run draws a fresh
split from ``base_seed + run``; all methods of a run are scored on the same
test units, so single-modality and fused accuracies are directly comparable.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .augment import augment
from .datasets import (
    LabeledDataset,
    PairedSample,
    build_dataset,
    common_species,
    make_split,
    normalize_species,
    pair_by_species,
    remove_class_outliers,
    restrict_species,
)
from .errors import ExperimentError, SpectraminError, ValidationError
from .fsutil import atomic_write_bytes
from .fusion import FUSION_RULES, apply_fused_svm, fuse_svm, heldout_predictions
from .learners.prediction import Prediction
from .libs.composition import composition_mae
from .training import composition_matcher, train_model, train_two_stream

__all__ = [
    "ClassifierSpec", "ExperimentConfig", "FusionSpec", "MethodResult", "RunResult",
    "accuracy_ci", "class_mean_std_export", "composition_mae", "evaluate", "export_violin_data",
    "load_dataset", "pca_export", "pca_project", "recompute_accuracy", "report", "run_experiment",
    "summarize",
]

PAIRINGS = ("aligned", "species")
MODELS = ("knn", "trees", "svm", "cnn", "ensemble6", "two-stream", "libs-cosine")


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class ClassifierSpec:
    name: str
    model: str
    dataset: str | tuple[str, str]
    params: Mapping = field(default_factory=dict)

    def to_dict(self) -> dict:
        ds = list(self.dataset) if isinstance(self.dataset, tuple) else self.dataset
        return {"name": self.name, "model": self.model, "dataset": ds, "params": dict(self.params)}


@dataclass(frozen=True)
class FusionSpec:
    name: str
    rule: str
    a: str
    b: str
    params: Mapping = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "rule": self.rule, "a": self.a, "b": self.b,
                "params": dict(self.params)}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce an experiment.

    ``datasets`` maps a key to a source: ``{"dataset": "x.npz"}``,
    ``{"manifest": "m.json"}`` or ``{"synthetic": NAME, "params": {...}}``.
    Relative paths resolve against ``base_dir``.
    """

    datasets: Mapping[str, Mapping]
    classifiers: tuple[ClassifierSpec, ...]
    fusions: tuple[FusionSpec, ...] = ()
    protocol: str = "three-per-species"
    pairing: str = "aligned"
    augment: Mapping = field(default_factory=lambda: {"technique": "none"})
    outlier_threshold: float | None = 0.5
    n_runs: int = 30
    base_seed: int = 0
    max_pairs_per_species: int = 50
    name: str = "experiment"
    base_dir: str = "."

    def __post_init__(self) -> None:
        if self.n_runs < 1:
            raise ValidationError("n_runs must be at least 1")
        if self.pairing not in PAIRINGS:
            raise ValidationError(f"pairing must be one of {PAIRINGS}")
        if self.protocol not in ("three-per-species", "loo"):
            raise ValidationError(f"unknown split protocol {self.protocol!r}")
        if not self.datasets or not self.classifiers:
            raise ValidationError("an experiment needs at least one dataset and one classifier")
        if self.pairing == "species" and len(self.datasets) != 2:
            raise ValidationError("species pairing needs exactly two datasets")
        names = [c.name for c in self.classifiers] + [f.name for f in self.fusions]
        if len(set(names)) != len(names):
            raise ValidationError("method names must be unique")
        keys = list(self.datasets)
        for c in self.classifiers:
            refs = c.dataset if isinstance(c.dataset, tuple) else (c.dataset,)
            if c.model not in MODELS:
                raise ValidationError(f"classifier {c.name}: unknown model {c.model!r}")
            if any(r not in self.datasets for r in refs):
                raise ValidationError(f"classifier {c.name}: unknown dataset {c.dataset!r}")
            if (c.model == "two-stream") != (len(refs) == 2):
                raise ValidationError(f"classifier {c.name}: two-stream takes two datasets, others one")
            if len(refs) == 2 and refs[0] == refs[1]:
                raise ValidationError(f"classifier {c.name}: the two streams need different datasets")
            if len(refs) == 2 and len(keys) == 2 and refs != tuple(keys):
                raise ValidationError(f"classifier {c.name}: streams must follow dataset order {keys}")
        clf = {c.name for c in self.classifiers}
        for f in self.fusions:
            if f.rule not in (*FUSION_RULES, "svm"):
                raise ValidationError(f"fusion {f.name}: unknown rule {f.rule!r}")
            if f.a not in clf or f.b not in clf:
                raise ValidationError(f"fusion {f.name}: inputs must name classifiers")

    @classmethod
    def from_dict(cls, d: Mapping, base_dir: str | os.PathLike = ".") -> "ExperimentConfig":
        def clf(c):
            ds = c["dataset"]
            return ClassifierSpec(c.get("name") or c["model"], c["model"],
                                  tuple(ds) if isinstance(ds, list) else ds, c.get("params", {}))

        def fus(f):
            return FusionSpec(f.get("name") or f"{f['rule']}({f['a']},{f['b']})", f["rule"],
                              f["a"], f["b"], f.get("params", {}))

        known = {"datasets", "classifiers", "fusions", "protocol", "pairing", "augment",
                 "outlier_threshold", "n_runs", "base_seed", "max_pairs_per_species", "name"}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown experiment keys: {sorted(extra)}")
        try:
            return cls(
                datasets=dict(d["datasets"]),
                classifiers=tuple(clf(c) for c in d["classifiers"]),
                fusions=tuple(fus(f) for f in d.get("fusions", ())),
                protocol=d.get("protocol", "three-per-species"),
                pairing=d.get("pairing", "aligned"),
                augment=dict(d.get("augment", {"technique": "none"})),
                outlier_threshold=d.get("outlier_threshold", 0.5),
                n_runs=int(d.get("n_runs", 30)),
                base_seed=int(d.get("base_seed", 0)),
                max_pairs_per_species=int(d.get("max_pairs_per_species", 50)),
                name=d.get("name", "experiment"),
                base_dir=str(base_dir),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed experiment config: {exc!r}") from None

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read experiment config {path}: {exc}") from None
        return cls.from_dict(data, path.parent)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "datasets": {k: dict(v) for k, v in self.datasets.items()},
            "classifiers": [c.to_dict() for c in self.classifiers],
            "fusions": [f.to_dict() for f in self.fusions],
            "protocol": self.protocol,
            "pairing": self.pairing,
            "augment": dict(self.augment),
            "outlier_threshold": self.outlier_threshold,
            "n_runs": self.n_runs,
            "base_seed": self.base_seed,
            "max_pairs_per_species": self.max_pairs_per_species,
        }


# --------------------------------------------------------------------------
# dataset sources

_DATASET_CACHE: dict[str, LabeledDataset] = {}


def _synthetic(name: str, params: Mapping, base_dir: Path) -> LabeledDataset:
    from . import synthetic

    params = dict(params)
    if name == "raman_library":
        return synthetic.raman_library(**params)
    if name == "complementary_pair":
        part = params.pop("part", "a")
        a, b = synthetic.complementary_pair(**params)
        return a if part == "a" else b
    if name == "libs_minerals":
        from .libs.lines import default_line_table, default_mineral_table, read_line_table, read_mineral_table

        lines = read_line_table(base_dir / params.pop("lines")) if "lines" in params else default_line_table()
        minerals = (read_mineral_table(base_dir / params.pop("minerals")) if "minerals" in params
                    else default_mineral_table())
        only = params.pop("species", None)
        if only is not None:
            minerals = {k: minerals[k] for k in only}
        return synthetic.libs_mineral_library(minerals, lines, **params)
    raise ValidationError(f"unknown synthetic dataset {name!r}")


def load_dataset(source: Mapping, base_dir: str | os.PathLike = ".") -> LabeledDataset:
    base = Path(base_dir)
    key = json.dumps({"s": source, "b": str(base.resolve())}, sort_keys=True)
    if key in _DATASET_CACHE:
        return _DATASET_CACHE[key]
    try:
        if "dataset" in source:
            ds = LabeledDataset.load(base / source["dataset"])
        elif "manifest" in source:
            ds = build_dataset(base / source["manifest"])
        elif "synthetic" in source:
            ds = _synthetic(source["synthetic"], source.get("params", {}), base)
        else:
            raise ValidationError(f"dataset source needs dataset, manifest or synthetic: {source}")
    except TypeError as exc:
        raise ValidationError(f"bad dataset parameters: {exc}") from None
    except OSError as exc:
        raise ValidationError(f"cannot load dataset: {exc}") from None
    _DATASET_CACHE[key] = ds
    return ds


def load_datasets(cfg: ExperimentConfig) -> dict[str, LabeledDataset]:
    out = {k: load_dataset(v, cfg.base_dir) for k, v in cfg.datasets.items()}
    if cfg.pairing == "species":
        a, b = out.values()
        names = common_species(a, b)
        if not names:
            raise ValidationError("the two datasets share no species")
        out = {k: restrict_species(ds, names) for k, ds in out.items()}
    else:
        _check_aligned(out)
    return out


def _check_aligned(datasets: Mapping[str, LabeledDataset]) -> None:
    items = list(datasets.items())
    k0, d0 = items[0]
    names0 = [normalize_species(d0.species[c]) for c in d0.labels]
    for k, ds in items[1:]:
        names = [normalize_species(ds.species[c]) for c in ds.labels]
        if names != names0:
            raise ValidationError(f"aligned pairing: datasets {k0!r} and {k!r} differ sample by sample")


# --------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class MethodResult:
    """Scores of one method on one run's test units (rows align with units)."""

    classes: tuple
    y_true: np.ndarray
    scores: np.ndarray
    composition_similarity: np.ndarray | None = None

    @property
    def accuracy(self) -> float:
        if self.y_true.size == 0:
            return float("nan")
        return float(np.mean(self.scores.argmax(axis=1) == self.y_true))

    def predictions(self) -> list[tuple[int, Prediction]]:
        return [(int(t), Prediction(s, self.classes)) for t, s in zip(self.y_true, self.scores)]


@dataclass(frozen=True)
class RunResult:
    run_index: int
    seed: int
    unit_ids: tuple[str, ...]
    species: tuple[str, ...]  # true species name per unit
    methods: Mapping[str, MethodResult]

    @property
    def accuracies(self) -> dict[str, float]:
        return {name: m.accuracy for name, m in self.methods.items()}


def recompute_accuracy(run: RunResult, method: str) -> float:
    """Accuracy from stored per-sample predictions, by name rather than label id."""
    m = run.methods[method]
    hits = 0
    for (_, pred), truth in zip(m.predictions(), run.species):
        hits += normalize_species(pred.label) == normalize_species(truth)
    return hits / len(run.species)


# --------------------------------------------------------------------------
# one run


@dataclass
class _Side:
    """One dataset's view of a run: its split and the processed training set."""

    ds: LabeledDataset
    train_idx: np.ndarray
    test_idx: np.ndarray
    train: LabeledDataset = None


def _process_train(ds: LabeledDataset, cfg: ExperimentConfig, seed: int) -> LabeledDataset:
    if cfg.outlier_threshold is not None:
        ds = ds.subset(remove_class_outliers(ds, cfg.outlier_threshold))
    opts = dict(cfg.augment)
    technique = opts.pop("technique", "none")
    return augment(ds, technique, seed, **opts)


def _fit(spec: ClassifierSpec, train: LabeledDataset, seed: int):
    if spec.model == "libs-cosine":
        return composition_matcher(train, spec.params)
    return train_model(spec.model, train, spec.params, seed)


def _units(sides: Mapping[str, _Side], cfg: ExperimentConfig, seed: int, test: bool):
    """Evaluation units as a list of (per-dataset index tuple, species name)."""
    keys = list(sides)
    pick = "test_idx" if test else "train_idx"
    if cfg.pairing == "aligned":
        s0 = sides[keys[0]]
        idx = getattr(s0, pick)
        return [((int(i),) * len(keys), s0.ds.species[s0.ds.labels[i]]) for i in idx]
    a, b = (sides[k] for k in keys)
    ia, ib = getattr(a, pick), getattr(b, pick)
    if ia.size == 0 or ib.size == 0:
        return []
    pairs = pair_by_species(a.ds.subset(ia), b.ds.subset(ib), cfg.max_pairs_per_species,
                            seed, species=a.ds.species)
    return [((int(ia[p.index_a]), int(ib[p.index_b])), p.species) for p in pairs]


def _label_vector(species: Sequence[str], classes: Sequence[str]) -> np.ndarray:
    index = {normalize_species(c): i for i, c in enumerate(classes)}
    return np.array([index.get(normalize_species(s), -1) for s in species], dtype=np.int64)


def _predict(model, spec: ClassifierSpec, sides, keys, units) -> np.ndarray:
    if spec.model == "two-stream":
        ka, kb = spec.dataset
        xa = np.stack([sides[ka].ds.values[u[keys.index(ka)]] for u, _ in units])
        xb = np.stack([sides[kb].ds.values[u[keys.index(kb)]] for u, _ in units])
        return model.predict_proba_pairs(xa, xb)
    col = keys.index(spec.dataset)
    rows = np.array([u[col] for u, _ in units], dtype=np.int64)
    uniq, inverse = np.unique(rows, return_inverse=True)
    return model.predict_proba(sides[spec.dataset].ds.values[uniq])[inverse]


def _train_pairs(sides, keys, units, spec: ClassifierSpec) -> list[PairedSample]:
    ka, kb = spec.dataset
    out = []
    classes = sides[ka].ds.species
    index = {normalize_species(c): i for i, c in enumerate(classes)}
    for u, name in units:
        ia, ib = u[keys.index(ka)], u[keys.index(kb)]
        out.append(PairedSample(sides[ka].ds.spectrum(ia), sides[kb].ds.spectrum(ib),
                                index[normalize_species(name)], name, ia, ib))
    return out


def _heldout_scores(spec: ClassifierSpec, side: _Side, seed: int) -> np.ndarray:
    """Out-of-fold scores for every raw training sample of one dataset."""
    train = side.ds.subset(side.train_idx)
    if spec.model == "libs-cosine":
        return composition_matcher(train, spec.params).predict_proba(train.values)

    def fit_predict(tr, te):
        model = train_model(spec.model, train.subset(tr), spec.params, seed)
        return model.predict_proba(train.values[te])

    return heldout_predictions(train.values, train.labels, fit_predict, folds=3, seed=seed)


def _run(cfg: ExperimentConfig, r: int) -> RunResult:
    seed = cfg.base_seed + r
    datasets = load_datasets(cfg)
    keys = list(datasets)
    sides: dict[str, _Side] = {}
    if cfg.pairing == "aligned":
        plan = make_split(datasets[keys[0]], cfg.protocol, seed)
        for k in keys:
            sides[k] = _Side(datasets[k], plan.train_indices, plan.test_indices)
    else:
        for k in keys:
            plan = make_split(datasets[k], cfg.protocol, seed)
            sides[k] = _Side(datasets[k], plan.train_indices, plan.test_indices)
    for k, side in sides.items():
        if np.intersect1d(side.train_idx, side.test_idx).size:
            raise SpectraminError(f"dataset {k!r}: train and test overlap")
    units = _units(sides, cfg, seed, test=True)
    if not units:
        raise ValidationError("the split left no test samples")
    unit_species = tuple(name for _, name in units)
    unit_ids = tuple("|".join(str(i) for i in u) for u, _ in units)

    for k in keys:
        if any(c.dataset == k for c in cfg.classifiers):
            sides[k].train = _process_train(sides[k].ds.subset(sides[k].train_idx), cfg, seed)

    methods: dict[str, MethodResult] = {}
    models = {}
    for spec in cfg.classifiers:
        if spec.model == "two-stream":
            pairs = _train_pairs(sides, keys, _units(sides, cfg, seed, test=False), spec)
            model = train_two_stream(pairs, sides[spec.dataset[0]].ds.species, spec.params, seed)
        else:
            model = _fit(spec, sides[spec.dataset].train, seed)
        models[spec.name] = model
        scores = _predict(model, spec, sides, keys, units)
        sim = None
        if spec.model == "libs-cosine":
            col = keys.index(spec.dataset)
            sim = np.array([model.composition_similarity(sides[spec.dataset].ds.values[u[col]], name)
                            for u, name in units])
        methods[spec.name] = MethodResult(tuple(model.classes), _label_vector(unit_species, model.classes),
                                          scores, sim)

    by_name = {c.name: c for c in cfg.classifiers}
    for fspec in cfg.fusions:
        pa, pb = methods[fspec.a], methods[fspec.b]
        preds_a = [Prediction(s, pa.classes) for s in pa.scores]
        preds_b = [Prediction(s, pb.classes) for s in pb.scores]
        if fspec.rule == "svm":
            svm = _train_fusion_svm(by_name[fspec.a], by_name[fspec.b], sides, keys, cfg, seed,
                                    fspec.params)
            fused = [apply_fused_svm(svm, p, q) for p, q in zip(preds_a, preds_b)]
        else:
            rule = FUSION_RULES[fspec.rule]
            fused = [rule(p, q) for p, q in zip(preds_a, preds_b)]
        classes = fused[0].classes
        methods[fspec.name] = MethodResult(classes, _label_vector(unit_species, classes),
                                           np.stack([f.scores for f in fused]))
    return RunResult(r, seed, unit_ids, unit_species, methods)


def _train_fusion_svm(spec_a, spec_b, sides, keys, cfg, seed, params):
    if "two-stream" in (spec_a.model, spec_b.model):
        raise ValidationError("SVM fusion needs single-modality inputs")
    held = {}
    for spec in (spec_a, spec_b):
        side = sides[spec.dataset]
        scores = _heldout_scores(spec, side, seed)
        # row lookup by raw dataset index
        held[spec.name] = dict(zip(side.train_idx.tolist(), scores))
    train_units = _units(sides, cfg, seed, test=False)
    ca = sides[spec_a.dataset].ds.species
    cb = sides[spec_b.dataset].ds.species
    index = {normalize_species(c): i for i, c in enumerate(ca)}
    triples = []
    for u, name in train_units:
        p = Prediction.from_scores(held[spec_a.name][u[keys.index(spec_a.dataset)]] + 1e-12, ca)
        q = Prediction.from_scores(held[spec_b.name][u[keys.index(spec_b.dataset)]] + 1e-12, cb)
        triples.append((p, q, index[normalize_species(name)]))
    return fuse_svm(triples, params)


def run_single(cfg: ExperimentConfig, r: int) -> RunResult:
    try:
        return _run(cfg, r)
    except ExperimentError:
        raise
    except Exception as exc:  # attach the run index to whatever went wrong
        raise ExperimentError(r, exc) from exc


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> list[RunResult]:
    """All runs of ``cfg``, ordered by run index whatever ``jobs`` is."""
    if jobs < 1:
        raise ValidationError("jobs must be at least 1")
    runs = range(cfg.n_runs)
    if jobs == 1 or cfg.n_runs == 1:
        return [run_single(cfg, r) for r in runs]
    with ProcessPoolExecutor(max_workers=min(jobs, cfg.n_runs)) as pool:
        return list(pool.map(run_single, [cfg] * cfg.n_runs, runs))


# --------------------------------------------------------------------------
# statistics


def accuracy_ci(accuracies: Sequence[float]) -> tuple[float, float | None]:
    """Mean and 95% normal-approximation half-width (``None`` for a single run)."""
    acc = np.asarray(list(accuracies), dtype=float)
    if acc.size == 0:
        raise ValidationError("no accuracies to summarize")
    mean = float(acc.mean())
    if acc.size == 1:
        return mean, None
    return mean, float(1.96 * acc.std(ddof=1) / math.sqrt(acc.size))


def pca_project(spectra, n_components: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Project onto the leading principal components.

    Returns ``(projections, explained_variance)``.  Each component's sign is
    fixed so its largest-magnitude loading is positive.
    """
    x = np.asarray(spectra, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError("PCA needs at least two samples")
    if not 1 <= n_components <= x.shape[1]:
        raise ValidationError("n_components must lie in [1, n_features]")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:n_components]
    evals, evecs = evals[order], evecs[:, order]
    for j in range(n_components):
        if evecs[np.argmax(np.abs(evecs[:, j])), j] < 0:
            evecs[:, j] = -evecs[:, j]
    return centered @ evecs, np.clip(evals, 0.0, None)


# --------------------------------------------------------------------------
# exports


def _csv(rows: Sequence[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def export_violin_data(results: Sequence[RunResult]) -> str:
    """CSV rows (algorithm, sample_id, cosine_similarity) for methods that estimate compositions."""
    rows = []
    for run in results:
        for name, m in run.methods.items():
            if m.composition_similarity is None:
                continue
            for uid, s in zip(run.unit_ids, m.composition_similarity):
                rows.append((name, f"{run.run_index:04d}:{uid}", float(s)))
    rows.sort(key=lambda t: (t[0], t[1]))
    return _csv([(a, sid, f"{s:.10g}") for a, sid, s in rows],
                ["algorithm", "sample_id", "cosine_similarity"])


def pca_export(ds: LabeledDataset, n_components: int = 2) -> str:
    proj, var = pca_project(ds.values, n_components)
    header = ["sample", "species", *[f"pc{j + 1}" for j in range(n_components)]]
    rows = [(i, ds.species[ds.labels[i]], *[f"{v:.10g}" for v in proj[i]]) for i in range(len(ds))]
    rows.append(("explained_variance", "", *[f"{v:.10g}" for v in var]))
    return _csv(rows, header)


def class_mean_std_export(ds: LabeledDataset, species: Sequence[str] | None = None) -> str:
    """Per grid point, the mean and (population) standard deviation of each species."""
    species = list(species) if species is not None else list(ds.species)
    header = ["position"]
    columns = []
    for name in species:
        rows = ds.values[ds.labels == ds.species_id(name)]
        if rows.shape[0] == 0:
            raise ValidationError(f"no spectra for species {name!r}")
        header += [f"{name} mean", f"{name} std"]
        columns += [rows.mean(axis=0), rows.std(axis=0)]
    pos = ds.grid.positions()
    body = [(f"{pos[i]:.10g}", *[f"{c[i]:.10g}" for c in columns]) for i in range(pos.size)]
    return _csv(body, header)


def summarize(results: Sequence[RunResult]) -> dict:
    if not results:
        raise ValidationError("no results to summarize")
    names = list(results[0].methods)
    methods = {}
    for name in names:
        acc = [run.methods[name].accuracy for run in results]
        mean, half = accuracy_ci(acc)
        methods[name] = {"mean_accuracy": mean, "ci95_half_width": half, "accuracies": acc}
    best = max(methods.values(), key=lambda m: m["mean_accuracy"])["mean_accuracy"]
    return {
        "n_runs": len(results),
        "methods": methods,
        "best": [n for n, m in methods.items() if m["mean_accuracy"] == best],
        "n_test_units": [len(run.unit_ids) for run in results],
    }


def render_markdown(summary: Mapping, title: str = "Results") -> str:
    lines = [f"# {title}", "", f"{summary['n_runs']} run(s); best mean accuracy in bold.", "",
             "| Method | Accuracy (%) | 95% CI (±) |", "|---|---:|---:|"]
    for name, m in summary["methods"].items():
        acc = f"{100 * m['mean_accuracy']:.2f}"
        ci = "n/a" if m["ci95_half_width"] is None else f"{100 * m['ci95_half_width']:.2f}"
        if name in summary["best"]:
            name, acc = f"**{name}**", f"**{acc}**"
        lines.append(f"| {name} | {acc} | {ci} |")
    return "\n".join(lines) + "\n"


def dumps_json(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def report(results: Sequence[RunResult], out_dir: str | os.PathLike,
           config: ExperimentConfig | None = None) -> dict:
    """Write ``report.md`` and ``results.json``; returns the JSON payload."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(results)
    payload = {"summary": summary}
    if config is not None:
        payload["config"] = config.to_dict()
    title = config.name if config is not None else "Results"
    atomic_write_bytes(out / "results.json", dumps_json(payload))
    atomic_write_bytes(out / "report.md", render_markdown(summary, title).encode())
    return payload


def evaluate(cfg: ExperimentConfig, out_dir: str | os.PathLike, jobs: int = 1) -> dict:
    """Run the experiment and write every output file into ``out_dir``."""
    results = run_experiment(cfg, jobs)
    out = Path(out_dir)
    payload = report(results, out, cfg)
    atomic_write_bytes(out / "violin.csv", export_violin_data(results).encode())
    first = load_datasets(cfg)[next(iter(cfg.datasets))]
    if len(first) >= 2:
        atomic_write_bytes(out / "pca.csv", pca_export(first).encode())
    atomic_write_bytes(out / "meanstd.csv", class_mean_std_export(first).encode())
    return payload
