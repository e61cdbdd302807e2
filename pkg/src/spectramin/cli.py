"""``spectramin`` command line.

Exit status: 0 on success, 1 when an input fails validation, 2 on any other
failure.  Files are written atomically, so a failed command leaves no partial
output behind.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .datasets import LabeledDataset, SplitPlan, build_dataset, make_split, pair_by_species, read_spectrum_file
from .errors import ExperimentError, ValidationError
from .fsutil import atomic_write_bytes
from .learners.prediction import Prediction
from .spectra import LIBS_GRID, SpectrumKind, preprocess

SEED_ENV = "SPECTRAMIN_SEED"


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; bad usage is a validation problem here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def resolve_seed(value: int | None) -> int:
    """Explicit ``--seed`` wins, then ``$SPECTRAMIN_SEED``, then 0."""
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise ValidationError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _read_json(path_or_text: str):
    """Parse JSON from a file path, or from the argument itself if it is not a file."""
    p = Path(path_or_text)
    try:
        text = p.read_text() if p.is_file() else path_or_text
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON in {path_or_text!r}: {exc}") from None


def _json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode()


def _emit(obj, out: str | None) -> None:
    if out:
        atomic_write_bytes(out, _json_bytes(obj))
    else:
        sys.stdout.write(_json_bytes(obj).decode())


def _load_plan(path: str) -> SplitPlan:
    try:
        return SplitPlan.from_dict(_read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed split plan {path}: {exc}") from None


def _train_part(ds: LabeledDataset, plan_path: str | None) -> LabeledDataset:
    if plan_path is None:
        return ds
    plan = _load_plan(plan_path)
    if plan.train_indices.size and plan.train_indices.max() >= len(ds):
        raise ValidationError("split plan does not belong to this dataset")
    return ds.subset(plan.train_indices)


def _read_spectrum(path: str, fmt: str | None, kind, grid):
    raw = read_spectrum_file(path, fmt, kind or SpectrumKind.RAMAN)
    return preprocess(raw, grid)


# --------------------------------------------------------------------------
# commands


def cmd_ingest(args) -> None:
    ds = build_dataset(args.manifest)
    ds.save(args.out)
    print(f"{len(ds)} spectra, {ds.n_classes} species -> {args.out}", file=sys.stderr)


def cmd_split(args) -> None:
    ds = LabeledDataset.load(args.dataset)
    plan = make_split(ds, args.protocol, resolve_seed(args.seed))
    atomic_write_bytes(args.out, _json_bytes(plan.to_dict()))


def cmd_augment(args) -> None:
    from .augment import augment

    ds = _train_part(LabeledDataset.load(args.dataset), args.plan)
    params = _read_json(args.params) if args.params else {}
    try:
        out = augment(ds, args.technique, resolve_seed(args.seed), **params)
    except TypeError as exc:
        raise ValidationError(f"bad augmentation parameters: {exc}") from None
    out.save(args.out)


def cmd_train(args) -> None:
    from .datasets import remove_class_outliers
    from .learners.base import save_model
    from .training import train_model, train_two_stream

    seed = resolve_seed(args.seed)
    params = _read_json(args.config) if args.config else {}
    train = _train_part(LabeledDataset.load(args.dataset), args.plan)
    if args.model == "two-stream":
        if not args.dataset_b:
            raise ValidationError("two-stream training needs --dataset-b")
        train_b = _train_part(LabeledDataset.load(args.dataset_b), args.plan_b)
        pairs = pair_by_species(train, train_b, args.max_pairs, seed)
        names = sorted({p.species_id: p.species for p in pairs}.items())
        classes = [n for _, n in names]
        if [i for i, _ in names] != list(range(len(classes))):
            # species without pairs leave gaps; renumber densely
            remap = {old: new for new, (old, _) in enumerate(names)}
            pairs = [replace(p, species_id=remap[p.species_id]) for p in pairs]
        model = train_two_stream(pairs, classes, params, seed)
    else:
        if args.outlier_threshold is not None:
            train = train.subset(remove_class_outliers(train, args.outlier_threshold))
        model = train_model(args.model, train, params, seed)
    save_model(model, args.out)


def cmd_predict(args) -> None:
    from .learners.base import load_model
    from .learners.cnn import TwoStreamModel

    model = load_model(args.model)
    if args.top < 1:
        raise ValidationError("--top must be at least 1")
    if isinstance(model, TwoStreamModel):
        if not args.input_b:
            raise ValidationError("a two-stream model needs --input-b")
        a = _read_spectrum(args.input, args.format, model.kind, model.grid)
        b = _read_spectrum(args.input_b, args.format, model.kind_b, model.grid_b)
        scores = model.predict_proba_pairs(a.values[None], b.values[None])[0]
        pred = Prediction(scores, model.classes)
    else:
        if model.grid is None:
            raise ValidationError("this model has no spectral grid; it cannot classify spectra")
        spectrum = _read_spectrum(args.input, args.format, model.kind, model.grid)
        pred = model.predict(spectrum)
    out = pred.to_dict(model=model.model_type, seed=resolve_seed(args.seed))
    out["top"] = [[str(c), float(s)] for c, s in pred.top(args.top)]
    _emit(out, args.out)


def cmd_libs_synth(args) -> None:
    from .libs.formula import parse_formula
    from .libs.lines import default_line_table, read_line_table
    from .libs.synth import synth_libs_spectrum

    lines = read_line_table(args.lines) if args.lines else default_line_table()
    if (args.composition is None) == (args.formula is None):
        raise ValidationError("give exactly one of --composition or --formula")
    if args.formula:
        comp = parse_formula(args.formula)[0]
    else:
        comp = _read_json(args.composition)
        if not isinstance(comp, dict):
            raise ValidationError("--composition must be a JSON object of element fractions")
        from .libs.composition import ElementComposition

        comp = ElementComposition.from_amounts({k: float(v) for k, v in comp.items()})
    spectrum = synth_libs_spectrum(comp, lines, LIBS_GRID, args.sigma)
    rows = ["wavelength_nm,intensity"]
    rows += [f"{x:.4f},{y:.8g}" for x, y in zip(spectrum.grid.positions(), spectrum.values)]
    atomic_write_bytes(args.out, ("\n".join(rows) + "\n").encode())


def cmd_libs_estimate(args) -> None:
    from .libs.estimate import estimate_composition_cosine, match_mineral_by_composition
    from .libs.lines import default_line_table, read_line_table, read_mineral_table

    result = {"method": args.method}
    if args.method == "cosine":
        lines = read_line_table(args.lines) if args.lines else default_line_table()
        spectrum = _read_spectrum(args.input, args.format, SpectrumKind.LIBS, LIBS_GRID)
        comp, sims = estimate_composition_cosine(spectrum, lines)
        result["similarities"] = {k: float(v) for k, v in sims.items()}
    else:
        from .learners.base import load_model
        from .libs.regressor import LibsCnnModel

        if not args.model:
            raise ValidationError("--method cnn needs --model")
        model = load_model(args.model)
        if not isinstance(model, LibsCnnModel):
            raise ValidationError(f"{args.model} is not a LIBS regressor model")
        spectrum = _read_spectrum(args.input, args.format, SpectrumKind.LIBS, model.grid)
        comp = model.composition(spectrum)
    result["composition"] = comp.to_dict()
    if args.minerals:
        pred = match_mineral_by_composition(comp, read_mineral_table(args.minerals))
        result["minerals"] = pred.to_dict(model=f"libs-{args.method}")
        result["top"] = [[str(c), float(s)] for c, s in pred.top(args.top)]
    _emit(result, args.out)


def cmd_libs_train(args) -> None:
    from .learners.base import save_model
    from .libs.lines import default_line_table, read_line_table
    from .libs.regressor import train_libs_cnn
    from .training import train_config

    lines = read_line_table(args.lines) if args.lines else default_line_table()
    params = _read_json(args.config) if args.config else {}
    cfg = train_config({"epochs": 20, "batch_size": 32, "ema_decay": 0.0, **params},
                       resolve_seed(args.seed))
    model = train_libs_cnn(lines, LIBS_GRID, n_samples=args.samples, cfg=cfg, sigma_nm=args.sigma)
    save_model(model, args.out)


def _load_prediction(path: str) -> Prediction:
    d = _read_json(path)
    try:
        return Prediction.from_dict(d)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed prediction JSON {path}: {exc}") from None


def cmd_fuse(args) -> None:
    from .fusion import FUSION_RULES, apply_fused_svm

    p, q = _load_prediction(args.pred_a), _load_prediction(args.pred_b)
    if args.rule == "svm":
        from .learners.base import load_model
        from .learners.svm import LinearSvmModel

        if not args.svm_model:
            raise ValidationError("--rule svm needs --svm-model")
        svm = load_model(args.svm_model)
        if not isinstance(svm, LinearSvmModel):
            raise ValidationError(f"{args.svm_model} is not a fusion SVM model")
        fused = apply_fused_svm(svm, p, q)
    else:
        fused = FUSION_RULES[args.rule](p, q)
    _emit(fused.to_dict(model=f"fuse-{args.rule}", seed=None), args.out)


def cmd_fuse_train(args) -> None:
    from .fusion import align, fuse_svm
    from .learners.base import save_model

    rows = _read_json(args.pairs)
    if not isinstance(rows, list) or not rows:
        raise ValidationError("--pairs must hold a non-empty JSON list")
    triples = []
    try:
        for row in rows:
            p, q = align(Prediction.from_dict(row["a"]), Prediction.from_dict(row["b"]))
            triples.append((p, q, p.classes.index(row["species"])))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed training pair: {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"training pair species not among the classes: {exc}") from None
    params = _read_json(args.config) if args.config else {}
    save_model(fuse_svm(triples, params), args.out)


def cmd_evaluate(args) -> None:
    from .evalharness import ExperimentConfig, evaluate

    cfg = ExperimentConfig.load(args.config)
    payload = evaluate(cfg, args.out, jobs=args.jobs)
    for name, m in payload["summary"]["methods"].items():
        half = m["ci95_half_width"]
        ci = "" if half is None else f" ± {100 * half:.2f}"
        print(f"{name}: {100 * m['mean_accuracy']:.2f}%{ci}", file=sys.stderr)


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spectramin", description="Mineral identification from spectra.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="build a dataset from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("split", help="draw a train/test split plan")
    p.add_argument("--dataset", required=True)
    p.add_argument("--protocol", choices=["three-per-species", "loo"], default="three-per-species")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("augment", help="augment the training part of a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--plan")
    p.add_argument("--technique", required=True,
                   choices=["none", "shift", "offset", "noise", "bjerrum", "smote"])
    p.add_argument("--params", help="JSON object (or file) of technique parameters")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train a classifier")
    p.add_argument("--dataset", required=True)
    p.add_argument("--plan")
    p.add_argument("--dataset-b", help="second modality (two-stream only)")
    p.add_argument("--plan-b")
    p.add_argument("--model", required=True,
                   choices=["knn", "trees", "svm", "cnn", "ensemble6", "two-stream"])
    p.add_argument("--config", help="JSON object (or file) of model parameters")
    p.add_argument("--outlier-threshold", type=float)
    p.add_argument("--max-pairs", type=int, default=50)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="rank species for one spectrum file")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--input-b", help="second-modality spectrum (two-stream models)")
    p.add_argument("--format", choices=["rruff", "csv"])
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    libs = sub.add_parser("libs", help="LIBS composition tools")
    lsub = libs.add_subparsers(dest="libs_command", required=True, parser_class=_Parser)

    p = lsub.add_parser("synth", help="synthesize a LIBS spectrum")
    p.add_argument("--lines")
    p.add_argument("--composition", help="JSON object (or file) of element fractions")
    p.add_argument("--formula")
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_libs_synth)

    p = lsub.add_parser("estimate", help="estimate element composition")
    p.add_argument("--lines")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=["rruff", "csv"])
    p.add_argument("--method", choices=["cosine", "cnn"], default="cosine")
    p.add_argument("--model")
    p.add_argument("--minerals", help="CSV name,formula table to match against")
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_libs_estimate)

    p = lsub.add_parser("train", help="train the CNN composition regressor on synthetic spectra")
    p.add_argument("--lines")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--sigma", type=float, default=0.2)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_libs_train)

    p = sub.add_parser("fuse", help="fuse two prediction files")
    p.add_argument("--pred-a", required=True, help="for --rule sq this is the LIBS-side prediction")
    p.add_argument("--pred-b", required=True)
    p.add_argument("--rule", choices=["ave", "mul", "sq", "svm"], required=True)
    p.add_argument("--svm-model")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("fuse-train", help="train a fusion SVM from held-out prediction pairs")
    p.add_argument("--pairs", required=True,
                   help='JSON list of {"a": prediction, "b": prediction, "species": name}')
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse_train)

    p = sub.add_parser("evaluate", help="run a repeated-split experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_evaluate)
    return parser


def _is_validation(exc: BaseException) -> bool:
    if isinstance(exc, ExperimentError):
        return _is_validation(exc.cause)
    return isinstance(exc, (ValidationError, FileNotFoundError, IsADirectoryError,
                            NotADirectoryError))


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001  (map everything to an exit status)
        code = 1 if _is_validation(exc) else 2
        kind = "error" if code == 1 else "failure"
        print(f"spectramin: {kind}: {exc}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
