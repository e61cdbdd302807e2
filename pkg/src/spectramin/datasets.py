"""Spectral file readers, labelled datasets, split protocols and pairing."""

from __future__ import annotations

import io
import json
import os
from dataclasses import dataclass
from enum import Enum
from itertools import product
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyIntersection, ManifestError, ParseError, SpectraminError
from .fsutil import atomic_write_bytes
from .spectra import (
    DEFAULT_GRIDS,
    GridSpec,
    RawSpectrum,
    Spectrum,
    SpectrumKind,
    outlier_distances,
    preprocess,
)


def normalize_species(name: str) -> str:
    return " ".join(str(name).split()).lower()


# --------------------------------------------------------------------------
# readers


def _decode(data: bytes | str) -> str:
    if isinstance(data, bytes):
        return data.decode("utf-8", errors="replace")
    return data


def _collapse(x: Sequence[float], y: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Sort by position and average intensities at duplicated positions."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    uniq, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    sums = np.zeros_like(uniq)
    np.add.at(sums, inverse, y)
    return uniq, sums / counts


def _parse_pair(line: str) -> tuple[float, float] | None:
    parts = [p for p in line.replace("\t", ",").split(",") if p.strip()]
    if len(parts) < 2:
        parts = line.split()
    if len(parts) < 2:
        return None
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        return None


def parse_rruff_text(data: bytes | str, kind: SpectrumKind | str = SpectrumKind.RAMAN) -> RawSpectrum:
    """Read a RRUFF-style text export.

    Header lines look like ``##NAMES=Quartz``; the body is ``x, y`` pairs; an
    ``##END`` line stops reading.
    """
    meta: dict[str, str] = {}
    xs: list[float] = []
    ys: list[float] = []
    for raw_line in io.StringIO(_decode(data)):
        line = raw_line.strip()
        if not line:
            continue
        if line.startswith("##"):
            key, _, value = line[2:].partition("=")
            key = key.strip().lower()
            if key == "end":
                break
            meta[key] = value.strip()
            continue
        pair = _parse_pair(line)
        if pair is None:
            raise ParseError(f"unparseable data line: {line!r}")
        xs.append(pair[0])
        ys.append(pair[1])
    if not xs:
        raise ParseError("no numeric x, y pairs found")
    name = meta.get("names") or meta.get("name")
    if name:
        meta["name"] = name
    x, y = _collapse(xs, ys)
    if x.size < 2:
        raise ParseError("need at least two distinct positions")
    return RawSpectrum(x, y, kind, meta)


def parse_csv_xy(data: bytes | str, kind: SpectrumKind | str) -> RawSpectrum:
    """Two comma-separated numeric columns, with an optional single header row."""
    rows = [ln.strip() for ln in io.StringIO(_decode(data)) if ln.strip()]
    xs: list[float] = []
    ys: list[float] = []
    for i, line in enumerate(rows):
        pair = _parse_pair(line)
        if pair is None:
            if i == 0:
                continue
            raise ParseError(f"unparseable CSV row {i}: {line!r}")
        xs.append(pair[0])
        ys.append(pair[1])
    if len(xs) < 2:
        raise ParseError("CSV spectrum needs at least two data rows")
    x, y = _collapse(xs, ys)
    if x.size < 2:
        raise ParseError("need at least two distinct positions")
    return RawSpectrum(x, y, kind, {})


PARSERS = {
    "rruff": parse_rruff_text,
    "csv": parse_csv_xy,
}


def read_spectrum_file(path: str | os.PathLike, fmt: str | None = None,
                       kind: SpectrumKind | str = SpectrumKind.RAMAN) -> RawSpectrum:
    path = Path(path)
    if fmt is None:
        fmt = "csv" if path.suffix.lower() == ".csv" else "rruff"
    if fmt not in PARSERS:
        raise ManifestError(f"unknown spectrum format {fmt!r}")
    return PARSERS[fmt](path.read_bytes(), kind)


# --------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class LabeledDataset:
    """Preprocessed spectra on one grid with integer species labels.

    ``values`` is an ``(n, n_points)`` matrix; ``species`` maps id -> name.
    """

    values: np.ndarray
    labels: np.ndarray
    species: tuple[str, ...]
    grid: GridSpec
    kind: SpectrumKind
    meta: tuple = ()

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float, ndmin=2)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        if values.shape[0] == 0 and values.size == 0:
            values = values.reshape(0, self.grid.n_points)
        if values.shape != (labels.size, self.grid.n_points):
            raise SpectraminError(
                f"values shape {values.shape} does not match {labels.size} labels "
                f"on a {self.grid.n_points}-point grid"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= len(self.species)):
            raise SpectraminError("label outside species index")
        values.setflags(write=False)
        labels.setflags(write=False)
        meta = tuple(dict(m) for m in self.meta) if self.meta else tuple({} for _ in labels)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "kind", SpectrumKind.parse(self.kind))
        object.__setattr__(self, "meta", meta)

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def n_classes(self) -> int:
        return len(self.species)

    def spectrum(self, i: int) -> Spectrum:
        return Spectrum(self.grid, self.values[i], self.kind, self.meta[i])

    @property
    def samples(self) -> list[tuple[Spectrum, int]]:
        return [(self.spectrum(i), int(self.labels[i])) for i in range(len(self))]

    def species_id(self, name: str) -> int:
        key = normalize_species(name)
        for i, s in enumerate(self.species):
            if normalize_species(s) == key:
                return i
        raise KeyError(name)

    def indices_by_species(self) -> dict[int, np.ndarray]:
        return {c: np.flatnonzero(self.labels == c) for c in range(self.n_classes)}

    def subset(self, indices: Iterable[int]) -> "LabeledDataset":
        idx = np.asarray(list(indices), dtype=np.int64)
        return LabeledDataset(
            self.values[idx] if idx.size else np.zeros((0, self.grid.n_points)),
            self.labels[idx],
            self.species,
            self.grid,
            self.kind,
            tuple(self.meta[i] for i in idx),
        )

    def with_samples(self, values: np.ndarray, labels: np.ndarray, meta=None) -> "LabeledDataset":
        return LabeledDataset(values, labels, self.species, self.grid, self.kind, meta or ())

    # persistence: a single .npz, no pickles
    def save(self, path: str | os.PathLike) -> None:
        header = {
            "species": list(self.species),
            "grid": self.grid.to_dict(),
            "kind": self.kind.value,
            "meta": list(self.meta),
        }
        buf = io.BytesIO()
        np.savez(buf, values=self.values, labels=self.labels, header=np.array(json.dumps(header)))
        atomic_write_bytes(path, buf.getvalue())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "LabeledDataset":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["header"]))
            return cls(
                z["values"],
                z["labels"],
                tuple(header["species"]),
                GridSpec.from_dict(header["grid"]),
                SpectrumKind.parse(header["kind"]),
                tuple(header["meta"]),
            )


def dataset_from_spectra(spectra: Sequence[Spectrum], species_names: Sequence[str]) -> LabeledDataset:
    """Assemble a dataset; species ids are assigned by first appearance."""
    if not spectra:
        raise ManifestError("no spectra given")
    grids = {s.grid for s in spectra}
    kinds = {s.kind for s in spectra}
    if len(grids) != 1 or len(kinds) != 1:
        raise ManifestError("all spectra must share one grid and kind")
    index: dict[str, int] = {}
    names: list[str] = []
    labels = []
    for name in species_names:
        key = normalize_species(name)
        if key not in index:
            index[key] = len(names)
            names.append(" ".join(str(name).split()))
        labels.append(index[key])
    return LabeledDataset(
        np.stack([s.values for s in spectra]),
        np.array(labels),
        tuple(names),
        grids.pop(),
        kinds.pop(),
        tuple(dict(s.meta) for s in spectra),
    )


def build_dataset(manifest_path: str | os.PathLike) -> LabeledDataset:
    """Build a dataset from a JSON manifest.

    Schema: ``{"kind": "raman", "grid": {...optional...},
    "entries": [{"file": ..., "format": "rruff"|"csv", "species": ...}]}``.
    File paths are relative to the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {manifest_path}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}") from None
    entries = manifest.get("entries") or []
    if not entries:
        raise ManifestError("manifest lists no entries")
    try:
        kind = SpectrumKind.parse(manifest.get("kind", entries[0].get("kind", "raman")))
    except SpectraminError as exc:
        raise ManifestError(str(exc)) from None
    grid = GridSpec.from_dict(manifest["grid"]) if "grid" in manifest else DEFAULT_GRIDS[kind]

    spectra = []
    names = []
    for n, entry in enumerate(entries):
        if "kind" in entry and SpectrumKind.parse(entry["kind"]) != kind:
            raise ManifestError(f"entry {n} has kind {entry['kind']!r}, manifest is {kind.value!r}")
        fmt = entry.get("format", "rruff")
        if fmt not in PARSERS:
            raise ManifestError(f"entry {n}: unknown format {fmt!r}")
        path = manifest_path.parent / entry["file"]
        if not path.is_file():
            raise ManifestError(f"entry {n}: missing file {path}")
        raw = PARSERS[fmt](path.read_bytes(), kind)
        species = entry.get("species") or raw.meta.get("name")
        if not species:
            raise ManifestError(f"entry {n}: no species given and none in file header")
        meta = dict(raw.meta)
        meta["source"] = str(entry["file"])
        raw = RawSpectrum(raw.positions, raw.intensities, kind, meta)
        spectra.append(preprocess(raw, grid))
        names.append(species)
    return dataset_from_spectra(spectra, names)


def remove_class_outliers(ds: LabeledDataset, threshold: float = 0.5) -> np.ndarray:
    """Indices of ``ds`` kept after per-class outlier removal."""
    keep = []
    for c, idx in ds.indices_by_species().items():
        if idx.size == 0:
            continue
        dist = outlier_distances([ds.values[i] for i in idx])
        kept = idx[dist <= threshold]
        if kept.size == 0:
            kept = idx[[int(np.argmin(dist))]]
        keep.extend(kept.tolist())
    return np.array(sorted(keep), dtype=np.int64)


# --------------------------------------------------------------------------
# splits


class SplitProtocol(str, Enum):
    THREE_PER_SPECIES = "three-per-species"
    LEAVE_ONE_OUT = "loo"


@dataclass(frozen=True)
class SplitPlan:
    train_indices: np.ndarray
    test_indices: np.ndarray
    seed: int
    protocol: SplitProtocol

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol.value,
            "seed": int(self.seed),
            "train_indices": [int(i) for i in self.train_indices],
            "test_indices": [int(i) for i in self.test_indices],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "SplitPlan":
        return cls(
            np.asarray(d["train_indices"], dtype=np.int64),
            np.asarray(d["test_indices"], dtype=np.int64),
            int(d["seed"]),
            SplitProtocol(d["protocol"]),
        )


def _split(ds: LabeledDataset, seed: int, n_test_for) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    train, test = [], []
    for _, idx in sorted(ds.indices_by_species().items()):
        if idx.size == 0:
            continue
        perm = idx[rng.permutation(idx.size)]
        n_test = n_test_for(idx.size)
        test.extend(perm[:n_test].tolist())
        train.extend(perm[n_test:].tolist())
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(test), dtype=np.int64)


def split_three_per_species(ds: LabeledDataset, seed: int) -> SplitPlan:
    """Three random training spectra per species; the rest are test.

    Species with three or fewer spectra go entirely to training.
    """
    train, test = _split(ds, seed, lambda n: max(n - 3, 0))
    return SplitPlan(train, test, seed, SplitProtocol.THREE_PER_SPECIES)


def split_leave_one_out(ds: LabeledDataset, seed: int) -> SplitPlan:
    """One random test spectrum per species that has at least two."""
    train, test = _split(ds, seed, lambda n: 1 if n >= 2 else 0)
    return SplitPlan(train, test, seed, SplitProtocol.LEAVE_ONE_OUT)


def make_split(ds: LabeledDataset, protocol: SplitProtocol | str, seed: int) -> SplitPlan:
    protocol = SplitProtocol(protocol)
    if protocol is SplitProtocol.THREE_PER_SPECIES:
        return split_three_per_species(ds, seed)
    return split_leave_one_out(ds, seed)


# --------------------------------------------------------------------------
# pairing


@dataclass(frozen=True)
class PairedSample:
    spectrum_a: Spectrum
    spectrum_b: Spectrum
    species_id: int
    species: str = ""
    index_a: int = -1
    index_b: int = -1


def common_species(ds_a: LabeledDataset, ds_b: LabeledDataset) -> list[str]:
    """Species present in both datasets, in ``ds_a`` id order."""
    in_b = {normalize_species(s) for s in ds_b.species}
    present_a = set(ds_a.labels.tolist())
    present_b = {normalize_species(ds_b.species[c]) for c in set(ds_b.labels.tolist())}
    return [
        s for c, s in enumerate(ds_a.species)
        if c in present_a and normalize_species(s) in in_b and normalize_species(s) in present_b
    ]


def _capped(candidates: list, cap: int | None, rng: np.random.Generator) -> list:
    if cap is not None and len(candidates) > cap:
        pick = np.sort(rng.choice(len(candidates), size=cap, replace=False))
        return [candidates[i] for i in pick]
    return candidates


def pair_by_species(ds_a: LabeledDataset, ds_b: LabeledDataset,
                    max_pairs_per_species: int | None = 50, seed: int = 0,
                    species: Sequence[str] | None = None) -> list[PairedSample]:
    """Pair every a-spectrum with every b-spectrum of the same species.

    Species ids in the result index ``species`` (default: the common species
    in ``ds_a`` order).  Products larger than the cap are subsampled.
    """
    names = list(species) if species is not None else common_species(ds_a, ds_b)
    if not names:
        raise EmptyIntersection("the datasets share no species")
    rng = np.random.default_rng(seed)
    by_a = ds_a.indices_by_species()
    by_b = ds_b.indices_by_species()
    pairs = []
    for sid, name in enumerate(names):
        try:
            ia = by_a[ds_a.species_id(name)]
            ib = by_b[ds_b.species_id(name)]
        except KeyError:
            continue
        chosen = _capped(list(product(ia.tolist(), ib.tolist())), max_pairs_per_species, rng)
        for i, j in chosen:
            pairs.append(PairedSample(ds_a.spectrum(i), ds_b.spectrum(j), sid, name, i, j))
    if not pairs:
        raise EmptyIntersection("no species has spectra in both datasets")
    return pairs


def pair_same_modality(ds: LabeledDataset, seed: int = 0, cap: int | None = 50) -> list[PairedSample]:
    """Ordered pairs (i, j), i != j, of spectra sharing a species."""
    rng = np.random.default_rng(seed)
    pairs = []
    for sid, idx in sorted(ds.indices_by_species().items()):
        cand = [(i, j) for i in idx.tolist() for j in idx.tolist() if i != j]
        for i, j in _capped(cand, cap, rng):
            pairs.append(PairedSample(ds.spectrum(i), ds.spectrum(j), sid, ds.species[sid], i, j))
    return pairs


def restrict_species(ds: LabeledDataset, names: Sequence[str]) -> LabeledDataset:
    """Keep only samples of ``names``; labels are re-indexed into ``names``."""
    index = {normalize_species(n): i for i, n in enumerate(names)}
    mapped = np.array([index.get(normalize_species(ds.species[c]), -1) for c in ds.labels],
                      dtype=np.int64)
    keep = np.flatnonzero(mapped >= 0)
    sub = ds.subset(keep)
    return LabeledDataset(sub.values, mapped[keep], tuple(names), ds.grid, ds.kind, sub.meta)
