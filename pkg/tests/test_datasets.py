import json

import numpy as np
import pytest

from spectramin.datasets import (
    LabeledDataset,
    SplitPlan,
    build_dataset,
    common_species,
    dataset_from_spectra,
    make_split,
    pair_by_species,
    pair_same_modality,
    parse_csv_xy,
    parse_rruff_text,
    remove_class_outliers,
    restrict_species,
    split_leave_one_out,
    split_three_per_species,
)
from spectramin.errors import EmptyIntersection, ManifestError, ParseError
from spectramin.spectra import RAMAN_GRID, SpectrumKind

from conftest import make_dataset


def test_rruff_example():
    raw = parse_rruff_text(b"##NAME=Quartz\n100.0, 5.0\n101.0, 6.0\n")
    assert np.array_equal(raw.positions, [100, 101])
    assert np.array_equal(raw.intensities, [5, 6])
    assert raw.meta["name"] == "Quartz"


def test_rruff_end_marker_and_descending():
    raw = parse_rruff_text("##NAMES=Calcite\n##RRUFFID=R1\n3, 30\n1, 10\n2, 20\n##END=\n9, 90\n")
    assert np.array_equal(raw.positions, [1, 2, 3])
    assert np.array_equal(raw.intensities, [10, 20, 30])
    assert raw.meta["name"] == "Calcite"


def test_rruff_headers_only():
    with pytest.raises(ParseError):
        parse_rruff_text("##NAME=Quartz\n##END=\n")


def test_duplicate_positions_are_averaged():
    raw = parse_rruff_text("##NAME=x\n1, 2\n1, 4\n2, 0\n")
    assert np.array_equal(raw.positions, [1, 2])
    assert np.array_equal(raw.intensities, [3, 0])


def test_csv_header_skip_and_sort():
    raw = parse_csv_xy("wavelength,reflectance\n500,0.5\n400,0.4\n", SpectrumKind.VNIR)
    assert np.array_equal(raw.positions, [400, 500])
    assert np.array_equal(raw.intensities, [0.4, 0.5])
    assert raw.kind is SpectrumKind.VNIR


def test_csv_single_row():
    with pytest.raises(ParseError):
        parse_csv_xy("x,y\n1,2\n", "vnir")


def _write_spectrum(path, name, center):
    x = np.linspace(50, 1900, 400)
    y = np.exp(-0.5 * ((x - center) / 15) ** 2)
    lines = [f"##NAMES={name}"] + [f"{a:.3f}, {b:.6f}" for a, b in zip(x, y)]
    path.write_text("\n".join(lines) + "\n")


def test_build_dataset(tmp_path):
    for i, (name, c) in enumerate([("Quartz", 465), ("Calcite", 1085), ("quartz ", 470)]):
        _write_spectrum(tmp_path / f"s{i}.txt", name, c)
    manifest = {"kind": "raman", "entries": [
        {"file": "s0.txt", "format": "rruff", "species": "Quartz"},
        {"file": "s1.txt", "format": "rruff"},
        {"file": "s2.txt", "format": "rruff", "species": "quartz "},
    ]}
    (tmp_path / "m.json").write_text(json.dumps(manifest))
    ds = build_dataset(tmp_path / "m.json")
    assert len(ds) == 3 and ds.species == ("Quartz", "Calcite")
    assert list(ds.labels) == [0, 1, 0]
    assert ds.grid == RAMAN_GRID
    assert ds.values.min() >= 0 and ds.values.max() <= 1


def test_build_dataset_errors(tmp_path):
    (tmp_path / "empty.json").write_text(json.dumps({"kind": "raman", "entries": []}))
    with pytest.raises(ManifestError):
        build_dataset(tmp_path / "empty.json")
    (tmp_path / "missing.json").write_text(json.dumps(
        {"kind": "raman", "entries": [{"file": "nope.txt", "format": "rruff", "species": "a"}]}))
    with pytest.raises(ManifestError):
        build_dataset(tmp_path / "missing.json")
    _write_spectrum(tmp_path / "a.txt", "a", 500)
    (tmp_path / "fmt.json").write_text(json.dumps(
        {"kind": "raman", "entries": [{"file": "a.txt", "format": "spc", "species": "a"}]}))
    with pytest.raises(ManifestError):
        build_dataset(tmp_path / "fmt.json")
    (tmp_path / "mixed.json").write_text(json.dumps(
        {"kind": "raman", "entries": [{"file": "a.txt", "format": "rruff", "kind": "vnir"}]}))
    with pytest.raises(ManifestError):
        build_dataset(tmp_path / "mixed.json")


def test_dataset_save_load_roundtrip(tmp_path, blobs):
    blobs.save(tmp_path / "d.npz")
    back = LabeledDataset.load(tmp_path / "d.npz")
    assert np.array_equal(back.values, blobs.values)
    assert np.array_equal(back.labels, blobs.labels)
    assert back.species == blobs.species and back.grid == blobs.grid


def test_first_appearance_ids(blobs):
    spectra = [blobs.spectrum(i) for i in (0, 10, 1)]
    ds = dataset_from_spectra(spectra, ["b", "a", "b"])
    assert ds.species == ("b", "a") and list(ds.labels) == [0, 1, 0]


def _counts_ds(counts):
    labels = np.repeat(np.arange(len(counts)), counts)
    values = np.random.default_rng(0).random((labels.size, 4))
    return make_dataset(values, labels)


def test_three_per_species_examples():
    ds = _counts_ds([5, 2])
    plan = split_three_per_species(ds, seed=3)
    train_labels = ds.labels[plan.train_indices]
    test_labels = ds.labels[plan.test_indices]
    assert (train_labels == 0).sum() == 3 and (test_labels == 0).sum() == 2
    assert (train_labels == 1).sum() == 2 and (test_labels == 1).sum() == 0
    again = split_three_per_species(ds, seed=3)
    assert np.array_equal(plan.train_indices, again.train_indices)


def test_loo_examples():
    ds = _counts_ds([4, 1])
    plan = split_leave_one_out(ds, seed=9)
    assert (ds.labels[plan.train_indices] == 0).sum() == 3
    assert (ds.labels[plan.test_indices] == 0).sum() == 1
    assert (ds.labels[plan.train_indices] == 1).sum() == 1
    assert sorted(np.concatenate([plan.train_indices, plan.test_indices])) == list(range(5))


def test_plan_roundtrip():
    plan = make_split(_counts_ds([5, 5]), "loo", 4)
    back = SplitPlan.from_dict(json.loads(json.dumps(plan.to_dict())))
    assert np.array_equal(back.train_indices, plan.train_indices)
    assert back.protocol == plan.protocol and back.seed == 4


def test_remove_class_outliers():
    values = np.array([[1, 0, 0], [1, 0, 0], [1, 0, 0], [0, 0, 1], [0, 1, 0]], float)
    ds = make_dataset(values, [0, 0, 0, 0, 1])
    assert list(remove_class_outliers(ds)) == [0, 1, 2, 4]


def _pair_sets():
    rng = np.random.default_rng(1)
    a = make_dataset(rng.random((3, 4)), [0, 0, 1], ("Olivine", "Quartz"))
    b = make_dataset(rng.random((4, 5)), [0, 0, 0, 1], ("olivine ", "Calcite"))
    return a, b


def test_pair_by_species_counts():
    a, b = _pair_sets()
    assert common_species(a, b) == ["Olivine"]
    pairs = pair_by_species(a, b, max_pairs_per_species=50, seed=0)
    assert len(pairs) == 6
    assert all(p.species == "Olivine" and p.species_id == 0 for p in pairs)
    assert all(a.labels[p.index_a] == 0 and b.labels[p.index_b] == 0 for p in pairs)
    capped = pair_by_species(a, b, max_pairs_per_species=4, seed=7)
    again = pair_by_species(a, b, max_pairs_per_species=4, seed=7)
    assert len(capped) == 4
    assert [(p.index_a, p.index_b) for p in capped] == [(p.index_a, p.index_b) for p in again]


def test_pair_disjoint():
    a, _ = _pair_sets()
    c = make_dataset(np.ones((1, 3)), [0], ("Talc",))
    with pytest.raises(EmptyIntersection):
        pair_by_species(a, c)


def test_pair_same_modality():
    ds = _counts_ds([3, 1])
    pairs = pair_same_modality(ds, seed=0)
    assert len(pairs) == 6
    assert all(p.index_a != p.index_b for p in pairs)
    assert [(p.index_a, p.index_b) for p in pairs] == \
        [(p.index_a, p.index_b) for p in pair_same_modality(ds, seed=0)]


def test_restrict_species():
    a, _ = _pair_sets()
    r = restrict_species(a, ["Quartz"])
    assert r.species == ("Quartz",) and len(r) == 1 and r.labels[0] == 0
