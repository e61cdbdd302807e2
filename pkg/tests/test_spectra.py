import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spectramin.errors import EmptyClass, InvalidSpectrum, ZeroVector
from spectramin.spectra import (
    LIBS_GRID,
    RAMAN_GRID,
    VNIR_GRID,
    GridSpec,
    RawSpectrum,
    Spectrum,
    SpectrumKind,
    class_mean,
    cosine_distance,
    cosine_similarity,
    normalize_unit,
    outlier_distances,
    preprocess,
    remove_outliers,
    resample_linear,
)

RAMAN = SpectrumKind.RAMAN


def test_grids():
    assert (RAMAN_GRID.start, RAMAN_GRID.end, RAMAN_GRID.n_points) == (85.0, 1800.0, 1715)
    assert (VNIR_GRID.start, VNIR_GRID.end, VNIR_GRID.n_points) == (350.0, 4000.0, 1715)
    assert LIBS_GRID.n_points == 7001
    assert LIBS_GRID.step == pytest.approx(0.1)
    assert GridSpec.from_dict(RAMAN_GRID.to_dict()) == RAMAN_GRID


def test_bad_grid():
    with pytest.raises(InvalidSpectrum):
        GridSpec(10, 5, 10)
    with pytest.raises(InvalidSpectrum):
        GridSpec(0, 1, 1)


def test_resample_constant():
    raw = RawSpectrum([100.0, 150.0, 200.0], [5.0, 5.0, 5.0], RAMAN)
    out = resample_linear(raw, GridSpec(110, 190, 9))
    assert np.all(out == 5.0)


def test_resample_ramp_midpoint():
    raw = RawSpectrum([0.0, 10.0], [0.0, 10.0], RAMAN)
    out = resample_linear(raw, GridSpec(0.0, 10.0, 5))
    assert out[1] == pytest.approx(2.5)


def test_resample_outside_support_is_zero():
    raw = RawSpectrum([100.0, 200.0], [3.0, 4.0], RAMAN)
    out = resample_linear(raw, GridSpec(50, 250, 5))
    assert out[0] == 0.0 and out[-1] == 0.0


def test_resample_hits_raw_points_exactly():
    x = np.arange(0.0, 11.0)
    y = np.random.default_rng(0).random(11)
    out = resample_linear(RawSpectrum(x, y, RAMAN), GridSpec(0.0, 10.0, 11))
    assert np.array_equal(out, y)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 20, elements=st.floats(0, 100)))
def test_resample_no_overshoot(y):
    x = np.linspace(0, 19, 20)
    grid = GridSpec(0, 19, 77)
    out = resample_linear(RawSpectrum(x, y, RAMAN), grid)
    pos = grid.positions()
    lo = np.floor(pos).astype(int).clip(0, 19)
    hi = np.ceil(pos).astype(int).clip(0, 19)
    assert np.all(out >= np.minimum(y[lo], y[hi]) - 1e-12)
    assert np.all(out <= np.maximum(y[lo], y[hi]) + 1e-12)


def test_too_short_raw():
    with pytest.raises(InvalidSpectrum):
        RawSpectrum([1.0], [1.0], RAMAN)


def test_raw_must_increase():
    with pytest.raises(InvalidSpectrum):
        RawSpectrum([2.0, 1.0], [1.0, 1.0], RAMAN)


def test_normalize_examples():
    assert np.allclose(normalize_unit([2, 4, 6]), [0, 0.5, 1])
    assert np.array_equal(normalize_unit([7, 7, 7]), [0, 0, 0])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(2, 40), elements=st.floats(-1e3, 1e3)))
def test_normalize_range_and_idempotence(v):
    out = normalize_unit(v)
    assert out.min() >= 0 and out.max() <= 1
    if v.max() > v.min():
        assert out[np.argmin(v)] == 0.0 and out[np.argmax(v)] == 1.0
    assert np.allclose(normalize_unit(out), out, atol=1e-12)


def test_preprocess_defaults_to_kind_grid():
    raw = RawSpectrum(np.linspace(0, 2000, 300), np.random.default_rng(1).random(300), RAMAN)
    s = preprocess(raw)
    assert s.grid == RAMAN_GRID and s.values.shape == (1715,)
    assert s.values.min() == 0.0 and s.values.max() == 1.0


def test_spectrum_rejects_out_of_range():
    with pytest.raises(InvalidSpectrum):
        Spectrum(GridSpec(0, 1, 2), [0.0, 1.5], RAMAN)


def test_cosine_examples():
    assert cosine_similarity([1, 0], [1, 0]) == 1.0
    assert cosine_similarity([1, 0], [0, 1]) == 0.0
    assert cosine_similarity([1, 1], [1, 0]) == pytest.approx(1 / np.sqrt(2), abs=1e-15)
    assert cosine_distance([1, 1], [1, 0]) == pytest.approx(1 - 1 / np.sqrt(2))
    with pytest.raises(ZeroVector):
        cosine_similarity([0, 0], [1, 0])


def test_cosine_symmetric_and_scale_invariant(rng):
    for _ in range(100):
        a, b = rng.random(30), rng.random(30)
        lam = rng.uniform(0.01, 100)
        assert abs(cosine_similarity(a, b) - cosine_similarity(b, a)) < 1e-12
        assert abs(cosine_similarity(lam * a, b) - cosine_similarity(a, b)) < 1e-12


def test_class_mean():
    assert np.array_equal(class_mean([np.array([0, 1]), np.array([0, 1])]), [0, 1])
    assert np.array_equal(class_mean([np.array([0, 1]), np.array([1, 0])]), [0.5, 0.5])
    with pytest.raises(EmptyClass):
        class_mean([])


def _spec(v):
    return Spectrum(GridSpec(0, len(v) - 1, len(v)), np.asarray(v, float), RAMAN)


def test_remove_outliers_drops_the_odd_one():
    same = [_spec([1, 0, 0]) for _ in range(3)]
    odd = _spec([0, 0, 1])
    # mean is [0.75, 0, 0.25]: distance of the odd one is 1 - 0.25/|mean| ~ 0.684
    d = outlier_distances(same + [odd])
    assert d[3] == pytest.approx(1 - 0.25 / np.sqrt(0.75**2 + 0.25**2))
    kept = remove_outliers(same + [odd])
    assert len(kept) == 3 and all(k is s for k, s in zip(kept, same))


def test_remove_outliers_keeps_identical_and_single():
    same = [_spec([0.2, 1, 0]) for _ in range(4)]
    assert len(remove_outliers(same)) == 4
    assert remove_outliers(same[:1]) == same[:1]


def test_remove_outliers_never_empty():
    a, b = _spec([1, 0]), _spec([0, 1])
    kept = remove_outliers([a, b], threshold=0.0)
    assert len(kept) == 1 and kept[0] in (a, b)
