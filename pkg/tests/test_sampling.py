import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from settlement_ccf.errors import BandMismatchError, DimensionMismatchError, InputError
from settlement_ccf.raster import BAND_IDS, BandInfo, LabelMask, MultiSpectralRaster, make_raster
from settlement_ccf.sampling import (
    DEFAULT_BANDS,
    PixelDataset,
    apply_standardizer,
    balance_classes,
    extract_labeled_pixels,
    fit_standardizer,
    prepare_datasets,
    read_csv,
    resample_to_common_grid,
    select_bands,
    split_train_test,
    write_csv,
)


def thirteen_band_raster(rng, size=4):
    return make_raster(rng.random((13, size, size)), BAND_IDS)


def dataset(n0, n1, d=3, seed=0):
    rng = np.random.default_rng(seed)
    n = n0 + n1
    return PixelDataset(rng.normal(size=(n, d)), [0] * n0 + [1] * n1,
                        xs=np.arange(n), ys=np.zeros(n, dtype=int))


# ---------------------------------------------------------------- bands

def test_default_selection_drops_atmospheric_bands(rng):
    out = select_bands(thirteen_band_raster(rng))
    assert out.band_ids == DEFAULT_BANDS
    assert len(out.bands) == 10
    assert not {"1", "9", "10"} & set(out.band_ids)


def test_selection_identity(rng, small_raster):
    assert select_bands(small_raster, ["4", "3", "2"]) == small_raster


def test_selection_order(small_raster):
    out = select_bands(small_raster, ["2", "4"])
    assert out.band_ids == ("2", "4")
    np.testing.assert_array_equal(out.data[0], small_raster.band("2"))


def test_selection_missing_band(small_raster):
    with pytest.raises(BandMismatchError):
        select_bands(small_raster, ["4", "10"])


# ---------------------------------------------------------------- resampling

def test_replicate_single_pixel():
    raster = MultiSpectralRaster(2, 2, (BandInfo("5", 20),), (np.float32([[0.3]]),))
    out = resample_to_common_grid(raster)
    np.testing.assert_array_equal(out.data[0], np.full((2, 2), np.float32(0.3)))
    assert out.bands[0].native_resolution == 10


def test_all_10m_unchanged(small_raster):
    assert resample_to_common_grid(small_raster) is small_raster


def test_mixed_grid(rng):
    ten = rng.random((4, 4)).astype(np.float32)
    twenty = np.float32([[1, 2], [3, 4]])
    raster = MultiSpectralRaster(4, 4, (BandInfo("2", 10), BandInfo("11", 20)), (ten, twenty))
    out = resample_to_common_grid(raster)
    expected = np.float32([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])
    np.testing.assert_array_equal(out.data[1], expected)
    np.testing.assert_array_equal(out.data[0], ten)
    assert out.data[1][0, 0] == 1 and out.data[1][0, -1] == 2
    assert out.data[1][-1, 0] == 3 and out.data[1][-1, -1] == 4


def test_odd_extent_crops_replication():
    raster = MultiSpectralRaster(3, 3, (BandInfo("5", 20),), (np.float32([[1, 2], [3, 4]]),))
    out = resample_to_common_grid(raster)
    np.testing.assert_array_equal(out.data[0], [[1, 1, 2], [1, 1, 2], [3, 3, 4]])


def test_60m_band_rejected():
    raster = MultiSpectralRaster(6, 6, (BandInfo("1", 60), BandInfo("5", 20)),
                                 (np.zeros((1, 1)), np.zeros((3, 3))))
    with pytest.raises(InputError, match="60 m"):
        resample_to_common_grid(raster)


# ---------------------------------------------------------------- extraction

def test_extract_scan_order():
    stack = np.arange(2 * 3 * 3, dtype=np.float32).reshape(2, 3, 3)
    labels = np.array([[1, -1, 0], [1, -1, -1], [0, 1, -1]])
    data = extract_labeled_pixels(make_raster(stack, ["2", "3"]), LabelMask(labels))
    assert len(data) == 5
    assert data.labels.tolist() == [1, 0, 1, 0, 1]
    assert list(zip(data.xs, data.ys)) == [(0, 0), (2, 0), (0, 1), (0, 2), (1, 2)]
    np.testing.assert_array_equal(data.features[1], [2, 11])


def test_extract_counting():
    stack = np.ones((2, 2, 5), dtype=np.float32)
    labels = np.array([[1, 1, 1, 0, 0], [-1, -1, -1, -1, -1]])
    data = extract_labeled_pixels(make_raster(stack, ["2", "3"]), LabelMask(labels))
    assert data.labels.tolist() == [1, 1, 1, 0, 0]


def test_extract_unlabeled_mask(small_raster):
    data = extract_labeled_pixels(small_raster, LabelMask(-np.ones((4, 5))))
    assert len(data) == 0 and data.features.shape == (0, 3)


def test_extract_drops_nodata():
    stack = np.full((3, 1, 3), 0.2, dtype=np.float32)
    stack[2, 0, 1] = -9999
    raster = make_raster(stack, ["2", "8", "11"], nodata_value=-9999)
    data = extract_labeled_pixels(raster, LabelMask([[1, 0, 1]]))
    assert len(data) == 2
    assert data.n_dropped == 1
    assert data.xs.tolist() == [0, 2]


def test_extract_dimension_mismatch(small_raster):
    with pytest.raises(DimensionMismatchError):
        extract_labeled_pixels(small_raster, LabelMask(np.ones((3, 3))))


# ---------------------------------------------------------------- balancing and splitting

def test_balance_min_rule():
    out = balance_classes(dataset(100, 40), seed=3)
    assert out.class_counts().tolist() == [40, 40]
    assert len(set(out.xs.tolist())) == 80


def test_balance_already_balanced_is_permutation():
    data = dataset(50, 50)
    out = balance_classes(data, seed=3)
    assert sorted(out.xs.tolist()) == list(range(100))
    assert out.xs.tolist() != list(range(100))


def test_balance_deterministic():
    a = balance_classes(dataset(30, 70), seed=9)
    b = balance_classes(dataset(30, 70), seed=9)
    assert a.xs.tolist() == b.xs.tolist()
    assert a.features.tobytes() == b.features.tobytes()


def test_balance_missing_class():
    with pytest.raises(InputError):
        balance_classes(dataset(10, 0), seed=0)


def test_split_80_20():
    train, test = split_train_test(dataset(10, 10), 0.8, seed=1)
    assert train.class_counts().tolist() == [8, 8]
    assert test.class_counts().tolist() == [2, 2]


@pytest.mark.parametrize("fraction", [1.0, 0.0, 1.5])
def test_split_degenerate_fraction(fraction):
    with pytest.raises(InputError):
        split_train_test(dataset(10, 10), fraction, seed=1)


def test_split_needs_two_rows_per_class():
    with pytest.raises(InputError):
        split_train_test(dataset(1, 5), 0.8, seed=1)


def test_split_rounding_guard():
    train, _ = split_train_test(dataset(100, 100), 0.29, seed=0)
    assert train.class_counts().tolist() == [29, 29]


@given(n=st.integers(2, 60), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_split_disjoint_and_covering(n, seed):
    data = dataset(n, n)
    train, test = split_train_test(data, 0.8, seed)
    a, b = set(train.xs.tolist()), set(test.xs.tolist())
    assert not a & b
    assert a | b == set(range(2 * n))


# ---------------------------------------------------------------- standardization

def test_standardizer_hand_values():
    std = fit_standardizer(np.array([[2.0], [4.0], [6.0]]))
    assert std.means[0] == pytest.approx(4.0, abs=1e-12)
    # population std of [2, 4, 6] is sqrt(8/3)
    assert std.stds[0] == pytest.approx(1.632993161855452, abs=1e-12)
    z = std.transform(np.array([[2.0], [4.0], [6.0]])).ravel()
    np.testing.assert_allclose(z, [-1.224744871391589, 0.0, 1.224744871391589], atol=1e-12)


def test_standardizer_constant_column():
    std = fit_standardizer(np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 3.0]]))
    assert std.stds[0] == 1.0
    assert std.zero_variance.tolist() == [True, False]
    np.testing.assert_array_equal(std.transform(np.array([[5.0, 2.0]]))[:, 0], [0.0])


def test_standardizer_empty_fit_and_apply():
    with pytest.raises(InputError):
        fit_standardizer(np.empty((0, 3)))
    std = fit_standardizer(np.ones((2, 3)))
    out = apply_standardizer(std, PixelDataset(np.empty((0, 3)), []))
    assert len(out) == 0


finite_rows = arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 5)),
                     elements=st.floats(-1e3, 1e3, allow_nan=False))


@given(finite_rows)
@settings(max_examples=60, deadline=None)
def test_standardized_train_moments(X):
    std = fit_standardizer(X)
    Z = std.transform(X)
    assert np.abs(Z.mean(axis=0)).max() < 1e-9
    varying = ~std.zero_variance
    np.testing.assert_allclose(Z.std(axis=0)[varying], 1.0, atol=1e-9)


@given(finite_rows)
@settings(max_examples=60, deadline=None)
def test_standardization_idempotent(X):
    Z = fit_standardizer(X).transform(X)
    Z2 = fit_standardizer(Z).transform(Z)
    assert np.abs(Z2 - Z).max() < 1e-9


def test_no_leakage_from_test_rows():
    raster_rng = np.random.default_rng(5)
    stack = raster_rng.random((10, 20, 20)).astype(np.float32)
    labels = raster_rng.integers(0, 2, size=(20, 20))
    raster = make_raster(stack, DEFAULT_BANDS)
    train, test = prepare_datasets(raster, LabelMask(labels), seed=4)
    before = fit_standardizer(train)
    perturbed = stack.copy()
    perturbed[:, test.ys, test.xs] += 100.0
    train2, test2 = prepare_datasets(make_raster(perturbed, DEFAULT_BANDS), LabelMask(labels), seed=4)
    after = fit_standardizer(train2)
    assert before.means.tobytes() == after.means.tobytes()
    assert before.stds.tobytes() == after.stds.tobytes()


def test_pipeline_determinism(rng):
    stack = rng.random((10, 16, 16)).astype(np.float32)
    mask = LabelMask(rng.integers(-1, 2, size=(16, 16)))
    raster = make_raster(stack, DEFAULT_BANDS)
    a = prepare_datasets(raster, mask, seed=11)
    b = prepare_datasets(raster, mask, seed=11)
    for x, y in zip(a, b):
        assert x.features.tobytes() == y.features.tobytes()
        assert x.labels.tobytes() == y.labels.tobytes()


def test_csv_round_trip(tmp_path):
    data = PixelDataset([[0.1, 0.25], [0.3, 1e-7]], [1, 0], ["2", "8A"],
                        np.array([3, 4]), np.array([5, 6]))
    write_csv(data, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "x,y,label,b2,b8a"
    assert lines[1] == "3,5,1,0.1,0.25"
    back = read_csv(tmp_path / "d.csv")
    assert back.features.tobytes() == data.features.tobytes()
    assert back.band_ids == ("2", "8A")
