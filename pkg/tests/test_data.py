import struct

import numpy as np
import pytest

from ndgan import data as dio
from ndgan.densities import GridDensity
from ndgan.errors import FormatError, ValidationError


# ---------------------------------------------------------------------------
# ring mixture
# ---------------------------------------------------------------------------


def test_ring_sample_mean_is_near_origin():
    data, _ = dio.gen_ring_mixture(10_000, 8, 2.0, 0.2, seed=1)
    assert np.linalg.norm(data.features.mean(axis=0)) < 0.05 * 2.0


def test_ring_has_all_component_labels():
    data, _ = dio.gen_ring_mixture(8 * 20, 8, 2.0, 0.2, seed=2)
    assert set(np.unique(data.labels)) == set(range(8))
    counts = np.bincount(data.labels)
    assert counts.max() - counts.min() <= 1  # balanced by construction


def test_ring_is_seed_deterministic():
    a, _ = dio.gen_ring_mixture(500, 4, 1.0, 0.1, seed=3)
    b, _ = dio.gen_ring_mixture(500, 4, 1.0, 0.1, seed=3)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)


def test_ring_rejects_fewer_samples_than_components():
    with pytest.raises(ValidationError):
        dio.gen_ring_mixture(5, 8, 2.0, 0.2, seed=0)


def test_ring_samples_lie_on_their_declared_manifold():
    data, density = dio.gen_ring_mixture(5000, 8, 2.0, 0.2, seed=4)
    lo = -(2.0 + 4 * 0.2)
    grid = GridDensity.from_density(density, [[lo, -lo], [lo, -lo]], (200, 200))
    grid_log = np.log(np.maximum(grid.values, 1e-300)).ravel()
    cutoff = np.quantile(grid_log, 0.001)
    sample_log = density.logpdf(data.features)
    assert np.mean(sample_log > cutoff) >= 0.99


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------


def test_read_idx_parses_the_format_defined_example(tmp_path):
    path = tmp_path / "imgs.idx"
    payload = bytes(range(24))  # 2 items of 3x4 pixels
    path.write_bytes(struct.pack(">IIII", 0x00000803, 2, 3, 4) + payload)
    data = dio.read_idx(path)
    assert data.features.shape == (2, 12)
    assert data.features[1, 11] == pytest.approx(23 / 255.0)


def test_idx_pixel_255_maps_to_one(tmp_path):
    path = tmp_path / "one.idx"
    path.write_bytes(struct.pack(">IIII", 0x00000803, 1, 1, 1) + bytes([255]))
    assert dio.read_idx(path).features[0, 0] == 1.0


def test_truncated_idx_reports_expected_vs_actual(tmp_path):
    path = tmp_path / "short.idx"
    path.write_bytes(struct.pack(">IIII", 0x00000803, 2, 3, 4) + bytes(10))
    with pytest.raises(FormatError) as err:
        dio.read_idx(path)
    assert "24" in str(err.value) and "10" in str(err.value)


def test_idx_bad_magic_is_rejected_with_offset(tmp_path):
    path = tmp_path / "bad.idx"
    path.write_bytes(struct.pack(">IIII", 0x12345678, 1, 1, 1) + bytes(1))
    with pytest.raises(FormatError) as err:
        dio.read_idx(path)
    assert err.value.offset == 0


def test_idx_round_trip_is_bit_exact_for_byte_quantized_data(tmp_path, rng):
    raw = rng.integers(0, 256, size=(7, 16), dtype=np.uint8)
    original = raw.astype(np.float64) / 255.0
    img_path, lab_path = tmp_path / "x.idx", tmp_path / "y.idx"
    dio.write_idx(img_path, original, side=4)
    labels = rng.integers(0, 10, size=7)
    dio.write_idx_labels(lab_path, labels)
    again = dio.read_idx(img_path)
    assert np.array_equal(again.features, original)
    assert np.array_equal(dio.read_idx_labels(lab_path), labels)
    # second write produces identical bytes
    img2 = tmp_path / "x2.idx"
    dio.write_idx(img2, again.features, side=4)
    assert img_path.read_bytes() == img2.read_bytes()


def test_idx_labels_magic_is_checked(tmp_path):
    path = tmp_path / "labels.idx"
    path.write_bytes(struct.pack(">II", 0x00000803, 1) + bytes(1))
    with pytest.raises(FormatError):
        dio.read_idx_labels(path)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def test_csv_without_labels(tmp_path):
    path = tmp_path / "plain.csv"
    path.write_text("1,2\n3,4\n5,6\n")
    data, mapping = dio.read_csv_dataset(path)
    assert data.features.shape == (3, 2)
    assert data.labels is None and mapping is None


def test_csv_label_remap_is_reported(tmp_path):
    path = tmp_path / "labeled.csv"
    path.write_text("x0,x1,label\n0.5,1.0,3\n0.25,2.0,7\n0.1,3.0,3\n")
    data, mapping = dio.read_csv_dataset(path, label_column="label")
    assert mapping == {3.0: 0, 7.0: 1}
    assert data.K == 2
    assert data.labels.tolist() == [0, 1, 0]
    assert data.features.shape == (3, 2)


def test_csv_empty_file_is_an_error(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    with pytest.raises(FormatError):
        dio.read_csv_dataset(path)


def test_csv_ragged_and_non_numeric_errors_carry_location(tmp_path):
    ragged = tmp_path / "ragged.csv"
    ragged.write_text("1,2\n3\n")
    with pytest.raises(FormatError) as err:
        dio.read_csv_dataset(ragged)
    assert "row 1" in str(err.value)

    alpha = tmp_path / "alpha.csv"
    alpha.write_text("1,2\n3,oops\n")
    with pytest.raises(FormatError) as err:
        dio.read_csv_dataset(alpha)
    assert "row 1" in str(err.value) and "column 1" in str(err.value)


def test_csv_round_trip_preserves_values(tmp_path, rng):
    data, _ = dio.gen_ring_mixture(40, 4, 2.0, 0.3, seed=9)
    path = tmp_path / "ring.csv"
    dio.write_csv_dataset(path, data)
    again, mapping = dio.read_csv_dataset(path, label_column="label")
    assert np.array_equal(again.features, data.features)  # repr round-trips float64
    assert np.array_equal(again.labels, data.labels)


# ---------------------------------------------------------------------------
# subsampling and downscaling
# ---------------------------------------------------------------------------


def test_subsample_labeled_is_balanced_and_deterministic():
    data, _ = dio.gen_ring_mixture(800, 8, 2.0, 0.2, seed=5)
    labeled, rest = dio.subsample_labeled(data, 25, seed=6)
    assert labeled.n == 8 * 25
    assert np.all(np.bincount(labeled.labels) == 25)
    assert rest.labels is None and rest.n == 800 - 200
    again, _ = dio.subsample_labeled(data, 25, seed=6)
    assert np.array_equal(labeled.features, again.features)


def test_subsample_whole_class_leaves_empty_remainder():
    data, _ = dio.gen_ring_mixture(80, 4, 2.0, 0.2, seed=7)
    labeled, rest = dio.subsample_labeled(data, 20, seed=0)
    assert labeled.n == 80 and rest.n == 0


def test_subsample_insufficient_class_names_the_class():
    data, _ = dio.gen_ring_mixture(80, 4, 2.0, 0.2, seed=8)
    with pytest.raises(ValidationError) as err:
        dio.subsample_labeled(data, 21, seed=0)
    assert "class 0" in str(err.value)


def test_downscale_constant_image_stays_constant():
    data = dio.Dataset(np.full((3, 36), 0.7), None, 0)
    small = dio.downscale_images(data, 6, 3)
    np.testing.assert_allclose(small.features, 0.7, atol=1e-15)


def test_downscale_2x2_checkerboard_to_single_mean_pixel():
    data = dio.Dataset(np.array([[0.0, 1.0, 1.0, 0.0]]), None, 0)
    small = dio.downscale_images(data, 2, 1)
    assert small.features.tolist() == [[0.5]]


def test_downscale_preserves_unit_range(rng):
    data = dio.Dataset(rng.uniform(size=(5, 28 * 28)), None, 0)
    small = dio.downscale_images(data, 28, 14)
    assert small.features.min() >= 0.0 and small.features.max() <= 1.0
    # divisible case reduces to exact 2x2 block means
    img = data.features[0].reshape(28, 28)
    blocks = img.reshape(14, 2, 14, 2).mean(axis=(1, 3))
    np.testing.assert_allclose(small.features[0].reshape(14, 14), blocks, atol=1e-12)


def test_downscale_handles_non_divisible_sides():
    data = dio.Dataset(np.arange(25, dtype=float).reshape(1, 25) / 25.0, None, 0)
    small = dio.downscale_images(data, 5, 2)
    assert small.features.shape == (1, 4)
    assert small.features.min() >= 0.0 and small.features.max() <= 1.0


def test_downscale_rejects_non_square_width():
    data = dio.Dataset(np.zeros((2, 10)), None, 0)
    with pytest.raises(ValidationError):
        dio.downscale_images(data, 3, 2)


def test_dataset_rejects_nan_and_bad_labels():
    with pytest.raises(ValidationError):
        dio.Dataset(np.array([[np.nan]]), None, 0)
    with pytest.raises(ValidationError):
        dio.Dataset(np.zeros((2, 1)), np.array([0, 5]), K=2)
