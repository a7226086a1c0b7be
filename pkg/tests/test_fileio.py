import numpy as np
import pytest

from maskinject.fileio import (
    heatmap_rgb,
    read_fgrid,
    read_labelmap_pgm,
    read_mask_pgm,
    read_pgm,
    read_points_csv,
    read_ppm,
    render_heatmap,
    write_fgrid,
    write_labelmap_pgm,
    write_mask_pgm,
    write_pgm,
    write_points_csv,
    write_ppm,
)
from maskinject.masks import BinaryMask, LabelMap
from maskinject.prompts import PointPrompts


class TestPgm:
    def test_round_trip(self, tmp_path, rng):
        pixels = rng.integers(0, 256, size=(7, 5)).astype(np.uint8)
        path = tmp_path / "x.pgm"
        write_pgm(path, pixels)
        assert np.array_equal(read_pgm(path), pixels)

    def test_mask_round_trip_uses_128_threshold(self, tmp_path, rng):
        bits = rng.random((6, 9)) < 0.5
        path = tmp_path / "m.pgm"
        write_mask_pgm(path, BinaryMask(bits))
        assert np.array_equal(read_mask_pgm(path).bits, bits)
        raw = read_pgm(path)
        assert set(np.unique(raw)) <= {0, 255}

    def test_labelmap_round_trip(self, tmp_path, rng):
        labels = rng.integers(0, 9, size=(8, 8))
        path = tmp_path / "l.pgm"
        write_labelmap_pgm(path, LabelMap(labels))
        assert np.array_equal(read_labelmap_pgm(path).labels, labels)

    def test_labels_above_255_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_labelmap_pgm(tmp_path / "l.pgm", LabelMap(np.full((2, 2), 300)))

    def test_comments_in_header(self, tmp_path):
        path = tmp_path / "c.pgm"
        payload = bytes(range(6))
        path.write_bytes(b"P5\n# a comment\n3 2\n255\n" + payload)
        assert read_pgm(path).shape == (2, 3)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P2\n1 1\n255\n0")
        with pytest.raises(ValueError):
            read_pgm(path)

    def test_sixteen_bit_rejected(self, tmp_path):
        path = tmp_path / "deep.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(ValueError):
            read_pgm(path)


class TestFgrid:
    @pytest.mark.parametrize("shape", [(4,), (3, 5), (2, 3, 4)])
    def test_round_trip(self, tmp_path, rng, shape):
        tensor = rng.normal(size=shape).astype(np.float32)
        path = tmp_path / "t.fgrid"
        write_fgrid(path, tensor)
        back = read_fgrid(path)
        assert back.shape == shape
        np.testing.assert_array_equal(back.astype(np.float32), tensor)

    def test_header_is_ascii_line(self, tmp_path):
        path = tmp_path / "t.fgrid"
        write_fgrid(path, np.zeros((2, 3)))
        first = path.read_bytes().split(b"\n", 1)[0]
        assert first == b"FGRID v1 2 2 3"

    def test_payload_is_little_endian_float32(self, tmp_path):
        path = tmp_path / "t.fgrid"
        write_fgrid(path, np.array([1.0, -2.0]))
        payload = path.read_bytes().split(b"\n", 1)[1]
        assert payload == np.array([1.0, -2.0], dtype="<f4").tobytes()

    def test_truncated_payload_rejected(self, tmp_path):
        path = tmp_path / "t.fgrid"
        path.write_bytes(b"FGRID v1 1 4\n\x00\x00\x00\x00")
        with pytest.raises(ValueError):
            read_fgrid(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "t.fgrid"
        path.write_bytes(b"GRIDF v1 1 1\n\x00\x00\x00\x00")
        with pytest.raises(ValueError):
            read_fgrid(path)


class TestPointsCsv:
    def test_round_trip(self, tmp_path):
        pts = PointPrompts(
            points=np.array([[8.0, 24.0], [40.0, 8.0]]),
            cell_probs=np.array([0.25, 1.0]),
        )
        path = tmp_path / "p.csv"
        write_points_csv(path, pts)
        points, probs = read_points_csv(path)
        np.testing.assert_allclose(points, pts.points)
        np.testing.assert_allclose(probs, pts.cell_probs)

    def test_header_row(self, tmp_path):
        pts = PointPrompts(points=np.zeros((0, 2)), cell_probs=np.zeros(0))
        path = tmp_path / "p.csv"
        write_points_csv(path, pts)
        assert path.read_text().splitlines()[0] == "x,y,prob"


class TestHeatmap:
    def test_endpoint_colors(self):
        rgb = heatmap_rgb(np.array([[0.0, 1.0]]))
        assert tuple(rgb[0, 0]) == (0, 0, 255)  # min -> blue
        assert tuple(rgb[0, 1]) == (255, 0, 0)  # max -> red

    def test_constant_nonzero_grid_is_red(self):
        rgb = heatmap_rgb(np.full((3, 3), 0.7))
        assert np.all(rgb[:, :, 0] == 255)
        assert np.all(rgb[:, :, 2] == 0)

    def test_all_zero_grid_is_blue(self):
        rgb = heatmap_rgb(np.zeros((2, 2)))
        assert np.all(rgb[:, :, 2] == 255)

    def test_matches_per_cell_formula(self, rng):
        values = rng.normal(size=(5, 6))
        rgb = heatmap_rgb(values)
        lo, hi = values.min(), values.max()
        v = (values - lo) / (hi - lo)
        assert np.array_equal(rgb[:, :, 0], np.round(255 * v).astype(np.uint8))
        assert np.array_equal(rgb[:, :, 1], np.zeros_like(rgb[:, :, 1]))
        assert np.array_equal(rgb[:, :, 2], np.round(255 * (1 - v)).astype(np.uint8))

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            heatmap_rgb(np.array([[np.inf, 0.0]]))

    def test_ppm_round_trip(self, tmp_path, rng):
        values = rng.uniform(0, 1, (4, 4))
        path = tmp_path / "h.ppm"
        render_heatmap(values, path)
        assert np.array_equal(read_ppm(path), heatmap_rgb(values))

    def test_unwritable_path_raises(self, tmp_path, rng):
        with pytest.raises(OSError):
            render_heatmap(rng.uniform(0, 1, (2, 2)), tmp_path / "missing" / "h.ppm")


def test_ppm_rejects_bad_shape(tmp_path):
    with pytest.raises(ValueError):
        write_ppm(tmp_path / "x.ppm", np.zeros((2, 2)))
