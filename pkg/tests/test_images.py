import numpy as np
import pytest

from mncalab.images import (
    TISSUE_PALETTE,
    ingest_image,
    load_png,
    render_gray,
    render_rgba,
    render_tissue,
    save_png,
    synthetic_target,
)


class TestPalette:
    def test_empty_is_white(self):
        assert TISSUE_PALETTE[0].tolist() == [255, 255, 255]

    def test_six_distinct_colors(self):
        assert TISSUE_PALETTE.shape == (6, 3)
        assert len(np.unique(TISSUE_PALETTE, axis=0)) == 6

    def test_render_looks_up_palette(self):
        grid = np.array([[0, 1], [4, 5]], dtype=np.uint8)
        img = render_tissue(grid)
        assert img.shape == (2, 2, 3)
        assert img[0, 0].tolist() == [255, 255, 255]
        assert img[0, 1].tolist() == TISSUE_PALETTE[1].tolist()
        assert img[1, 1].tolist() == TISSUE_PALETTE[5].tolist()

    def test_render_rejects_bad_grids(self):
        with pytest.raises(ValueError, match="integer"):
            render_tissue(np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(ValueError, match="palette range"):
            render_tissue(np.full((2, 2), 6, dtype=np.int64))
        with pytest.raises(ValueError, match="H, W"):
            render_tissue(np.zeros((2, 2, 2), dtype=np.uint8))


class TestRenderRgba:
    def test_values_are_clamped(self):
        state = np.zeros((4, 1, 3), dtype=np.float32)
        state[:, 0, 0] = -0.5
        state[:, 0, 1] = 0.5
        state[:, 0, 2] = 1.5
        img = render_rgba(state)
        assert img.shape == (1, 3, 4)
        assert img[0, 0].tolist() == [0, 0, 0, 0]
        assert img[0, 1].tolist() == [128, 128, 128, 128]
        assert img[0, 2].tolist() == [255, 255, 255, 255]

    def test_hidden_channels_ignored(self):
        state = np.zeros((8, 2, 2), dtype=np.float32)
        state[4:] = 99.0
        state[0] = 1.0
        img = render_rgba(state)
        assert np.array_equal(img[..., 0], np.full((2, 2), 255))
        assert np.array_equal(img[..., 1], np.zeros((2, 2)))

    def test_needs_four_channels(self):
        with pytest.raises(ValueError, match=">= 4 channels"):
            render_rgba(np.zeros((3, 2, 2), dtype=np.float32))


class TestPngRoundTrip:
    @pytest.mark.parametrize("shape", [(5, 7), (5, 7, 3), (5, 7, 4)])
    def test_bitwise_round_trip(self, tmp_path, shape):
        rng = np.random.default_rng(3)
        a = rng.integers(0, 256, size=shape).astype(np.uint8)
        p = tmp_path / "x.png"
        save_png(p, a)
        assert np.array_equal(load_png(p), a)

    def test_gray_rendering(self):
        f = np.array([[0.0, 1.0], [2.0, -1.0]])
        g = render_gray(f)
        assert g.dtype == np.uint8
        assert g.tolist() == [[0, 255], [255, 0]]

    def test_rejects_non_uint8(self, tmp_path):
        with pytest.raises(ValueError, match="uint8"):
            save_png(tmp_path / "x.png", np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(ValueError, match="PNG mode"):
            save_png(tmp_path / "x.png", np.zeros((2, 2, 2), dtype=np.uint8))


class TestIngest:
    def write_rgba(self, path, h, w, seed=0):
        rng = np.random.default_rng(seed)
        a = rng.integers(0, 256, size=(h, w, 4)).astype(np.uint8)
        save_png(path, a)
        return a

    def test_values_scaled_to_unit_range(self, tmp_path):
        a = self.write_rgba(tmp_path / "t.png", 8, 8)
        x = ingest_image(tmp_path / "t.png")
        assert x.data.dtype == np.float32
        assert x.data.shape == (4, 8, 8)
        assert np.allclose(x.data, a.transpose(2, 0, 1) / 255.0, atol=1e-7)

    def test_rgb_input_gets_alpha_one(self, tmp_path):
        rng = np.random.default_rng(1)
        save_png(tmp_path / "t.png", rng.integers(0, 256, size=(6, 6, 3)).astype(np.uint8))
        x = ingest_image(tmp_path / "t.png")
        assert np.array_equal(x.data[3], np.ones((6, 6), dtype=np.float32))

    def test_pad_six_makes_52(self, tmp_path):
        self.write_rgba(tmp_path / "t.png", 40, 40)
        x = ingest_image(tmp_path / "t.png", target_size=40, pad_px=6, pad_value=1.0)
        assert x.data.shape == (4, 52, 52)
        assert np.array_equal(x.data[:, :6, :], np.ones((4, 6, 52), dtype=np.float32))
        assert np.array_equal(x.data[:, :, -6:], np.ones((4, 52, 6), dtype=np.float32))

    def test_32_no_padding(self, tmp_path):
        self.write_rgba(tmp_path / "t.png", 32, 32)
        x = ingest_image(tmp_path / "t.png", target_size=32, pad_px=0)
        assert x.data.shape == (4, 32, 32)

    def test_nearest_neighbor_upscale_is_blockwise(self, tmp_path):
        a = np.zeros((2, 2, 4), dtype=np.uint8)
        a[0, 0] = [255, 0, 0, 255]
        a[0, 1] = [0, 255, 0, 255]
        a[1, 0] = [0, 0, 255, 255]
        a[1, 1] = [255, 255, 0, 255]
        save_png(tmp_path / "t.png", a)
        x = ingest_image(tmp_path / "t.png", target_size=4)
        expect = np.kron(a.transpose(2, 0, 1) / 255.0, np.ones((2, 2))).astype(np.float32)
        assert np.array_equal(x.data, expect)

    def test_ingest_is_idempotent(self, tmp_path):
        self.write_rgba(tmp_path / "t.png", 16, 16, seed=5)
        x = ingest_image(tmp_path / "t.png", target_size=16)
        save_png(tmp_path / "round.png", render_rgba(x.data))
        y = ingest_image(tmp_path / "round.png", target_size=16)
        assert np.array_equal(x.data, y.data)

    def test_unreadable_file_raises_os_error(self, tmp_path):
        bad = tmp_path / "junk.png"
        bad.write_text("this is not an image")
        with pytest.raises(OSError):
            ingest_image(bad)
        with pytest.raises(OSError):
            ingest_image(tmp_path / "missing.png")

    def test_validation(self, tmp_path):
        self.write_rgba(tmp_path / "t.png", 4, 4)
        with pytest.raises(ValueError, match="pad_px"):
            ingest_image(tmp_path / "t.png", pad_px=-1)
        with pytest.raises(ValueError, match="target_size"):
            ingest_image(tmp_path / "t.png", target_size=0)


class TestSyntheticTarget:
    def test_shape_range_and_alpha(self):
        t = synthetic_target(40)
        assert t.shape == (4, 40, 40)
        assert t.dtype == np.float32
        assert t.min() >= 0.0 and t.max() <= 1.0
        assert t[3, 20, 20] == 1.0
        assert t[3, 0, 0] == 0.0

    def test_deterministic(self):
        assert np.array_equal(synthetic_target(24), synthetic_target(24))

    def test_not_radially_trivial(self):
        t = synthetic_target(32)
        # top and bottom halves differ, so recovery cannot cheat with symmetry
        assert not np.allclose(t[1, 10, :], t[1, 21, :])

    def test_size_floor(self):
        with pytest.raises(ValueError, match="size"):
            synthetic_target(3)
