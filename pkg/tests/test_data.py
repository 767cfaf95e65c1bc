import numpy as np
import pytest

from hafuse.data import (DataError, GrayImage, PairDataset, crop_patches, encode_pgm, generate_synthetic,
                         load_pgm, make_synthetic, parse_pgm, quantize, save_pgm, sobel_energy)
from hafuse.errors import DimensionError, FormatError


class TestGrayImage:
    def test_quantize_round_half_up(self):
        np.testing.assert_array_equal(quantize(np.array([0.0, 0.5 / 255, 1.5 / 255, 1.0, 1.2, -0.1])),
                                      [0, 1, 2, 255, 255, 0])

    def test_bytes_round_trip(self):
        values = np.arange(256, dtype=np.uint8).reshape(16, 16)
        np.testing.assert_array_equal(GrayImage.from_bytes8(values).to_bytes8(), values)

    def test_rejects_non_2d(self):
        with pytest.raises(DimensionError):
            GrayImage(np.zeros((2, 2, 2)))


class TestPGM:
    def test_round_trip_is_bit_exact(self, tmp_path):
        values = np.random.default_rng(0).integers(0, 256, (7, 5), dtype=np.uint8)
        img = GrayImage.from_bytes8(values)
        save_pgm(img, tmp_path / "a.pgm")
        back = load_pgm(tmp_path / "a.pgm")
        np.testing.assert_array_equal(back.pixels, img.pixels)
        assert encode_pgm(back) == (tmp_path / "a.pgm").read_bytes()

    def test_direct_mapping(self):
        img = parse_pgm(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64]))
        np.testing.assert_array_equal(img.pixels, [[0, 128 / 255], [1, 64 / 255]])

    def test_ascii_variant_names_expected_magic(self):
        with pytest.raises(FormatError, match="P5"):
            parse_pgm(b"P2\n1 1\n255\n0\n")

    def test_canonical_header(self):
        buf = encode_pgm(GrayImage(np.zeros((2, 3))))
        assert buf == b"P5\n3 2\n255\n" + bytes(6)

    def test_comments_and_whitespace(self):
        img = parse_pgm(b"P5 # note\n 2\t1 # w h\n255\n\x00\xff")
        np.testing.assert_array_equal(img.to_bytes8(), [[0, 255]])

    @pytest.mark.parametrize("buf,offset", [
        (b"P2\n1 1\n255\n\x00", 0),
        (b"P5\n1 x\n255\n\x00", 5),
        (b"P5\n1 1\n65535\n\x00\x00", 7),
        (b"P5\n2 2\n255\n\x00", 12),
        (b"P5\n2 2", 6),
        (b"P5\n0 2\n255\n", 3),
    ])
    def test_errors_carry_offsets(self, buf, offset):
        with pytest.raises(FormatError) as info:
            parse_pgm(buf)
        assert info.value.offset == offset
        assert "offset" in str(info.value)

    def test_load_errors(self, tmp_path):
        with pytest.raises(DataError):
            load_pgm(tmp_path / "missing.pgm")
        (tmp_path / "bad.pgm").write_bytes(b"P6\n1 1\n255\n\x00")
        with pytest.raises(FormatError) as info:
            load_pgm(tmp_path / "bad.pgm")
        assert "bad.pgm" in str(info.value) and info.value.offset == 0


class TestDataset:
    def test_pairs_in_name_order(self, tmp_path):
        for sub in ("ir", "vi"):
            (tmp_path / sub).mkdir()
            for name in ("b", "a"):
                save_pgm(GrayImage(np.zeros((4, 4))), tmp_path / sub / f"{name}.pgm")
        ds = PairDataset.from_dir(tmp_path)
        assert ds.ids() == ["a", "b"] and len(ds) == 2

    def test_mismatched_names(self, tmp_path):
        (tmp_path / "ir").mkdir()
        (tmp_path / "vi").mkdir()
        save_pgm(GrayImage(np.zeros((4, 4))), tmp_path / "ir" / "a.pgm")
        save_pgm(GrayImage(np.zeros((4, 4))), tmp_path / "vi" / "b.pgm")
        with pytest.raises(DataError):
            PairDataset.from_dir(tmp_path)

    def test_missing_dirs_and_shape_mismatch(self, tmp_path):
        with pytest.raises(DataError):
            PairDataset.from_dir(tmp_path)
        (tmp_path / "ir").mkdir()
        (tmp_path / "vi").mkdir()
        save_pgm(GrayImage(np.zeros((4, 4))), tmp_path / "ir" / "a.pgm")
        save_pgm(GrayImage(np.zeros((4, 5))), tmp_path / "vi" / "a.pgm")
        with pytest.raises(DataError):
            PairDataset.from_dir(tmp_path).load(0)


class TestCrop:
    def test_aligned_grid(self):
        base = np.arange(64, dtype=float).reshape(8, 8) / 64
        patches = crop_patches(GrayImage(base), GrayImage(1 - base), 4)
        assert len(patches) == 4
        for ir, vi in patches:
            np.testing.assert_array_equal(ir, 1 - vi)
        np.testing.assert_array_equal(patches[1][0], base[0:4, 4:8])

    def test_stride_and_seeded_shuffle(self):
        img = GrayImage(np.random.default_rng(0).uniform(0, 1, (8, 8)))
        assert len(crop_patches(img, img, 4, stride=2)) == 9
        a = crop_patches(img, img, 4, stride=2, seed=3)
        b = crop_patches(img, img, 4, stride=2, seed=3)
        assert all(np.array_equal(x[0], y[0]) for x, y in zip(a, b))

    def test_too_small_gives_nothing(self):
        img = GrayImage(np.zeros((3, 3)))
        assert crop_patches(img, img, 4) == []


class TestSynthetic:
    def test_modality_contrasts(self):
        for pair in generate_synthetic(8, 32, seed=0):
            assert pair.mask.any()
            assert pair.ir.pixels[pair.mask].mean() > pair.vi.pixels[pair.mask].mean()
            assert sobel_energy(pair.vi.pixels) > sobel_energy(pair.ir.pixels)

    def test_seeded_bit_identical(self, tmp_path):
        make_synthetic(tmp_path / "a", 3, 32, seed=5)
        make_synthetic(tmp_path / "b", 3, 32, seed=5)
        for sub in ("ir", "vi", "masks"):
            for name in ("0000.pgm", "0001.pgm", "0002.pgm"):
                assert (tmp_path / "a" / sub / name).read_bytes() == (tmp_path / "b" / sub / name).read_bytes()
        other = generate_synthetic(1, 32, seed=6)[0]
        assert not np.array_equal(other.ir.pixels, load_pgm(tmp_path / "a" / "ir" / "0000.pgm").pixels)
