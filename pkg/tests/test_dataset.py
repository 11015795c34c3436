import os

import numpy as np
import pytest

from plateseq.dataset import DatasetError, generate_dataset, load_dataset, read_manifest
from plateseq.pgm import read_pgm, write_pgm
from plateseq.plates import pad_label, validate_plate


class TestPgm:
    def test_round_trip_uint8(self, tmp_path):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(12, 20), dtype=np.uint8)
        p = tmp_path / "x.pgm"
        write_pgm(p, img)
        np.testing.assert_array_equal(read_pgm(p), img)

    def test_float_write(self, tmp_path):
        img = np.array([[0.0, 0.5], [1.0, 0.25]])
        p = tmp_path / "f.pgm"
        write_pgm(p, img)
        np.testing.assert_array_equal(read_pgm(p), [[0, 128], [255, 64]])

    def test_truncated_rejected(self, tmp_path):
        p = tmp_path / "t.pgm"
        write_pgm(p, np.zeros((8, 8), dtype=np.uint8))
        data = p.read_bytes()
        p.write_bytes(data[:-5])
        with pytest.raises(ValueError, match="truncated"):
            read_pgm(p)

    def test_wrong_magic_rejected(self, tmp_path):
        p = tmp_path / "w.pgm"
        p.write_bytes(b"P2\n2 2\n255\n....")
        with pytest.raises(ValueError, match="magic"):
            read_pgm(p)


class TestGenerate:
    def test_small_corpus_counts_and_round_trip(self, tmp_path):
        rows = generate_dataset(tmp_path / "ds", n_total=12, val_count=3, seed=7)
        assert len(rows) == 12
        assert sum(1 for r in rows if r[2] == "val") == 3
        assert sum(1 for r in rows if r[2] == "train") == 9

        images = load_dataset(tmp_path / "ds")
        assert len(images) == 12
        for img, row in zip(images, rows):
            assert img.label.raw == row[1]
            assert validate_plate(img.label.raw)
            assert len(img.label.padded) == 10
            assert img.pixels.min() >= 0.0 and img.pixels.max() <= 1.0

    def test_deterministic(self, tmp_path):
        a = generate_dataset(tmp_path / "a", n_total=6, val_count=2, seed=11)
        b = generate_dataset(tmp_path / "b", n_total=6, val_count=2, seed=11)
        assert a == b
        for fname, _, _ in a:
            pa = (tmp_path / "a" / fname).read_bytes()
            pb = (tmp_path / "b" / fname).read_bytes()
            assert pa == pb
        ma = (tmp_path / "a" / "manifest.tsv").read_text()
        mb = (tmp_path / "b" / "manifest.tsv").read_text()
        assert ma == mb

    def test_different_seeds_differ(self, tmp_path):
        a = generate_dataset(tmp_path / "a", n_total=6, val_count=2, seed=1)
        b = generate_dataset(tmp_path / "b", n_total=6, val_count=2, seed=2)
        assert [r[1] for r in a] != [r[1] for r in b]

    def test_bad_val_count_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="val_count"):
            generate_dataset(tmp_path / "x", n_total=5, val_count=5, seed=0)

    def test_unwritable_directory_rejected(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        target = blocker / "ds"
        with pytest.raises(DatasetError, match="blocker"):
            generate_dataset(target, n_total=3, val_count=1, seed=0)

    def test_split_selection(self, tmp_path):
        generate_dataset(tmp_path / "ds", n_total=10, val_count=4, seed=3)
        train = load_dataset(tmp_path / "ds", split="train")
        val = load_dataset(tmp_path / "ds", split="val")
        assert len(train) == 6
        assert len(val) == 4


class TestLoadErrors:
    def make_ds(self, tmp_path):
        generate_dataset(tmp_path / "ds", n_total=4, val_count=1, seed=5)
        return tmp_path / "ds"

    def test_missing_image_names_row(self, tmp_path):
        ds = self.make_ds(tmp_path)
        rows = read_manifest(ds)
        os.remove(ds / rows[1][0])
        with pytest.raises(DatasetError, match=":3"):
            load_dataset(ds)

    def test_bad_label_names_row(self, tmp_path):
        ds = self.make_ds(tmp_path)
        lines = (ds / "manifest.tsv").read_text().splitlines()
        parts = lines[2].split("\t")
        parts[1] = "I000"
        lines[2] = "\t".join(parts)
        (ds / "manifest.tsv").write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetError, match=":3"):
            load_dataset(ds)

    def test_malformed_row_rejected(self, tmp_path):
        ds = self.make_ds(tmp_path)
        with open(ds / "manifest.tsv", "a", encoding="utf-8") as fh:
            fh.write("only_one_column\n")
        with pytest.raises(DatasetError, match="3 columns"):
            load_dataset(ds)

    def test_truncated_image_names_file(self, tmp_path):
        ds = self.make_ds(tmp_path)
        rows = read_manifest(ds)
        target = ds / rows[0][0]
        target.write_bytes(target.read_bytes()[:-10])
        with pytest.raises(DatasetError, match=rows[0][0]):
            load_dataset(ds)

    def test_max_length_label_pads_with_two_zeros(self, tmp_path):
        ds = self.make_ds(tmp_path)
        # replace one row's label with an 8-char plate; image content is
        # irrelevant for the padding contract
        lines = (ds / "manifest.tsv").read_text().splitlines()
        parts = lines[1].split("\t")
        parts[1] = "WWW9999W"
        lines[1] = "\t".join(parts)
        (ds / "manifest.tsv").write_text("\n".join(lines) + "\n")
        images = load_dataset(ds)
        assert images[0].label.padded == "00WWW9999W"
        assert pad_label("WWW9999W").startswith("00W")
