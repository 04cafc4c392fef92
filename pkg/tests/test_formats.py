"""Dataset text files and binary logit caches: round-trips and coded errors."""

import struct

import numpy as np
import pytest

from normkd.datasets import Dataset, make_blobs, read_dataset, write_dataset
from normkd.errors import ConfigError, ContractError, FileFormatError
from normkd.logitcache import read_logit_cache, write_logit_cache
from normkd.logitstats import LogitRecord


class TestMakeBlobs:
    def test_split_sizes(self):
        train_ds, val_ds = make_blobs(10, 3, 100, 2.0, seed=0)
        assert train_ds.n_samples == 800
        assert val_ds.n_samples == 200
        assert train_ds.num_classes == val_ds.num_classes == 10

    def test_deterministic(self):
        a_train, a_val = make_blobs(4, 5, 10, 2.0, seed=3)
        b_train, b_val = make_blobs(4, 5, 10, 2.0, seed=3)
        np.testing.assert_array_equal(a_train.features, b_train.features)
        np.testing.assert_array_equal(a_val.labels, b_val.labels)

    def test_center_separation_honored(self):
        train_ds, _ = make_blobs(6, 2, 50, 3.0, seed=1)
        centers = np.stack(
            [train_ds.features[train_ds.labels == k].mean(axis=0) for k in range(6)]
        )
        dists = np.linalg.norm(centers[:, None] - centers[None, :], axis=-1)
        off_diag = dists[~np.eye(6, dtype=bool)]
        # empirical means sit near the true centers, which are >= 3 apart
        assert off_diag.min() > 2.0

    def test_balanced_splits(self):
        train_ds, val_ds = make_blobs(5, 3, 20, 2.0, seed=2)
        for k in range(5):
            assert (train_ds.labels == k).sum() == 16
            assert (val_ds.labels == k).sum() == 4

    def test_impossible_geometry_rejected(self):
        with pytest.raises(ConfigError):
            make_blobs(3, 2, 4, 1e308, seed=0)

    def test_preconditions(self):
        with pytest.raises(ContractError):
            make_blobs(1, 2, 10, 1.0, seed=0)
        with pytest.raises(ContractError):
            make_blobs(3, 2, 1, 1.0, seed=0)

    def test_wide_margin_pair_is_linearly_separable(self):
        from normkd.trainer import MlpSpec, TrainConfig, evaluate, train

        train_ds, val_ds = make_blobs(2, 4, 50, 8.0, seed=3)
        cfg = TrainConfig(
            epochs=30, lr_decay_epochs=(), alpha=1.0, beta=0.0, weight_decay=0.0, seed=0
        )
        params, _ = train(MlpSpec((4, 2), init_seed=0), cfg, train_ds, None, val_ds)
        assert evaluate(params, val_ds) >= 0.99


class TestDatasetFile:
    def test_round_trip(self, tmp_path):
        train_ds, _ = make_blobs(3, 4, 10, 2.0, seed=5)
        path = tmp_path / "data.txt"
        write_dataset(path, train_ds)
        back = read_dataset(path)
        np.testing.assert_array_equal(back.features, train_ds.features)
        np.testing.assert_array_equal(back.labels, train_ds.labels)
        assert back.num_classes == 3

    def test_byte_identical_rewrites(self, tmp_path):
        train_ds, _ = make_blobs(3, 4, 10, 2.0, seed=5)
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        write_dataset(a, train_ds)
        write_dataset(b, train_ds)
        assert a.read_bytes() == b.read_bytes()

    def test_header_format(self, tmp_path):
        train_ds, _ = make_blobs(3, 4, 10, 2.0, seed=5)
        path = tmp_path / "data.txt"
        write_dataset(path, train_ds)
        assert path.read_text().splitlines()[0] == "3 4 24"

    @pytest.mark.parametrize(
        "content,message",
        [
            ("", "empty"),
            ("3 4\n", "header"),
            ("a b c\n", "non-integer"),
            ("2 2 2\n0,1.0,2.0\n", "expected 2 rows"),
            ("2 2 1\n0,1.0\n", "features"),
            ("2 2 1\n5,1.0,2.0\n", "labels outside"),
            ("2 2 1\n0,1.0,nan\n", "non-finite"),
            ("2 2 1\n0,1.0,oops\n", "unparseable"),
        ],
    )
    def test_malformed_files_coded_errors(self, tmp_path, content, message):
        path = tmp_path / "bad.txt"
        path.write_text(content)
        with pytest.raises(FileFormatError, match=message):
            read_dataset(path)

    def test_missing_file_is_io_error(self, tmp_path):
        with pytest.raises(FileFormatError):
            read_dataset(tmp_path / "nope.txt")


def random_records(rng, n=7, c=4):
    return [
        LogitRecord(i, int(rng.integers(0, c)), rng.normal(size=c).astype(np.float32).astype(np.float64))
        for i in range(n)
    ]


class TestLogitCacheFile:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        records = random_records(rng)
        path = tmp_path / "cache.nkdl"
        write_logit_cache(path, records)
        back = read_logit_cache(path)
        assert len(back) == len(records)
        for a, b in zip(records, back):
            assert (a.sample_id, a.label) == (b.sample_id, b.label)
            np.testing.assert_array_equal(a.logits, b.logits)

    def test_write_read_write_is_byte_stable(self, tmp_path):
        rng = np.random.default_rng(1)
        records = [
            LogitRecord(i, 0, rng.normal(size=5)) for i in range(4)
        ]
        a, b = tmp_path / "a.nkdl", tmp_path / "b.nkdl"
        write_logit_cache(a, records)
        write_logit_cache(b, read_logit_cache(a))
        assert a.read_bytes() == b.read_bytes()

    def test_exact_size_and_little_endian_layout(self, tmp_path):
        records = [LogitRecord(3, 1, np.array([1.0, -2.0, 0.5]))]
        path = tmp_path / "cache.nkdl"
        write_logit_cache(path, records)
        data = path.read_bytes()
        assert len(data) == 16 + 1 * (8 + 4 * 3)
        assert data[:4] == b"NKDL"
        version, n, c = struct.unpack("<III", data[4:16])
        assert (version, n, c) == (1, 1, 3)
        sid, label = struct.unpack("<II", data[16:24])
        assert (sid, label) == (3, 1)
        np.testing.assert_array_equal(
            np.frombuffer(data[24:], dtype="<f4"), np.array([1.0, -2.0, 0.5], dtype="<f4")
        )

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.nkdl"
        path.write_bytes(b"XKDL" + b"\x00" * 12)
        with pytest.raises(FileFormatError, match="magic.*offset 0"):
            read_logit_cache(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "bad.nkdl"
        path.write_bytes(struct.pack("<4sIII", b"NKDL", 9, 0, 1))
        with pytest.raises(FileFormatError, match="version 9 at offset 4"):
            read_logit_cache(path)

    def test_truncation_names_expected_and_actual(self, tmp_path):
        rng = np.random.default_rng(2)
        path = tmp_path / "cache.nkdl"
        write_logit_cache(path, random_records(rng, n=3, c=4))
        data = path.read_bytes()
        clipped = tmp_path / "clipped.nkdl"
        clipped.write_bytes(data[:-5])
        with pytest.raises(FileFormatError, match=f"expected {len(data)} bytes.*got {len(data) - 5}"):
            read_logit_cache(clipped)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "tiny.nkdl"
        path.write_bytes(b"NKD")
        with pytest.raises(FileFormatError, match="truncated header"):
            read_logit_cache(path)

    def test_label_out_of_range_is_coded(self, tmp_path):
        path = tmp_path / "bad.nkdl"
        body = struct.pack("<II", 0, 7) + np.zeros(3, dtype="<f4").tobytes()
        path.write_bytes(struct.pack("<4sIII", b"NKDL", 1, 1, 3) + body)
        with pytest.raises(FileFormatError, match="record 0 at offset 16"):
            read_logit_cache(path)

    def test_empty_cache_write_rejected(self, tmp_path):
        with pytest.raises(ContractError):
            write_logit_cache(tmp_path / "e.nkdl", [])

    def test_float32_is_serialization_boundary(self, tmp_path):
        # float64 values are narrowed once on write and widen back exactly
        record = LogitRecord(0, 0, np.array([0.1234567890123, -7.77]))
        path = tmp_path / "c.nkdl"
        write_logit_cache(path, [record])
        back = read_logit_cache(path)[0]
        np.testing.assert_array_equal(
            back.logits, record.logits.astype(np.float32).astype(np.float64)
        )
