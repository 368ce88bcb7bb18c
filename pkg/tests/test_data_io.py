"""IDX parsing, model serialization, and report writers."""

import gzip
import struct

import numpy as np
import pytest

from nricci import data_io, network


def _idx_images(path, arrays, magic=2051):
    n = len(arrays)
    h, w = (arrays[0].shape if n else (5, 5))
    payload = struct.pack(">iiii", magic, n, h, w)
    payload += b"".join(np.asarray(a, dtype=np.uint8).tobytes() for a in arrays)
    path.write_bytes(payload)


def _idx_labels(path, labels, magic=2049):
    payload = struct.pack(">ii", magic, len(labels))
    payload += bytes(int(v) for v in labels)
    path.write_bytes(payload)


def _write_synthetic_split(dirpath, prefix, images, labels):
    _idx_images(dirpath / f"{prefix}-images-idx3-ubyte", images)
    _idx_labels(dirpath / f"{prefix}-labels-idx1-ubyte", labels)


class TestIdxParsing:
    def test_roundtrip_synthetic_split(self, tmp_path):
        rng = np.random.default_rng(0)
        imgs = [rng.integers(0, 256, size=(28, 28)) for _ in range(7)]
        labels = [3, 1, 4, 1, 5, 9, 2]
        _write_synthetic_split(tmp_path, "train", imgs, labels)
        ds = data_io.load_mnist(tmp_path, "train")
        assert ds.images.shape == (7, 784)
        assert ds.images.dtype == np.float64
        assert ds.labels.tolist() == labels
        np.testing.assert_allclose(
            ds.images[2], np.asarray(imgs[2], dtype=np.float64).ravel() / 255.0
        )
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0

    def test_gzip_transparent(self, tmp_path):
        rng = np.random.default_rng(1)
        imgs = [rng.integers(0, 256, size=(28, 28)) for _ in range(3)]
        _write_synthetic_split(tmp_path, "t10k", imgs, [0, 1, 2])
        for name in ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"):
            raw = (tmp_path / name).read_bytes()
            (tmp_path / name).unlink()
            (tmp_path / (name + ".gz")).write_bytes(gzip.compress(raw))
        ds = data_io.load_mnist(tmp_path, "test")
        assert ds.n == 3
        assert ds.labels.tolist() == [0, 1, 2]

    def test_bad_magic_names_path(self, tmp_path):
        _idx_images(tmp_path / "train-images-idx3-ubyte",
                    [np.zeros((28, 28))], magic=1234)
        _idx_labels(tmp_path / "train-labels-idx1-ubyte", [0])
        with pytest.raises(ValueError, match="train-images"):
            data_io.load_mnist(tmp_path, "train")

    def test_count_mismatch_rejected(self, tmp_path):
        _idx_images(tmp_path / "train-images-idx3-ubyte",
                    [np.zeros((28, 28)), np.zeros((28, 28))])
        _idx_labels(tmp_path / "train-labels-idx1-ubyte", [0, 1, 2])
        with pytest.raises(ValueError):
            data_io.load_mnist(tmp_path, "train")

    def test_missing_file_reports_path(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="t10k"):
            data_io.load_mnist(tmp_path, "test")

    def test_unknown_split_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            data_io.load_mnist(tmp_path, "validation")

    def test_real_mnist_shapes(self, mnist_train, mnist_test):
        assert mnist_train.images.shape == (60000, 784)
        assert mnist_test.images.shape == (10000, 784)
        assert set(np.unique(mnist_test.labels)) == set(range(10))
        assert mnist_train.images.max() <= 1.0


class TestModelSerialization:
    def test_dense_roundtrip(self, tmp_path):
        net = network.build_network("15,20", seed=3)
        net.meta = {"regime": "ce", "seed": 3, "note": "roundtrip"}
        path = tmp_path / "m.nrcm"
        data_io.save_model(net, path)
        back = data_io.load_model(path)
        assert back.meta == net.meta
        assert back.layer_sizes() == net.layer_sizes()
        for a, b in zip(net.parameter_arrays(), back.parameter_arrays()):
            np.testing.assert_array_equal(a, b)
        x = np.random.default_rng(0).random((4, 784))
        np.testing.assert_array_equal(net.forward(x), back.forward(x))

    def test_cnn_roundtrip(self, tmp_path):
        net = network.build_network("cnn", seed=1)
        path = tmp_path / "m.nrcm"
        data_io.save_model(net, path)
        back = data_io.load_model(path)
        x = np.random.default_rng(5).random((2, 784))
        np.testing.assert_array_equal(net.forward(x), back.forward(x))

    def test_truncated_file_rejected(self, tmp_path):
        net = network.build_network("15,20", seed=0)
        path = tmp_path / "m.nrcm"
        data_io.save_model(net, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 10])
        with pytest.raises(ValueError):
            data_io.load_model(path)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "m.nrcm"
        path.write_bytes(b"XXXX" + b"\0" * 64)
        with pytest.raises(ValueError):
            data_io.load_model(path)


class TestReportWriters:
    def test_csv_roundtrip_types(self, tmp_path):
        path = tmp_path / "r.csv"
        rows = [["a", 1, 0.5, True], ["b", -2, 1e10, False]]
        data_io.write_csv(path, ["name", "k", "x", "flag"], rows)
        header, back = data_io.read_csv(path)
        assert header == ["name", "k", "x", "flag"]
        assert back[0] == ["a", "1", "0.5", "true"]
        assert back[1][3] == "false"

    def test_float_precision_12_digits(self, tmp_path):
        v = 1 / 3
        path = tmp_path / "r.csv"
        data_io.write_csv(path, ["x"], [[v]])
        _, back = data_io.read_csv(path)
        assert abs(float(back[0][0]) - v) < 1e-12

    def test_atomic_write_replaces(self, tmp_path):
        path = tmp_path / "f.txt"
        data_io.atomic_write_text(path, "one")
        data_io.atomic_write_text(path, "two")
        assert path.read_text() == "two"
        assert list(tmp_path.iterdir()) == [path]

    def test_json_roundtrip(self, tmp_path):
        doc = {"a": [1, 2.5], "b": {"c": None}}
        path = tmp_path / "d.json"
        data_io.write_json(path, doc)
        assert data_io.read_json(path) == doc

    def test_write_report_json_mode(self, tmp_path):
        rows = [{"x": 1, "y": 0.5}, {"x": 2, "y": 1.5}]
        p = tmp_path / "r.json"
        data_io.write_report(rows, p, format="json")
        assert data_io.read_json(p) == rows
