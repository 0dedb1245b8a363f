import numpy as np
import pytest

from stallsgd.data import (
    MINIBOONE_N_BACKGROUND,
    MINIBOONE_N_SIGNAL,
    DEFAULT_N_TRAIN,
    DEFAULT_TRAIN_FRACTION,
    ChecksumMismatchError,
    DataFormatError,
    RawDataset,
    label_and_split,
    load_raw,
    load_split,
    n_train_for,
    persist_split,
    synthetic_fallback,
    write_raw,
    zscore,
)
from stallsgd.ideal import OLSAccumulator


def _row(v):
    return " ".join([str(v)] * 50)


@pytest.fixture
def tiny_file(tmp_path):
    path = tmp_path / "tiny.txt"
    path.write_text(f"  1 1\n{_row(0.5)}\n {_row(-1.25)}\n")
    return path


class TestLoadRaw:
    def test_two_line_fixture(self, tiny_file):
        raw = load_raw(tiny_file)
        assert (raw.n_signal, raw.n_background, raw.n_total) == (1, 1, 2)
        assert raw.features.shape == (2, 50)
        assert raw.features[1, 0] == -1.25
        np.testing.assert_array_equal(raw.labels(), [1.0, 0.0])
        assert not raw.synthetic

    def test_short_row(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text(f"1 1\n{_row(1)}\n{' '.join(['1'] * 49)}\n")
        with pytest.raises(DataFormatError, match=r"bad.txt:3: expected 50 values, found 49"):
            load_raw(path)

    def test_non_numeric(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text(f"1 0\n{_row('x')}\n")
        with pytest.raises(DataFormatError, match=":2:"):
            load_raw(path)

    def test_count_mismatch(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text(f"2 1\n{_row(1)}\n{_row(2)}\n")
        with pytest.raises(DataFormatError, match="2 \\+ 1 = 3 rows, found 2"):
            load_raw(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text(f"12\n{_row(1)}\n")
        with pytest.raises(DataFormatError, match=":1:"):
            load_raw(path)

    def test_round_trip(self, tmp_path):
        raw = synthetic_fallback(1, 7, 5)
        write_raw(raw, tmp_path / "r.txt")
        back = load_raw(tmp_path / "r.txt")
        np.testing.assert_array_equal(back.features, raw.features)
        assert back.checksum() == raw.checksum()


class TestSplit:
    def test_miniboone_sizes(self):
        assert MINIBOONE_N_SIGNAL + MINIBOONE_N_BACKGROUND == 130_064
        assert n_train_for(130_064, DEFAULT_TRAIN_FRACTION) == DEFAULT_N_TRAIN == 91_044

    def test_default_split_on_full_size_data(self):
        raw = synthetic_fallback(0)
        split = label_and_split(raw, 0)
        assert (split.n_train, split.n_test) == (91_044, 39_020)

    def test_labels_survive_shuffle(self):
        raw = synthetic_fallback(2, 40, 60)
        split = label_and_split(raw, 5, 0.7)
        assert split.train_y.sum() + split.test_y.sum() == 40
        signal_rows = {tuple(r) for r in raw.features[:40]}
        for X, y in ((split.train_X, split.train_y), (split.test_X, split.test_y)):
            for row, label in zip(X, y):
                assert (tuple(row) in signal_rows) == (label == 1.0)

    def test_disjoint(self):
        split = label_and_split(synthetic_fallback(2, 40, 60), 5, 0.7)
        tr, te = split.permutation[: split.n_train], split.permutation[split.n_train:]
        assert not set(tr) & set(te)
        assert len(tr) + len(te) == 100

    def test_determinism(self):
        raw = synthetic_fallback(2, 40, 60)
        a, b, c = label_and_split(raw, 5, 0.7), label_and_split(raw, 5, 0.7), label_and_split(raw, 6, 0.7)
        np.testing.assert_array_equal(a.permutation, b.permutation)
        assert not np.array_equal(a.permutation, c.permutation)
        assert (a.n_train, a.n_test) == (c.n_train, c.n_test)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1])
    def test_fraction_bounds(self, fraction):
        with pytest.raises(ValueError):
            label_and_split(synthetic_fallback(0, 5, 5), 0, fraction)

    def test_zscore_uses_training_statistics(self):
        split = zscore(label_and_split(synthetic_fallback(3, 50, 50), 0, 0.6))
        np.testing.assert_allclose(split.train_X.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(split.train_X.std(axis=0), 1, rtol=1e-12)


class TestPersistSplit:
    def test_round_trip(self, tmp_path):
        raw = synthetic_fallback(4, 30, 20)
        split = label_and_split(raw, 9, 0.7)
        persist_split(split, tmp_path / "split.meta")
        text = (tmp_path / "split.meta").read_text()
        for key in ("source_checksum=", "seed=9", "fraction=", "n_train=35", "n_test=15"):
            assert key in text
        back = load_split(tmp_path / "split.meta", raw)
        np.testing.assert_array_equal(back.train_X, split.train_X)
        np.testing.assert_array_equal(back.test_y, split.test_y)
        np.testing.assert_array_equal(back.permutation, split.permutation)

    def test_altered_source(self, tmp_path):
        raw = synthetic_fallback(4, 30, 20)
        persist_split(label_and_split(raw, 9, 0.7), tmp_path / "split.meta")
        features = raw.features.copy()
        features[3, 3] += 1e-9
        with pytest.raises(ChecksumMismatchError):
            load_split(tmp_path / "split.meta", RawDataset(features, 30, 20))

    def test_missing_field(self, tmp_path):
        raw = synthetic_fallback(4, 30, 20)
        path = tmp_path / "split.meta"
        persist_split(label_and_split(raw, 9, 0.7), path)
        path.write_text("\n".join(line for line in path.read_text().splitlines() if not line.startswith("seed=")))
        with pytest.raises(DataFormatError, match="missing metadata fields \\['seed'\\]"):
            load_split(path, raw)

    def test_corrupt_permutation(self, tmp_path):
        raw = synthetic_fallback(4, 30, 20)
        path = tmp_path / "split.meta"
        persist_split(label_and_split(raw, 9, 0.7), path)
        (tmp_path / "split.meta.idx").write_text("\n".join(["0"] * 50))
        with pytest.raises(DataFormatError):
            load_split(path, raw)


class TestSyntheticFallback:
    def test_shape(self):
        raw = synthetic_fallback(0, 12, 8)
        assert raw.features.shape == (20, 50)
        assert (raw.n_signal, raw.n_background) == (12, 8)
        assert raw.synthetic

    def test_seeds_differ(self):
        assert not np.array_equal(synthetic_fallback(0, 5, 5).features, synthetic_fallback(1, 5, 5).features)

    def test_linear_probe_learns(self):
        raw = synthetic_fallback(0, 3000, 7000)
        split = label_and_split(raw, 0, 0.7)
        acc = OLSAccumulator(51)
        design = np.hstack([split.train_X, np.ones((split.n_train, 1))])
        for lo in range(0, split.n_train, 1000):
            acc.update_batch(design[lo:lo + 1000], split.train_y[lo:lo + 1000])
        w = acc.solve()
        pred = np.hstack([split.test_X, np.ones((split.n_test, 1))]) @ w >= 0.5
        assert np.mean(pred == (split.test_y == 1.0)) > 0.6
