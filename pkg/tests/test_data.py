import numpy as np
import pytest

from nbrec.data import (Dataset, ObservationMask, RatingMatrix, binarize,
                        load_tsv, split, to_mask, to_rating_grid, write_tsv)
from nbrec.errors import DataError, DuplicateError, ParseError


def _write(tmp_path, text, name="data.tsv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestLoadTsv:
    def test_dense_remap(self, tmp_path):
        path = _write(tmp_path, "7\t2\t5\n7\t5\t3\n9\t2\t1\n")
        ds = load_tsv(path)
        assert ds.n_users == 2
        assert ds.n_items == 2
        assert ds.n_mnar == 3
        # original ids retained
        assert ds.user_ids == {0: 7, 1: 9}
        assert ds.item_ids == {0: 2, 1: 5}

    def test_empty_file(self, tmp_path):
        ds = load_tsv(_write(tmp_path, ""))
        assert ds.n_users == 0
        assert ds.n_mnar == 0

    def test_parse_error_carries_line_number(self, tmp_path):
        path = _write(tmp_path, "a\tb\tc\n")
        with pytest.raises(ParseError, match=":1:"):
            load_tsv(path)

    def test_duplicate_pair_rejected(self, tmp_path):
        path = _write(tmp_path, "1\t1\t5\n1\t1\t4\n")
        with pytest.raises(DuplicateError):
            load_tsv(path)

    def test_comments_and_blank_lines_skipped(self, tmp_path):
        ds = load_tsv(_write(tmp_path, "# header\n\n3\t4\t2.5\n"))
        assert ds.n_mnar == 1

    def test_missing_file(self):
        with pytest.raises(DataError):
            load_tsv("/nonexistent/file.tsv")

    def test_round_trip(self, tmp_path, rng):
        u = rng.integers(0, 20, size=50)
        i = rng.integers(0, 30, size=50)
        keys = set()
        rows = []
        for uu, ii in zip(u, i):
            if (uu, ii) in keys:
                continue
            keys.add((uu, ii))
            rows.append(f"{uu}\t{ii}\t{rng.integers(1, 6)}")
        path = _write(tmp_path, "\n".join(rows) + "\n")
        ds = load_tsv(path)
        out = str(tmp_path / "out.tsv")
        write_tsv(ds, out)
        ds2 = load_tsv(out)
        assert ds2.n_users == ds.n_users
        assert ds2.n_items == ds.n_items
        for a, b in zip(ds.mnar, ds2.mnar):
            np.testing.assert_array_equal(a, b)

    def test_manifest_written(self, tmp_path):
        ds = load_tsv(_write(tmp_path, "0\t0\t5\n0\t1\t3\n"))
        out = str(tmp_path / "out.tsv")
        write_tsv(ds, out)
        manifest = (tmp_path / "out.tsv.manifest").read_text()
        assert "n_users=1" in manifest
        assert "n_records=2" in manifest


class TestBinarize:
    def test_threshold_inclusive(self, tmp_path):
        ds = load_tsv(_write(tmp_path, "0\t0\t3\n0\t1\t2.99\n1\t0\t2\n"))
        b3 = binarize(ds, 3.0)
        np.testing.assert_array_equal(b3.mnar[2], [1.0, 0.0, 0.0])
        b2 = binarize(ds, 2.0)
        np.testing.assert_array_equal(b2.mnar[2], [1.0, 1.0, 1.0])

    def test_idempotent_on_binary_data(self, tmp_path):
        ds = load_tsv(_write(tmp_path, "0\t0\t5\n0\t1\t1\n1\t1\t3\n"))
        once = binarize(ds, 3.0)
        twice = binarize(once, 1.0)
        np.testing.assert_array_equal(once.mnar[2], twice.mnar[2])

    def test_out_of_range_threshold(self, tmp_path):
        ds = load_tsv(_write(tmp_path, "0\t0\t5\n"))
        with pytest.raises(DataError):
            binarize(ds, 9.0)


class TestSplit:
    def _dataset(self, n=100):
        u = np.arange(n) % 10
        i = np.arange(n) // 10 % 10 + 10 * (np.arange(n) // 100)
        # guarantee uniqueness via distinct (u, i) pairs
        u = np.arange(n) % 10
        i = np.arange(n) // 10
        r = np.ones(n) * 3.0
        return Dataset(n_users=10, n_items=(n + 9) // 10, mnar=(u, i, r))

    def test_sizes_and_disjoint(self):
        ds = self._dataset(100)
        tr, va = split(ds, (0.9, 0.1), seed=1)
        assert tr.n_mnar == 90
        assert va.n_mnar == 10
        tr_keys = set(zip(tr.mnar[0], tr.mnar[1]))
        va_keys = set(zip(va.mnar[0], va.mnar[1]))
        assert not tr_keys & va_keys

    def test_deterministic(self):
        ds = self._dataset(100)
        a = split(ds, (0.8, 0.2), seed=7)
        b = split(ds, (0.8, 0.2), seed=7)
        np.testing.assert_array_equal(a[0].mnar[0], b[0].mnar[0])
        np.testing.assert_array_equal(a[1].mnar[1], b[1].mnar[1])

    def test_bad_fractions(self):
        ds = self._dataset(10)
        with pytest.raises(DataError):
            split(ds, (0.8, 0.3), seed=0)


class TestWrappers:
    def test_rating_matrix_rejects_nan(self):
        with pytest.raises(DataError):
            RatingMatrix(values=np.array([[1.0, np.nan]]))

    def test_mask_rejects_non_binary(self):
        with pytest.raises(DataError):
            ObservationMask(bits=np.array([[0.0, 2.0]]))

    def test_grid_helpers(self):
        ds = Dataset(n_users=2, n_items=2,
                     mnar=(np.array([0, 1]), np.array([1, 0]),
                           np.array([4.0, 2.0])))
        np.testing.assert_array_equal(to_mask(ds), [[0, 1], [1, 0]])
        np.testing.assert_array_equal(to_rating_grid(ds),
                                      [[0, 4.0], [2.0, 0]])
