import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harcl.benchmark import stratified_split, user_split
from harcl.data import (DataFormatError, EventStream, LabeledDataset, activation_ratio_features, gen_synthetic,
                        load_event_csv, load_feature_csv, save_feature_csv)
from oracles import nearest_mean_accuracy


class TestLabeledDataset:
    def test_validation(self):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((3, 2)), [0, 1], ["a", "b"])
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((2, 2)), [0, 0], ["a", "b"])
        with pytest.raises(ValueError):
            LabeledDataset(np.array([[np.nan, 0.0], [0.0, 0.0]]), [0, 1], ["a", "b"])
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((2, 2)), [0, 1], ["a", "b"], users=["u"])

    def test_properties(self):
        ds = LabeledDataset(np.zeros((3, 4)), [0, 1, 1], ["a", "b"])
        assert (len(ds), ds.num_classes, ds.dims) == (3, 2, 4)
        assert ds.subset([1, 2]).y.tolist() == [1, 1]


class TestFeatureCsv:
    def test_round_trip(self, tmp_path):
        ds = gen_synthetic(classes=3, samples_per_class=5, dims=4, seed=1)
        save_feature_csv(ds, tmp_path / "d.csv")
        back = load_feature_csv(tmp_path / "d.csv")
        assert np.array_equal(back.X, ds.X) and np.array_equal(back.y, ds.y)
        assert back.class_names == ds.class_names and np.array_equal(back.users, ds.users)

    def test_user_column_enables_user_split(self, tmp_path):
        (tmp_path / "d.csv").write_text("f0,f1,label,user\n" + "".join(
            f"{i},{i},{'ab'[i % 2]},u{i % 4}\n" for i in range(16)))
        ds = load_feature_csv(tmp_path / "d.csv")
        train, test = user_split(ds)
        assert set(train.users).isdisjoint(test.users)

    def test_wide_header(self, tmp_path):
        header = ",".join(f"f{i}" for i in range(561)) + ",label\n"
        row = ",".join("0.5" for _ in range(561))
        (tmp_path / "d.csv").write_text(header + row + ",walk\n" + row + ",sit\n")
        ds = load_feature_csv(tmp_path / "d.csv")
        assert ds.dims == 561 and ds.class_names == ["sit", "walk"] and ds.users is None

    @pytest.mark.parametrize("body, match", [
        ("", "empty file"),
        ("f0,f1\n1,2\n", "missing column"),
        ("f0,label\n1,a\nx,b\n", ":3: non-numeric"),
        ("f0,label\n1,a\n2\n", ":3: expected 2 fields"),
        ("f0,label\n1,a\n2,\n", ":3: unknown label"),
        ("f0,label\n", "no data rows"),
        ("f0,label\n1,a\ninf,b\n", ":3: non-finite"),
    ])
    def test_errors(self, tmp_path, body, match):
        (tmp_path / "d.csv").write_text(body)
        with pytest.raises(DataFormatError, match=match):
            load_feature_csv(tmp_path / "d.csv")

    def test_known_class_names(self, tmp_path):
        (tmp_path / "d.csv").write_text("f0,label\n1,a\n2,z\n")
        with pytest.raises(DataFormatError, match=":3: unknown label 'z'"):
            load_feature_csv(tmp_path / "d.csv", class_names=["a", "b"])


def stream(rows):
    t, s, v, l = zip(*rows)
    return EventStream(np.array(t, dtype=float), list(s), np.array(v), list(l))


class TestActivationRatio:
    def test_full_half_never(self):
        ev = stream([(0, "a", 1, "cook"), (0, "b", 1, "cook"), (30, "b", 0, "cook"), (60, "c", 0, ""),
                     (120, "c", 0, "")])
        ds, dropped = activation_ratio_features(ev, 60)
        names = ["a", "b", "c"]
        assert dropped == 1 and ds.class_names == ["cook"]
        assert dict(zip(names, ds.X[0])) == {"a": 1.0, "b": 0.5, "c": 0.0}

    def test_majority_and_tie(self):
        ev = stream([(0, "a", 1, "eat"), (20, "a", 1, "sleep"), (60, "a", 0, "eat"), (90, "a", 0, "sleep"),
                     (120, "a", 0, "")])
        ds, _ = activation_ratio_features(ev, 60)
        # window 1: eat 20 s, sleep 40 s; window 2: eat 30 s, sleep 30 s, tie goes to the earlier label
        assert [ds.class_names[c] for c in ds.y] == ["sleep", "eat"]

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 30), st.sampled_from("xyz"), st.integers(0, 1),
                              st.sampled_from(["", "p", "q"])), min_size=2, max_size=30), st.floats(5, 60))
    def test_ratios_and_window_count(self, events, window):
        t = np.cumsum([e[0] for e in events])
        ev = EventStream(t, [e[1] for e in events], np.array([e[2] for e in events]), [e[3] for e in events])
        n_win = int(np.floor((t[-1] - t[0]) / window))
        try:
            ds, dropped = activation_ratio_features(ev, window)
        except ValueError:
            # no window carries a label, so the dataset would be empty
            return
        assert len(ds) == n_win - dropped
        assert np.all((ds.X >= 0) & (ds.X <= 1))

    def test_errors(self):
        with pytest.raises(ValueError):
            activation_ratio_features(stream([(0, "a", 1, "x"), (60, "a", 0, "x")]), 0)
        with pytest.raises(ValueError):
            EventStream(np.array([1.0, 0.0]), ["a", "a"], np.array([1, 0]), ["", ""])
        with pytest.raises(ValueError):
            EventStream(np.array([0.0]), ["a"], np.array([2]), [""])

    def test_event_csv(self, tmp_path):
        (tmp_path / "e.csv").write_text("timestamp,sensor,value,label\n0,M1,1,cook\n60,M1,0,cook\n120,M1,0,\n")
        ev = load_event_csv(tmp_path / "e.csv")
        assert ev.sensors == ["M1"] * 3 and ev.labels == ["cook", "cook", ""]
        (tmp_path / "bad.csv").write_text("timestamp,sensor,value,label\n0,M1,on,cook\n")
        with pytest.raises(DataFormatError, match=":2:"):
            load_event_csv(tmp_path / "bad.csv")
        (tmp_path / "hdr.csv").write_text("time,sensor\n")
        with pytest.raises(DataFormatError):
            load_event_csv(tmp_path / "hdr.csv")


class TestSynthetic:
    def test_reproducible(self):
        a, b = gen_synthetic(seed=4), gen_synthetic(seed=4)
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y) and np.array_equal(a.users, b.users)
        assert not np.array_equal(a.X, gen_synthetic(seed=5).X)

    @given(st.integers(2, 6), st.integers(2, 9))
    @settings(max_examples=20, deadline=None)
    def test_shape(self, classes, dims):
        ds = gen_synthetic(classes=classes, samples_per_class=4, dims=dims)
        assert ds.dims == dims and np.bincount(ds.y).tolist() == [4] * classes

    def test_long_tail(self):
        counts = np.bincount(gen_synthetic(classes=8, samples_per_class=200, imbalance="long-tail").y)
        assert counts.max() / counts.min() >= 10

    def test_separation(self):
        ds = gen_synthetic(classes=5, samples_per_class=2000, dims=4, separation=6.0, sigma=0.5, seed=2)
        means = np.stack([ds.X[ds.y == c].mean(axis=0) for c in range(5)])
        d = np.linalg.norm(means[:, None] - means[None], axis=2)[np.triu_indices(5, 1)]
        assert d.min() == pytest.approx(3.0, abs=0.1)

    @pytest.mark.parametrize("seed", range(3))
    def test_ten_sigma_is_separable(self, seed):
        ds = gen_synthetic(classes=10, samples_per_class=100, dims=20, separation=10.0, seed=seed)
        train, test = stratified_split(ds)
        assert nearest_mean_accuracy(train.X, train.y, test.X, test.y) >= 0.99

    def test_errors(self):
        with pytest.raises(ValueError):
            gen_synthetic(classes=1)
        with pytest.raises(ValueError):
            gen_synthetic(imbalance="zipf")
        with pytest.raises(ValueError):
            gen_synthetic(samples_per_class=10, imbalance="long-tail")
