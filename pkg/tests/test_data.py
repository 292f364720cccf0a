import numpy as np
import pytest

import hazscreen as hz
from hazscreen.errors import DataError, ParseError, StandardizationError

from conftest import raw_dataset


class TestStandardize:
    def test_symmetric_column(self):
        std, means, scales = hz.standardize_columns(np.array([[1.0], [2.0], [3.0]]))
        np.testing.assert_allclose(std[:, 0], [-1.0, 0.0, 1.0])
        assert means[0] == 2.0 and scales[0] == 1.0

    def test_idempotent(self, rng):
        X = rng.standard_normal((50, 3))
        once, _, _ = hz.standardize_columns(X)
        twice, means, scales = hz.standardize_columns(once)
        np.testing.assert_allclose(twice, once, atol=1e-12)
        np.testing.assert_allclose(means, 0.0, atol=1e-12)
        np.testing.assert_allclose(scales, 1.0, atol=1e-12)

    def test_against_two_pass(self):
        col = [0.0, 0.0, 4.0]
        std, means, scales = hz.standardize_columns(np.array(col)[:, None])
        # Independent two-pass mean/variance computation.
        m = sum(col) / len(col)
        var = sum((v - m) ** 2 for v in col) / (len(col) - 1)
        assert means[0] == pytest.approx(4.0 / 3.0, rel=1e-15)
        assert scales[0] == pytest.approx(var ** 0.5, rel=1e-15)
        np.testing.assert_allclose(std[:, 0], (np.array(col) - m) / var ** 0.5,
                                   rtol=1e-14)

    def test_zero_variance_names_column(self):
        X = np.column_stack([np.arange(4.0), np.ones(4)])
        with pytest.raises(StandardizationError, match="column 1"):
            hz.standardize_columns(X)


class TestDatasetConstruction:
    def test_validations(self, rng):
        Z = rng.standard_normal((5, 2))
        with pytest.raises(DataError, match="negative"):
            hz.SurvivalDataset.from_arrays([1, 2, 3, -1, 5], np.ones(5), Z)
        with pytest.raises(DataError, match="event"):
            hz.SurvivalDataset.from_arrays([1, 2, 3, 4, 5], np.zeros(5), Z)
        with pytest.raises(DataError, match="status"):
            hz.SurvivalDataset.from_arrays([1, 2, 3, 4, 5], [0, 1, 2, 0, 0], Z)

    def test_tau_clamps_and_recodes(self, rng):
        Z = rng.standard_normal((6, 2))
        times = np.array([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        events = np.array([1, 1, 0, 1, 1, 1], dtype=bool)
        ds = hz.SurvivalDataset.from_arrays(times, events, Z, tau=3.5)
        assert ds.tau == 3.5
        assert ds.times.max() == 3.5
        # Subjects beyond the horizon are censored at tau, never deaths.
        assert not ds.events[3:].any()
        assert ds.events[:2].all()

    def test_order_sorted_deaths_first(self, rng):
        times = np.array([2.0, 1.0, 2.0, 1.0, 3.0])
        events = np.array([0, 0, 1, 1, 1], dtype=bool)
        ds = hz.SurvivalDataset.from_arrays(times, events, rng.standard_normal((5, 1)))
        st = ds.times[ds.order]
        assert (np.diff(st) >= 0).all()
        assert sorted(ds.order.tolist()) == list(range(5))
        # Within each tie group, deaths come before censorings.
        assert ds.order.tolist() == [3, 1, 2, 0, 4]

    def test_standardized_invariants(self, rng):
        ds = hz.SurvivalDataset.from_arrays(
            rng.exponential(size=30) + 0.1, rng.random(30) < 0.6,
            rng.standard_normal((30, 4)) * 3 + 1)
        assert np.abs(ds.features.mean(axis=0)).max() < 1e-10
        assert np.abs(ds.features.var(axis=0, ddof=1) - 1).max() < 1e-8


class TestCsvIO:
    def test_roundtrip_and_standardization(self, tmp_path):
        path = tmp_path / "toy.csv"
        path.write_text("time,status,f1\n1,1,0\n2,0,1\n3,1,-1\n")
        ds = hz.load_dataset(path)
        assert ds.n == 3 and ds.p == 1
        assert abs(ds.features[:, 0].mean()) < 1e-12
        assert abs(ds.features[:, 0].var(ddof=1) - 1) < 1e-12

    def test_bad_status_cites_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        rows = ["1,1,0.5", "2,0,0.1", "3,1,0.2", "4,0,0.3", "5,2,0.4"]
        path.write_text("time,status,f1\n" + "\n".join(rows) + "\n")
        with pytest.raises(ParseError, match="row 5"):
            hz.load_dataset(path)

    def test_malformed_row_cites_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,status,f1\n1,1,0.5\n2,zero,0.1\n")
        with pytest.raises(ParseError, match="row 2"):
            hz.load_dataset(path)

    def test_negative_time_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,status,f1\n1,1,0.5\n-2,0,0.1\n3,1,1.5\n")
        with pytest.raises(DataError, match="row 2"):
            hz.load_dataset(path)

    def test_constant_column_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,status,f1\n1,1,1\n2,0,1\n3,1,1\n")
        with pytest.raises(StandardizationError):
            hz.load_dataset(path)

    def test_header_required(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("t,s,f1\n1,1,0.5\n")
        with pytest.raises(ParseError, match="header"):
            hz.load_dataset(path)


class TestBinaryIO:
    def test_roundtrip_exact(self, tmp_path, rng):
        n, p = 17, 5
        times = rng.exponential(size=n) + 0.05
        events = rng.random(n) < 0.5
        events[0] = True
        Z = rng.standard_normal((n, p))
        path = tmp_path / "data.hzb"
        hz.save_dataset(path, times, events, Z, fmt="bin")
        ds = hz.load_dataset(path, fmt="bin")
        ds_csv = hz.SurvivalDataset.from_arrays(times, events, Z)
        np.testing.assert_array_equal(ds.times, ds_csv.times)
        np.testing.assert_array_equal(ds.events, ds_csv.events)
        np.testing.assert_array_equal(ds.features, ds_csv.features)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "data.hzb"
        path.write_bytes(b"NOTMAGIC" + b"\0" * 24)
        with pytest.raises(ParseError, match="magic"):
            hz.load_dataset(path, fmt="bin")


class TestSweep:
    def collect(self, ds):
        steps = []
        hz.risk_set_sweep(ds, steps.append)
        return steps

    def test_two_subject_example(self, rng):
        ds = raw_dataset([1.0, 2.0], [1, 0], np.array([[1.0], [-1.0]]))
        steps = self.collect(ds)
        assert len(steps) == 2
        assert steps[0].interval == 1.0 and steps[0].at_risk == 2
        assert steps[0].deaths.tolist() == [0]
        assert steps[1].interval == 1.0 and steps[1].at_risk == 1
        assert steps[1].deaths.size == 0

    def test_tied_deaths_single_step(self):
        ds = raw_dataset([1.0, 1.0], [1, 1], np.array([[1.0], [-1.0]]))
        steps = self.collect(ds)
        assert len(steps) == 1
        assert steps[0].at_risk == 2
        assert sorted(steps[0].deaths.tolist()) == [0, 1]

    def test_time_at_risk_identity(self, rng):
        # sum over steps of S0 * interval equals sum_i min(t_i, tau)
        times = rng.integers(1, 20, size=50) / 2.0
        events = rng.random(50) < 0.5
        events[0] = True
        ds = hz.SurvivalDataset.from_arrays(times, events,
                                            rng.standard_normal((50, 2)))
        steps = self.collect(ds)
        lhs = sum(s.at_risk * s.interval for s in steps)
        assert lhs == pytest.approx(np.minimum(times, ds.tau).sum(), rel=1e-12)

    def test_everyone_leaves_once_deaths_match(self, rng):
        times = rng.integers(1, 10, size=30) / 2.0
        events = rng.random(30) < 0.5
        events[:2] = True
        ds = hz.SurvivalDataset.from_arrays(times, events,
                                            rng.standard_normal((30, 2)))
        steps = self.collect(ds)
        left = np.concatenate([s.leaving for s in steps])
        assert sorted(left.tolist()) == list(range(30))
        assert sum(s.deaths.size for s in steps) == ds.events.sum()

    def test_deterministic(self, rng):
        ds = hz.SurvivalDataset.from_arrays(
            rng.integers(1, 6, size=20) / 2.0,
            np.r_[np.ones(5, bool), rng.random(15) < 0.5],
            rng.standard_normal((20, 2)))
        a = self.collect(ds)
        b = self.collect(ds)
        assert len(a) == len(b)
        for s, t in zip(a, b):
            assert s.time == t.time and s.at_risk == t.at_risk
            np.testing.assert_array_equal(s.deaths, t.deaths)

    def test_beyond_tau_never_die(self, rng):
        times = np.array([1.0, 2.0, 5.0, 6.0])
        events = np.array([1, 1, 1, 1], bool)
        ds = hz.SurvivalDataset.from_arrays(times, events,
                                            rng.standard_normal((4, 1)), tau=3.0)
        steps = self.collect(ds)
        dead = np.concatenate([s.deaths for s in steps])
        assert set(dead.tolist()) == {0, 1}
