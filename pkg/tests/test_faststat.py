import json

import numpy as np
import pytest

import hazscreen as hz
from hazscreen.errors import NumericalError

from conftest import naive_statistics, random_instance, raw_dataset


class TestHandExamples:
    def test_two_subject_instance(self):
        ds = raw_dataset([1.0, 2.0], [1, 0], np.array([[1.0], [-1.0]]), tau=2.0)
        fs = hz.compute_fast(ds)
        assert fs.d[0] == pytest.approx(0.5, abs=1e-15)
        assert fs.d_diag[0] == pytest.approx(1.0, abs=1e-15)
        assert fs.b_diag[0] == pytest.approx(0.5, abs=1e-15)

    def test_scaled_variants_on_hand_instance(self):
        ds = raw_dataset([1.0, 2.0], [1, 0], np.array([[1.0], [-1.0]]), tau=2.0)
        fs = hz.compute_fast(ds)
        assert hz.scaled_variant(fs, "ly")[0] == pytest.approx(0.5)
        assert hz.scaled_variant(fs, "z")[0] == pytest.approx(0.5 / np.sqrt(0.5))
        assert hz.scaled_variant(fs, "loss")[0] == pytest.approx(0.5 / np.sqrt(1.0))
        # literal form reuses the death-time scale, coinciding with z
        np.testing.assert_allclose(hz.scaled_variant(fs, "loss", literal_loss=True),
                                   hz.scaled_variant(fs, "z"))

    def test_zero_aberration_single_death_at_mean(self):
        # One death at the earliest time whose feature equals the risk-set mean.
        Z = np.array([[0.0], [1.0], [-1.0]])
        ds = raw_dataset([1.0, 2.0, 3.0], [1, 0, 0], Z)
        fs = hz.compute_fast(ds)
        assert fs.d[0] == pytest.approx(0.0, abs=1e-15)


class TestBruteForce:
    @pytest.mark.parametrize("seed", range(12))
    def test_matches_naive(self, seed):
        rng = np.random.default_rng(1000 + seed)
        times, events, Z, tau = random_instance(rng, tau_override=seed % 3 == 0)
        ds = raw_dataset(times, events, Z, tau=tau)
        fs = hz.compute_fast(ds)
        d, D, B = naive_statistics(times, events, Z, tau)
        np.testing.assert_allclose(fs.d, d, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(fs.d_diag, np.diag(D), rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(fs.b_diag, np.diag(B), rtol=1e-10, atol=1e-12)

    def test_random_n40_p5(self):
        rng = np.random.default_rng(42)
        Z = rng.standard_normal((40, 5))
        times = rng.integers(1, 15, size=40) / 2.0
        events = rng.random(40) < 0.6
        events[0] = True
        ds = raw_dataset(times, events, Z)
        fs = hz.compute_fast(ds)
        d, D, B = naive_statistics(times, events, Z, ds.tau)
        np.testing.assert_allclose(fs.d, d, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(fs.d_diag, np.diag(D), rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(fs.b_diag, np.diag(B), rtol=1e-10, atol=1e-12)


class TestInvariances:
    def test_permutation_invariance(self, rng):
        times, events, Z, tau = random_instance(rng)
        ds = raw_dataset(times, events, Z, tau=tau)
        fs = hz.compute_fast(ds)
        perm = rng.permutation(len(times))
        ds2 = raw_dataset(times[perm], events[perm], Z[perm], tau=tau)
        fs2 = hz.compute_fast(ds2)
        np.testing.assert_allclose(fs2.d, fs.d, rtol=1e-12)
        np.testing.assert_allclose(fs2.d_diag, fs.d_diag, rtol=1e-12)
        np.testing.assert_allclose(fs2.b_diag, fs.b_diag, rtol=1e-12)

    def test_sign_equivariance(self, rng):
        times, events, Z, tau = random_instance(rng, p_max=4)
        ds = raw_dataset(times, events, Z, tau=tau)
        fs = hz.compute_fast(ds)
        Z2 = Z.copy()
        Z2[:, 0] *= -1
        fs2 = hz.compute_fast(raw_dataset(times, events, Z2, tau=tau))
        assert fs2.d[0] == pytest.approx(-fs.d[0], rel=1e-12)
        assert fs2.d_diag[0] == pytest.approx(fs.d_diag[0], rel=1e-12)
        assert fs2.b_diag[0] == pytest.approx(fs.b_diag[0], rel=1e-12)

    def test_threads_bitwise_identical(self, rng):
        times = rng.integers(1, 40, size=80) / 2.0
        events = rng.random(80) < 0.6
        events[0] = True
        Z = rng.standard_normal((80, 2500))
        ds = raw_dataset(times, events, Z)
        a = hz.compute_fast(ds, threads=1)
        b = hz.compute_fast(ds, threads=3)
        np.testing.assert_array_equal(a.d, b.d)
        np.testing.assert_array_equal(a.d_diag, b.d_diag)
        np.testing.assert_array_equal(a.b_diag, b.b_diag)

    def test_workspace_path_matches(self, rng):
        times, events, Z, tau = random_instance(rng)
        ds = raw_dataset(times, events, Z, tau=tau)
        ws = hz.SweepWorkspace.from_dataset(ds)
        a = hz.compute_fast(ds)
        b = hz.compute_fast(ds, workspace=ws)
        np.testing.assert_array_equal(a.d, b.d)
        np.testing.assert_array_equal(a.d_diag, b.d_diag)


class TestVariants:
    def test_common_scaling_preserves_ranking(self, rng):
        v = rng.standard_normal(50)
        for c in (0.1, 3.7, 1e6):
            np.testing.assert_array_equal(np.argsort(-np.abs(v)),
                                          np.argsort(-np.abs(c * v)))

    def test_zero_scale_names_feature(self):
        fs = hz.FastSummary(d=np.array([0.1, 0.2]),
                            d_diag=np.array([1.0, 0.0]),
                            b_diag=np.array([0.0, 1.0]), n=10, p=2)
        with pytest.raises(NumericalError, match="feature 0"):
            hz.scaled_variant(fs, "z")
        with pytest.raises(NumericalError, match="feature 1"):
            hz.scaled_variant(fs, "ly")

    def test_unknown_variant(self):
        fs = hz.FastSummary(d=np.ones(1), d_diag=np.ones(1),
                            b_diag=np.ones(1), n=5, p=1)
        with pytest.raises(ValueError):
            hz.scaled_variant(fs, "nope")

    def test_exports(self, tmp_path, rng):
        ds = raw_dataset(*random_instance(rng)[:3])
        fs = hz.compute_fast(ds)
        csv_path = tmp_path / "fast.csv"
        fs.to_csv(csv_path)
        header = csv_path.read_text().splitlines()[0]
        assert header == "feature,d,D_jj,B_jj,z,ly,loss"
        payload = json.loads(fs.to_json())
        assert payload["p"] == fs.p and len(payload["rows"]) == fs.p


def test_full_system_recovers_known_coefficients():
    # Additive-hazard data with bounded standardized features; the solved
    # 3-variable system must land within 3 sandwich SEs of the truth.
    rng = np.random.default_rng(7)
    n = 5000
    raw = rng.uniform(-np.sqrt(3), np.sqrt(3), size=(n, 3))
    Z = hz.standardize_columns(raw)[0]
    alpha = np.array([0.25, -0.2, 0.15])
    lam0 = 1.5
    rate = lam0 + Z @ alpha
    assert (rate > 0).all()
    T = rng.standard_exponential(n) / rate
    C = rng.standard_exponential(n) / 0.5
    ds = hz.SurvivalDataset.from_arrays(np.minimum(T, C), T <= C, Z,
                                        standardize=False)
    sm = hz.solve(hz.build_subset(ds, [0, 1, 2]))
    err = np.abs(sm.beta - alpha)
    assert (err <= 3 * sm.se).all()
