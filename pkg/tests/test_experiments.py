import json
import math

import numpy as np
import pytest

from conformal_stability import Dataset
from conformal_stability.conformal import PredictionSet
from conformal_stability.core import derive_stream
from conformal_stability.distributions import (
    BoundedUniform,
    LinearGaussian,
    SineMixture,
    make_distribution,
)
from conformal_stability.experiments import (
    ExperimentConfig,
    empirical_miscoverage,
    estimate_miscoverage,
    fit_rule,
    miscoverage_distribution,
    run_figure1,
    summarize,
    write_coverage,
)
from conformal_stability.io import fmt, read_dataset_csv, write_dataset_csv
from conformal_stability.regressors import RidgeRegressor


class TestSineMixture:
    def test_zero_signal_at_origin(self):
        dist = SineMixture(1)
        assert dist.signal(np.zeros((1, 1)))[0] == 0.0
        eps = dist.noise(10_000, derive_stream(0, 0))
        assert np.all(np.abs(eps) <= 1)

    def test_constants(self):
        dist = SineMixture(40)
        assert dist.B_dens == pytest.approx(3.5)
        assert dist.B_Y == pytest.approx(1 + sum(1 / j for j in range(1, 41)))
        assert dist.B_X == pytest.approx(math.sqrt(40))

    def test_noise_density_peak(self):
        # mixture density on [-0.1, 0.1]: (1/3)(1/2) + (2/3)(1/0.2)
        eps = SineMixture(1).noise(200_000, derive_stream(1, 0))
        inner = np.mean(np.abs(eps) <= 0.05) / 0.1
        assert inner == pytest.approx(3.5, rel=0.03)

    def test_noise_mean_zero(self):
        eps = SineMixture(3).noise(100_000, derive_stream(2, 0))
        assert abs(eps.mean()) <= 3 * eps.std() / math.sqrt(len(eps))

    def test_samples_respect_bounds(self):
        dist = SineMixture(8)
        data = dist.sample(5000, derive_stream(3, 0))
        assert np.all(np.abs(data.y) <= dist.B_Y)
        assert np.all(np.linalg.norm(data.X, axis=1) <= dist.B_X)
        assert data.X.min() >= 0 and data.X.max() <= 1

    def test_same_stream_same_sample(self):
        a = SineMixture(4).sample(50, derive_stream(7, 3))
        b = SineMixture(4).sample(50, derive_stream(7, 3))
        assert np.array_equal(a.X, b.X) and np.array_equal(a.y, b.y)


class TestLinearGaussian:
    def test_noiseless_is_linear(self):
        dist = LinearGaussian(d=1, noise_sd=0.0)
        data = dist.sample(100, derive_stream(0, 0))
        assert np.allclose(data.y, data.X[:, 0] * dist.w[0], atol=1e-12)

    def test_residual_variance(self):
        dist = LinearGaussian(d=4, noise_sd=0.7)
        data = dist.sample(20_000, derive_stream(1, 0))
        r2 = (data.y - data.X @ dist.w) ** 2
        assert abs(r2.mean() - 0.49) <= 3 * r2.std() / math.sqrt(len(r2))

    def test_empty(self):
        data = LinearGaussian(d=3).sample(0, derive_stream(0, 0))
        assert data.n == 0 and data.d == 3

    def test_w_fixed_across_samples(self):
        dist = LinearGaussian(d=5, w_seed=4)
        assert np.array_equal(dist.w, LinearGaussian(d=5, w_seed=4).w)


class TestBoundedUniform:
    def test_bounds(self):
        dist = BoundedUniform(3)
        data = dist.sample(5000, derive_stream(0, 0))
        assert data.y.min() >= 0 and data.y.max() <= dist.B_Y


class TestMakeDistribution:
    def test_parse(self):
        assert make_distribution("sine:d=3") == SineMixture(3)
        assert make_distribution("linear:d=2,noise_sd=0.5") == LinearGaussian(2, 0.5)
        assert make_distribution("bounded") == BoundedUniform()

    @pytest.mark.parametrize("spec", ["cauchy", "sine:q=3", "sine:d"])
    def test_rejects(self, spec):
        with pytest.raises(ValueError):
            make_distribution(spec)


class TestMiscoverage:
    def test_all_covering_rule(self):
        # alpha so small that every quantile overflows
        s = estimate_miscoverage("jplus", RidgeRegressor(1.0), SineMixture(2), 0.001, 0.0, 10, 200, derive_stream(0, 0))
        assert s.alpha_hat == 0.0

    def test_empty_rule(self):
        assert empirical_miscoverage([PredictionSet.empty()] * 3, [0.0, 1.0, 2.0]) == 1.0

    def test_all_covering_distribution(self):
        cfg = ExperimentConfig(method="split", alg="ridge:lam=1", dist="sine:d=2", alpha=0.01, n=20, trials=5, n_test=50)
        result = miscoverage_distribution(cfg)
        assert np.all(result.alpha_hats == 0)

    def test_summary_mean_exact(self):
        a = [0.1, 0.25, 0.3, 0.05]
        s = summarize(a, [0.2])
        assert s["mean"] == sum(a) / 4
        assert s["tail_freqs"] == {"0.2": 0.5}

    def test_trial_order_and_determinism(self):
        cfg = ExperimentConfig(method="jplus", alg="knn:k=3", dist="sine:d=2", n=15, trials=6, n_test=100, seed=3)
        a, b = miscoverage_distribution(cfg), miscoverage_distribution(cfg)
        assert [s.trial for s in a.samples] == list(range(6))
        assert np.array_equal(a.alpha_hats, b.alpha_hats)

    def test_hoeffding_concentration(self):
        # fixed D_n, 50 independent test sets
        dist, n_test = SineMixture(3), 500
        train = dist.sample(60, derive_stream(0, 0))
        covers = fit_rule("split", train, RidgeRegressor(1.0), 0.2)
        hats = []
        for r in range(50):
            test = dist.sample(n_test, derive_stream(1, r))
            hats.append(1 - covers(test.X, test.y).mean())
        abar = float(np.mean(hats))
        assert np.std(hats, ddof=1) <= 2 * math.sqrt(abar * (1 - abar) / n_test) * 1.5

    @pytest.mark.parametrize("method", ["split", "jplus", "full_cp"])
    def test_inflation_monotone_per_trial(self, method):
        common = dict(method=method, alg="ridge:lam=1", dist="sine:d=2", n=12, trials=4, n_test=40, seed=5, grid_count=101)
        a = miscoverage_distribution(ExperimentConfig(gamma=0.0, **common)).alpha_hats
        b = miscoverage_distribution(ExperimentConfig(gamma=0.2, **common)).alpha_hats
        assert np.all(b <= a)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(method="cqr")
        with pytest.raises(ValueError):
            ExperimentConfig(alg="svm")
        with pytest.raises(ValueError):
            ExperimentConfig.from_mapping({"bogus": 1})

    def test_compare_bound_fields(self):
        cfg = ExperimentConfig(
            method="jplus", alg="ridge:lam=1", dist="sine:d=3", alpha=0.2, gamma=0.2, n=20, m=5,
            trials=5, n_test=100, stability_trials=30, compare_bound=True,
        )
        result = miscoverage_distribution(cfg)
        s = result.summary
        assert s["bound_threshold"] == result.bound.threshold
        assert s["bound_tail_freq"] == np.mean(result.alpha_hats >= s["bound_threshold"])
        assert result.beta_hat >= 0


class TestOutputFiles:
    def test_fmt_round_trip(self, rng):
        for v in rng.normal(size=200) * 10.0 ** rng.integers(-30, 30, size=200):
            assert float(fmt(v)) == v
        assert fmt(math.inf) == "inf" and fmt(None) == ""

    def test_dataset_csv_round_trip(self, tmp_path, rng):
        data = Dataset(rng.normal(size=(7, 3)), rng.normal(size=7))
        path = tmp_path / "d.csv"
        write_dataset_csv(str(path), data)
        assert path.read_text().splitlines()[0] == "x_1,x_2,x_3,y"
        back = read_dataset_csv(str(path))
        assert np.array_equal(back.X, data.X) and np.array_equal(back.y, data.y)

    def test_dataset_csv_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(ValueError):
            read_dataset_csv(str(path))

    def test_coverage_files(self, tmp_path):
        cfg = ExperimentConfig(method="split", alg="ridge:lam=1", dist="sine:d=2", n=20, trials=3, n_test=50, tail_thresholds=(0.3,))
        csv_path, json_path = write_coverage(miscoverage_distribution(cfg), str(tmp_path / "cov.csv"))
        lines = open(csv_path).read().splitlines()
        assert lines[0] == "trial,alpha_hat" and len(lines) == 4
        summary = json.load(open(json_path))
        assert {"mean", "q50", "q90", "q99", "tail_freqs", "bound_threshold", "bound_failure_prob"} <= set(summary)

    def test_figure1_files(self, tmp_path):
        run_figure1(n=30, d=3, trials=5, m_max=3, algorithms=["knn", "ridge"], outdir=str(tmp_path))
        rows = (tmp_path / "figure1_knn.csv").read_text().splitlines()
        assert rows[0].startswith("variant,n,m,trials,beta_hat,stderr,lemma_bound,theory_bound,theory_bound_kind")
        assert len(rows) == 4 and rows[1].startswith("out/add_remove,30,1,5,")


class TestFigure1Ordering:
    def test_knn_tightest_against_composite_bound(self):
        curves = run_figure1(n=100, d=40, trials=150, m_max=10, seed=9, algorithms=["knn", "ridge", "tree"])
        ratio = {k: c.estimates[-1].mean / c.lemma[-1] for k, c in curves.items()}
        assert ratio["knn"] > ratio["tree"] and ratio["knn"] > ratio["ridge"]
        assert ratio["tree"] <= 0.8 and ratio["ridge"] <= 0.8

    @pytest.mark.slow
    def test_full_scale_tree_and_forest_loose(self):
        # several hours on one core
        curves = run_figure1(n=500, d=40, trials=1000, m_max=25, seed=0, algorithms=["tree", "subbag"])
        for c in curves.values():
            assert c.estimates[-1].mean <= 0.8 * c.lemma[-1]
