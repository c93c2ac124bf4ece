"""Dataset, standardization, splitting, CSV, and generator behavior."""

import numpy as np
import pytest

from afa.data import (
    CubeConfig,
    Dataset,
    DecisionEnvConfig,
    apply_standardization,
    decision_outcome_mean,
    generate_cube,
    generate_decision_env,
    generate_guide,
    load_csv,
    save_csv,
    split,
    standardize,
)
from afa.errors import DataError


class TestDataset:
    def test_basic_shape_and_classes(self):
        ds = Dataset([[1.0, 2.0], [3.0, 4.0]], [0, 1])
        assert ds.n_samples == 2 and ds.n_features == 2
        assert ds.n_classes == 2
        assert ds.feature_names == ("x0", "x1")

    def test_rejects_label_out_of_range(self):
        with pytest.raises(DataError):
            Dataset([[1.0], [2.0]], [0, 3], n_classes=2)

    def test_rejects_nan(self):
        with pytest.raises(DataError):
            Dataset([[np.nan], [1.0]], [0, 1])

    def test_rejects_empty(self):
        with pytest.raises(DataError):
            Dataset(np.zeros((0, 2)), [])

    def test_class_marginal(self):
        ds = Dataset([[0.0]] * 5, [0, 0, 0, 1, 1])
        np.testing.assert_allclose(ds.class_marginal(), [0.6, 0.4])

    def test_features_read_only(self):
        ds = Dataset([[1.0, 2.0]], [0])
        with pytest.raises(ValueError):
            ds.features[0, 0] = 9.0


class TestStandardize:
    def test_two_point_column(self):
        ds = Dataset([[1.0], [3.0]], [0, 1])
        out, params = standardize(ds)
        np.testing.assert_allclose(out.features[:, 0], [-1.0, 1.0])
        assert params.means[0] == 2.0 and params.scales[0] == 1.0

    def test_constant_column_scale_one(self):
        ds = Dataset([[5.0], [5.0], [5.0]], [0, 1, 0])
        out, params = standardize(ds)
        np.testing.assert_allclose(out.features[:, 0], [0.0, 0.0, 0.0])
        assert params.scales[0] == 1.0

    def test_moments_after_standardization(self):
        cube = generate_cube(CubeConfig(n=2000, sigma=0.3, seed=3))
        out, _ = standardize(cube)
        means = out.features.mean(axis=0)
        variances = out.features.var(axis=0)
        assert np.all(np.abs(means) < 1e-9)
        assert np.all(np.abs(variances - 1.0) < 1e-9)

    def test_invert_roundtrip(self):
        cube = generate_cube(CubeConfig(n=500, sigma=0.3, seed=4))
        out, params = standardize(cube)
        back = params.invert(out.features)
        np.testing.assert_allclose(back, cube.features, atol=1e-9)

    def test_original_untouched(self):
        ds = Dataset([[1.0], [3.0]], [0, 1])
        standardize(ds)
        np.testing.assert_array_equal(ds.features[:, 0], [1.0, 3.0])

    def test_apply_standardization_refuses_double(self):
        ds = Dataset([[1.0], [3.0]], [0, 1])
        out, params = standardize(ds)
        with pytest.raises(DataError):
            apply_standardization(out, params)


class TestSplit:
    def test_sizes_10_rows(self):
        ds = Dataset(np.arange(10).reshape(-1, 1).astype(float), np.zeros(10, int))
        train, val, test = split(ds, (0.8, 0.1, 0.1), seed=0)
        assert (train.n_samples, val.n_samples, test.n_samples) == (8, 1, 1)

    def test_deterministic(self):
        ds = Dataset(np.arange(30).reshape(-1, 1).astype(float), np.zeros(30, int))
        a = split(ds, (0.5, 0.25, 0.25), seed=7)
        b = split(ds, (0.5, 0.25, 0.25), seed=7)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.features, y.features)

    def test_disjoint_exhaustive(self):
        ds = Dataset(np.arange(23).reshape(-1, 1).astype(float), np.zeros(23, int))
        parts = split(ds, (0.6, 0.2, 0.2), seed=1)
        seen = np.sort(np.concatenate([p.features[:, 0] for p in parts]))
        np.testing.assert_array_equal(seen, np.arange(23, dtype=float))

    def test_empty_part_errors(self):
        ds = Dataset(np.arange(3).reshape(-1, 1).astype(float), np.zeros(3, int))
        with pytest.raises(DataError):
            split(ds, (0.9, 0.05, 0.05), seed=0)

    def test_fraction_validation(self):
        ds = Dataset(np.arange(10).reshape(-1, 1).astype(float), np.zeros(10, int))
        with pytest.raises(DataError):
            split(ds, (0.5, 0.2, 0.2), seed=0)


class TestCsv:
    def test_small_parse(self, tmp_path):
        path = tmp_path / "toy.csv"
        path.write_text("a,b,label\n1,2,0\n3,4,1\n5,6,0\n")
        ds = load_csv(path, "label")
        assert (ds.n_samples, ds.n_features, ds.n_classes) == (3, 2, 2)
        np.testing.assert_array_equal(ds.labels, [0, 1, 0])
        assert ds.feature_names == ("a", "b")

    def test_missing_cell_names_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,label\n1,2,0\n3,,1\n")
        with pytest.raises(DataError, match="missing value row 2"):
            load_csv(path, "label")

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,label\nx,0\n")
        with pytest.raises(DataError, match="non-numeric"):
            load_csv(path, "label")

    def test_unknown_label_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b\n1,2\n")
        with pytest.raises(DataError, match="unknown label column"):
            load_csv(path, "b2")

    def test_roundtrip_bitwise(self, tmp_path):
        cube = generate_cube(CubeConfig(n=50, sigma=0.3, seed=9))
        path = tmp_path / "cube.csv"
        save_csv(cube, path)
        back = load_csv(path, "label")
        np.testing.assert_array_equal(back.features, cube.features)
        np.testing.assert_array_equal(back.labels, cube.labels)


class TestCubeGenerator:
    def test_informative_positions_follow_label(self):
        # sigma=0 pins informative features exactly at their corner means
        cube = generate_cube(CubeConfig(n=400, sigma=0.0, seed=2))
        means = CubeConfig(n=1).means
        for i in range(cube.n_samples):
            k = cube.labels[i]
            np.testing.assert_array_equal(
                cube.features[i, k:k + 3], means[k]
            )

    def test_noise_features_in_unit_interval(self):
        cube = generate_cube(CubeConfig(n=1000, sigma=0.3, seed=6))
        tail = cube.features[:, 10:]
        assert np.all((tail >= 0.0) & (tail <= 1.0))

    def test_each_row_has_three_informative_positions(self):
        cube = generate_cube(CubeConfig(n=1000, sigma=0.3, seed=6))
        outside = (cube.features < 0.0) | (cube.features > 1.0)
        for i in range(cube.n_samples):
            k = cube.labels[i]
            informative = {k, k + 1, k + 2}
            hit = set(np.flatnonzero(outside[i]).tolist())
            assert hit <= informative

    def test_monte_carlo_moments(self):
        cube = generate_cube(CubeConfig(n=100_000, sigma=0.3, seed=13))
        means = CubeConfig(n=1).means
        for k in range(8):
            rows = cube.labels == k
            m = int(rows.sum())
            sample_mean = cube.features[rows, k].mean()
            assert abs(sample_mean - means[k, 0]) < 4 * 0.3 / np.sqrt(m)

    def test_deterministic_given_seed(self):
        a = generate_cube(CubeConfig(n=100, sigma=0.3, seed=21))
        b = generate_cube(CubeConfig(n=100, sigma=0.3, seed=21))
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.labels, b.labels)


class TestGuideGenerator:
    def test_label_rule_recomputes(self):
        ds = generate_guide(5000, d=11, seed=3)
        guide = ds.features[:, 10]
        region = np.minimum((guide * 10).astype(int), 9)
        expect = (ds.features[np.arange(5000), region] > 0.5).astype(int)
        np.testing.assert_array_equal(ds.labels, expect)

    def test_marginal_near_half(self):
        ds = generate_guide(20000, d=11, seed=4)
        assert abs(ds.labels.mean() - 0.5) < 0.02

    def test_two_features_determine_label(self):
        # zero Bayes error: the guide plus its indicated feature decide y
        ds = generate_guide(2000, d=6, seed=5)
        guide = ds.features[:, 5]
        region = np.minimum((guide * 5).astype(int), 4)
        decided = (ds.features[np.arange(2000), region] > 0.5).astype(int)
        assert np.array_equal(decided, ds.labels)

    def test_d_validation(self):
        with pytest.raises(DataError):
            generate_guide(10, d=2, seed=0)


class TestDecisionEnv:
    def test_low_x0_mean_is_one(self):
        X = np.array([[0.1, -1.0, 0.5, 0.2]])
        np.testing.assert_allclose(decision_outcome_mean(X, np.array([1])), [1.0])

    def test_action_zero_mean_is_zero(self):
        rng = np.random.default_rng(0)
        X = np.column_stack([
            rng.random(100), 2 * rng.integers(0, 2, 100) - 1,
            rng.standard_normal(100), rng.standard_normal(100),
        ])
        np.testing.assert_array_equal(decision_outcome_mean(X, np.zeros(100)), np.zeros(100))

    def test_feature_marginals(self):
        data = generate_decision_env(DecisionEnvConfig(n=50_000, seed=8,
                                                       randomized_treatment=True))
        x = data.features
        assert np.all((x[:, 0] > 0) & (x[:, 0] < 1))
        assert set(np.unique(x[:, 1]).tolist()) == {-1.0, 1.0}
        corr = np.corrcoef(x[:, 2], x[:, 3])[0, 1]
        assert abs(corr - 0.3) < 0.02

    def test_optimal_action_matches_bracket(self):
        data = generate_decision_env(DecisionEnvConfig(n=5000, seed=9,
                                                       randomized_treatment=True))
        gt = data.ground_truth
        np.testing.assert_array_equal(
            gt.optimal_action, (gt.mean_outcomes[:, 1] > 0).astype(int)
        )
        np.testing.assert_array_equal(gt.mean_outcomes[:, 0], np.zeros(5000))

    def test_sufficient_set_mean_size(self):
        data = generate_decision_env(DecisionEnvConfig(n=1_000_000, seed=10,
                                                       randomized_treatment=True))
        mean_size = data.ground_truth.sufficient_mask.sum(axis=1).mean()
        assert abs(mean_size - 2.25) < 0.01

    def test_probit_treatment_depends_on_features(self):
        data = generate_decision_env(DecisionEnvConfig(n=20_000, seed=11))
        x = data.features
        high = data.action[x[:, 1] > 0].mean()
        low = data.action[x[:, 1] < 0].mean()
        assert high > low + 0.1

    def test_deterministic(self):
        a = generate_decision_env(DecisionEnvConfig(n=100, seed=12))
        b = generate_decision_env(DecisionEnvConfig(n=100, seed=12))
        np.testing.assert_array_equal(a.features, b.features)
        np.testing.assert_array_equal(a.outcome, b.outcome)
