"""Tests for the synthetic system, contexts and VAR(1) forecast-error generator."""

import numpy as np
import pytest


def noon_context(forecast=0.5):
    from reservesets.data import Context

    return Context(0.0, -1.0, 0.0, 1.0, (forecast,) * 5, (forecast,) * 5, (forecast,) * 5)


def midnight_context(forecast=0.5):
    from reservesets.data import Context

    return Context(0.0, 1.0, 0.0, 1.0, (forecast,) * 5, (forecast,) * 5, (forecast,) * 5)


class TestStream:
    def test_deterministic(self):
        """Same seed and purpose give the same draws."""
        from reservesets.data import stream

        assert np.array_equal(stream(3, "prices").random(5), stream(3, "prices").random(5))

    def test_purposes_independent(self):
        """Different purposes under one seed give different sequences."""
        from reservesets.data import stream

        assert not np.array_equal(stream(3, "prices").random(5), stream(3, "contexts").random(5))

    def test_unknown_purpose(self):
        """Purposes are a closed set."""
        from reservesets.data import stream
        from reservesets.errors import BadParams

        with pytest.raises(BadParams, match="purpose"):
            stream(0, "weather")


class TestDefaultSystem:
    def test_zone_table(self, default_system):
        """Zone 1 carries 423 MW of load and 550 MW of capacity."""
        zone1 = [g for g in default_system.generators if g.zone == 1]

        assert default_system.zones[0].load_mw == 423.0
        assert sum(g.g_max for g in zone1) == pytest.approx(550.0)

    def test_totals(self, default_system):
        """4,242 MW of load against 5,500 MW of capacity across 54 units."""
        assert default_system.total_load == pytest.approx(4242.0)
        assert sum(g.g_max for g in default_system.generators) == pytest.approx(5500.0)
        assert default_system.n_generators == 54

    def test_price_ranges(self, default_system):
        """Energy offers lie in [15, 45] and reserve offers in [1, 8]."""
        energy = [g.energy_cost for g in default_system.generators]
        reserve = [g.reserve_cost for g in default_system.generators]

        assert 15.0 <= min(energy) and max(energy) <= 45.0
        assert 1.0 <= min(reserve) and max(reserve) <= 8.0
        assert all(g.g_min == 0.0 for g in default_system.generators)

    def test_deterministic_json(self):
        """The same seed gives byte-identical system JSON."""
        import json

        from reservesets.data import default_system

        a = json.dumps(default_system(9).to_json())
        b = json.dumps(default_system(9).to_json())
        assert a == b


class TestDefaultAllocation:
    def test_columns_sum_to_one(self):
        """Every uncertainty source is fully allocated."""
        from reservesets.data import default_allocation

        A = default_allocation(42)
        assert A.shape == (10, 15)
        assert np.allclose(A.sum(axis=0), 1.0, atol=1e-12)

    def test_every_zone_exposed(self):
        """No zone has an all-zero exposure row."""
        from reservesets.data import default_allocation

        assert np.all(np.abs(default_allocation(42)).sum(axis=1) > 0)

    def test_region_pairs(self):
        """Region r's sources land only on its two adjacent zones."""
        from reservesets.data import N_REGIONS, default_allocation

        A = default_allocation(1)
        for region in range(N_REGIONS):
            for k in range(3):
                col = A[:, k * N_REGIONS + region]
                assert set(np.flatnonzero(col)) == {2 * region, 2 * region + 1}


class TestContext:
    def test_off_circle_rejected(self):
        """Trig encodings must lie on the unit circle."""
        from reservesets.data import Context
        from reservesets.errors import BadParams

        with pytest.raises(BadParams, match="unit circle"):
            Context(0.5, 0.5, 0.0, 1.0, (0.5,) * 5, (0.5,) * 5, (0.5,) * 5)

    def test_region_count(self):
        """Each forecast carries five regions."""
        from reservesets.data import Context
        from reservesets.errors import BadParams

        with pytest.raises(BadParams, match="regions"):
            Context(0.0, 1.0, 0.0, 1.0, (0.5,) * 4, (0.5,) * 5, (0.5,) * 5)

    def test_feature_layout(self):
        """Features are the trig pairs then load, solar and wind per region."""
        from reservesets.data import Context

        ctx = noon_context()
        x = ctx.features()

        assert x.shape == (19,)
        assert Context.from_features(x) == ctx
        assert ctx.hour == 12
        assert midnight_context().hour == 0


class TestCovarianceModel:
    def test_true_shape_is_cholesky(self):
        """true_shape is the Cholesky factor of Sigma(ctx)."""
        from reservesets.data import GeneratorParams, sigma, true_shape
        from reservesets.geometry import cholesky_factor

        params = GeneratorParams()
        ctx = noon_context()
        assert np.allclose(true_shape(params, ctx).entries, cholesky_factor(sigma(params, ctx)).entries)

    def test_uncorrelated_model_gives_diagonal_shape(self):
        """Without correlation the true shape is diagonal."""
        from reservesets.data import GeneratorParams, true_shape

        L = true_shape(GeneratorParams(regional_corr=0.0, type_blend=0.0), noon_context())
        assert np.allclose(L.entries, np.diag(np.diag(L.entries)))

    def test_solar_negligible_at_night(self):
        """Night-time solar scales sit far below every other scale."""
        from reservesets.data import GeneratorParams, scales

        D = scales(GeneratorParams(), midnight_context().features())[0]
        solar, others = D[5:10], np.concatenate([D[:5], D[10:]])
        assert solar.max() <= 2e-3 * others.min()

    def test_nonstationary_rejected(self):
        """ar_coeff must stay below one."""
        from reservesets.data import GeneratorParams
        from reservesets.errors import BadParams

        with pytest.raises(BadParams, match="ar_coeff"):
            GeneratorParams(ar_coeff=1.0)

    def test_indefinite_correlation_rejected(self):
        """Negative blends that break positive definiteness are rejected."""
        from reservesets.data import GeneratorParams
        from reservesets.errors import BadParams

        with pytest.raises(BadParams, match="positive definite"):
            GeneratorParams(regional_corr=-0.9)

    def test_start_day_range(self):
        """start_day must be a day of the year."""
        from reservesets.data import GeneratorParams
        from reservesets.errors import BadParams

        with pytest.raises(BadParams, match="start_day"):
            GeneratorParams(start_day=365)


class TestGenerate:
    def test_minimum_length(self):
        """Fewer than 48 hours is refused."""
        from reservesets.data import GeneratorParams, generate
        from reservesets.errors import BadParams

        with pytest.raises(BadParams):
            generate(GeneratorParams(), 47)

    def test_deterministic(self, small_dataset):
        """Regenerating with the same parameters gives identical arrays."""
        from reservesets.data import generate

        again = generate(small_dataset.params, small_dataset.n_hours)
        assert np.array_equal(again.us, small_dataset.us)
        assert np.array_equal(again.contexts, small_dataset.contexts)

    def test_chronological_splits(self, small_dataset):
        """Each split ends before the next begins and together they cover every hour."""
        from reservesets.data import SPLIT_NAMES

        splits = [small_dataset.split(name) for name in SPLIT_NAMES]
        for a, b in zip(splits, splits[1:], strict=False):
            assert a.index.max() < b.index.min()
        assert sum(len(s) for s in splits) == small_dataset.n_hours
        assert [len(s) for s in splits] == [288, 96, 48, 48]

    def test_full_year_split_sizes(self):
        """35,040 hours split 21,024 / 7,008 / 3,504 / 3,504."""
        from reservesets.data import split_boundaries

        b = split_boundaries(35_040)
        assert (b[0], b[1] - b[0], b[2] - b[1], 35_040 - b[2]) == (21_024, 7_008, 3_504, 3_504)

    def test_bad_fractions(self):
        """Split fractions must be four positive numbers summing to one."""
        from reservesets.data import split_boundaries
        from reservesets.errors import BadParams

        with pytest.raises(BadParams):
            split_boundaries(100, (0.5, 0.5, 0.1, 0.1))

    def test_calibration_and_test_straddle_winter(self):
        """At 8,192 hours the calibration and test windows see the same load level."""
        from reservesets.data import GeneratorParams, contexts, split_boundaries

        X = contexts(GeneratorParams(), 8192)
        _, cal_start, test_start = split_boundaries(8192)
        load_cal = X[cal_start:test_start, 4:9].mean()
        load_test = X[test_start:, 4:9].mean()

        assert load_test == pytest.approx(load_cal, abs=0.02)

    def test_monte_carlo_covariance(self):
        """With ar_coeff = 0 and a fixed context the sample correlation matches the model."""
        from reservesets.data import GeneratorParams, constant_context_dataset, scales, sigma

        params = GeneratorParams(ar_coeff=0.0, seed=5)
        ctx = noon_context()
        ds = constant_context_dataset(params, 100_000, ctx)
        D = scales(params, ctx.features())[0]
        sample = np.cov(ds.us, rowvar=False) / np.outer(D, D)
        model = sigma(params, ctx) / np.outer(D, D)

        assert np.abs(sample - model).max() <= 5e-2

    def test_sample_iid(self):
        """sample_iid returns n independent context/realization pairs."""
        from reservesets.data import GeneratorParams, sample_iid

        X, us = sample_iid(GeneratorParams(ar_coeff=0.0), 64, np.random.default_rng(0))
        assert X.shape == (64, 19)
        assert us.shape == (64, 15)


class TestBaselineShapes:
    def test_sample_covariance_of_white_noise(self):
        """chol of the sample covariance of N(0, I) draws is close to I."""
        from reservesets.data import sample_covariance_shape

        us = np.random.default_rng(0).standard_normal((100_000, 3))
        assert np.abs(sample_covariance_shape(us).entries - np.eye(3)).max() <= 2e-2

    def test_independent_shape_is_diagonal(self, small_dataset):
        """The independent baseline has zero off-diagonals and the marginal scales."""
        from reservesets.data import independent_shape

        us = small_dataset.train.us
        L = independent_shape(us).entries

        assert np.all(L == np.diag(np.diag(L)))
        assert np.allclose(np.diag(L), us.std(axis=0), rtol=1e-6)

    def test_too_few_samples(self):
        """A covariance needs at least d + 1 samples."""
        from reservesets.data import sample_covariance_shape
        from reservesets.errors import BadParams

        with pytest.raises(BadParams, match="d\\+1"):
            sample_covariance_shape(np.ones((3, 3)))


class TestPersistence:
    def test_round_trip_is_bit_exact(self, tmp_path, small_dataset):
        """CSV plus sidecar reproduce every float exactly."""
        from reservesets.data import load_dataset, save_dataset

        paths = save_dataset(small_dataset, tmp_path)
        back = load_dataset(tmp_path)

        assert [p.name for p in paths] == ["dataset.csv", "dataset.json"]
        assert np.array_equal(back.us, small_dataset.us)
        assert np.array_equal(back.contexts, small_dataset.contexts)
        assert back.boundaries == small_dataset.boundaries
        assert back.params == small_dataset.params

    def test_mismatched_sidecar(self, tmp_path, small_dataset):
        """A CSV whose length disagrees with the sidecar is rejected."""
        import json

        from reservesets.data import load_dataset, save_dataset
        from reservesets.errors import BadParams

        save_dataset(small_dataset, tmp_path)
        sidecar = json.loads((tmp_path / "dataset.json").read_text())
        sidecar["n_hours"] += 1
        (tmp_path / "dataset.json").write_text(json.dumps(sidecar))

        with pytest.raises(BadParams, match="sidecar"):
            load_dataset(tmp_path)
