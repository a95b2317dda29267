import datetime as dt

import numpy as np
import pytest

from surfvae.latent import (
    DegenerateMatchError,
    EncodedCorpus,
    EncodedEntry,
    encode_corpus,
    export_correlations_csv,
    export_encodings_csv,
    export_sweep_csv,
    latent_correlations,
    match_factors,
    scenario_sweep,
    surface_statistics,
)
from surfvae.surfaces import CANONICAL_GRID, Corpus, GridSpec, SurfaceGrid, SurfaceRecord, ValidationError
from surfvae.synth import FactorState, factor_to_surface
from surfvae.vae import decode


def month_entries(mu_rows, d=3):
    return tuple(
        EncodedEntry(dt.date(2020, 1, 1) + dt.timedelta(days=i), "X",
                     np.asarray(row, dtype=float), np.zeros(d), False)
        for i, row in enumerate(mu_rows)
    )


class TestEncodeCorpus:
    def test_one_record_one_entry(self, tiny_model, tiny_corpus):
        sub = Corpus(tiny_corpus.records[:1], split_date=tiny_corpus.split_date)
        enc = encode_corpus(tiny_model, sub)
        assert len(enc.entries) == 1
        assert enc.entries[0].symbol == tiny_corpus.records[0].symbol

    def test_identical_surfaces_identical_codes(self, tiny_model):
        vols = np.full((8, 7), 0.25)
        recs = (
            SurfaceRecord(dt.date(2020, 1, 1), "A", SurfaceGrid(CANONICAL_GRID, vols)),
            SurfaceRecord(dt.date(2020, 1, 2), "A", SurfaceGrid(CANONICAL_GRID, vols)),
        )
        enc = encode_corpus(tiny_model, Corpus(recs))
        assert np.array_equal(enc.entries[0].mu, enc.entries[1].mu)

    def test_grid_mismatch_rejected(self, tiny_model):
        small = GridSpec((3, 6), (0.9, 1.0))
        rec = SurfaceRecord(dt.date(2020, 1, 1), "A", SurfaceGrid(small, np.full((2, 2), 0.2)))
        with pytest.raises(ValidationError):
            encode_corpus(tiny_model, Corpus((rec,)))

    def test_stress_entries_sit_on_high_vol_side_of_level_latent(
        self, pca_model, desk_encoded
    ):
        match = match_factors(pca_model)
        k = match.latent_for_role["level"]
        sign = match.sign_for_role["level"]
        stress_mu, calm_mu = desk_encoded.stress_split()
        assert stress_mu.shape[0] > 0
        assert sign * stress_mu[:, k].mean() > sign * calm_mu[:, k].mean()


class TestLatentCorrelations:
    def test_perfectly_dependent_columns(self):
        mu = np.array([[1.0, 2.0, 0.3], [2.0, 4.0, -0.5], [3.0, 6.0, 0.1], [0.5, 1.0, 0.9]])
        corr = latent_correlations(mu)
        assert corr[0, 1] == pytest.approx(1.0)
        assert corr[1, 0] == pytest.approx(1.0)
        assert np.all(np.diag(corr) == 1.0)

    def test_independent_columns_nearly_uncorrelated(self):
        rng = np.random.default_rng(11)
        mu = rng.standard_normal((10_000, 3))
        corr = latent_correlations(mu)
        assert np.max(np.abs(corr - np.eye(3))) < 0.05

    def test_zero_variance_dimension_warns_and_zeroes(self):
        mu = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
        with pytest.warns(UserWarning, match="zero-variance"):
            corr = latent_correlations(mu)
        assert corr[0, 1] == 0.0

    def test_needs_three_entries(self):
        with pytest.raises(ValidationError):
            latent_correlations(np.ones((2, 3)))

    def test_permutation_equivariance(self, rng):
        mu = rng.standard_normal((500, 3)) @ rng.standard_normal((3, 3))
        perm = [2, 0, 1]
        base = latent_correlations(mu)
        permuted = latent_correlations(mu[:, perm])
        assert permuted == pytest.approx(base[np.ix_(perm, perm)], abs=1e-12)

    def test_accepts_encoded_corpus(self):
        enc = EncodedCorpus(month_entries(np.random.default_rng(0).normal(size=(5, 3))), 3)
        corr = latent_correlations(enc)
        assert corr.shape == (3, 3)


def synth_decode_fn(wiring=(0, 1, 2), signs=(1, 1, 1), base=(-1.5, 0.0, 0.0)):
    """Decoder stand-in wired straight to the surface factor map."""

    def fn(z):
        factors = list(base)
        for role_idx, (latent_idx, sign) in enumerate(zip(wiring, signs)):
            factors[role_idx] = base[role_idx] + sign * z[latent_idx]
        return factor_to_surface(FactorState(*factors), CANONICAL_GRID)

    return fn


class TestMatchFactors:
    def test_identity_wiring_gives_identity_permutation(self):
        match = match_factors(decode_fn=synth_decode_fn(), latent_dim=3, span=0.5)
        assert match.latent_for_role == {"level": 0, "skew": 1, "term": 2}
        assert match.sign_for_role == {"level": 1, "skew": 1, "term": 1}

    def test_swapped_wiring_gives_transposition(self):
        match = match_factors(decode_fn=synth_decode_fn(wiring=(1, 0, 2)), latent_dim=3, span=0.5)
        assert match.latent_for_role == {"level": 1, "skew": 0, "term": 2}

    def test_negated_latent_flips_sign(self):
        match = match_factors(
            decode_fn=synth_decode_fn(signs=(-1, 1, 1)), latent_dim=3, span=0.5
        )
        assert match.sign_for_role["level"] == -1

    def test_degenerate_assignment_carries_scores(self):
        def two_latents_same_stat(z):
            return factor_to_surface(FactorState(-1.5 + z[0] + z[1], 0.3 * z[2], 0.0))

        with pytest.raises(DegenerateMatchError) as exc:
            match_factors(decode_fn=two_latents_same_stat, latent_dim=3, span=0.5)
        assert exc.value.scores.shape == (3, 3)

    def test_needs_three_latents(self, tiny_model):
        with pytest.raises(ValidationError):
            match_factors(decode_fn=lambda z: None, latent_dim=2)

    def test_trained_model_assignment_is_dominant(self, pca_model):
        match = match_factors(pca_model)
        assert sorted(match.latent_for_role.values()) == [0, 1, 2]
        assert match.dominance_ratio >= 2.0


class TestScenarioSweep:
    def test_singleton_equals_decode(self, tiny_model):
        base = np.array([0.1, -0.2, 0.4])
        out = scenario_sweep(tiny_model, base, 1, [base[1]])
        assert len(out) == 1
        assert np.array_equal(out[0].vols, decode(tiny_model, base).vols)

    def test_empty_values(self, tiny_model):
        assert scenario_sweep(tiny_model, np.zeros(3), 0, []) == []

    def test_output_count_matches_input(self, tiny_model):
        out = scenario_sweep(tiny_model, np.zeros(3), 2, np.linspace(-1, 1, 7))
        assert len(out) == 7

    def test_dim_bounds_checked(self, tiny_model):
        with pytest.raises(ValidationError):
            scenario_sweep(tiny_model, np.zeros(3), 3, [0.0])

    def test_level_role_sweep_is_monotone_on_trained_model(self, pca_model, desk_encoded):
        match = match_factors(pca_model)
        k = match.latent_for_role["level"]
        scale = desk_encoded.mu_matrix().std(axis=0)[k]
        values = np.linspace(-2 * scale, 2 * scale, 9)
        means = [s.mean() for s in scenario_sweep(pca_model, np.zeros(3), k, values)]
        diffs = np.diff(means) * match.sign_for_role["level"]
        assert np.all(diffs > 0)


class TestSurfaceStatistics:
    def test_level_statistic_is_grid_mean(self):
        s = factor_to_surface(FactorState(-1.5, 0.2, 0.1))
        assert surface_statistics(s)[0] == pytest.approx(s.mean())

    def test_flat_surface_has_zero_slopes(self):
        s = factor_to_surface(FactorState(-1.5, 0.0, 0.0))
        stats = surface_statistics(s)
        assert stats[1] == pytest.approx(0.0, abs=1e-12)
        assert stats[2] == pytest.approx(0.0, abs=1e-12)


class TestExports:
    def test_encodings_csv(self, tmp_path, tiny_model, tiny_corpus):
        enc = encode_corpus(tiny_model, tiny_corpus)
        path = tmp_path / "enc.csv"
        export_encodings_csv(enc, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "date,symbol,stress,mu_1,mu_2,mu_3,log_sigma_1,log_sigma_2,log_sigma_3"
        assert len(lines) == len(enc.entries) + 1

    def test_correlations_csv(self, tmp_path):
        path = tmp_path / "corr.csv"
        export_correlations_csv(np.eye(3), path)
        assert len(path.read_text().splitlines()) == 4

    def test_sweep_csv_round_trips_as_corpus(self, tmp_path, tiny_model):
        from surfvae.surfaces import load_corpus

        values = [-1.0, 0.0, 1.0]
        surfaces = scenario_sweep(tiny_model, np.zeros(3), 0, values)
        path = tmp_path / "sweep.csv"
        export_sweep_csv(tiny_model.grid, 0, values, surfaces, path)
        loaded = load_corpus(path)
        assert len(loaded) == 3
