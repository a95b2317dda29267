"""Acceptance gate: every release criterion, one printed verdict per line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines;
the canonical desk-scale corpus and models come from conftest fixtures
(corpus seed 0, train seed 1).
"""
import math

import numpy as np
import pytest

from surfvae.evaluation import satisfaction, threshold_for
from surfvae.extrapolate import ExtrapolationOptions, PartialSurface, evaluate_extrapolation, extrapolate
from surfvae.latent import encode_corpus, latent_correlations, match_factors
from surfvae.neural import finite_difference_gradients, max_relative_error
from surfvae.surfaces import GridSpec, canonical_known_mask
from surfvae.vae import batch_loss_and_grads, build_model, decode, encode, loss_cov, loss_kl

from surfvae.cli import main as cli_main


def verdict(num: int, ok: bool, detail: str):
    print(f"ACCEPTANCE {num}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


class TestCriterion1LossFormulas:
    def test_loss_formula_exactness(self):
        kl = loss_kl(np.array([1.0]), np.array([0.0]))
        cov = loss_cov(np.array([[1.0, 2.0], [3.0, 4.0]]))
        ok = abs(kl - 0.5) <= 1e-12 and abs(cov - 1.0) <= 1e-12
        verdict(1, ok, f"loss_kl(mu=1,sigma=1)={kl!r} (want 0.5), loss_cov([[1,2],[3,4]])={cov!r} (want 1.0), tol 1e-12")


class TestCriterion2Gradients:
    def test_full_loss_gradients_finite_differences(self):
        grid = GridSpec((3, 6, 9), (0.9, 1.0, 1.1))
        worst = 0.0
        n_configs = 20
        for cfg in range(n_configs):
            rng = np.random.default_rng(1000 + cfg)
            model = build_model(grid=grid, latent_dim=2, seed=cfg,
                                lambda_kl=1e-3, lambda_cov=0.1, input_scale=1.0)
            for p in model.parameters():
                p += rng.normal(0, 0.2, size=p.shape)
            X = rng.uniform(0.1, 0.4, size=(4, grid.size))
            eps = rng.standard_normal((4, 2))  # frozen draws
            _, grads = batch_loss_and_grads(model, X, eps)

            def f():
                return batch_loss_and_grads(model, X, eps)[0].total

            numeric = finite_difference_gradients(f, model.parameters(), h=1e-4)
            worst = max(worst, max_relative_error(grads, numeric, floor=1e-7))
        verdict(2, worst <= 1e-4,
                f"worst relative gradient error {worst:.2e} over {n_configs} random configs (tol 1e-4)")


class TestCriterion3Disentanglement:
    def test_heldout_correlations_and_factor_match(self, pca_model, desk_corpus, desk_encoded):
        test_mu = np.stack(
            [e.mu for e in desk_encoded.entries if e.date >= desk_corpus.split_date]
        )
        corr = latent_correlations(test_mu)
        off = float(np.max(np.abs(corr - np.eye(3))))
        match = match_factors(pca_model)
        valid_perm = sorted(match.latent_for_role.values()) == [0, 1, 2]
        ok = off <= 0.2 and valid_perm and match.dominance_ratio >= 2.0
        verdict(3, ok,
                f"held-out max |off-diagonal rho|={off:.3f} (tol 0.2), "
                f"roles={match.latent_for_role}, dominance={match.dominance_ratio:.2f} (need >= 2)")


class TestCriterion4CovarianceVsClassic:
    def test_pca_covariance_under_half_of_classic(self, pca_history, classic_history):
        pca_cov = pca_history[-1].cov
        classic_cov = classic_history[-1].cov
        ok = pca_cov < 0.5 * classic_cov
        verdict(4, ok,
                f"end-of-training epoch-mean covariance: pca={pca_cov:.5f}, "
                f"classic={classic_cov:.5f} (need pca < 50% of classic)")


class TestCriterion5Reconstruction:
    def test_heldout_satisfaction(self, pca_model, desk_corpus):
        rates = []
        for rec in desk_corpus.test():
            pred = decode(pca_model, encode(pca_model, rec.surface).mu)
            rates.append(satisfaction(rec.surface, pred).satisfaction_rate)
        rate = float(np.mean(rates))
        verdict(5, rate >= 0.90, f"held-out encode->decode satisfaction {rate:.4f} (need >= 0.90)")


class TestCriterion6Extrapolation:
    def test_planted_recovery_100_cases(self, pca_model, desk_encoded):
        rng = np.random.default_rng(123)
        scale = desk_encoded.mu_matrix().std(axis=0)
        mask = canonical_known_mask()
        opts = ExtrapolationOptions(seed=0)
        worst = 0.0
        for _ in range(100):
            z_star = rng.standard_normal(3) * scale
            truth = decode(pca_model, z_star)
            result = extrapolate(pca_model, PartialSurface.from_surface(truth, mask), opts)
            worst = max(worst, float(np.abs(result.surface.vols - truth.vols).mean()))
        verdict(6, worst <= 1e-3,
                f"planted-latent recovery worst MAE {worst:.2e} over 100 cases (tol 1e-3)")

    def test_pca_vs_classic_on_test_split(self, pca_model, classic_model, desk_corpus):
        mask = canonical_known_mask()
        opts = ExtrapolationOptions(seed=0)
        records = desk_corpus.test()
        rows_p = evaluate_extrapolation(pca_model, records, mask, opts)
        rows_c = evaluate_extrapolation(classic_model, records, mask, opts)
        sat_p = float(np.mean([r.satisfaction_rate for r in rows_p]))
        sat_c = float(np.mean([r.satisfaction_rate for r in rows_c]))
        gap_p = float(np.mean([abs(r.mae_known - r.mae_unknown) for r in rows_p]))
        gap_c = float(np.mean([abs(r.mae_known - r.mae_unknown) for r in rows_c]))
        ok = sat_p >= sat_c and gap_p <= gap_c
        verdict(6, ok,
                f"test-split extrapolation: satisfaction pca={sat_p:.4f} vs classic={sat_c:.4f} "
                f"(need >=), |MAE known-unknown| gap pca={gap_p:.5f} vs classic={gap_c:.5f} (need <=)")


class TestCriterion7StockInference:
    def test_walk_forward_satisfaction(self, pca_model, desk_result):
        from surfvae.stockinfer import evaluate_inference

        rows = evaluate_inference(pca_model, desk_result.corpus, desk_result.prices, window=60)
        mean_sat = float(np.mean([r.satisfaction_rate for r in rows]))
        verdict(7, mean_sat >= 0.70,
                f"walk-forward mean satisfaction {mean_sat:.4f} over {len(rows)} stocks (need >= 0.70)")

    def test_planted_betas_recovered(self, desk_result):
        index = desk_result.factors["INDEX"]
        worst_z = 0.0
        for spec in desk_result.assets[1:]:
            stock = desk_result.factors[spec.symbol]
            for k, name in enumerate(("beta_level", "beta_skew", "beta_term")):
                x, y = index[:, k], stock[:, k]
                X = np.column_stack([np.ones(x.size), x])
                beta, *_ = np.linalg.lstsq(X, y, rcond=None)
                resid = y - X @ beta
                se = math.sqrt(resid.var(ddof=2) / ((x - x.mean()) ** 2).sum())
                worst_z = max(worst_z, abs(beta[1] - getattr(spec, name)) / se)
        verdict(7, worst_z <= 3.0,
                f"planted regression betas recovered, worst |z-score| {worst_z:.2f} (need <= 3)")


class TestCriterion8Determinism:
    def test_cli_artifacts_byte_identical(self, tmp_path):
        outputs = {}
        for run in ("one", "two"):
            d = tmp_path / run
            d.mkdir()
            corpus = d / "corpus.csv"
            model = d / "model.ckpt"
            table = d / "extrap.csv"
            assert cli_main(["synth-data", "--seed", "21", "--stocks", "2",
                             "--days", "120", "--out", str(corpus)]) == 0
            assert cli_main(["train", "--corpus", str(corpus), "--epochs", "2",
                             "--seed", "21", "--out", str(model)]) == 0
            assert cli_main(["extrapolate", "--model", str(model), "--corpus", str(corpus),
                             "--seed", "21", "--split-date", "2017-06-01",
                             "--out", str(table)]) == 0
            outputs[run] = (
                corpus.read_bytes(),
                (d / "corpus.prices.csv").read_bytes(),
                model.read_bytes(),
                table.read_bytes(),
            )
        ok = outputs["one"] == outputs["two"]
        verdict(8, ok, "synth-data, train and extrapolate reruns are byte-identical")


class TestCriterion9Thresholds:
    def test_all_nine_table_values(self):
        expected = {
            (2, 0.85): 0.0149, (2, 1.00): 0.0183, (2, 1.10): 0.0169,
            (6, 0.85): 0.0088, (6, 1.00): 0.0118, (6, 1.20): 0.0105,
            (12, 0.85): 0.0090, (12, 1.00): 0.0098, (12, 1.20): 0.0109,
        }
        mismatches = {
            key: (threshold_for(*key), want)
            for key, want in expected.items()
            if threshold_for(*key) != want
        }
        verdict(9, not mismatches, f"all nine threshold-table values exact (mismatches: {mismatches})")
