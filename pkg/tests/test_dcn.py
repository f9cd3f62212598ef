"""Correlation network: factor validity, likelihood, training, correlation map."""

import numpy as np
import pytest
import torch
from scipy import special
from torch.func import functional_call

from dcqn import dcn, gaussian
from dcqn.backbone import NamedParameterSet, TcnConfig, TrainConfig, gradient_check
from dcqn.dataset import split_and_normalize
from dcqn.dcn import CholeskyFactor, DcnConfig
from dcqn.errors import (ConditioningError, DegenerateFeatureError,
                         DimensionError, DomainError)
from dcqn.gaussian import SeededRng

import helpers

SMALL_TCN = TcnConfig(layers=2, channels=8, kernel_size=3, dilations=(1, 2))


def small_model(n_features=2, horizon=4, seed=0):
    return dcn.build_model(n_features, horizon, DcnConfig(tcn=SMALL_TCN, seed=seed))


class FixedFactorModel:
    """Stub exposing a hand-chosen factor through the model interface."""

    def __init__(self, l):
        self.l = torch.from_numpy(np.asarray(l, dtype=np.float64))
        self.horizon = self.l.shape[0]

    def factors(self, x, jitter=False):
        return self.l.expand(x.shape[0], -1, -1)


class TestCholeskyFactor:
    def test_row_normalization_example(self):
        factor = CholeskyFactor(np.array([[1.0, 0.0], [0.6, 0.8]]))
        assert np.allclose(np.diag(factor.covariance()), 1.0)

    def test_rejects_upper_triangle(self):
        with pytest.raises(DomainError):
            CholeskyFactor(np.array([[1.0, 0.1], [0.0, 1.0]]))

    def test_rejects_nonpositive_diagonal(self):
        with pytest.raises(ConditioningError):
            CholeskyFactor(np.array([[1.0, 0.0], [1.0, 0.0]]))

    def test_rejects_non_unit_rows(self):
        with pytest.raises(DomainError):
            CholeskyFactor(np.array([[1.0, 0.0], [0.5, 0.5]]))


class TestBuildCholesky:
    def test_invariants_random_params(self):
        rng = np.random.default_rng(0)
        for seed in range(10):
            model = small_model(horizon=5, seed=seed)
            for _ in range(5):
                factor = dcn.build_cholesky(rng.normal(size=(2, 5)), model)
                r = factor.covariance()
                assert np.all(np.triu(factor.l, 1) == 0.0)
                assert np.max(np.abs(np.diag(r) - 1.0)) <= 1e-6
                assert np.linalg.eigvalsh(r).min() >= -1e-8

    def test_single_step_horizon(self):
        model = small_model(horizon=1, seed=3)
        factor = dcn.build_cholesky(np.random.default_rng(1).normal(size=(2, 1)), model)
        assert factor.l.shape == (1, 1)
        assert factor.l[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_degenerate_features_raise(self):
        model = small_model(seed=4)
        with torch.no_grad():
            for param in model.parameters():
                param.zero_()
            model.proj.bias.fill_(-800.0)   # softplus underflows to exactly 0
        with pytest.raises(DegenerateFeatureError):
            dcn.build_cholesky(np.zeros((2, 4)), model)

    def test_jitter_rescues_degenerate_diagonal(self):
        model = small_model(seed=4)
        with torch.no_grad():
            for param in model.parameters():
                param.zero_()
            model.proj.bias.fill_(-800.0)
        factor = dcn.build_cholesky(np.zeros((2, 4)), model, jitter=True)
        assert np.all(np.diag(factor.l) > 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            dcn.build_cholesky(np.zeros((2, 7)), small_model())


class TestNll:
    def test_identity_factor_example(self):
        stub = FixedFactorModel(np.eye(2))
        z = torch.tensor([[1.0, -1.0]], dtype=torch.float64)
        x = torch.zeros((1, 2, 2), dtype=torch.float64)
        assert float(dcn.nll_torch(stub, x, z)) == pytest.approx(1.0)

    def test_correlated_factor_example(self):
        stub = FixedFactorModel(np.array([[1.0, 0.0], [0.5, np.sqrt(0.75)]]))
        z = torch.zeros((1, 2), dtype=torch.float64)
        x = torch.zeros((1, 2, 2), dtype=torch.float64)
        expected = np.log(np.sqrt(0.75))
        assert float(dcn.nll_torch(stub, x, z)) == pytest.approx(expected, abs=1e-10)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(2)
        for horizon in (2, 4, 8):
            model = small_model(horizon=horizon, seed=horizon)
            x = rng.normal(size=(3, 2, horizon))
            u = rng.uniform(0.05, 0.95, size=(3, horizon))
            ours = dcn.dcn_nll(u, x, model)
            z = special.ndtri(u)
            dense = []
            for i in range(3):
                r = dcn.build_cholesky(x[i], model).covariance()
                sign, logdet = np.linalg.slogdet(r)
                dense.append(0.5 * logdet + 0.5 * z[i] @ np.linalg.solve(r, z[i]))
            assert ours == pytest.approx(np.mean(dense), abs=1e-8)

    def test_rejects_boundary_u(self):
        model = small_model()
        with pytest.raises(DomainError):
            dcn.dcn_nll(np.full((1, 4), 1.0), np.zeros((1, 2, 4)), model)

    def test_gradient_matches_finite_differences(self):
        model = small_model(n_features=2, horizon=3, seed=9)
        params = NamedParameterSet.from_module(model)
        rng = np.random.default_rng(3)
        x = torch.from_numpy(rng.normal(size=(4, 2, 3)))
        z = torch.from_numpy(rng.normal(size=(4, 3)))

        def fn(tensors):
            lmat = functional_call(model, tensors, (x,))
            diag = torch.diagonal(lmat, dim1=1, dim2=2)
            v = torch.linalg.solve_triangular(lmat, z.unsqueeze(-1),
                                              upper=False).squeeze(-1)
            return (diag.log().sum(dim=1) + 0.5 * (v * v).sum(dim=1)).mean()

        assert gradient_check(fn, params) <= 1e-4


class TestCorrelate:
    def test_zero_prior_maps_to_half(self):
        factor = CholeskyFactor(np.array([[1.0, 0.0], [0.6, 0.8]]))
        assert np.array_equal(dcn.correlate(np.zeros(2), factor), np.full(2, 0.5))

    def test_identity_factor_is_elementwise_cdf(self):
        factor = CholeskyFactor(np.eye(3))
        z = np.array([-1.0, 0.3, 2.0])
        assert np.allclose(dcn.correlate(z, factor), gaussian.std_normal_cdf(z))

    def test_monte_carlo_correlation(self):
        factor = CholeskyFactor(np.array([[1.0, 0.0], [0.5, np.sqrt(0.75)]]))
        rng = SeededRng(5)
        z = gaussian.sample_standard_normal(rng, 2 * 10 ** 5).reshape(-1, 2)
        u = gaussian.std_normal_cdf(z @ factor.l.T)
        z_back = special.ndtri(np.clip(u, 1e-4, 1 - 1e-4))
        corr = np.corrcoef(z_back, rowvar=False)[0, 1]
        assert corr == pytest.approx(0.5, abs=0.02)

    def test_marginals_stay_uniform(self):
        rng = SeededRng(6)
        factor = CholeskyFactor(np.linalg.cholesky(helpers.ar1_matrix(4, 0.9)))
        draws = gaussian.sample_standard_normal(rng, 4 * 10 ** 5).reshape(-1, 4)
        u = np.clip(gaussian.std_normal_cdf(draws @ factor.l.T), 1e-4, 1 - 1e-4)
        for t in range(4):
            assert helpers.ks_statistic(u[:, t]) < 0.01

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            dcn.correlate(np.zeros(3), CholeskyFactor(np.eye(2)))


class TestTraining:
    def _exact_u_training(self, gen, split, u_all, seed=2, max_epochs=200):
        n_tr, n_va = len(split.train), len(split.validation)
        config = DcnConfig(tcn=TcnConfig(layers=3, channels=16, kernel_size=3,
                                         dilations=(1, 2, 4)),
                           train=TrainConfig(max_epochs=max_epochs, patience=20),
                           seed=seed)
        model = dcn.build_model(2, gen.horizon, config)
        x_train = torch.from_numpy(np.stack([s.x for s in split.train]))
        x_val = torch.from_numpy(np.stack([s.x for s in split.validation]))
        z = gaussian.std_normal_quantile(np.clip(u_all, 1e-4, 1 - 1e-4))
        z_train = torch.from_numpy(z[:n_tr])
        z_val = torch.from_numpy(z[n_tr:n_tr + n_va])

        def train_step(batch):
            idx = torch.from_numpy(np.ascontiguousarray(batch))
            return dcn.nll_torch(model, x_train[idx], z_train[idx], jitter=True)

        def val_loss():
            with torch.no_grad():
                return float(dcn.nll_torch(model, x_val, z_val, jitter=True))

        from dcqn.backbone import fit
        fit(model, train_step, val_loss, n_tr, config.train,
            SeededRng(seed, gaussian.stream_id("dcn/shuffle")))
        return model

    def test_recovers_fixed_correlation(self):
        """Constant true R*: averaged prediction within Frobenius 0.1."""
        horizon = 8
        gen = helpers.TwoRegimeGenerator(horizon,
                                         r_a=helpers.ar1_matrix(horizon, 0.95),
                                         r_b=helpers.ar1_matrix(horizon, 0.95))
        raw, u_all, _ = gen.sample(1500, seed=5)
        split = split_and_normalize(raw)
        model = self._exact_u_training(gen, split, u_all)
        mats = np.stack([dcn.build_cholesky(s.x, model).covariance()
                         for s in split.test])
        assert np.linalg.norm(mats.mean(axis=0) - gen.r_a) <= 0.1

    def test_two_regime_classification(self):
        gen, split, raw, u_all, regimes = helpers.make_two_regime_split(
            n=1200, horizon=8, seed=1)
        model = self._exact_u_training(gen, split, u_all)
        offset = len(split.train) + len(split.validation)
        hits = 0
        for sample, regime in zip(split.test, regimes[offset:]):
            r_hat = dcn.build_cholesky(sample.x, model).covariance()
            d_own = np.linalg.norm(r_hat - (gen.r_a if regime == "A" else gen.r_b))
            d_other = np.linalg.norm(r_hat - (gen.r_b if regime == "A" else gen.r_a))
            hits += d_own < d_other
        assert hits / len(split.test) >= 0.9

    def test_same_seed_reproducible(self):
        gen, split, raw, u_all, _ = helpers.make_two_regime_split(
            n=60, horizon=4, seed=2)
        kwargs = dict(seed=31, max_epochs=3)
        model_a = self._exact_u_training(gen, split, u_all, **kwargs)
        model_b = self._exact_u_training(gen, split, u_all, **kwargs)
        assert NamedParameterSet.from_module(model_a).allclose(
            NamedParameterSet.from_module(model_b))

    def test_train_dcn_end_to_end_runs(self, trained_piecewise_iqn, piecewise_split):
        iqn_model, _, _ = trained_piecewise_iqn
        config = DcnConfig(tcn=TcnConfig(layers=1, channels=4, kernel_size=2,
                                         dilations=(1,)),
                           train=TrainConfig(max_epochs=3, patience=3),
                           seed=7, grid_size=64)
        model, result = dcn.train_dcn(piecewise_split, iqn_model, config)
        assert result.epochs_run >= 1
        factor = dcn.build_cholesky(piecewise_split.test[0].x, model)
        assert factor.horizon == 4
