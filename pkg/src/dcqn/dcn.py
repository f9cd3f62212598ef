"""Dynamic correlation network: regress a per-instance Cholesky factor.

The factor construction guarantees validity by design: Softplus makes the
projected backbone features positive, the channel transpose product gives a
square matrix of positive entries, the triangular mask zeroes the upper
triangle, and row-wise L2 normalization forces the implied covariance
R = L L^T to have exact unit diagonal. Training minimizes the multivariate
Gaussian negative log-likelihood of the Gaussianized marginal CDF values,
using ln|R| = 2 ln|L| and a forward substitution instead of forming R.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import backbone
from .backbone import TcnConfig, TrainConfig, TemporalConvNet
from .dataset import DatasetSplit
from .errors import (ConditioningError, DegenerateFeatureError, DimensionError,
                     DomainError)
from .gaussian import CDF_CLAMP, SeededRng, std_normal_cdf, std_normal_quantile, stream_id
from .iqn import QuantileModel, invert_marginals

PROJ_CHANNELS = 16
ROW_NORM_TOL = 1e-6
# Diagonal floor below which a factor is treated as numerically singular.
DIAG_FLOOR = 1e-8
DIAG_JITTER = 1e-6


@dataclass(frozen=True)
class DcnConfig:
    tcn: TcnConfig = field(default_factory=TcnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    grid_size: int = 512


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor with positive diagonal and unit-L2 rows."""

    l: np.ndarray

    def __post_init__(self):
        l = self.l
        if l.ndim != 2 or l.shape[0] != l.shape[1]:
            raise DimensionError("factor must be square")
        if not np.all(np.isfinite(l)):
            raise DomainError("factor entries must be finite")
        if np.any(np.triu(l, 1) != 0.0):
            raise DomainError("upper triangle must be exactly zero")
        if np.any(np.diag(l) <= 0.0):
            raise ConditioningError("diagonal entries must be positive")
        norms = np.linalg.norm(l, axis=1)
        if np.any(np.abs(norms - 1.0) > ROW_NORM_TOL):
            raise DomainError("rows must have unit L2 norm")

    @property
    def horizon(self) -> int:
        return self.l.shape[0]

    def covariance(self) -> np.ndarray:
        """The implied covariance R = L L^T (unit diagonal by construction)."""
        return self.l @ self.l.T


class CorrelationModel(nn.Module):
    """Parameter set of the correlation network (backbone + channel projection)."""

    def __init__(self, n_features: int, horizon: int, config: TcnConfig,
                 proj_channels: int = PROJ_CHANNELS):
        super().__init__()
        self.n_features = n_features
        self.horizon = horizon
        self.proj_channels = proj_channels
        self.tcn_config = config
        self.backbone = TemporalConvNet(n_features, config)
        self.proj = nn.Conv1d(config.channels, proj_channels, 1)
        self.double()

    def factors(self, x: torch.Tensor, jitter: bool = False) -> torch.Tensor:
        """(B, F, T) covariates -> (B, T, T) row-normalized triangular factors.

        With ``jitter`` enabled (training), factors whose post-normalization
        diagonal dips below the floor get a small ridge on the raw diagonal
        and are renormalized, keeping the likelihood finite in early epochs.
        """
        feat = torch.nn.functional.softplus(self.proj(self.backbone(x)))
        square = torch.einsum("bdt,bds->bts", feat, feat)
        lower = torch.tril(square)
        norms = torch.linalg.vector_norm(lower, dim=2, keepdim=True)
        if jitter:
            with torch.no_grad():
                # raw_tt / norm <= floor, written division-free so a fully
                # collapsed (all-zero) row also triggers the ridge
                raw_diag = torch.diagonal(lower, dim1=1, dim2=2)
                needs = (raw_diag <= DIAG_FLOOR * norms.squeeze(-1)).any(dim=1)
            if bool(needs.any()):
                eye = torch.eye(self.horizon, dtype=torch.float64)
                lower = lower + DIAG_JITTER * eye * needs.to(torch.float64).view(-1, 1, 1)
                norms = torch.linalg.vector_norm(lower, dim=2, keepdim=True)
        if bool((norms == 0.0).any()):
            raise DegenerateFeatureError(
                "a factor row is identically zero; backbone features collapsed"
            )
        return lower / norms

    def forward(self, x: torch.Tensor, jitter: bool = False) -> torch.Tensor:
        return self.factors(x, jitter=jitter)


def build_model(n_features: int, horizon: int, config: DcnConfig) -> CorrelationModel:
    model = CorrelationModel(n_features, horizon, config.tcn)
    backbone.init_parameters(model, SeededRng(config.seed, stream_id("dcn/init")))
    return model


def build_cholesky(x: np.ndarray, model: CorrelationModel, jitter: bool = False) -> CholeskyFactor:
    """The dynamic factor L(x) for one covariate matrix."""
    if x.shape != (model.n_features, model.horizon):
        raise DimensionError(
            f"expected x of shape ({model.n_features}, {model.horizon}), got {x.shape}"
        )
    with torch.no_grad():
        lmat = model.factors(
            torch.from_numpy(np.asarray(x, dtype=np.float64)).unsqueeze(0), jitter=jitter
        )
    return CholeskyFactor(lmat.squeeze(0).numpy())


def nll_torch(model: CorrelationModel, x: torch.Tensor, z: torch.Tensor,
              jitter: bool = False) -> torch.Tensor:
    """Batch-mean Gaussian NLL (additive constant dropped), differentiable."""
    lmat = model.factors(x, jitter=jitter)
    diag = torch.diagonal(lmat, dim1=1, dim2=2)
    if not jitter and bool((diag <= DIAG_FLOOR).any()):
        bad = int((diag <= DIAG_FLOOR).any(dim=1).to(torch.int64).argmax())
        raise ConditioningError(f"factor diagonal underflow for sample {bad}")
    v = torch.linalg.solve_triangular(lmat, z.unsqueeze(-1), upper=False).squeeze(-1)
    per_sample = diag.log().sum(dim=1) + 0.5 * (v * v).sum(dim=1)
    return per_sample.mean()


def dcn_nll(u_batch: np.ndarray, x_batch: np.ndarray, model: CorrelationModel) -> float:
    """NLL of marginal CDF values under the dynamic Gaussian copula.

    ``u_batch`` is (B, T) in the open unit interval; ``x_batch`` is (B, F, T).
    """
    u = np.asarray(u_batch, dtype=np.float64)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise DomainError("marginal CDF values must lie strictly inside (0, 1)")
    z = std_normal_quantile(u)
    with torch.no_grad():
        loss = nll_torch(model, torch.from_numpy(np.asarray(x_batch, dtype=np.float64)),
                         torch.from_numpy(z))
    return float(loss)


def correlate(z: np.ndarray, factor: CholeskyFactor) -> np.ndarray:
    """First-stage map: u = Phi(L z), clamped away from {0, 1}.

    Rows of L have unit norm, so each (Lz)_t is standard normal and the
    marginals of u stay uniform; only the dependence structure changes.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (factor.horizon,):
        raise DimensionError(f"expected z of length {factor.horizon}, got {z.shape}")
    u = std_normal_cdf(factor.l @ z)
    return np.clip(u, CDF_CLAMP, 1.0 - CDF_CLAMP)


def precompute_marginal_cdfs(samples, iqn_model: QuantileModel, grid_size: int) -> np.ndarray:
    """Invert the fitted marginals once for every sample (frozen IQN)."""
    return np.stack([
        invert_marginals(s.x, s.y, iqn_model, grid_size) for s in samples
    ])


def train_dcn(split: DatasetSplit, iqn_model: QuantileModel, config: DcnConfig,
              warm_start: "backbone.NamedParameterSet | None" = None,
              ) -> tuple[CorrelationModel, backbone.FitResult]:
    """Fit the correlation network after (and frozen on top of) the IQN.

    Marginal CDF values are precomputed for the train and validation splits,
    then the Gaussian NLL is minimized with the shared optimizer contract.
    """
    if not split.train or not split.validation:
        raise DimensionError("train and validation splits must be nonempty")
    horizon = split.train[0].horizon
    n_features = split.train[0].n_features
    model = build_model(n_features, horizon, config)
    if warm_start is not None:
        warm_start.load_into(model)

    x_train = torch.from_numpy(np.stack([s.x for s in split.train]))
    x_val = torch.from_numpy(np.stack([s.x for s in split.validation]))
    z_train = torch.from_numpy(std_normal_quantile(
        precompute_marginal_cdfs(split.train, iqn_model, config.grid_size)))
    z_val = torch.from_numpy(std_normal_quantile(
        precompute_marginal_cdfs(split.validation, iqn_model, config.grid_size)))

    def train_step(batch: np.ndarray) -> torch.Tensor:
        idx = torch.from_numpy(np.ascontiguousarray(batch))
        return nll_torch(model, x_train[idx], z_train[idx], jitter=True)

    def val_loss() -> float:
        with torch.no_grad():
            return float(nll_torch(model, x_val, z_val, jitter=True))

    result = backbone.fit(model, train_step, val_loss, len(split.train), config.train,
                          SeededRng(config.seed, stream_id("dcn/shuffle")))
    return model, result
