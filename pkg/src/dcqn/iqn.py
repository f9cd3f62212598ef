"""Implicit quantile network: continuous quantile regression of the marginals.

The model maps a covariate matrix x and a vector of CDF levels u to quantile
values, one per time step, with a strict one-to-one correspondence: output t
depends on u only through u[t]. Training minimizes the expected pinball loss
over u ~ Uniform(0, 1) (the quantile divergence), whose single-draw gradient
is an unbiased estimate of the full objective's gradient.

Marginal CDF values for measured power are recovered by evaluating the model
on a level grid, restoring monotonicity by sorting, and inverting by linear
interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn

from . import backbone
from .backbone import TcnConfig, TrainConfig, TemporalConvNet
from .dataset import DatasetSplit, ForecastSample
from .errors import DimensionError, DomainError
from .gaussian import CDF_CLAMP, SeededRng, stream_id

# Cosine terms in the level embedding: (u, cos(pi*i*u) for i = 1..EMBED_TERMS).
EMBED_TERMS = 16
DOWNSCALE_CHANNELS = 16
MIN_INVERSION_GRID = 64


@dataclass(frozen=True)
class IqnConfig:
    tcn: TcnConfig = field(default_factory=TcnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    grid_size: int = 512
    # One u per time step (default) or one shared u per sample.
    shared_u: bool = False


@dataclass(frozen=True)
class QuantileQuery:
    """A single (covariates, CDF levels) evaluation point."""

    x: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 2 or self.u.ndim != 1 or self.x.shape[1] != self.u.size:
            raise DimensionError(
                f"inconsistent query shapes x={self.x.shape} u={self.u.shape}"
            )
        if np.any(self.u <= 0.0) or np.any(self.u >= 1.0):
            raise DomainError("CDF levels must lie strictly inside (0, 1)")


class QuantileModel(nn.Module):
    """Parameter set of the quantile network (backbone, downscale, level
    embedding, and one affine head per time step)."""

    def __init__(self, n_features: int, horizon: int, config: TcnConfig,
                 embed_terms: int = EMBED_TERMS,
                 downscale_channels: int = DOWNSCALE_CHANNELS):
        super().__init__()
        self.n_features = n_features
        self.horizon = horizon
        self.embed_terms = embed_terms
        self.downscale_channels = downscale_channels
        self.tcn_config = config
        self.backbone = TemporalConvNet(n_features, config)
        self.downscale = nn.Conv1d(config.channels, downscale_channels, 1)
        self.u_embed = nn.Linear(embed_terms + 1, downscale_channels)
        self.head_weight = nn.Parameter(torch.zeros(horizon, 2 * downscale_channels))
        self.head_bias = nn.Parameter(torch.zeros(horizon))
        self.double()

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """(B, F, T) covariates -> (B, D, T) downscaled features."""
        return self.downscale(self.backbone(x))

    def quantiles_from_features(self, feat: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
        """(B, D, T) features and (B, T) levels -> (B, T) quantile values."""
        terms = torch.arange(1, self.embed_terms + 1, dtype=torch.float64)
        basis = torch.cat(
            [u.unsqueeze(-1), torch.cos(math.pi * terms * u.unsqueeze(-1))], dim=-1
        )
        embedded = self.u_embed(basis)                       # (B, T, D)
        joint = torch.cat([feat.transpose(1, 2), embedded], dim=-1)
        logits = torch.einsum("btk,tk->bt", joint, self.head_weight) + self.head_bias
        return torch.sigmoid(logits)

    def forward(self, x: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
        return self.quantiles_from_features(self.features(x), u)


def build_model(n_features: int, horizon: int, config: IqnConfig) -> QuantileModel:
    model = QuantileModel(n_features, horizon, config.tcn)
    backbone.init_parameters(model, SeededRng(config.seed, stream_id("iqn/init")))
    return model


def iqn_forward(query: QuantileQuery, model: QuantileModel) -> np.ndarray:
    """Quantile values for one query; every output lies strictly in (0, 1)."""
    if query.x.shape != (model.n_features, model.horizon):
        raise DimensionError(
            f"expected x of shape ({model.n_features}, {model.horizon}), got {query.x.shape}"
        )
    with torch.no_grad():
        out = model(
            torch.from_numpy(np.asarray(query.x, dtype=np.float64)).unsqueeze(0),
            torch.from_numpy(np.asarray(query.u, dtype=np.float64)).unsqueeze(0),
        )
    return out.squeeze(0).numpy()


def pinball(y: float, y_u: float, u: float) -> float:
    """Pinball loss; re-exported here because it is the IQN's training loss."""
    from .metrics import pinball as _pinball

    return _pinball(y, y_u, u)


def _pinball_torch(y: torch.Tensor, y_u: torch.Tensor, u: torch.Tensor) -> torch.Tensor:
    diff = y - y_u
    return torch.maximum(u * diff, (u - 1.0) * diff)


def _draw_levels(rng: SeededRng, n_samples: int, horizon: int, shared: bool) -> np.ndarray:
    if shared:
        u = rng.uniform(n_samples)[:, None]
        u = np.broadcast_to(u, (n_samples, horizon)).copy()
    else:
        u = rng.uniform(n_samples * horizon).reshape(n_samples, horizon)
    # Uniform doubles can be exactly 0.0, which is outside the open domain.
    return np.clip(u, 1e-12, 1.0 - 1e-12)


def quantile_divergence_loss(samples: Sequence[ForecastSample], model: QuantileModel,
                             rng: SeededRng, shared_u: bool = False) -> float:
    """Monte-Carlo quantile divergence: mean pinball loss at freshly drawn u."""
    if not samples:
        raise DimensionError("batch must be nonempty")
    x = torch.from_numpy(np.stack([s.x for s in samples]))
    y = torch.from_numpy(np.stack([s.y for s in samples]))
    u = torch.from_numpy(_draw_levels(rng, len(samples), model.horizon, shared_u))
    with torch.no_grad():
        loss = _pinball_torch(y, model(x, u), u).mean()
    return float(loss)


def train_iqn(split: DatasetSplit, config: IqnConfig,
              warm_start: "backbone.NamedParameterSet | None" = None,
              ) -> tuple[QuantileModel, backbone.FitResult]:
    """Fit the quantile network on the train split.

    Validation levels are drawn once from their own stream and reused every
    epoch, so the early-stopping signal is deterministic and comparable
    across epochs. Returns the best-validation parameters.
    """
    if not split.train or not split.validation:
        raise DimensionError("train and validation splits must be nonempty")
    horizon = split.train[0].horizon
    n_features = split.train[0].n_features
    model = build_model(n_features, horizon, config)
    if warm_start is not None:
        warm_start.load_into(model)

    x_train = torch.from_numpy(np.stack([s.x for s in split.train]))
    y_train = torch.from_numpy(np.stack([s.y for s in split.train]))
    x_val = torch.from_numpy(np.stack([s.x for s in split.validation]))
    y_val = torch.from_numpy(np.stack([s.y for s in split.validation]))

    u_rng = SeededRng(config.seed, stream_id("iqn/u"))
    val_u = torch.from_numpy(
        _draw_levels(SeededRng(config.seed, stream_id("iqn/val-u")),
                     len(split.validation), horizon, config.shared_u)
    )

    def train_step(batch: np.ndarray) -> torch.Tensor:
        idx = torch.from_numpy(np.ascontiguousarray(batch))
        u = torch.from_numpy(_draw_levels(u_rng, len(batch), horizon, config.shared_u))
        return _pinball_torch(y_train[idx], model(x_train[idx], u), u).mean()

    def val_loss() -> float:
        with torch.no_grad():
            return float(_pinball_torch(y_val, model(x_val, val_u), val_u).mean())

    result = backbone.fit(model, train_step, val_loss, len(split.train), config.train,
                          SeededRng(config.seed, stream_id("iqn/shuffle")))
    return model, result


def grid_quantiles(x: np.ndarray, model: QuantileModel, grid_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Monotone-rearranged quantile values on the midpoint level grid.

    Returns (levels, values) with values sorted ascending per time step.
    """
    levels = (np.arange(grid_size) + 0.5) / grid_size
    with torch.no_grad():
        feat = model.features(torch.from_numpy(np.asarray(x, dtype=np.float64)).unsqueeze(0))
        u = torch.from_numpy(np.repeat(levels[:, None], model.horizon, axis=1))
        values = model.quantiles_from_features(
            feat.expand(grid_size, -1, -1), u
        ).numpy()
    return levels, np.sort(values, axis=0)


def invert_marginals(x: np.ndarray, y: np.ndarray, model: QuantileModel,
                     grid_size: int = 512) -> np.ndarray:
    """Marginal CDF values of measured power under the fitted quantile model.

    Per time step the quantile curve is tabulated on the grid, rearranged to
    be monotone, and inverted by linear interpolation at y[t]. Measurements
    outside the tabulated range map to the clamp bounds.
    """
    if grid_size < MIN_INVERSION_GRID:
        raise DomainError(f"grid_size must be >= {MIN_INVERSION_GRID}")
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0.0) or np.any(y > 1.0):
        raise DomainError("measured power must lie in [0, 1]")
    levels, values = grid_quantiles(x, model, grid_size)
    u_hat = np.empty(model.horizon, dtype=np.float64)
    for t in range(model.horizon):
        u_hat[t] = np.interp(y[t], values[:, t], levels,
                             left=CDF_CLAMP, right=1.0 - CDF_CLAMP)
    return np.clip(u_hat, CDF_CLAMP, 1.0 - CDF_CLAMP)
