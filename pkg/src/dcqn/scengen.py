"""End-to-end scenario generation: prior -> correlation -> marginal inverse map.

For each scenario m, standard normal draws z come from a dedicated stream
keyed by (seed, m), so a scenario set is a pure function of
(x, M, seed, parameters) regardless of evaluation order.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
import torch

from .dcn import CholeskyFactor, CorrelationModel, build_cholesky, correlate
from .errors import DimensionError, DomainError
from .gaussian import SeededRng, sample_standard_normal, stream_id
from .iqn import QuantileModel

CorrelationSource = Union[CholeskyFactor, CorrelationModel]

DEFAULT_SCENARIOS = 100


@dataclass(frozen=True)
class Provenance:
    model_id: str
    seed: int
    n_scenarios: int
    issue_date: dt.date | None

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "model": self.model_id,
            "seed": self.seed,
            "n_scenarios": self.n_scenarios,
            "issue_date": None if self.issue_date is None else self.issue_date.isoformat(),
        }


@dataclass(frozen=True)
class ScenarioSet:
    """M generated trajectories plus everything needed to regenerate them."""

    scenarios: np.ndarray
    provenance: Provenance

    def __post_init__(self):
        s = self.scenarios
        if s.ndim != 2 or s.shape[0] < 1:
            raise DimensionError("scenario matrix must be (M, T) with M >= 1")
        if np.any(s < 0.0) or np.any(s > 1.0):
            raise DomainError("scenario entries must lie in [0, 1]")

    @property
    def n_scenarios(self) -> int:
        return self.scenarios.shape[0]


def resolve_factor(x: np.ndarray, correlation: CorrelationSource) -> CholeskyFactor:
    """A concrete factor from either a static factor or the dynamic model."""
    if isinstance(correlation, CholeskyFactor):
        return correlation
    return build_cholesky(x, correlation)


def generate(x: np.ndarray, n_scenarios: int, iqn_model: QuantileModel,
             correlation: CorrelationSource, seed: int, model_id: str = "dcqn",
             issue_date: dt.date | None = None,
             z_override: np.ndarray | None = None) -> ScenarioSet:
    """Sample a scenario set for one covariate matrix.

    ``z_override`` is a test hook replacing the prior draws with a given
    (M, T) matrix; production callers leave it unset.
    """
    if n_scenarios < 1:
        raise DomainError("need at least one scenario")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (iqn_model.n_features, iqn_model.horizon):
        raise DimensionError(
            f"expected x of shape ({iqn_model.n_features}, {iqn_model.horizon}), got {x.shape}"
        )
    factor = resolve_factor(x, correlation)
    horizon = factor.horizon
    if horizon != iqn_model.horizon:
        raise DimensionError("correlation factor horizon does not match the IQN")

    with torch.no_grad():
        feat = iqn_model.features(
            torch.from_numpy(np.asarray(x, dtype=np.float64)).unsqueeze(0)
        )
    rows = np.empty((n_scenarios, horizon), dtype=np.float64)
    for m in range(1, n_scenarios + 1):
        if z_override is not None:
            z = np.asarray(z_override[m - 1], dtype=np.float64)
        else:
            z = sample_standard_normal(
                SeededRng(seed, stream_id(f"scenario/{m}")), horizon
            )
        u = correlate(z, factor)
        with torch.no_grad():
            rows[m - 1] = iqn_model.quantiles_from_features(
                feat, torch.from_numpy(u).unsqueeze(0)
            ).squeeze(0).numpy()
    return ScenarioSet(rows, Provenance(model_id, seed, n_scenarios, issue_date))


def point_forecast(x: np.ndarray, iqn_model: QuantileModel) -> np.ndarray:
    """Median forecast: the quantile curve at u = 0.5 (ignores correlation)."""
    with torch.no_grad():
        u = torch.full((1, iqn_model.horizon), 0.5, dtype=torch.float64)
        out = iqn_model(
            torch.from_numpy(np.asarray(x, dtype=np.float64)).unsqueeze(0), u
        )
    return out.squeeze(0).numpy()


def marginal_quantile_curves(x: np.ndarray, iqn_model: QuantileModel,
                             levels: Sequence[float]) -> np.ndarray:
    """Quantile curves at the requested levels, monotone-rearranged per step.

    Rows follow the sorted order of ``levels``-as-given; rearrangement sorts
    values across levels at each time step to remove quantile crossing.
    """
    levels = np.asarray(levels, dtype=np.float64)
    if levels.ndim != 1 or levels.size < 1:
        raise DimensionError("levels must be a nonempty vector")
    if np.any(levels <= 0.0) or np.any(levels >= 1.0):
        raise DomainError("levels must lie strictly inside (0, 1)")
    with torch.no_grad():
        feat = iqn_model.features(
            torch.from_numpy(np.asarray(x, dtype=np.float64)).unsqueeze(0)
        )
        u = torch.from_numpy(
            np.repeat(levels[:, None], iqn_model.horizon, axis=1)
        )
        curves = iqn_model.quantiles_from_features(
            feat.expand(levels.size, -1, -1), u
        ).numpy()
    order = np.argsort(levels, kind="stable")
    rearranged = np.empty_like(curves)
    rearranged[order] = np.sort(curves[order], axis=0)
    return rearranged
