"""Scoring rules for point forecasts, marginal quantiles, and scenario sets.

Sample-based estimators use the plain double-sum form with divisor 2*M^2, and
the variogram uses squared differences inside and a squared residual outside,
with the full (t, t') double sum left unnormalized. These are the exact
definitional forms; see tests for the brute-force oracles they are checked
against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionError, DomainError

# Fixed evaluation grid for the pinball score: 0.05, 0.10, ..., 0.95.
PS_LEVELS = np.round(np.arange(1, 20) * 0.05, 2)


def _pair(y, y_hat):
    y = np.asarray(y, dtype=np.float64)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise DimensionError(f"expected equal-length vectors, got {y.shape} and {y_hat.shape}")
    return y, y_hat


def mae(y, y_hat) -> float:
    """Mean absolute error between a measurement and a point forecast."""
    y, y_hat = _pair(y, y_hat)
    return float(np.mean(np.abs(y - y_hat)))


def rmse(y, y_hat) -> float:
    """Root mean square error between a measurement and a point forecast."""
    y, y_hat = _pair(y, y_hat)
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def pinball(y: float, y_u: float, u: float) -> float:
    """Pinball (quantile) loss of a quantile value y_u at level u."""
    if not 0.0 < u < 1.0:
        raise DomainError("pinball level u must lie strictly inside (0, 1)")
    if y >= y_u:
        return u * (y - y_u)
    return (u - 1.0) * (y - y_u)


def pinball_score(y, quantile_curves) -> float:
    """Mean pinball loss over the fixed 19-level grid and all time steps.

    ``quantile_curves`` has one row per level in :data:`PS_LEVELS`.
    """
    y = np.asarray(y, dtype=np.float64)
    curves = np.asarray(quantile_curves, dtype=np.float64)
    if curves.ndim != 2 or curves.shape[0] != PS_LEVELS.size:
        raise DimensionError(f"expected {PS_LEVELS.size} level curves, got shape {curves.shape}")
    if curves.shape[1] != y.size:
        raise DimensionError("curve horizon does not match the measurement")
    diff = y[None, :] - curves
    levels = PS_LEVELS[:, None]
    loss = np.where(diff >= 0.0, levels * diff, (levels - 1.0) * diff)
    return float(loss.mean())


def crps_sample(y, scenarios) -> float:
    """Sample-based CRPS of a scenario set, averaged over time steps."""
    y = np.asarray(y, dtype=np.float64)
    s = np.asarray(scenarios, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != y.size:
        raise DimensionError("scenarios must be (M, T) matching the measurement")
    m = s.shape[0]
    term1 = np.abs(s - y[None, :]).mean(axis=0)
    term2 = np.abs(s[:, None, :] - s[None, :, :]).sum(axis=(0, 1)) / (2.0 * m * m)
    return float(np.mean(term1 - term2))


def energy_score(y, scenarios) -> float:
    """Energy score of a scenario set (Euclidean norm over the horizon)."""
    y = np.asarray(y, dtype=np.float64)
    s = np.asarray(scenarios, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != y.size:
        raise DimensionError("scenarios must be (M, T) matching the measurement")
    m = s.shape[0]
    term1 = np.linalg.norm(s - y[None, :], axis=1).mean()
    pairwise = np.linalg.norm(s[:, None, :] - s[None, :, :], axis=2)
    term2 = pairwise.sum() / (2.0 * m * m)
    return float(term1 - term2)


def variogram_score(y, scenarios, order: float = 2.0) -> float:
    """Variogram score over all (t, t') pairs, unnormalized.

    The default inner power of 2 with a squared residual is the definitional
    form used throughout; ``order`` is exposed because parts of the scoring
    literature prefer 0.5.
    """
    y = np.asarray(y, dtype=np.float64)
    s = np.asarray(scenarios, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != y.size:
        raise DimensionError("scenarios must be (M, T) matching the measurement")
    vy = np.abs(y[:, None] - y[None, :]) ** order
    vs = (np.abs(s[:, :, None] - s[:, None, :]) ** order).mean(axis=0)
    return float(((vy - vs) ** 2).sum())


@dataclass(frozen=True)
class SampleForecast:
    """Everything one model produced for one test sample."""

    point: np.ndarray
    quantile_curves: np.ndarray
    scenarios: np.ndarray


@dataclass(frozen=True)
class MetricsReport:
    """Per-model metric aggregate over a test split."""

    model_id: str
    n_samples: int
    mae: float
    rmse: float
    ps: float
    crps: float
    es: float
    vs: float

    def to_dict(self) -> dict:
        return {
            "schema": 1,
            "model": self.model_id,
            "n_samples": self.n_samples,
            "mae": self.mae,
            "rmse": self.rmse,
            "ps": self.ps,
            "crps": self.crps,
            "es": self.es,
            "vs": self.vs,
        }


def evaluate(measured: Sequence[np.ndarray], forecasts: Sequence[SampleForecast],
             model_id: str, variogram_order: float = 2.0) -> MetricsReport:
    """Average all metrics arithmetically over the test samples."""
    if len(measured) != len(forecasts):
        raise DimensionError(
            f"{len(measured)} measurements but {len(forecasts)} model outputs"
        )
    if not measured:
        raise DimensionError("cannot evaluate an empty test set")
    rows = np.array([
        (
            mae(y, f.point),
            rmse(y, f.point),
            pinball_score(y, f.quantile_curves),
            crps_sample(y, f.scenarios),
            energy_score(y, f.scenarios),
            variogram_score(y, f.scenarios, variogram_order),
        )
        for y, f in zip(measured, forecasts)
    ])
    means = rows.mean(axis=0)
    return MetricsReport(model_id, len(forecasts), *(float(v) for v in means))


def format_table(reports: Sequence[MetricsReport]) -> str:
    """Aligned text table, one row per model."""
    headers = ["Model", "MAE", "RMSE", "PS", "CRPS", "ES", "VS"]
    body = [
        [r.model_id] + [f"{v:.4f}" for v in (r.mae, r.rmse, r.ps, r.crps, r.es, r.vs)]
        for r in reports
    ]
    widths = [max(len(h), *(len(row[i]) for row in body)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines.append("  ".join("-" * w for w in widths))
    for row in body:
        lines.append("  ".join(row[i].ljust(widths[i]) for i in range(len(headers))))
    return "\n".join(lines) + "\n"
