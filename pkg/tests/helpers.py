"""Shared test utilities: synthetic generators and brute-force metric oracles.

The generators are the ground truth the trained models are checked against,
so they must stay independent of the package's model code: they use plain
numpy plus the scalar normal CDF/quantile only.
"""

from __future__ import annotations

import datetime as dt
import math

import numpy as np
from scipy import special

from dcqn.dataset import DatasetSplit, ForecastSample, split_and_normalize

# --------------------------------------------------------------- oracles

def pinball_loops(y, y_u, u):
    if y >= y_u:
        return u * (y - y_u)
    return (u - 1.0) * (y - y_u)


def mae_loops(y, y_hat):
    total = 0.0
    for a, b in zip(y, y_hat):
        total += abs(a - b)
    return total / len(y)


def rmse_loops(y, y_hat):
    total = 0.0
    for a, b in zip(y, y_hat):
        total += (a - b) ** 2
    return math.sqrt(total / len(y))


def pinball_score_loops(y, curves, levels):
    total = 0.0
    count = 0
    for i, u in enumerate(levels):
        for t in range(len(y)):
            total += pinball_loops(y[t], curves[i][t], u)
            count += 1
    return total / count


def crps_loops(y, scenarios):
    m = len(scenarios)
    horizon = len(y)
    total = 0.0
    for t in range(horizon):
        first = 0.0
        for a in range(m):
            first += abs(scenarios[a][t] - y[t])
        first /= m
        second = 0.0
        for a in range(m):
            for b in range(m):
                second += abs(scenarios[a][t] - scenarios[b][t])
        second /= 2.0 * m * m
        total += first - second
    return total / horizon


def energy_score_loops(y, scenarios):
    m = len(scenarios)

    def norm(vec):
        return math.sqrt(sum(v * v for v in vec))

    first = sum(norm([s - yy for s, yy in zip(row, y)]) for row in scenarios) / m
    second = 0.0
    for a in range(m):
        for b in range(m):
            second += norm([scenarios[a][t] - scenarios[b][t] for t in range(len(y))])
    return first - second / (2.0 * m * m)


def variogram_score_loops(y, scenarios, order=2.0):
    m = len(scenarios)
    horizon = len(y)
    total = 0.0
    for t in range(horizon):
        for s in range(horizon):
            obs = abs(y[t] - y[s]) ** order
            sim = 0.0
            for a in range(m):
                sim += abs(scenarios[a][t] - scenarios[a][s]) ** order
            total += (obs - sim / m) ** 2
    return total


def ks_statistic(values, cdf=None):
    """Kolmogorov-Smirnov distance of a sample against a CDF (uniform default)."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    grid = cdf(v) if cdf is not None else v
    n = v.size
    upper = np.max(np.arange(1, n + 1) / n - grid)
    lower = np.max(grid - np.arange(0, n) / n)
    return max(upper, lower)


# --------------------------------------------------- synthetic generators

def ar1_matrix(horizon: int, rho: float) -> np.ndarray:
    idx = np.arange(horizon)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def equicorrelation_matrix(horizon: int, rho: float) -> np.ndarray:
    return np.full((horizon, horizon), rho) + (1.0 - rho) * np.eye(horizon)


REGIME_A = ("A", 1.0)
REGIME_B = ("B", -1.0)
MARGINAL_SLOPE = 0.8
MARGINAL_SPREAD = 0.6


def marginal_offsets(horizon: int) -> np.ndarray:
    return np.linspace(-0.6, 0.6, horizon)


def true_quantile(x_driver: np.ndarray, offsets: np.ndarray, level) -> np.ndarray:
    """Ground-truth conditional quantile of the synthetic marginals."""
    z = special.ndtri(level)
    return 1.0 / (1.0 + np.exp(-(offsets + MARGINAL_SLOPE * x_driver
                                 + MARGINAL_SPREAD * z)))


class TwoRegimeGenerator:
    """Known marginals + two-regime Gaussian copula, T fixed per instance.

    Covariate rows: [0] the regime flag (+-1, constant over the day),
    [1] an i.i.d. standard normal driver that shifts the marginals.
    Even days are regime A, odd days regime B.
    """

    def __init__(self, horizon: int = 8,
                 r_a: np.ndarray | None = None, r_b: np.ndarray | None = None):
        self.horizon = horizon
        self.r_a = ar1_matrix(horizon, 0.95) if r_a is None else r_a
        self.r_b = equicorrelation_matrix(horizon, 0.8) if r_b is None else r_b
        self.l_a = np.linalg.cholesky(self.r_a)
        self.l_b = np.linalg.cholesky(self.r_b)
        self.offsets = marginal_offsets(horizon)

    def pooled_correlation(self) -> np.ndarray:
        return 0.5 * (self.r_a + self.r_b)

    def regime_of(self, index: int) -> str:
        return "A" if index % 2 == 0 else "B"

    def sample(self, n: int, seed: int = 0):
        """Returns (raw samples, u matrix, regimes). u are the exact copula draws."""
        rng = np.random.default_rng(seed)
        samples = []
        u_all = np.empty((n, self.horizon))
        regimes = []
        base = dt.date(2012, 1, 1)
        for i in range(n):
            regime = self.regime_of(i)
            flag = 1.0 if regime == "A" else -1.0
            lmat = self.l_a if regime == "A" else self.l_b
            z = rng.standard_normal(self.horizon)
            u = special.ndtr(lmat @ z)
            driver = rng.standard_normal(self.horizon)
            y = true_quantile(driver, self.offsets, u)
            x = np.stack([np.full(self.horizon, flag), driver])
            samples.append(ForecastSample(issue_date=base + dt.timedelta(days=i),
                                          x=x, y=y))
            u_all[i] = u
            regimes.append(regime)
        return samples, u_all, regimes


def make_two_regime_split(n: int = 2000, horizon: int = 8, seed: int = 0):
    """Raw samples -> chronological split; returns (split, raw, u, regimes)."""
    gen = TwoRegimeGenerator(horizon)
    raw, u_all, regimes = gen.sample(n, seed=seed)
    split = split_and_normalize(raw)
    return gen, split, raw, u_all, regimes


def piecewise_linear_quantile(levels):
    """x-independent piecewise-linear quantile function used as an oracle."""
    return np.interp(levels, [0.0, 0.5, 1.0], [0.1, 0.3, 0.8])


def make_piecewise_split(n: int = 800, horizon: int = 4, seed: int = 3):
    """Samples with y_t drawn by inverse transform from the piecewise curve.

    Covariates are pure noise (independent of y), so the trained quantile
    model must recover the fixed marginal curve.
    """
    rng = np.random.default_rng(seed)
    base = dt.date(2012, 1, 1)
    samples = []
    for i in range(n):
        u = rng.random(horizon)
        y = piecewise_linear_quantile(u)
        x = rng.standard_normal((2, horizon))
        samples.append(ForecastSample(issue_date=base + dt.timedelta(days=i),
                                      x=x, y=y))
    return split_and_normalize(samples)


def identity_quantile_split(n: int, horizon: int, seed: int = 0) -> DatasetSplit:
    """y ~ Uniform via the identity quantile function; x is noise."""
    rng = np.random.default_rng(seed)
    base = dt.date(2012, 1, 1)
    samples = [
        ForecastSample(issue_date=base + dt.timedelta(days=i),
                       x=rng.standard_normal((2, horizon)),
                       y=rng.random(horizon))
        for i in range(n)
    ]
    return split_and_normalize(samples)
