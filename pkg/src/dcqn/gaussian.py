"""Standard-normal primitives, seeded sampling streams, and the static copula fit.

All randomness in the package flows through :class:`SeededRng`, a counter-based
(Philox) stream keyed by ``(seed, stream)``. Counter-based generators make the
draw sequence a pure function of the key, so results are identical across
platforms and independent of how work is scheduled.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy import special

from .errors import ConditioningError, DomainError, InsufficientDataError

if TYPE_CHECKING:
    from .dcn import CholeskyFactor

# CDF values are clamped to [CDF_CLAMP, 1 - CDF_CLAMP] wherever a normal
# quantile is taken afterwards; keeps |ndtri(u)| <= ~3.72.
CDF_CLAMP = 1e-4


def stream_id(name: str) -> int:
    """Stable 64-bit stream id for a named random stream (blake2b digest)."""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class SeededRng:
    """Deterministic random stream keyed by (seed, stream id).

    Instances are cheap and must not be shared between logical streams;
    create one per stream (parameter init, u-sampling, scenario m, ...).
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        key = np.array([self.seed, self.stream], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1)."""
        return self._gen.random(int(n))

    def shuffled_indices(self, n: int) -> np.ndarray:
        """A permutation of range(n), derived by sorting uniform keys."""
        return np.argsort(self.uniform(n), kind="stable")


def std_normal_cdf(x):
    """Standard normal CDF. Accepts a float or an ndarray."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError("std_normal_cdf requires finite input")
    out = special.ndtr(arr)
    return float(out) if np.ndim(x) == 0 else out


def std_normal_quantile(u):
    """Inverse standard normal CDF on (0, 1). Accepts a float or an ndarray."""
    arr = np.asarray(u, dtype=np.float64)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("std_normal_quantile requires u strictly inside (0, 1)")
    out = special.ndtri(arr)
    return float(out) if np.ndim(u) == 0 else out


def sample_standard_normal(rng: SeededRng, n: int) -> np.ndarray:
    """n i.i.d. standard normal draws via the polar (Marsaglia) transform.

    Exact in distribution and built purely from the stream's uniform doubles,
    so the sequence is reproducible independent of library internals.
    """
    n = int(n)
    if n < 1:
        raise DomainError("need n >= 1 draws")
    out = np.empty(n, dtype=np.float64)
    filled = 0
    while filled < n:
        # ~78.5% of candidate pairs are accepted; request with headroom.
        pairs = max(8, (n - filled) * 3 // 4 + 4)
        u = rng.uniform(2 * pairs)
        a = 2.0 * u[:pairs] - 1.0
        b = 2.0 * u[pairs:] - 1.0
        s = a * a + b * b
        keep = (s > 0.0) & (s < 1.0)
        factor = np.sqrt(-2.0 * np.log(s[keep]) / s[keep])
        accepted = np.empty(2 * int(keep.sum()), dtype=np.float64)
        accepted[0::2] = a[keep] * factor
        accepted[1::2] = b[keep] * factor
        take = min(accepted.size, n - filled)
        out[filled:filled + take] = accepted[:take]
        filled += take
    return out


@dataclass(frozen=True)
class StaticCopula:
    """A single correlation matrix fit on pooled training data.

    ``l_static`` is row-normalized like the dynamic factors, so the implied
    covariance has exact unit diagonal. ``jitter`` records the ridge that was
    needed to make the Cholesky factorization succeed (0.0 for well
    conditioned fits).
    """

    r_static: np.ndarray
    l_static: "CholeskyFactor"
    jitter: float

    def __post_init__(self):
        r = self.r_static
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise DomainError("correlation matrix must be square")
        if not np.array_equal(r, r.T):
            raise DomainError("correlation matrix must be symmetric")
        if not np.all(np.diag(r) == 1.0):
            raise DomainError("correlation matrix must have exact unit diagonal")
        rebuilt = self.l_static.l @ self.l_static.l.T
        tol = 1e-8 + 4.0 * self.jitter
        if np.max(np.abs(rebuilt - r)) > tol:
            raise ConditioningError("factor does not reproduce the fitted correlation")

    @property
    def horizon(self) -> int:
        return self.r_static.shape[0]


def fit_static_copula(u_train: np.ndarray) -> StaticCopula:
    """Fit the static Gaussian copula on marginal CDF values (one row per sample).

    The correlation matrix of the Gaussianized data is the copula's maximum
    likelihood estimate up to standardization. A doubling ridge keeps the
    factorization alive for degenerate (e.g. comonotone) inputs.
    """
    u = np.asarray(u_train, dtype=np.float64)
    if u.ndim != 2:
        raise DomainError("u_train must be a 2-d array (samples x horizon)")
    n, horizon = u.shape
    if n < horizon + 1:
        raise InsufficientDataError(
            f"need at least {horizon + 1} samples to fit a {horizon}-dim copula, got {n}"
        )
    z = special.ndtri(np.clip(u, CDF_CLAMP, 1.0 - CDF_CLAMP))
    if np.any(z.std(axis=0) < 1e-12):
        raise ConditioningError("a marginal CDF column is constant; cannot correlate")
    r = np.corrcoef(z, rowvar=False)
    r = np.atleast_2d(r)
    r = 0.5 * (r + r.T)
    np.fill_diagonal(r, 1.0)

    lam = 0.0
    while True:
        try:
            l = np.linalg.cholesky(r + lam * np.eye(horizon) if lam else r)
            break
        except np.linalg.LinAlgError:
            lam = 1e-8 if lam == 0.0 else 2.0 * lam
            if lam > 1.0:
                raise ConditioningError("correlation matrix is not factorizable")
    l = l / np.linalg.norm(l, axis=1, keepdims=True)

    from .dcn import CholeskyFactor

    return StaticCopula(r_static=r, l_static=CholeskyFactor(l), jitter=lam)
