"""Hard rank statistics, their histogram, and the uniformity tests built on it.

The rank of a real observation y among K model draws is the number of draws
at or below y.  When model and data laws coincide the rank is uniform on
{0..K}; the divergence ``empirical_dk`` and the Pearson chi-square test both
measure departures from that uniform law.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .rng import RandomSource

__all__ = [
    "RankHistogram",
    "Chi2Result",
    "hard_rank",
    "hard_ranks",
    "histogram_from_ranks",
    "rank_histogram",
    "empirical_dk",
    "chi2_uniformity",
    "regularized_gamma_p",
    "regularized_gamma_q",
    "chi2_survival",
]


@dataclass
class RankHistogram:
    """Counts of the rank statistic over bins 0..k."""

    k: int
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.counts.shape != (self.k + 1,):
            raise ValueError(f"counts must have length k+1 = {self.k + 1}")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")

    @property
    def n_total(self) -> int:
        return int(self.counts.sum())

    def pmf(self) -> np.ndarray:
        n = self.n_total
        if n == 0:
            raise ValueError("empty histogram")
        return self.counts / n

    def merge(self, other: "RankHistogram") -> "RankHistogram":
        """Combine two histograms over the same K by adding counts."""
        if other.k != self.k:
            raise ValueError("cannot merge histograms with different k")
        return RankHistogram(self.k, self.counts + other.counts)

    def to_dict(self) -> dict:
        return {"k": self.k, "counts": self.counts.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RankHistogram":
        return cls(k=int(d["k"]), counts=np.asarray(d["counts"], dtype=np.int64))


def hard_rank(y: float, fake) -> int:
    """Number of entries of ``fake`` at or below y (ties count as below)."""
    fake = np.asarray(fake, dtype=np.float64)
    if fake.ndim != 1 or fake.size < 1:
        raise ValueError("fake must be a nonempty 1D vector")
    if not np.isfinite(y) or not np.all(np.isfinite(fake)):
        raise ValueError("hard_rank requires finite inputs")
    return int(np.count_nonzero(fake <= y))


def hard_ranks(real: np.ndarray, fakes: np.ndarray) -> np.ndarray:
    """Row-wise ranks: real (N,) against per-datum fakes (N, K)."""
    real = np.asarray(real, dtype=np.float64)
    fakes = np.asarray(fakes, dtype=np.float64)
    if fakes.ndim != 2 or fakes.shape[0] != real.shape[0]:
        raise ValueError("fakes must have shape (len(real), K)")
    if not (np.all(np.isfinite(real)) and np.all(np.isfinite(fakes))):
        raise ValueError("hard_ranks requires finite inputs")
    return np.count_nonzero(fakes <= real[:, None], axis=1)


def histogram_from_ranks(ranks: np.ndarray, k: int) -> RankHistogram:
    ranks = np.asarray(ranks, dtype=np.int64)
    if np.any(ranks < 0) or np.any(ranks > k):
        raise ValueError("ranks must lie in 0..k")
    return RankHistogram(k, np.bincount(ranks, minlength=k + 1))


def rank_histogram(real_data, fake_sampler, k: int, rng: RandomSource) -> RankHistogram:
    """Accumulate the rank histogram of ``real_data``.

    ``fake_sampler(k, rng)`` must return K fresh model draws; it is invoked
    once per datum so every observation is ranked against its own fakes.
    """
    real = np.asarray(real_data, dtype=np.float64).ravel()
    if real.size < 1:
        raise ValueError("real_data must be nonempty")
    if k < 1:
        raise ValueError("k must be >= 1")
    fakes = np.empty((real.size, k))
    for i in range(real.size):
        draw = np.asarray(fake_sampler(k, rng), dtype=np.float64).ravel()
        if draw.shape != (k,):
            raise ValueError("fake_sampler must return exactly k values")
        fakes[i] = draw
    return histogram_from_ranks(hard_ranks(real, fakes), k)


def empirical_dk(hist: RankHistogram) -> float:
    """Scaled l1 distance between the empirical rank pmf and uniform.

    Returns (1/(K+1)) * sum_n |1/(K+1) - pmf(n)|, which lies in
    [0, 2K/(K+1)^2] and is 0 exactly when the counts are uniform.
    """
    q = hist.pmf()
    u = 1.0 / (hist.k + 1)
    return float(np.sum(np.abs(u - q)) * u)


# ---------------------------------------------------------------------------
# regularized incomplete gamma (series + Lentz continued fraction)
# ---------------------------------------------------------------------------

_GAMMA_TOL = 1e-14
_GAMMA_MAX_ITER = 10_000


def regularized_gamma_p(s: float, x: float) -> float:
    """Lower regularized incomplete gamma P(s, x), absolute error < 1e-12."""
    if s <= 0 or x < 0:
        raise ValueError("requires s > 0 and x >= 0")
    if x == 0.0:
        return 0.0
    if x < s + 1.0:
        return _gamma_p_series(s, x)
    return 1.0 - _gamma_q_contfrac(s, x)


def regularized_gamma_q(s: float, x: float) -> float:
    """Upper regularized incomplete gamma Q(s, x) = 1 - P(s, x)."""
    if s <= 0 or x < 0:
        raise ValueError("requires s > 0 and x >= 0")
    if x == 0.0:
        return 1.0
    if x < s + 1.0:
        return 1.0 - _gamma_p_series(s, x)
    return _gamma_q_contfrac(s, x)


def _gamma_p_series(s: float, x: float) -> float:
    term = 1.0 / s
    total = term
    k = 0
    while abs(term) > _GAMMA_TOL * abs(total):
        k += 1
        term *= x / (s + k)
        total += term
        if k > _GAMMA_MAX_ITER:
            raise RuntimeError("incomplete gamma series failed to converge")
    log_prefactor = -x + s * math.log(x) - math.lgamma(s)
    return total * math.exp(log_prefactor)


def _gamma_q_contfrac(s: float, x: float) -> float:
    # modified Lentz evaluation of the continued fraction for Q(s, x)
    tiny = 1e-300
    b = x + 1.0 - s
    c = 1.0 / tiny
    d = 1.0 / b if b != 0.0 else 1.0 / tiny
    h = d
    for i in range(1, _GAMMA_MAX_ITER):
        an = -i * (i - s)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _GAMMA_TOL:
            break
    else:
        raise RuntimeError("incomplete gamma continued fraction failed to converge")
    log_prefactor = -x + s * math.log(x) - math.lgamma(s)
    return math.exp(log_prefactor) * h


def chi2_survival(x: float, df: float) -> float:
    """Survival function of the chi-square law with ``df`` degrees of freedom."""
    if x <= 0.0:
        return 1.0
    return regularized_gamma_q(df / 2.0, x / 2.0)


@dataclass
class Chi2Result:
    statistic: float
    p_value: float
    accept: bool


def chi2_uniformity(hist: RankHistogram, alpha: float = 0.05) -> Chi2Result:
    """Pearson chi-square test of rank uniformity on {0..K}.

    The expected count per bin is n/(K+1); acceptance means p_value > alpha.
    Warns (without failing) when n < 5*(K+1), where the chi-square reference
    law is a rough approximation.
    """
    n = hist.n_total
    if n == 0:
        raise ValueError("empty histogram")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    bins = hist.k + 1
    if n < 5 * bins:
        warnings.warn(
            f"chi-square uniformity test with n={n} < 5*(K+1)={5 * bins} counts",
            stacklevel=2,
        )
    expected = n / bins
    statistic = float(np.sum((hist.counts - expected) ** 2) / expected)
    p_value = chi2_survival(statistic, df=hist.k)
    return Chi2Result(statistic=statistic, p_value=p_value, accept=p_value > alpha)
