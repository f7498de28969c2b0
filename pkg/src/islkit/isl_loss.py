"""Differentiable surrogate losses built on soft rank counts.

The hard rank of an observation among K generated samples is replaced by a
sum of tempered sigmoids, binned into a soft histogram with RBF kernels
centered on 0..K, and compared against the uniform vector.  The same 1D
surrogate drives the multivariate losses: ``sliced_isl_loss`` averages it
over random unit projections, ``marginal_isl_loss`` sums it over the
canonical axes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import diff_engine as de
from .diff_engine import GeneratorSpec, Tape, Var

__all__ = [
    "IslHyperparams",
    "LossAndGrad",
    "AffineTransform",
    "fit_robust_transform",
    "soft_rank",
    "soft_ranks",
    "rbf_soft_histogram",
    "isl_surrogate_loss",
    "isl_loss_and_gradient",
    "sliced_isl_loss",
    "marginal_isl_loss",
]

_NORMS = ("l1", "l2")
_UNIT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class IslHyperparams:
    """Knobs of the surrogate: rank count K, sigmoid slope, RBF length-scale.

    Defaults alpha=10 and nu=0.5 assume inputs standardized to unit
    interquartile range; with nu=0.5 adjacent bins overlap by exp(-2).
    """

    k: int
    alpha: float = 10.0
    nu: float = 0.5
    norm: str = "l1"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.nu <= 0:
            raise ValueError("nu must be positive")
        if self.norm not in _NORMS:
            raise ValueError(f"norm must be one of {_NORMS}")


class LossAndGrad(NamedTuple):
    loss: float
    grad: np.ndarray


# ---------------------------------------------------------------------------
# plain (reference) soft pipeline
# ---------------------------------------------------------------------------


def soft_rank(y: float, fake, alpha: float) -> float:
    """Differentiable rank: sum_i sigmoid(alpha * (y - fake_i)), in [0, K]."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    fake = np.asarray(fake, dtype=np.float64)
    if fake.ndim != 1 or fake.size < 1:
        raise ValueError("fake must be a nonempty 1D vector")
    return float(np.sum(de.stable_sigmoid(alpha * (float(y) - fake))))


def soft_ranks(real, fakes, alpha: float) -> np.ndarray:
    """Vectorized soft ranks of real (N,) against fakes (K,) or (N, K).

    Sigmoid terms are summed in ascending fake order, so any permutation of
    the fake batch leaves the result bit-identical.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    real = np.asarray(real, dtype=np.float64).ravel()
    fakes = np.asarray(fakes, dtype=np.float64)
    row = fakes[None, :] if fakes.ndim == 1 else fakes
    row = np.sort(row, axis=1)
    return np.sum(de.stable_sigmoid(alpha * (real[:, None] - row)), axis=1)


def rbf_soft_histogram(soft_rank_values, k: int, nu: float) -> np.ndarray:
    """Soft histogram q of length K+1: q[n] = mean_i exp(-(a_i - n)^2 / (2 nu^2)).

    Entries lie in [0, 1]; the vector need not sum to 1.  The mean runs over
    soft ranks in ascending order, so permuting the batch cannot change the
    result in the last bit.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    a = np.asarray(soft_rank_values, dtype=np.float64).ravel()
    if a.size < 1:
        raise ValueError("need at least one soft rank")
    if np.any(a < 0.0) or np.any(a > k):
        raise ValueError("soft ranks must lie in [0, k]")
    a = np.sort(a)
    centers = np.arange(k + 1, dtype=np.float64)
    d = a[:, None] - centers[None, :]
    return np.mean(np.exp(-(d * d) / (2.0 * nu * nu)), axis=0)


def isl_surrogate_loss(q, norm: str = "l1") -> float:
    """Distance between the uniform vector 1/(K+1) and the soft histogram q."""
    q = np.asarray(q, dtype=np.float64).ravel()
    if norm not in _NORMS:
        raise ValueError(f"norm must be one of {_NORMS}")
    r = 1.0 / q.size - q
    if norm == "l1":
        return float(np.sum(np.abs(r)))
    return float(np.sqrt(np.sum(r * r)))


# ---------------------------------------------------------------------------
# robust input standardization
# ---------------------------------------------------------------------------


@dataclass
class AffineTransform:
    """Per-coordinate affine map used to standardize training data."""

    center: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.center = np.atleast_1d(np.asarray(self.center, dtype=np.float64))
        self.scale = np.atleast_1d(np.asarray(self.scale, dtype=np.float64))
        if self.center.shape != self.scale.shape:
            raise ValueError("center and scale must have the same shape")
        if np.any(self.scale <= 0):
            raise ValueError("scale must be positive")

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.center) / self.scale

    def inverse(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(y, dtype=np.float64) * self.scale + self.center

    @classmethod
    def identity(cls, dim: int) -> "AffineTransform":
        return cls(center=np.zeros(dim), scale=np.ones(dim))

    def to_dict(self) -> dict:
        return {"center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AffineTransform":
        return cls(center=np.asarray(d["center"]), scale=np.asarray(d["scale"]))


def fit_robust_transform(data: np.ndarray) -> AffineTransform:
    """Zero-median, unit-IQR transform; robust to heavy-tailed columns.

    Degenerate columns (zero IQR) keep scale 1 so the map stays invertible.
    """
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 2:
        raise ValueError("data must be an (n, d) matrix with n >= 2")
    center = np.median(data, axis=0)
    iqr = np.quantile(data, 0.75, axis=0) - np.quantile(data, 0.25, axis=0)
    scale = np.where(iqr > 0.0, iqr, 1.0)
    return AffineTransform(center=center, scale=scale)


# ---------------------------------------------------------------------------
# taped losses
# ---------------------------------------------------------------------------


def _surrogate_loss_var(real_1d: np.ndarray, fakes: Var, hyper: IslHyperparams) -> Var:
    """1D surrogate loss as a taped scalar; fakes shaped (1, K) or (N, K).

    Fakes and soft ranks are reordered ascending before each reduction,
    keeping the loss bit-identical under permutations of either batch.
    """
    n = real_1d.size
    if fakes.shape[0] not in (1, n) or fakes.shape[1] != hyper.k:
        raise ValueError("fakes must be shaped (1, K) or (N, K)")
    fake_order = np.argsort(fakes.value, axis=1, kind="stable")
    rows = np.arange(fakes.shape[0])[:, None]
    fakes_sorted = fakes[rows, fake_order]
    diffs = (real_1d.reshape(n, 1) - fakes_sorted) * hyper.alpha
    ranks = de.vsum(de.vsigmoid(diffs), axis=1)
    rank_order = np.argsort(ranks.value, kind="stable")
    ranks_sorted = ranks[rank_order]
    centers = np.arange(hyper.k + 1, dtype=np.float64)
    dist = ranks_sorted.reshape(n, 1) - centers[None, :]
    kernels = de.vexp(dist * dist * (-1.0 / (2.0 * hyper.nu * hyper.nu)))
    q = de.vmean(kernels, axis=0)
    resid = (1.0 / (hyper.k + 1)) - q
    if hyper.norm == "l1":
        return de.vsum(de.vabs(resid))
    return de.vsqrt(de.vsum(resid * resid))


def _generated_fakes(params_var: Var, gen: GeneratorSpec, noise: np.ndarray, n_real: int) -> Var:
    """Generator outputs reshaped for the 1D surrogate (output width 1 only).

    Noise (K, dim) yields one batch of fakes shared by every observation;
    noise (N, K, dim) yields fresh fakes per observation.
    """
    noise = np.asarray(noise, dtype=np.float64)
    if noise.ndim == 2:
        k = noise.shape[0]
        return de.mlp_forward_tape(params_var, gen, noise).reshape(1, k)
    if noise.ndim == 3:
        if noise.shape[0] != n_real:
            raise ValueError("per-datum noise must have shape (N, K, dim)")
        n, k, dim = noise.shape
        out = de.mlp_forward_tape(params_var, gen, noise.reshape(n * k, dim))
        return out.reshape(n, k)
    raise ValueError("noise must have 2 or 3 dimensions")


def isl_loss_and_gradient(
    params: np.ndarray,
    real_batch: np.ndarray,
    noise_batch: np.ndarray,
    hyper: IslHyperparams,
    gen: GeneratorSpec,
) -> LossAndGrad:
    """Surrogate loss and its reverse-mode gradient for a 1D generator."""
    real = np.asarray(real_batch, dtype=np.float64).ravel()
    if real.size < 1:
        raise ValueError("real_batch must be nonempty")
    if gen.output_dim != 1:
        raise ValueError("1D loss requires generator output width 1")
    tape = Tape()
    p = tape.leaf(params)
    fakes = _generated_fakes(p, gen, noise_batch, real.size)
    loss = _surrogate_loss_var(real, fakes, hyper)
    grad = tape.backward(loss)
    return LossAndGrad(float(loss.value), grad)


def _check_directions(directions: np.ndarray, dim: int) -> np.ndarray:
    directions = np.asarray(directions, dtype=np.float64)
    if directions.ndim != 2 or directions.shape[1] != dim:
        raise ValueError(f"directions must have shape (m, {dim})")
    norms = np.linalg.norm(directions, axis=1)
    if np.any(np.abs(norms - 1.0) > _UNIT_NORM_TOL):
        raise ValueError("projection directions must have unit norm")
    return directions


def sliced_isl_loss(
    params: np.ndarray,
    real_batch: np.ndarray,
    noise_batch: np.ndarray,
    directions: np.ndarray,
    hyper: IslHyperparams,
    gen: GeneratorSpec,
) -> LossAndGrad:
    """Mean over unit directions of the 1D surrogate on projected samples.

    ``noise_batch`` is either (K, dim), shared by all directions, or
    (m, K, dim) with a fresh fake batch per direction.  Per-direction terms
    are accumulated in direction order, so results are reproducible bit for
    bit regardless of how callers parallelize upstream.
    """
    real = np.asarray(real_batch, dtype=np.float64)
    if real.ndim != 2 or real.shape[0] < 1:
        raise ValueError("real_batch must be a nonempty (M, D) matrix")
    d = real.shape[1]
    if gen.output_dim != d:
        raise ValueError("generator output width must match the data dimension")
    directions = _check_directions(directions, d)
    m = directions.shape[0]
    noise_batch = np.asarray(noise_batch, dtype=np.float64)
    if noise_batch.ndim == 3 and noise_batch.shape[0] != m:
        raise ValueError("per-direction noise must have shape (m, K, dim)")

    tape = Tape()
    p = tape.leaf(params)
    total: Var | None = None
    for i in range(m):
        noise_i = noise_batch if noise_batch.ndim == 2 else noise_batch[i]
        k = noise_i.shape[0]
        fakes = de.mlp_forward_tape(p, gen, noise_i)  # (K, D)
        s_col = directions[i].reshape(d, 1)
        proj_fakes = (fakes @ s_col).reshape(1, k)
        proj_real = real @ directions[i]
        term = _surrogate_loss_var(proj_real, proj_fakes, hyper)
        total = term if total is None else total + term
    loss = total / m
    grad = tape.backward(loss)
    return LossAndGrad(float(loss.value), grad)


def marginal_isl_loss(
    params: np.ndarray,
    real_batch: np.ndarray,
    noise_batch: np.ndarray,
    hyper: IslHyperparams,
    gen: GeneratorSpec,
) -> LossAndGrad:
    """Sum over the D coordinate axes of the 1D surrogate (no averaging).

    Equivalent to the sliced loss with canonical axis directions scaled by D;
    serves as the per-marginal baseline for high-dimensional comparisons.
    """
    real = np.asarray(real_batch, dtype=np.float64)
    if real.ndim != 2 or real.shape[0] < 1:
        raise ValueError("real_batch must be a nonempty (M, D) matrix")
    d = real.shape[1]
    if gen.output_dim != d:
        raise ValueError("generator output width must match the data dimension")
    noise_batch = np.asarray(noise_batch, dtype=np.float64)
    if noise_batch.ndim == 3 and noise_batch.shape[0] != d:
        raise ValueError("per-axis noise must have shape (D, K, dim)")

    tape = Tape()
    p = tape.leaf(params)
    total: Var | None = None
    for axis in range(d):
        noise_i = noise_batch if noise_batch.ndim == 2 else noise_batch[axis]
        k = noise_i.shape[0]
        fakes = de.mlp_forward_tape(p, gen, noise_i)  # (K, D)
        proj_fakes = fakes[:, axis].reshape(1, k)
        term = _surrogate_loss_var(real[:, axis], proj_fakes, hyper)
        total = term if total is None else total + term
    grad = tape.backward(total)
    return LossAndGrad(float(total.value), grad)
