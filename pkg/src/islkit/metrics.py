"""Evaluation metrics: KS distance, optimal-map errors, tail area, mode
coverage and histogram divergences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .diff_engine import GeneratorSpec, mlp_forward
from .distributions import (
    NoiseSpec,
    TargetSpec,
    mode_centers,
    noise_cdf,
    sample_noise,
    target_quantile,
)
from .isl_loss import AffineTransform
from .rng import RandomSource

__all__ = [
    "ks_distance",
    "MaeMse",
    "mae_mse_vs_optimal",
    "optimal_map",
    "accdf_area",
    "ModeLayout",
    "mode_layout_for",
    "ModeCoverage",
    "mode_coverage",
    "kl_histogram",
    "js_histogram",
]


# ---------------------------------------------------------------------------
# Kolmogorov-Smirnov
# ---------------------------------------------------------------------------


def ks_distance(sample_a, sample_b_or_cdf) -> float:
    """Sup distance between empirical CDFs (two-sample) or against an
    analytic CDF callable (one-sample), computed exactly."""
    a = np.sort(np.asarray(sample_a, dtype=np.float64).ravel())
    if a.size == 0:
        raise ValueError("empty sample")
    if callable(sample_b_or_cdf):
        f = np.asarray(sample_b_or_cdf(a), dtype=np.float64)
        n = a.size
        upper = np.arange(1, n + 1) / n - f
        lower = f - np.arange(0, n) / n
        return float(max(np.max(upper), np.max(lower), 0.0))
    b = np.sort(np.asarray(sample_b_or_cdf, dtype=np.float64).ravel())
    if b.size == 0:
        raise ValueError("empty sample")
    # sorted-merge sweep over the pooled support
    pooled = np.concatenate([a, b])
    pooled.sort(kind="mergesort")
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


# ---------------------------------------------------------------------------
# distance to the optimal transport map
# ---------------------------------------------------------------------------


class MaeMse(NamedTuple):
    mae: float
    mse: float
    n_mc: int


def optimal_map(noise_spec: NoiseSpec, target_spec: TargetSpec, z: np.ndarray) -> np.ndarray:
    """Monotone map F_target^{-1}(F_noise(z)), the 1D optimal transport map."""
    u = noise_cdf(noise_spec, z)
    eps = 1e-15
    u = np.clip(u, eps, 1.0 - eps)
    return target_quantile(target_spec, u)


def mae_mse_vs_optimal(
    params: np.ndarray,
    gen: GeneratorSpec,
    noise_spec: NoiseSpec,
    target_spec: TargetSpec,
    n_mc: int,
    rng: RandomSource,
    transform: AffineTransform | None = None,
) -> MaeMse:
    """Monte Carlo MAE/MSE between the generator and the optimal map.

    ``transform`` undoes any training-time standardization of the generator
    output.  The estimates are sample-size dependent for heavy-tailed
    targets, so n_mc travels with the result.
    """
    if noise_spec.dim != 1 or target_spec.dim != 1:
        raise ValueError("optimal-map metrics require 1D noise and target")
    if gen.output_dim != 1:
        raise ValueError("generator output width must be 1")
    z = sample_noise(noise_spec, int(n_mc), rng)
    g_star = optimal_map(noise_spec, target_spec, z.ravel())
    g_theta = mlp_forward(params, gen, z).ravel()
    if transform is not None:
        g_theta = transform.inverse(g_theta[:, None]).ravel()
    err = g_star - g_theta
    return MaeMse(mae=float(np.mean(np.abs(err))), mse=float(np.mean(err * err)), n_mc=int(n_mc))


# ---------------------------------------------------------------------------
# tail-area metric
# ---------------------------------------------------------------------------


def accdf_area(real_sample, gen_sample) -> float:
    """Area between log-log CCDF curves of two positive samples.

    Uses the empirical inverse CCDFs (descending order statistics) at levels
    i/n for i = 1..n, n = len(real): the absolute value of
    sum_i [ln F_real^{-1}(i/n) - ln F_gen^{-1}(i/n)] * ln((i+1)/i).
    """
    real = np.asarray(real_sample, dtype=np.float64).ravel()
    gen = np.asarray(gen_sample, dtype=np.float64).ravel()
    if real.size < 2 or gen.size < 1:
        raise ValueError("need at least 2 real and 1 generated values")
    if np.any(real <= 0.0) or np.any(gen <= 0.0):
        raise ValueError("tail-area metric requires strictly positive samples")
    n, m = real.size, gen.size
    # contiguous copies: strided views can take a different SIMD log path
    real_desc = np.sort(real)[::-1].copy()
    gen_desc = np.sort(gen)[::-1].copy()
    i = np.arange(1, n + 1)
    # inverse CCDF of the generated sample at the real sample's levels i/n
    gen_idx = np.minimum(np.ceil(i * m / n).astype(np.int64) - 1, m - 1)
    terms = (np.log(real_desc) - np.log(gen_desc[gen_idx])) * np.log((i + 1) / i)
    return float(abs(np.sum(terms)))


# ---------------------------------------------------------------------------
# mode coverage
# ---------------------------------------------------------------------------


@dataclass
class ModeLayout:
    """Gaussian mode centers and their (scalar or per-mode) standard deviation."""

    centers: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=np.float64))
        if self.centers.shape[0] < 1:
            raise ValueError("need at least one center")
        std = np.asarray(self.std, dtype=np.float64)
        if std.ndim == 0:
            std = np.full(self.centers.shape[0], float(std))
        if std.shape != (self.centers.shape[0],) or np.any(std <= 0):
            raise ValueError("std must be positive, scalar or one per mode")
        self.std = std


def mode_layout_for(spec: TargetSpec) -> ModeLayout:
    """Mode layout of the multi-modal 2D benchmark targets."""
    return ModeLayout(centers=mode_centers(spec), std=spec.params["std"])


class ModeCoverage(NamedTuple):
    n_modes: int
    pct_hq: float


def mode_coverage(samples: np.ndarray, layout: ModeLayout) -> ModeCoverage:
    """Count covered modes and the share of high-quality samples.

    A sample is high-quality when its nearest center lies within 3 standard
    deviations; a mode is covered when at least one high-quality sample is
    assigned to it.  Distance ties go to the lowest center index.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] < 1:
        raise ValueError("empty sample")
    if samples.shape[1] != layout.centers.shape[1]:
        raise ValueError("sample and layout dimensions disagree")
    d2 = np.sum((samples[:, None, :] - layout.centers[None, :, :]) ** 2, axis=2)
    nearest = np.argmin(d2, axis=1)
    dist = np.sqrt(d2[np.arange(samples.shape[0]), nearest])
    hq = dist <= 3.0 * layout.std[nearest]
    covered = np.unique(nearest[hq])
    return ModeCoverage(n_modes=int(covered.size), pct_hq=float(100.0 * np.mean(hq)))


# ---------------------------------------------------------------------------
# histogram divergences
# ---------------------------------------------------------------------------


def _grid_histogram(sample: np.ndarray, bins_per_axis: int, bounds) -> np.ndarray:
    x = np.atleast_2d(np.asarray(sample, dtype=np.float64))
    d = x.shape[1]
    if d not in (1, 2):
        raise ValueError("grid histograms support 1D or 2D samples")
    edges = []
    for ax in range(d):
        lo, hi = bounds[ax]
        if not hi > lo:
            raise ValueError("bounds must have positive extent")
        edges.append(np.linspace(lo, hi, bins_per_axis + 1))
    # clip so out-of-range mass lands in the edge bins
    idx = []
    for ax in range(d):
        j = np.searchsorted(edges[ax], x[:, ax], side="right") - 1
        idx.append(np.clip(j, 0, bins_per_axis - 1))
    if d == 1:
        flat = idx[0]
    else:
        flat = idx[0] * bins_per_axis + idx[1]
    counts = np.bincount(flat, minlength=bins_per_axis**d).astype(np.float64)
    return counts / counts.sum()


def _as_bounds(bounds, dim: int):
    b = np.asarray(bounds, dtype=np.float64)
    if b.ndim == 1:
        b = np.tile(b, (dim, 1))
    if b.shape != (dim, 2):
        raise ValueError("bounds must be (lo, hi) or one pair per axis")
    return b


def kl_histogram(sample_p, sample_q, bins_per_axis: int = 64, bounds=None) -> float:
    """KL(p_hat || q_hat) on a shared fixed grid with additive smoothing.

    Both histograms are smoothed by eps = 1/(M * bins) and renormalized.
    Smoothing the p side too keeps the estimate a true KL between pmfs
    (hence nonnegative) and makes kl(x, x) exactly zero.
    """
    p = np.atleast_2d(np.asarray(sample_p, dtype=np.float64))
    q = np.atleast_2d(np.asarray(sample_q, dtype=np.float64))
    if p.shape[1] != q.shape[1]:
        raise ValueError("samples must share a dimension")
    if bounds is None:
        both = np.vstack([p, q])
        bounds = np.stack([both.min(axis=0), both.max(axis=0) + 1e-9], axis=1)
    bounds = _as_bounds(bounds, p.shape[1])
    p_hat = _grid_histogram(p, bins_per_axis, bounds)
    q_hat = _grid_histogram(q, bins_per_axis, bounds)
    eps = 1.0 / (q.shape[0] * q_hat.size)
    p_smooth = (p_hat + eps) / (1.0 + eps * p_hat.size)
    q_smooth = (q_hat + eps) / (1.0 + eps * q_hat.size)
    return float(np.sum(p_smooth * (np.log(p_smooth) - np.log(q_smooth))))


def js_histogram(sample_p, sample_q, bins_per_axis: int = 64, bounds=None) -> float:
    """Jensen-Shannon divergence on the shared grid (bounded by ln 2)."""
    p = np.atleast_2d(np.asarray(sample_p, dtype=np.float64))
    q = np.atleast_2d(np.asarray(sample_q, dtype=np.float64))
    if p.shape[1] != q.shape[1]:
        raise ValueError("samples must share a dimension")
    if bounds is None:
        both = np.vstack([p, q])
        bounds = np.stack([both.min(axis=0), both.max(axis=0) + 1e-9], axis=1)
    bounds = _as_bounds(bounds, p.shape[1])
    p_hat = _grid_histogram(p, bins_per_axis, bounds)
    q_hat = _grid_histogram(q, bins_per_axis, bounds)
    mix = 0.5 * (p_hat + q_hat)

    def _kl(a, b):
        mask = a > 0
        return float(np.sum(a[mask] * (np.log(a[mask]) - np.log(b[mask]))))

    return 0.5 * _kl(p_hat, mix) + 0.5 * _kl(q_hat, mix)
