"""Training procedures for rank-statistic losses.

``train_isl_1d`` minimizes the 1D surrogate with a progressive rank
schedule: after each epoch a hard rank histogram is built from fresh fakes
over the full training set and a Pearson chi-square test decides whether to
advance K.  ``train_isl_sliced`` trains multivariate generators on random
one-dimensional projections with a fixed K.  ``pareto_isl_setup`` switches
a run to generalized-Pareto noise with a Hill-estimated tail index and a
piecewise-linear generator, the configuration used for heavy-tailed targets.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .diff_engine import GeneratorSpec, adam_init, adam_step, mlp_forward
from .distributions import NoiseSpec, TargetSpec, sample_noise, sample_target, sample_unit_sphere, target_cdf
from .isl_loss import (
    AffineTransform,
    IslHyperparams,
    fit_robust_transform,
    isl_loss_and_gradient,
    sliced_isl_loss,
)
from .metrics import ks_distance
from .rank_stats import chi2_uniformity, hard_ranks, histogram_from_ranks
from .rng import RandomSource

__all__ = [
    "TrainConfig",
    "TrainReport",
    "TrainResult",
    "TrainingError",
    "train_isl_1d",
    "train_isl_sliced",
    "hill_estimator",
    "pareto_isl_setup",
    "default_k_schedule",
]


class TrainingError(RuntimeError):
    """Raised when optimization produces a non-finite loss or gradient."""


def default_k_schedule(k_max: int) -> tuple[int, ...]:
    """Even ranks 2, 4, ... up to k_max (k_max appended when odd)."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if k_max == 1:
        return (1,)
    schedule = list(range(2, k_max + 1, 2))
    if schedule[-1] != k_max:
        schedule.append(k_max)
    return tuple(schedule)


@dataclass
class TrainConfig:
    """Full description of one training run; reproducible from its seed.

    ``fresh_fakes_per_datum`` controls the 1D loss only.  It defaults to
    true because sharing one small fake batch across the whole minibatch
    makes the surrogate degenerate at the low-K stages of progressive
    training (a collapsed generator then scores better than the true one).
    Projection training always shares one fake batch per direction.
    """

    target: TargetSpec
    noise: NoiseSpec
    generator: GeneratorSpec
    hyper: IslHyperparams
    epochs: int
    dataset_size: int
    batch_size: int
    learning_rate: float
    k_max: int | None = None
    k_schedule: tuple[int, ...] | None = None
    projections: int = 10
    chi2_alpha: float = 0.05
    seed: int = 0
    fresh_fakes_per_datum: bool = True
    standardize: bool = True
    eval_samples: int = 10_000

    def __post_init__(self):
        if self.k_max is None:
            self.k_max = self.hyper.k
        if self.k_schedule is None:
            self.k_schedule = default_k_schedule(self.k_max)
        self.k_schedule = tuple(int(k) for k in self.k_schedule)
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.dataset_size < 1 or self.batch_size < 1:
            raise ValueError("dataset_size and batch_size must be >= 1")
        if self.batch_size > self.dataset_size:
            raise ValueError("batch_size must not exceed dataset_size")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if any(b <= a for a, b in zip(self.k_schedule, self.k_schedule[1:])):
            raise ValueError("k_schedule must be strictly increasing")
        if self.k_schedule[-1] != self.k_max:
            raise ValueError("k_schedule must end at k_max")
        if self.projections < 1:
            raise ValueError("projections must be >= 1")
        if not 0.0 < self.chi2_alpha < 1.0:
            raise ValueError("chi2_alpha must lie in (0, 1)")
        if self.generator.input_dim != self.noise.dim:
            raise ValueError("generator input width must equal the noise dimension")

    def to_dict(self) -> dict:
        return {
            "target": self.target.to_dict(),
            "noise": self.noise.to_dict(),
            "generator": self.generator.to_dict(),
            "hyper": {
                "k": self.hyper.k,
                "alpha": self.hyper.alpha,
                "nu": self.hyper.nu,
                "norm": self.hyper.norm,
            },
            "epochs": self.epochs,
            "dataset_size": self.dataset_size,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "k_max": self.k_max,
            "k_schedule": list(self.k_schedule),
            "projections": self.projections,
            "chi2_alpha": self.chi2_alpha,
            "seed": self.seed,
            "fresh_fakes_per_datum": self.fresh_fakes_per_datum,
            "standardize": self.standardize,
            "eval_samples": self.eval_samples,
        }


@dataclass
class TrainReport:
    """Per-epoch trace of a run plus its final evaluation block.

    ``epoch_seconds`` is measured wall-clock and therefore not reproducible;
    everything else is a pure function of the TrainConfig.
    """

    method: str
    losses: list = field(default_factory=list)
    k_values: list = field(default_factory=list)
    chi2_pvalues: list = field(default_factory=list)
    chi2_accepts: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    final_metrics: dict = field(default_factory=dict)
    checkpoint_path: str | None = None

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "method": self.method,
            "losses": self.losses,
            "k_values": self.k_values,
            "chi2_pvalues": self.chi2_pvalues,
            "chi2_accepts": self.chi2_accepts,
            "final_metrics": self.final_metrics,
            "checkpoint_path": self.checkpoint_path,
        }
        if include_timing:
            out["epoch_seconds"] = self.epoch_seconds
        return out


@dataclass
class TrainResult:
    report: TrainReport
    params: np.ndarray
    transform: AffineTransform
    k_final: int


def _prepare_dataset(config: TrainConfig, dataset, root: RandomSource, dim: int) -> np.ndarray:
    if dataset is None:
        return sample_target(config.target, config.dataset_size, root.split("data"))
    dataset = np.asarray(dataset, dtype=np.float64)
    if dataset.ndim == 1:
        dataset = dataset[:, None]
    if dataset.shape[1] != dim:
        raise ValueError(f"dataset must have {dim} columns")
    return dataset


def _fit_transform(config: TrainConfig, dataset: np.ndarray) -> AffineTransform:
    if config.standardize:
        return fit_robust_transform(dataset)
    return AffineTransform.identity(dataset.shape[1])


def train_isl_1d(config: TrainConfig, dataset=None, epoch_callback=None, initial_params=None) -> TrainResult:
    """Progressive-K training of a scalar generator.

    Per epoch: one pass over shuffled minibatches at the current K, then a
    chi-square uniformity gate on hard ranks (fresh fakes per datum, full
    training set).  Acceptance advances K along the schedule until k_max.
    ``epoch_callback(epoch, params)``, if given, runs outside the timed
    region; ``initial_params`` warm-starts instead of the seeded init.
    """
    if config.target.dim != 1 and dataset is None:
        raise ValueError("train_isl_1d requires a one-dimensional target")
    if config.generator.output_dim != 1:
        raise ValueError("train_isl_1d requires generator output width 1")

    root = RandomSource(config.seed)
    data = _prepare_dataset(config, dataset, root, 1)
    n = data.shape[0]
    transform = _fit_transform(config, data)
    data_std = transform.transform(data).ravel()

    params = config.generator.init_params() if initial_params is None else np.array(initial_params, dtype=np.float64)
    adam = adam_init(params.size, config.learning_rate)
    noise_rng = root.split("noise")
    shuffle_rng = root.split("shuffle")
    gate_rng = root.split("gate")

    report = TrainReport(method="isl_1d")
    schedule = config.k_schedule
    k_idx = 0
    k = schedule[0]

    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        hyper_k = replace(config.hyper, k=k)
        perm = shuffle_rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            y = data_std[idx]
            if config.fresh_fakes_per_datum:
                noise = sample_noise(config.noise, idx.size * k, noise_rng)
                noise = noise.reshape(idx.size, k, config.noise.dim)
            else:
                noise = sample_noise(config.noise, k, noise_rng)
            out = isl_loss_and_gradient(params, y, noise, hyper_k, config.generator)
            if not np.isfinite(out.loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            params, adam = adam_step(adam, params, out.grad)
            batch_losses.append(out.loss)

        gate_noise = sample_noise(config.noise, n * k, gate_rng)
        fakes = mlp_forward(params, config.generator, gate_noise).reshape(n, k)
        gate = chi2_uniformity(histogram_from_ranks(hard_ranks(data_std, fakes), k), config.chi2_alpha)

        report.losses.append(float(np.mean(batch_losses)))
        report.k_values.append(int(k))
        report.chi2_pvalues.append(gate.p_value)
        report.chi2_accepts.append(gate.accept)
        report.epoch_seconds.append(time.perf_counter() - t0)

        if gate.accept and k < config.k_max:
            k_idx += 1
            k = schedule[k_idx]

        if epoch_callback is not None:
            epoch_callback(epoch, params.copy())

    assert all(b >= a for a, b in zip(report.k_values, report.k_values[1:]))
    assert max(report.k_values) <= config.k_max

    report.final_metrics = _final_metrics_1d(config, params, transform, root.split("final-metrics"))
    return TrainResult(report=report, params=params, transform=transform, k_final=int(k))


def _final_metrics_1d(config: TrainConfig, params, transform, rng) -> dict:
    z = sample_noise(config.noise, config.eval_samples, rng)
    gen = transform.inverse(mlp_forward(params, config.generator, z)).ravel()
    ksd = ks_distance(gen, lambda x: target_cdf(config.target, x))
    return {"ksd": float(ksd)}


def train_isl_sliced(config: TrainConfig, dataset=None, directions=None, epoch_callback=None, initial_params=None) -> TrainResult:
    """Random-projection training of a multivariate generator at fixed K.

    Per iteration: draw fresh unit directions and a real minibatch, average
    the per-direction 1D surrogate gradients (the division by m happens in
    the loss), and take one optimizer step.  ``directions`` pins the
    projections for diagnostics instead of drawing them.
    """
    dim = config.target.dim if dataset is None else np.atleast_2d(np.asarray(dataset)).shape[-1]
    if dataset is None and config.target.dim < 2:
        raise ValueError("train_isl_sliced requires a target dimension >= 2")
    if config.generator.output_dim != dim:
        raise ValueError("generator output width must match the data dimension")

    root = RandomSource(config.seed)
    data = _prepare_dataset(config, dataset, root, dim)
    n = data.shape[0]
    transform = _fit_transform(config, data)
    data_std = transform.transform(data)

    k = config.k_max
    hyper_k = replace(config.hyper, k=k)
    params = config.generator.init_params() if initial_params is None else np.array(initial_params, dtype=np.float64)
    adam = adam_init(params.size, config.learning_rate)
    noise_rng = root.split("noise")
    shuffle_rng = root.split("shuffle")
    dirs_rng = root.split("directions")

    if directions is not None:
        directions = np.asarray(directions, dtype=np.float64)
    m = config.projections if directions is None else directions.shape[0]

    report = TrainReport(method="isl_sliced")
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        perm = shuffle_rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            batch = data_std[idx]
            dirs = sample_unit_sphere(dim, m, dirs_rng) if directions is None else directions
            noise = sample_noise(config.noise, m * k, noise_rng).reshape(m, k, config.noise.dim)
            out = sliced_isl_loss(params, batch, noise, dirs, hyper_k, config.generator)
            if not np.isfinite(out.loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            params, adam = adam_step(adam, params, out.grad)
            batch_losses.append(out.loss)

        report.losses.append(float(np.mean(batch_losses)))
        report.k_values.append(int(k))
        report.chi2_pvalues.append(None)
        report.chi2_accepts.append(None)
        report.epoch_seconds.append(time.perf_counter() - t0)

        if epoch_callback is not None:
            epoch_callback(epoch, params.copy())

    return TrainResult(report=report, params=params, transform=transform, k_final=int(k))


# ---------------------------------------------------------------------------
# tail-index estimation
# ---------------------------------------------------------------------------


def hill_estimator(data, k_top: int) -> float:
    """Hill tail-index estimate from the k_top largest order statistics.

    Mean of log(X_(i) / X_(k_top+1)) over the k_top largest values, with
    X_(1) >= X_(2) >= ... in descending order.
    """
    x = np.asarray(data, dtype=np.float64).ravel()
    if k_top < 1:
        raise ValueError("k_top must be >= 1")
    if x.size < k_top + 1:
        raise ValueError("need at least k_top + 1 data points")
    top = np.sort(np.partition(x, x.size - (k_top + 1))[-(k_top + 1) :])[::-1]
    if top[-1] <= 0.0:
        raise ValueError("the top k_top + 1 order statistics must be positive")
    return float(np.mean(np.log(top[:k_top] / top[k_top])))


def pareto_isl_setup(data, config: TrainConfig) -> TrainConfig:
    """Configure a run for heavy tails: GPD noise with a Hill-estimated
    tail index (absolute values handle two-sided tails) and a piecewise-
    linear generator."""
    x = np.abs(np.asarray(data, dtype=np.float64).ravel())
    if x.size < 2 or np.all(x == x[0]):
        raise ValueError("degenerate data: tail index is undefined")
    if not config.generator.is_piecewise_linear:
        raise ValueError("GPD-noise training requires relu/identity activations only")
    k_top = int(np.clip(int(0.01 * x.size), 50, 2000))
    k_top = min(k_top, x.size - 1)
    xi = hill_estimator(x, k_top)
    noise = NoiseSpec("gpd", {"xi": xi, "sigma": 1.0}, dim=config.noise.dim)
    return replace(config, noise=noise)
