"""Config-driven experiment runner.

``islkit run config.json`` trains one generator per seed and writes, per
seed, a deterministic ``report_<seed>.json``, a ``checkpoint_<seed>.bin``,
a ``timing_<seed>.json`` sidecar (wall-clock lives there so reports stay
byte-identical across reruns), diagnostic PNG figures, and one row of
``summary.csv``.  ``rankdiag`` and ``sample`` operate on saved checkpoints.

Exit status is 0 on success and 1 with a machine-readable error JSON on
stdout for config or numeric failures.  ISL_THREADS caps worker processes
for seed sweeps.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import os
import sys
from pathlib import Path

import numpy as np

from .diff_engine import GeneratorSpec, load_checkpoint, mlp_forward, save_checkpoint
from .distributions import NoiseSpec, TargetSpec, mode_centers, sample_noise, sample_target, target_cdf
from .isl_loss import AffineTransform, IslHyperparams
from .metrics import (
    accdf_area,
    js_histogram,
    kl_histogram,
    ks_distance,
    mae_mse_vs_optimal,
    mode_coverage,
    mode_layout_for,
)
from .rank_stats import chi2_uniformity, hard_ranks, histogram_from_ranks
from .rng import RandomSource
from .training import TrainConfig, TrainingError, train_isl_1d, train_isl_sliced
from . import plots

_METHODS = ("isl_1d", "isl_sliced")
_METRICS = ("ksd", "mae", "mse", "accdf", "mode_coverage", "kl2d", "js2d", "js_marginal_mean")
_MODE_TARGETS = ("ring2d", "grid2d", "circle_gaussians")


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(message)
        self.key = key


def _fail(kind: str, key: str | None, detail: str) -> int:
    print(json.dumps({"error": kind, "key": key, "detail": detail}))
    return 1


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------


def _expect(raw: dict, key: str, types, default=None, required=False, path=""):
    full = f"{path}{key}"
    if key not in raw:
        if required:
            raise ConfigError(full, f"missing required key {full!r}")
        return default
    val = raw[key]
    if types is not None and not isinstance(val, types):
        raise ConfigError(full, f"{full!r} has the wrong type: expected {types}, got {type(val).__name__}")
    return val


def validate_config(raw: dict) -> dict:
    """Check an experiment config and fill every default.

    Returns the normalized config that is echoed into reports, so each
    artifact records the exact settings that produced it.
    """
    if not isinstance(raw, dict):
        raise ConfigError("", "config must be a JSON object")
    known = {
        "method", "target", "noise", "generator", "hyper", "training",
        "seeds", "output_dir", "metrics", "eval_samples", "plots",
    }
    for key in raw:
        if key not in known:
            raise ConfigError(key, f"unknown top-level key {key!r}")

    method = _expect(raw, "method", str, required=True)
    if method not in _METHODS:
        raise ConfigError("method", f"method must be one of {_METHODS}, got {method!r}")

    target_dict = _expect(raw, "target", dict, required=True)
    try:
        target = TargetSpec.from_dict(target_dict)
    except (ValueError, KeyError) as exc:
        raise ConfigError("target", f"invalid target: {exc}") from exc

    noise_dict = _expect(raw, "noise", dict, required=True)
    try:
        noise = NoiseSpec.from_dict(noise_dict)
    except (ValueError, KeyError) as exc:
        raise ConfigError("noise", f"invalid noise: {exc}") from exc

    gen_dict = dict(_expect(raw, "generator", dict, required=True))
    gen_seed_fixed = "seed" in gen_dict and gen_dict["seed"] is not None
    gen_dict.setdefault("seed", 0)
    try:
        generator = GeneratorSpec.from_dict(gen_dict)
    except (ValueError, KeyError) as exc:
        raise ConfigError("generator", f"invalid generator: {exc}") from exc

    hyper_raw = _expect(raw, "hyper", dict, default={})
    hyper_known = {"k", "alpha", "nu", "norm"}
    for key in hyper_raw:
        if key not in hyper_known:
            raise ConfigError(f"hyper.{key}", f"unknown hyper key {key!r}")
    try:
        hyper = IslHyperparams(
            k=int(_expect(hyper_raw, "k", (int,), default=10, path="hyper.")),
            alpha=float(_expect(hyper_raw, "alpha", (int, float), default=10.0, path="hyper.")),
            nu=float(_expect(hyper_raw, "nu", (int, float), default=0.5, path="hyper.")),
            norm=_expect(hyper_raw, "norm", str, default="l1", path="hyper."),
        )
    except ValueError as exc:
        raise ConfigError("hyper", f"invalid hyper: {exc}") from exc

    training = _expect(raw, "training", dict, required=True)
    training_known = {
        "epochs", "dataset_size", "batch_size", "learning_rate", "k_max",
        "k_schedule", "projections", "chi2_alpha", "fresh_fakes_per_datum", "standardize",
    }
    for key in training:
        if key not in training_known:
            raise ConfigError(f"training.{key}", f"unknown training key {key!r}")
    epochs = _expect(training, "epochs", (int,), required=True, path="training.")
    dataset_size = _expect(training, "dataset_size", (int,), required=True, path="training.")
    batch_size = _expect(training, "batch_size", (int,), default=dataset_size, path="training.")
    learning_rate = float(_expect(training, "learning_rate", (int, float), default=1e-3, path="training."))
    k_max = _expect(training, "k_max", (int,), default=hyper.k, path="training.")
    k_schedule = _expect(training, "k_schedule", list, default=None, path="training.")
    projections = _expect(training, "projections", (int,), default=10, path="training.")
    chi2_alpha = float(_expect(training, "chi2_alpha", (int, float), default=0.05, path="training."))
    fresh = bool(_expect(training, "fresh_fakes_per_datum", bool, default=True, path="training."))
    standardize = bool(_expect(training, "standardize", bool, default=True, path="training."))

    seeds = _expect(raw, "seeds", list, required=True)
    if not seeds or not all(isinstance(s, int) for s in seeds):
        raise ConfigError("seeds", "seeds must be a nonempty list of integers")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "seeds must be distinct")

    output_dir = _expect(raw, "output_dir", str, required=True)
    metrics = _expect(raw, "metrics", list, default=["ksd"] if target.dim == 1 else [])
    for name in metrics:
        if name not in _METRICS:
            raise ConfigError("metrics", f"unknown metric {name!r}; choose from {_METRICS}")
    eval_samples = _expect(raw, "eval_samples", (int,), default=10_000)
    if eval_samples < 2:
        raise ConfigError("eval_samples", "eval_samples must be >= 2")
    render_plots = bool(_expect(raw, "plots", bool, default=True))

    if method == "isl_1d" and target.dim != 1:
        raise ConfigError("method", "isl_1d requires a one-dimensional target")
    if method == "isl_sliced" and target.dim < 2:
        raise ConfigError("method", "isl_sliced requires a target dimension >= 2")
    for name in metrics:
        if name in ("ksd", "mae", "mse", "accdf") and target.dim != 1:
            raise ConfigError("metrics", f"metric {name!r} requires a 1D target")
        if name == "mode_coverage" and target.kind not in _MODE_TARGETS:
            raise ConfigError("metrics", f"metric {name!r} requires one of {_MODE_TARGETS}")
        if name in ("kl2d", "js2d") and target.dim != 2:
            raise ConfigError("metrics", f"metric {name!r} requires a 2D target")
        if name == "js_marginal_mean" and target.dim < 2:
            raise ConfigError("metrics", f"metric {name!r} requires a multivariate target")

    # round-trip through a template TrainConfig to catch cross-field issues
    try:
        template = TrainConfig(
            target=target,
            noise=noise,
            generator=generator,
            hyper=hyper,
            epochs=epochs,
            dataset_size=dataset_size,
            batch_size=batch_size,
            learning_rate=learning_rate,
            k_max=k_max,
            k_schedule=tuple(k_schedule) if k_schedule is not None else None,
            projections=projections,
            chi2_alpha=chi2_alpha,
            fresh_fakes_per_datum=fresh,
            standardize=standardize,
        )
    except ValueError as exc:
        raise ConfigError("training", str(exc)) from exc

    normalized = {
        "method": method,
        "target": target.to_dict(),
        "noise": noise.to_dict(),
        "generator": generator.to_dict(),
        "generator_seed_fixed": gen_seed_fixed,
        "hyper": {"k": hyper.k, "alpha": hyper.alpha, "nu": hyper.nu, "norm": hyper.norm},
        "training": {
            "epochs": epochs,
            "dataset_size": dataset_size,
            "batch_size": batch_size,
            "learning_rate": learning_rate,
            "k_max": template.k_max,
            "k_schedule": list(template.k_schedule),
            "projections": projections,
            "chi2_alpha": chi2_alpha,
            "fresh_fakes_per_datum": fresh,
            "standardize": standardize,
        },
        "seeds": list(seeds),
        "output_dir": output_dir,
        "metrics": list(metrics),
        "eval_samples": int(eval_samples),
        "plots": render_plots,
    }
    return normalized


def build_train_config(norm: dict, seed: int) -> TrainConfig:
    gen = dict(norm["generator"])
    if not norm.get("generator_seed_fixed", False):
        gen["seed"] = seed  # fresh init per sweep seed unless pinned
    t = norm["training"]
    return TrainConfig(
        target=TargetSpec.from_dict(norm["target"]),
        noise=NoiseSpec.from_dict(norm["noise"]),
        generator=GeneratorSpec.from_dict(gen),
        hyper=IslHyperparams(**norm["hyper"]),
        epochs=t["epochs"],
        dataset_size=t["dataset_size"],
        batch_size=t["batch_size"],
        learning_rate=t["learning_rate"],
        k_max=t["k_max"],
        k_schedule=tuple(t["k_schedule"]),
        projections=t["projections"],
        chi2_alpha=t["chi2_alpha"],
        seed=seed,
        fresh_fakes_per_datum=t["fresh_fakes_per_datum"],
        standardize=t["standardize"],
        eval_samples=norm["eval_samples"],
    )


# ---------------------------------------------------------------------------
# metric evaluation
# ---------------------------------------------------------------------------


def metric_columns(metric_names) -> list[str]:
    cols: list[str] = []
    for name in metric_names:
        if name == "mode_coverage":
            cols += ["n_modes", "pct_hq"]
        else:
            cols.append(name)
    if "mae" in metric_names or "mse" in metric_names:
        cols.append("n_mc")
    return cols


def _bounds_for(target: TargetSpec, real: np.ndarray) -> np.ndarray:
    if target.kind in _MODE_TARGETS:
        centers = mode_centers(target)
        pad = 6.0 * target.params["std"]
        return np.stack([centers.min(axis=0) - pad, centers.max(axis=0) + pad], axis=1)
    lo = np.quantile(real, 0.005, axis=0)
    hi = np.quantile(real, 0.995, axis=0)
    return np.stack([lo, hi + 1e-9], axis=1)


def evaluate_metrics(metric_names, norm: dict, config: TrainConfig, params, transform) -> dict:
    """Deterministic evaluation of the selected metrics for one trained run."""
    rng = RandomSource(config.seed).split("metric-eval")
    n_eval = norm["eval_samples"]
    z = sample_noise(config.noise, n_eval, rng.split("noise"))
    generated = transform.inverse(mlp_forward(params, config.generator, z))
    real = sample_target(config.target, n_eval, rng.split("data"))

    out: dict[str, float] = {}
    mae_mse = None
    for name in metric_names:
        if name == "ksd":
            out["ksd"] = ks_distance(generated.ravel(), lambda x: target_cdf(config.target, x))
        elif name in ("mae", "mse"):
            if mae_mse is None:
                mae_mse = mae_mse_vs_optimal(
                    params, config.generator, config.noise, config.target,
                    n_eval, rng.split("mc"), transform=transform,
                )
                out["n_mc"] = float(mae_mse.n_mc)
            out[name] = getattr(mae_mse, name)
        elif name == "accdf":
            real_pos = real[real > 0]
            gen_pos = generated[generated > 0]
            if real_pos.size >= 2 and gen_pos.size >= 1:
                out["accdf"] = accdf_area(real_pos, gen_pos)
            else:
                out["accdf"] = float("nan")
        elif name == "mode_coverage":
            cov = mode_coverage(generated, mode_layout_for(config.target))
            out["n_modes"] = float(cov.n_modes)
            out["pct_hq"] = cov.pct_hq
        elif name in ("kl2d", "js2d"):
            bounds = _bounds_for(config.target, real)
            fn = kl_histogram if name == "kl2d" else js_histogram
            out[name] = fn(real, generated, 64, bounds)
        elif name == "js_marginal_mean":
            bounds = _bounds_for(config.target, real)
            vals = [
                js_histogram(real[:, d : d + 1], generated[:, d : d + 1], 64, [bounds[d]])
                for d in range(real.shape[1])
            ]
            out[name] = float(np.mean(vals))
    return out


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def run_single_seed(norm: dict, seed: int) -> dict:
    """Train one seed, write its artifacts, and return its summary row."""
    out_dir = Path(norm["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    config = build_train_config(norm, seed)
    if norm["method"] == "isl_1d":
        result = train_isl_1d(config)
    else:
        result = train_isl_sliced(config)

    ckpt_name = f"checkpoint_{seed}.bin"
    save_checkpoint(
        out_dir / ckpt_name,
        result.params,
        config.generator,
        noise=config.noise.to_dict(),
        transform=result.transform.to_dict(),
        meta={"k": result.k_final, "method": norm["method"], "seed": seed, "target": norm["target"]},
    )
    result.report.checkpoint_path = ckpt_name

    metrics = evaluate_metrics(norm["metrics"], norm, config, result.params, result.transform)
    metrics_row = {name: metrics[name] for name in metric_columns(norm["metrics"])}

    report_doc = {
        "seed": seed,
        "config": {k: v for k, v in norm.items() if k not in ("seeds", "plots")},
        "report": result.report.to_dict(include_timing=False),
        "metrics": metrics_row,
    }
    report_path = out_dir / f"report_{seed}.json"
    report_path.write_text(json.dumps(report_doc, indent=2, sort_keys=True) + "\n")

    timing_doc = {
        "seed": seed,
        "epoch_seconds": result.report.epoch_seconds,
        "total_seconds": float(sum(result.report.epoch_seconds)),
    }
    (out_dir / f"timing_{seed}.json").write_text(json.dumps(timing_doc, indent=2, sort_keys=True) + "\n")

    if norm["plots"]:
        _render_figures(norm, config, result, out_dir, seed)

    row = {
        "seed": seed,
        "target": norm["target"]["kind"],
        "method": norm["method"],
        "k": result.k_final,
        "m": norm["training"]["projections"] if norm["method"] == "isl_sliced" else 0,
        "epochs": norm["training"]["epochs"],
    }
    row.update(metrics_row)
    return row


def _render_figures(norm: dict, config: TrainConfig, result, out_dir: Path, seed: int) -> None:
    rng = RandomSource(seed).split("figures")
    plots.save_loss_curve(result.report.losses, result.report.k_values, out_dir / f"fig_loss_{seed}.png")
    n_fig = min(4000, norm["eval_samples"])
    z = sample_noise(config.noise, n_fig, rng.split("noise"))
    generated = result.transform.inverse(mlp_forward(result.params, config.generator, z))
    real = sample_target(config.target, n_fig, rng.split("data"))
    if config.target.dim == 1:
        plots.save_sample_comparison_1d(real, generated, out_dir / f"fig_samples_{seed}.png")
        k = result.k_final
        gate_z = sample_noise(config.noise, n_fig * k, rng.split("ranks"))
        fakes = result.transform.inverse(mlp_forward(result.params, config.generator, gate_z)).reshape(n_fig, k)
        hist = histogram_from_ranks(hard_ranks(real.ravel(), fakes), k)
        gate = chi2_uniformity(hist, config.chi2_alpha)
        plots.save_rank_pmf(hist.counts, out_dir / f"fig_rank_pmf_{seed}.png", p_value=gate.p_value)
    else:
        plots.save_sample_scatter_2d(real, generated, out_dir / f"fig_samples_{seed}.png")


def _summary_rows_to_csv(rows, metric_names, path: Path) -> None:
    cols = ["seed", "target", "method", "k", "m", "epochs"] + metric_columns(metric_names)
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in cols))
    path.write_text("\n".join(lines) + "\n")


def cmd_run(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
    except OSError as exc:
        return _fail("config_io", None, str(exc))
    except json.JSONDecodeError as exc:
        return _fail("config_parse", None, f"invalid JSON: {exc}")
    try:
        norm = validate_config(raw)
    except ConfigError as exc:
        return _fail("config_invalid", exc.key, str(exc))

    seeds = norm["seeds"]
    workers = max(1, int(os.environ.get("ISL_THREADS", "1")))
    try:
        if workers > 1 and len(seeds) > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
                rows = list(pool.map(run_single_seed, [norm] * len(seeds), seeds))
        else:
            rows = [run_single_seed(norm, seed) for seed in seeds]
    except (TrainingError, FloatingPointError) as exc:
        return _fail("numeric_failure", None, str(exc))

    _summary_rows_to_csv(rows, norm["metrics"], Path(norm["output_dir"]) / "summary.csv")
    return 0


# ---------------------------------------------------------------------------
# rankdiag
# ---------------------------------------------------------------------------


def _load_target_arg(text: str) -> TargetSpec:
    if text.startswith("@"):
        text = Path(text[1:]).read_text()
    return TargetSpec.from_dict(json.loads(text))


def cmd_rankdiag(args) -> int:
    try:
        ck = load_checkpoint(args.checkpoint)
    except (OSError, ValueError) as exc:
        return _fail("checkpoint_io", None, str(exc))
    try:
        target = _load_target_arg(args.target)
    except (OSError, ValueError, KeyError) as exc:
        return _fail("target_invalid", "target", str(exc))

    k, n = args.k, args.n
    if k < 1 or n < 1:
        return _fail("bad_arguments", None, "k and n must be >= 1")
    noise = NoiseSpec.from_dict(ck.noise)
    transform = AffineTransform.from_dict(ck.transform)
    gen = ck.generator

    direction = None
    if args.direction:
        direction = np.asarray([float(v) for v in args.direction.split(",")], dtype=np.float64)
        norm_len = float(np.linalg.norm(direction))
        if norm_len == 0.0:
            return _fail("bad_arguments", None, "direction must be a nonzero vector")
        direction = direction / norm_len
        if direction.size != target.dim or direction.size != gen.output_dim:
            return _fail("shape_mismatch", None, "direction length must match target and generator dimension")
    else:
        if target.dim != gen.output_dim:
            return _fail("shape_mismatch", None, "checkpoint and target dimensions disagree")
        if target.dim != 1:
            return _fail("bad_arguments", None, "multivariate diagnostics need --direction")

    rng = RandomSource(args.seed).split("rankdiag")
    data = sample_target(target, n, rng.split("data"))
    z = sample_noise(noise, n * k, rng.split("noise"))
    fakes = transform.inverse(mlp_forward(ck.params, gen, z))
    if direction is not None:
        data_1d = data @ direction
        fakes_1d = (fakes @ direction).reshape(n, k)
    else:
        data_1d = data.ravel()
        fakes_1d = fakes.reshape(n, k)
    hist = histogram_from_ranks(hard_ranks(data_1d, fakes_1d), k)
    res = chi2_uniformity(hist)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    pmf = hist.pmf()
    lines = [
        f"# chi2_statistic={res.statistic:.17g}",
        f"# p_value={res.p_value:.17g}",
        f"# k={k}",
        f"# n={n}",
        "bin,count,q_hat",
    ]
    for b in range(k + 1):
        lines.append(f"{b},{hist.counts[b]},{pmf[b]:.17g}")
    out_path.write_text("\n".join(lines) + "\n")
    if args.plot:
        plots.save_rank_pmf(hist.counts, out_path.with_suffix(".png"), p_value=res.p_value)
    return 0


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


def cmd_sample(args) -> int:
    try:
        ck = load_checkpoint(args.checkpoint)
    except (OSError, ValueError) as exc:
        return _fail("checkpoint_io", None, str(exc))
    if args.n < 1:
        return _fail("bad_arguments", None, "n must be >= 1")
    noise = NoiseSpec.from_dict(ck.noise)
    transform = AffineTransform.from_dict(ck.transform)
    rng = RandomSource(args.seed).split("sample")
    z = sample_noise(noise, args.n, rng)
    x = transform.inverse(mlp_forward(ck.params, ck.generator, z))

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    d = x.shape[1]
    lines = [",".join(f"x{j}" for j in range(d))]
    for row in x:
        lines.append(",".join(f"{v:.17g}" for v in row))
    out_path.write_text("\n".join(lines) + "\n")
    if args.plot:
        if d == 1:
            plots.save_sample_comparison_1d(x, x, out_path.with_suffix(".png"))
        else:
            plots.save_sample_scatter_2d(x[:, :2], x[:, :2], out_path.with_suffix(".png"))
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="islkit", description="rank-statistic generative training experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train and evaluate every seed of a JSON experiment config")
    p_run.add_argument("config", help="path to the experiment config JSON")
    p_run.set_defaults(func=cmd_run)

    p_diag = sub.add_parser("rankdiag", help="rank-uniformity diagnostics for a checkpoint")
    p_diag.add_argument("checkpoint")
    p_diag.add_argument("--target", required=True, help="target spec as inline JSON or @file")
    p_diag.add_argument("--k", type=int, required=True)
    p_diag.add_argument("--n", type=int, required=True)
    p_diag.add_argument("--direction", default=None, help="comma-separated projection direction")
    p_diag.add_argument("--seed", type=int, default=0)
    p_diag.add_argument("--out", default="rankdiag.csv")
    p_diag.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    p_diag.set_defaults(func=cmd_rankdiag)

    p_sample = sub.add_parser("sample", help="draw samples from a checkpoint into a CSV")
    p_sample.add_argument("checkpoint")
    p_sample.add_argument("--n", type=int, required=True)
    p_sample.add_argument("--out", required=True)
    p_sample.add_argument("--seed", type=int, default=0)
    p_sample.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True)
    p_sample.set_defaults(func=cmd_sample)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
