import json
from pathlib import Path

import numpy as np
import pytest

from islkit.cli import main, metric_columns, validate_config, ConfigError


def _minimal_config(tmp_path, **overrides):
    cfg = {
        "method": "isl_1d",
        "target": {"kind": "gaussian", "loc": 4.0, "scale": 2.0},
        "noise": {"family": "gaussian", "dim": 1},
        "generator": {"layer_widths": [1, 7, 1], "activations": ["relu", "identity"]},
        "hyper": {"k": 4},
        "training": {"epochs": 1, "dataset_size": 64, "batch_size": 32, "learning_rate": 0.001},
        "seeds": [1],
        "output_dir": str(tmp_path / "out"),
        "metrics": ["ksd"],
        "eval_samples": 256,
        "plots": False,
    }
    cfg.update(overrides)
    return cfg


def _write(tmp_path, cfg, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def test_run_minimal_config(tmp_path):
    cfg = _minimal_config(tmp_path)
    assert main(["run", _write(tmp_path, cfg)]) == 0
    out = tmp_path / "out"
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == "seed,target,method,k,m,epochs,ksd"
    assert len(summary) == 2
    assert summary[1].startswith("1,gaussian,isl_1d,")
    assert (out / "report_1.json").exists()
    assert (out / "checkpoint_1.bin").exists()
    assert (out / "timing_1.json").exists()


def test_run_malformed_json_exits_1_with_error_json(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{ not json }")
    assert main(["run", str(path)]) == 1
    err = json.loads(capsys.readouterr().out)
    assert err["error"] == "config_parse"


def test_run_invalid_value_names_offending_key(tmp_path, capsys):
    cfg = _minimal_config(tmp_path)
    cfg["hyper"]["alpha"] = -3.0
    assert main(["run", _write(tmp_path, cfg)]) == 1
    err = json.loads(capsys.readouterr().out)
    assert err["error"] == "config_invalid"
    assert err["key"] == "hyper"

    cfg = _minimal_config(tmp_path)
    cfg["training"]["epochs"] = "many"
    assert main(["run", _write(tmp_path, cfg)]) == 1
    err = json.loads(capsys.readouterr().out)
    assert err["key"] == "training.epochs"


def test_run_unknown_key_rejected(tmp_path, capsys):
    cfg = _minimal_config(tmp_path)
    cfg["typo_key"] = 1
    assert main(["run", _write(tmp_path, cfg)]) == 1
    assert json.loads(capsys.readouterr().out)["key"] == "typo_key"


def test_run_seed_sweep_writes_one_row_per_seed(tmp_path):
    cfg = _minimal_config(tmp_path, seeds=[1, 2, 3])
    assert main(["run", _write(tmp_path, cfg)]) == 0
    out = tmp_path / "out"
    rows = (out / "summary.csv").read_text().splitlines()
    assert len(rows) == 4
    assert [r.split(",")[0] for r in rows[1:]] == ["1", "2", "3"]
    for seed in (1, 2, 3):
        assert (out / f"report_{seed}.json").exists()
        assert (out / f"checkpoint_{seed}.bin").exists()


def test_run_idempotent_byte_identical(tmp_path):
    cfg = _minimal_config(tmp_path, seeds=[5, 6])
    path = _write(tmp_path, cfg)
    assert main(["run", path]) == 0
    out = tmp_path / "out"
    first_summary = (out / "summary.csv").read_bytes()
    first_report = (out / "report_5.json").read_bytes()
    first_ckpt = (out / "checkpoint_5.bin").read_bytes()
    assert main(["run", path]) == 0
    assert (out / "summary.csv").read_bytes() == first_summary
    assert (out / "report_5.json").read_bytes() == first_report
    assert (out / "checkpoint_5.bin").read_bytes() == first_ckpt


def test_run_renders_figures_when_enabled(tmp_path):
    cfg = _minimal_config(tmp_path, plots=True)
    assert main(["run", _write(tmp_path, cfg)]) == 0
    out = tmp_path / "out"
    assert (out / "fig_loss_1.png").exists()
    assert (out / "fig_samples_1.png").exists()
    assert (out / "fig_rank_pmf_1.png").exists()


def test_run_sliced_method(tmp_path):
    cfg = _minimal_config(
        tmp_path,
        method="isl_sliced",
        target={"kind": "ring2d"},
        noise={"family": "gaussian", "dim": 2},
        generator={"layer_widths": [2, 16, 2], "activations": ["tanh", "identity"]},
        metrics=["mode_coverage", "js2d"],
        plots=False,
    )
    cfg["training"]["projections"] = 3
    assert main(["run", _write(tmp_path, cfg)]) == 0
    rows = (tmp_path / "out" / "summary.csv").read_text().splitlines()
    assert rows[0] == "seed,target,method,k,m,epochs,n_modes,pct_hq,js2d"
    assert rows[1].split(",")[4] == "3"


def test_metric_target_compatibility_checked(tmp_path, capsys):
    cfg = _minimal_config(tmp_path, metrics=["mode_coverage"])
    assert main(["run", _write(tmp_path, cfg)]) == 1
    assert json.loads(capsys.readouterr().out)["key"] == "metrics"


def test_validate_config_defaults_and_schedule():
    norm = validate_config(
        {
            "method": "isl_1d",
            "target": {"kind": "gaussian"},
            "noise": {"family": "gaussian"},
            "generator": {"layer_widths": [1, 4, 1], "activations": ["relu", "identity"]},
            "training": {"epochs": 2, "dataset_size": 50},
            "seeds": [7],
            "output_dir": "x",
        }
    )
    assert norm["training"]["k_schedule"] == [2, 4, 6, 8, 10]
    assert norm["training"]["batch_size"] == 50
    assert norm["hyper"]["alpha"] == 10.0
    assert norm["metrics"] == ["ksd"]
    with pytest.raises(ConfigError):
        validate_config({"method": "nosuch"})


def test_metric_columns_expansion():
    assert metric_columns(["ksd", "mode_coverage"]) == ["ksd", "n_modes", "pct_hq"]
    assert metric_columns(["mae", "mse"]) == ["mae", "mse", "n_mc"]


# ---------------------------------------------------------------------------
# rankdiag & sample
# ---------------------------------------------------------------------------


@pytest.fixture()
def trained_checkpoint(tmp_path):
    cfg = _minimal_config(tmp_path, seeds=[9])
    cfg["training"]["epochs"] = 2
    assert main(["run", _write(tmp_path, cfg)]) == 0
    return tmp_path / "out" / "checkpoint_9.bin"


def test_rankdiag_writes_csv(tmp_path, trained_checkpoint):
    out = tmp_path / "diag" / "rd.csv"
    code = main(
        [
            "rankdiag",
            str(trained_checkpoint),
            "--target",
            json.dumps({"kind": "gaussian", "loc": 4.0, "scale": 2.0}),
            "--k",
            "4",
            "--n",
            "200",
            "--out",
            str(out),
            "--no-plot",
        ]
    )
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# chi2_statistic=")
    assert lines[1].startswith("# p_value=")
    assert lines[4] == "bin,count,q_hat"
    body = lines[5:]
    assert len(body) == 5
    counts = [int(l.split(",")[1]) for l in body]
    assert sum(counts) == 200


def test_rankdiag_k1_two_bins(tmp_path, trained_checkpoint):
    out = tmp_path / "rd1.csv"
    code = main(
        [
            "rankdiag",
            str(trained_checkpoint),
            "--target",
            json.dumps({"kind": "gaussian", "loc": 4.0, "scale": 2.0}),
            "--k",
            "1",
            "--n",
            "50",
            "--out",
            str(out),
            "--no-plot",
        ]
    )
    assert code == 0
    body = out.read_text().splitlines()[5:]
    assert len(body) == 2


def test_rankdiag_shifted_target_skews_histogram(tmp_path, trained_checkpoint):
    out = tmp_path / "rd_shift.csv"
    code = main(
        [
            "rankdiag",
            str(trained_checkpoint),
            "--target",
            json.dumps({"kind": "gaussian", "loc": 50.0, "scale": 2.0}),
            "--k",
            "6",
            "--n",
            "300",
            "--out",
            str(out),
            "--no-plot",
        ]
    )
    assert code == 0
    lines = out.read_text().splitlines()
    counts = [int(l.split(",")[1]) for l in lines[5:]]
    # every observation exceeds every generated sample: all mass in the top bin
    assert counts[-1] == 300


def test_rankdiag_target_file_and_plot(tmp_path, trained_checkpoint):
    spec_file = tmp_path / "target.json"
    spec_file.write_text(json.dumps({"kind": "gaussian", "loc": 4.0, "scale": 2.0}))
    out = tmp_path / "rd2.csv"
    code = main(
        ["rankdiag", str(trained_checkpoint), "--target", f"@{spec_file}", "--k", "3", "--n", "100", "--out", str(out)]
    )
    assert code == 0
    assert out.with_suffix(".png").exists()


def test_rankdiag_dimension_mismatch_fails(tmp_path, trained_checkpoint, capsys):
    code = main(
        [
            "rankdiag",
            str(trained_checkpoint),
            "--target",
            json.dumps({"kind": "ring2d"}),
            "--k",
            "3",
            "--n",
            "100",
            "--no-plot",
        ]
    )
    assert code == 1
    assert json.loads(capsys.readouterr().out)["error"] == "shape_mismatch"


def test_sample_writes_csv(tmp_path, trained_checkpoint):
    out = tmp_path / "samples.csv"
    assert main(["sample", str(trained_checkpoint), "--n", "123", "--out", str(out), "--no-plot"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "x0"
    assert len(lines) == 124
    vals = np.array([float(v) for v in lines[1:]])
    assert np.isfinite(vals).all()


def test_sample_deterministic_per_seed(tmp_path, trained_checkpoint):
    a, b, c = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv"))
    main(["sample", str(trained_checkpoint), "--n", "50", "--out", str(a), "--seed", "4", "--no-plot"])
    main(["sample", str(trained_checkpoint), "--n", "50", "--out", str(b), "--seed", "4", "--no-plot"])
    main(["sample", str(trained_checkpoint), "--n", "50", "--out", str(c), "--seed", "5", "--no-plot"])
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_sample_missing_checkpoint_fails(tmp_path, capsys):
    assert main(["sample", str(tmp_path / "none.bin"), "--n", "5", "--out", str(tmp_path / "s.csv")]) == 1
    assert json.loads(capsys.readouterr().out)["error"] == "checkpoint_io"
