import csv
import json

import numpy as np
import pytest
import yaml

from qforecast import cli, config
from qforecast.data import ITER_CHANNELS
from qforecast.train import load_checkpoint


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def write_config(path, **overrides):
    doc = {
        "name": "tiny",
        "dataset": {"source": "lorenz", "T": 5, "S": 1, "points": 300},
        "model": {"kind": "itransformer", "L": 1},
        "training": {"epochs": 10, "batch_size": 64, "lr": 0.002, "seeds": [0]},
    }
    for key, val in overrides.items():
        if val is None:
            doc.pop(key)
        else:
            doc[key] = val
    path.write_text(yaml.safe_dump(doc))
    return path


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    cfg = write_config(root / "tiny.yaml")
    out = root / "out"
    assert cli.main(["train", "--config", str(cfg), "--out", str(out), "--seeds", "0,1"]) == 0
    return out


# ---------------------------------------------------------------------------
# generate-data

def test_generate_lorenz_csv(tmp_path):
    out = tmp_path / "lorenz.csv"
    assert cli.main(["generate-data", "--source", "lorenz", "--points", "1000", "--dt", "0.01",
                     "--out", str(out)]) == 0
    rows = read_rows(out)
    assert rows[0] == ["x", "y", "z"] and len(rows) == 1001
    assert np.allclose([float(v) for v in rows[2]], [-0.001, -0.0099, 8.76])


def test_generate_two_points(tmp_path):
    out = tmp_path / "two.csv"
    assert cli.main(["generate-data", "--points", "2", "--out", str(out)]) == 0
    assert len(read_rows(out)) == 3


def test_generate_surrogate_schema(tmp_path):
    out = tmp_path / "s.csv"
    assert cli.main(["generate-data", "--source", "surrogate", "--channels", "7", "--points", "200",
                     "--out", str(out)]) == 0
    assert read_rows(out)[0] == ITER_CHANNELS
    raw = tmp_path / "raw.csv"
    assert cli.main(["generate-data", "--source", "surrogate", "--raw", "--points", "50", "--out", str(raw)]) == 0
    assert read_rows(raw)[0][:2] == ["timestamp", "operating_state"]
    assert cli.main(["generate-data", "--source", "surrogate", "--channels", "3", "--out", str(out)]) == 2


def test_generate_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["generate-data", "--out", str(blocker / "x.csv")]) == 3


# ---------------------------------------------------------------------------
# config validation

def test_missing_model_section_names_the_field(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", model=None)
    assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "'model'" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


@pytest.mark.parametrize("override", [
    {"dataset": {"source": "lorenz", "T": 5, "S": 1, "windw": 3}},
    {"model": {"kind": "itransformer", "heads": 4}},
    {"training": {"epochs": 3}},
    {"training": {"epochs": 10, "seeds": "all"}},
    {"model": {"kind": "lstm"}},
    {"dataset": {"source": "surrogate", "T": 5, "S": 1, "target": "wind_gust"}},
    {"bogus": 1},
])
def test_invalid_configs_are_rejected(tmp_path, override):
    cfg = write_config(tmp_path / "c.yaml", **override)
    with pytest.raises(config.ConfigError):
        config.load_config(cfg)


def test_seed_list_parsing():
    assert config.parse_seeds("0-9") == list(range(10))
    assert config.parse_seeds("0-2,7") == [0, 1, 2, 7]
    with pytest.raises(config.ConfigError):
        config.parse_seeds("a-b")


def test_shipped_configs_validate():
    from pathlib import Path

    paths = sorted((Path(__file__).parent.parent / "configs").glob("*.yaml"))
    assert paths
    for p in paths:
        cfg = config.load_config(p)
        assert cfg.spec.seeds == list(range(10))


# ---------------------------------------------------------------------------
# train outputs

def test_train_writes_documented_outputs(tiny_run):
    files = {p.relative_to(tiny_run).as_posix() for p in tiny_run.rglob("*") if p.is_file()}
    assert files == {"manifest.json", "summary.json", "curves.csv", "records/seed_0.json",
                     "records/seed_1.json", "checkpoints/seed_0.npz", "checkpoints/seed_1.npz"}
    summary = json.loads((tiny_run / "summary.json").read_text())
    for m in ("mape", "mae", "rmse"):
        assert set(summary[m]) == {"mean", "sd", "per_seed"} and len(summary[m]["per_seed"]) == 2
    assert summary["n_params"] == sum(summary["param_breakdown"].values())
    assert summary["regime"] == "ST" and summary["model"] == "itransformer"

    man = json.loads((tiny_run / "manifest.json").read_text())
    assert man["seeds"] == [0, 1] and man["build"].startswith("qforecast-")

    rec = json.loads((tiny_run / "records" / "seed_1.json").read_text())
    assert rec["seed"] == 1 and len(rec["epochs"]) == 10 and not rec["failed"]

    rows = read_rows(tiny_run / "curves.csv")
    assert rows[0] == ["epoch", "seed_0", "seed_1"] and len(rows) == 12
    assert float(rows[-1][1]) == rec_rmse(tiny_run, 0, -1)

    header, arrays = load_checkpoint(tiny_run / "checkpoints" / "seed_0.npz")
    assert header["seed"] == 0 and header["channel_names"] == ["x", "y", "z"]
    assert sum(a.size for a in arrays.values()) == summary["n_params"]


def rec_rmse(run, seed, epoch):
    return json.loads((run / "records" / f"seed_{seed}.json").read_text())["epochs"][epoch]["rmse"]


def test_single_seed_summary_has_zero_sd(tmp_path):
    cfg = write_config(tmp_path / "c.yaml")
    out = tmp_path / "o"
    assert cli.main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["seeds"] == [0]
    assert all(summary[m]["sd"] == 0.0 for m in ("mape", "mae", "rmse"))


def test_rerun_from_manifest_is_bit_identical(tiny_run, tmp_path):
    again = tmp_path / "again"
    assert cli.main(["train", "--config", str(tiny_run / "manifest.json"), "--out", str(again)]) == 0
    for rel in ("summary.json", "curves.csv", "records/seed_0.json", "records/seed_1.json",
                "checkpoints/seed_0.npz", "checkpoints/seed_1.npz"):
        assert (again / rel).read_bytes() == (tiny_run / rel).read_bytes(), rel


# ---------------------------------------------------------------------------
# report

def test_report_two_runs(tiny_run, tmp_path, capsys):
    other = tmp_path / "iqt"
    cfg = write_config(tmp_path / "q.yaml", name="tiny_q",
                       model={"kind": "iqtransformer", "L": 1, "n_qubits": 3, "D": 9},
                       training={"epochs": 10, "batch_size": 128, "seeds": [0]})
    assert cli.main(["train", "--config", str(cfg), "--out", str(other)]) == 0
    capsys.readouterr()
    table = tmp_path / "table.csv"
    assert cli.main(["report", str(tiny_run), str(other), "--out", str(table)]) == 0
    text = capsys.readouterr().out
    assert "Short-Term" in text and "iTransformer" in text and "iQTransformer" in text
    rows = read_rows(table)
    body = [r for r in rows[1:] if r and r[1] in ("itransformer", "iqtransformer")]
    assert len(body) == 2


def test_report_errors(tmp_path):
    assert cli.main(["report"]) == 2
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "summary.json").write_text('{"model": "itransformer"}')
    assert cli.main(["report", str(bad)]) == 3
    assert cli.main(["report", str(tmp_path / "nowhere")]) == 3


# ---------------------------------------------------------------------------
# forecast

def test_forecast_lorenz_columns(tiny_run, tmp_path):
    out = tmp_path / "f.csv"
    assert cli.main(["forecast", "--checkpoint", str(tiny_run / "checkpoints" / "seed_0.npz"),
                     "--out", str(out)]) == 0
    rows = read_rows(out)
    assert rows[0] == ["t", "x_true_h1", "x_pred_h1", "y_true_h1", "y_pred_h1", "z_true_h1", "z_pred_h1"]
    # 295 windows, 221 train -> 74 validation rows
    assert len(rows) == 1 + 74
    vals = np.array(rows[1:], float)
    from qforecast.data import lorenz_generate

    truth = lorenz_generate(300).values
    assert np.allclose(vals[:, 1], truth[vals[:, 0].astype(int), 0])


def test_forecast_long_term_horizons(tmp_path):
    cfg = write_config(tmp_path / "lt.yaml", name="lt",
                       dataset={"source": "surrogate", "T": 24, "S": 24, "points": 600,
                                "target": "curtailment_setpoint"},
                       model={"kind": "itransformer", "L": 1},
                       training={"epochs": 10, "batch_size": 256, "seeds": [0]})
    run = tmp_path / "lt"
    assert cli.main(["train", "--config", str(cfg), "--out", str(run)]) == 0
    out = tmp_path / "f.csv"
    assert cli.main(["forecast", "--checkpoint", str(run / "checkpoints" / "seed_0.npz"),
                     "--horizons", "1,12,24", "--out", str(out)]) == 0
    head = read_rows(out)[0]
    assert head == ["t"] + [f"curtailment_setpoint_{k}_h{h}" for h in (1, 12, 24) for k in ("true", "pred")]
    assert cli.main(["forecast", "--checkpoint", str(run / "checkpoints" / "seed_0.npz"),
                     "--horizons", "25", "--out", str(out)]) == 2


def test_forecast_channel_mismatch(tiny_run, tmp_path, capsys):
    data = tmp_path / "s.csv"
    assert cli.main(["generate-data", "--source", "surrogate", "--points", "300", "--out", str(data)]) == 0
    code = cli.main(["forecast", "--checkpoint", str(tiny_run / "checkpoints" / "seed_0.npz"),
                     "--data", str(data), "--out", str(tmp_path / "f.csv")])
    assert code == 3
    assert "channels" in capsys.readouterr().err
