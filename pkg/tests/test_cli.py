import csv
import io

import numpy as np
import pytest

from varmaformer import autograd as ag
from varmaformer.cli import main
from varmaformer.model import MAGIC, load_checkpoint

TINY = """\
# tiny desk-check configuration
lookback = 16
horizon = 8
patch_len = 4
d_model = 8
n_layers = 1
n_heads = 2
ffn_width = 8
max_epochs = 2
patience = 2
batch_size = 64
"""


def read_rows(path):
    lines = open(path, encoding="utf-8").read().splitlines()
    assert lines[0] == "# schema-version: 1"
    return list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


@pytest.fixture
def workspace(tmp_path):
    assert main(["-q", "gen-synthetic", "--kind", "varma", "--phi", "0.5,0.3", "--theta", "0.4",
                 "--length", "600", "--channels", "2", "--name", "arma", "--seed", "0",
                 "--out", str(tmp_path)]) == 0
    cfg = tmp_path / "tiny.cfg"
    cfg.write_text(TINY + f"dataset = {tmp_path / 'arma.csv'}\n")
    return tmp_path, str(cfg)


def test_gen_synthetic_writes_dataset(workspace):
    tmp, _ = workspace
    rows = (tmp / "arma.csv").read_text().splitlines()
    assert rows[0] == "date,x0,x1" and len(rows) == 601


def test_gen_synthetic_rejects_unit_root(tmp_path, capsys):
    assert main(["-q", "gen-synthetic", "--phi", "1.0", "--out", str(tmp_path)]) == 2
    assert "stationary" in capsys.readouterr().err


def test_train_writes_checkpoint_and_metrics(workspace):
    tmp, cfg = workspace
    out = tmp / "run"
    assert main(["-q", "train", "--config", cfg, "--out", str(out), "--seed", "3"]) == 0
    ckpt = out / "model-h8-s3.vmf"
    assert ckpt.read_bytes()[:4] == MAGIC
    assert load_checkpoint(ckpt).cfg.seed == 3
    rows = read_rows(out / "metrics.csv")
    labels = [r["ablation"] for r in rows]
    assert labels == ["all", "persistence", "linear"]
    assert all(np.isfinite(float(r["mse"])) for r in rows)
    history = read_rows(out / "history.csv")
    assert {r["split"] for r in history} == {"train", "val"}


def test_evaluate_and_forecast(workspace):
    tmp, cfg = workspace
    out = tmp / "run"
    assert main(["-q", "train", "--config", cfg, "--out", str(out)]) == 0
    ckpt = str(out / "model-h8-s2021.vmf")
    assert main(["-q", "evaluate", "--config", cfg, "--checkpoint", ckpt, "--out", str(out)]) == 0
    trained = read_rows(out / "metrics.csv")[0]
    evaluated = read_rows(out / "evaluate.csv")[0]
    assert evaluated["mse"] == trained["mse"]
    assert main(["-q", "forecast", "--config", cfg, "--checkpoint", ckpt, "--origin", "100",
                 "--out", str(out)]) == 0
    rows = read_rows(out / "forecast.csv")
    assert len(rows) == 2 * (16 + 8)
    assert sum(1 for r in rows if r["forecast"]) == 2 * 8


def test_missing_dataset(tmp_path, capsys):
    code = main(["-q", "train", "--override", f"dataset={tmp_path / 'nope.csv'}", "--out", str(tmp_path)])
    assert code == 2
    assert "dataset not found" in capsys.readouterr().err


def test_horizon_not_divisible(workspace, capsys):
    tmp, cfg = workspace
    assert main(["-q", "train", "--config", cfg, "--horizon", "10", "--out", str(tmp)]) == 2
    assert "divisible" in capsys.readouterr().err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("lookbak = 96\n")
    assert main(["-q", "train", "--config", str(cfg)]) == 2
    assert "unknown config key" in capsys.readouterr().err


def test_ablate_six_rows(workspace):
    tmp, cfg = workspace
    assert main(["-q", "ablate", "--config", cfg, "--out", str(tmp), "--override", "max_epochs=1",
                 "--override", "patience=1"]) == 0
    rows = read_rows(tmp / "ablation.csv")
    assert [r["ablation"] for r in rows] == ["none", "AR", "MA", "AR+MA", "VE-atten", "all"]


def test_full_grid_row_count(monkeypatch, tmp_path):
    """Six variants times four horizons, without paying for the training."""
    from varmaformer import experiment
    from varmaformer.experiment import ABLATIONS, ablation_grid
    from varmaformer.model import ModelConfig
    from varmaformer.oracle import SyntheticSpec, generate
    from varmaformer.train import TrainConfig

    class Stub:
        def __init__(self, cfg):
            self.result = type("R", (), {"best_epoch": 1})()
            self.test = {"mse": float(cfg.p + cfg.q), "mae": 0.0}
            self.wall_time_s = 0.0

    monkeypatch.setattr(experiment, "run", lambda data, cfg, tcfg: Stub(cfg))
    ds = generate(SyntheticSpec(length=14400, name="ETTh1"))
    rows = ablation_grid(ds, ModelConfig(), TrainConfig(), [96, 192, 336, 720], [2021])
    assert len(rows) == 24
    assert [r.ablation for r in rows[:6]] == [a[0] for a in ABLATIONS]


def test_sweep_alpha(workspace):
    tmp, cfg = workspace
    assert main(["-q", "sweep", "--config", cfg, "--param", "alpha", "--values", "0.1,0.2,0.3,0.4,0.5",
                 "--out", str(tmp), "--override", "max_epochs=1", "--override", "patience=1"]) == 0
    rows = read_rows(tmp / "sweep.csv")
    assert [r["ablation"] for r in rows] == [f"alpha={v}" for v in (0.1, 0.2, 0.3, 0.4, 0.5)]


def test_sweep_order_grid(workspace):
    tmp, cfg = workspace
    assert main(["-q", "sweep", "--config", cfg, "--param", "p,q", "--values", "1,2",
                 "--out", str(tmp), "--override", "max_epochs=1", "--override", "patience=1"]) == 0
    rows = read_rows(tmp / "sweep.csv")
    assert [r["ablation"] for r in rows] == ["p=1;q=1", "p=1;q=2", "p=2;q=1", "p=2;q=2"]


@pytest.mark.parametrize("param,values", [("alpha", ""), ("alpha", ","), ("gamma", "1")])
def test_sweep_bad_arguments(workspace, param, values):
    tmp, cfg = workspace
    assert main(["-q", "sweep", "--config", cfg, "--param", param, "--values", values,
                 "--out", str(tmp)]) == 2


def test_verify_passes(tmp_path, capsys):
    assert main(["verify", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    for suite in ("gradient", "oracle", "shape-grid", "normalization", "identities"):
        assert f"PASS {suite}:" in out
    rows = read_rows(tmp_path / "verify.csv")
    assert [r["suite"] for r in rows] == ["gradient", "oracle", "shape-grid", "normalization", "identities"]
    assert all(int(r["failed"]) == 0 and int(r["checks"]) > 0 for r in rows)


def test_verify_catches_corrupted_gradient(tmp_path, monkeypatch, capsys):
    real = ag.gelu

    def bad_gelu(a):
        out = real(a)
        backward = out._backward

        def skewed(g):
            return [x * 1.01 if x is not None else None for x in backward(g)]

        out._backward = skewed
        return out

    monkeypatch.setattr(ag, "gelu", bad_gelu)
    assert main(["verify", "--suite", "gradient", "--out", str(tmp_path)]) == 1
    out = capsys.readouterr().out
    assert "FAIL gradient" in out and "op gelu" in out


def test_reruns_are_byte_identical(workspace):
    tmp, cfg = workspace

    def strip_wall_time(path):
        return [{k: v for k, v in r.items() if k != "wall_time_s"} for r in read_rows(path)]

    for name in ("a", "b"):
        assert main(["-q", "train", "--config", cfg, "--out", str(tmp / name)]) == 0
        assert main(["-q", "verify", "--suite", "normalization", "--out", str(tmp / name)]) == 0
    for f in ("metrics.csv", "history.csv"):
        assert strip_wall_time(tmp / "a" / f) == strip_wall_time(tmp / "b" / f)
    assert (tmp / "a" / "verify.csv").read_bytes() == (tmp / "b" / "verify.csv").read_bytes()
    assert (tmp / "a" / "model-h8-s2021.vmf").read_bytes() == (tmp / "b" / "model-h8-s2021.vmf").read_bytes()
