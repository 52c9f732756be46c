import csv
import hashlib
import json
import shutil
import subprocess
import sys
import time
from importlib import resources

import jsonschema
import numpy as np
import pytest

from strap import __version__
from strap.cli import ABLATION_LENGTHS, main
from strap.datamodel import chronological_split, load_dataset, make_dataset, save_dataset
from strap.graph import load_graph
from strap.model import TrainConfig, evaluate, load_model, save_model, zero_params

SYNTH = {"n_residents": 40, "n_amenities": 10, "n_stations": 12, "tx_per_resident": 6,
         "bbox": [37.45, 37.55, 126.95, 127.05]}
TRAIN = ["--hidden-dim", "4", "--history-len", "5", "--epochs", "2", "--batch", "32", "--lr", "0.01"]


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_config(path, **extra):
    blob = {"synth": SYNTH, **extra}
    path.write_text(json.dumps(blob))
    return str(path)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root / "cfg.json")
    d = root / "data"
    assert main(["generate", "--config", cfg, "--out", str(d), "--seed", "1"]) == 0
    assert main(["build-graph", "--data", str(d)]) == 0
    return d


def test_generate_outputs(data_dir):
    csvs = sorted(p.name for p in data_dir.glob("*.csv") if not p.name.startswith("edges_"))
    assert csvs == ["amenities.csv", "ground_truth.csv", "resident_truth.csv", "residents.csv", "stations.csv",
                    "transactions.csv"]
    assert json.loads((data_dir / "synth_config.json").read_text())["n_residents"] == 40


def test_generate_same_seed_same_hashes(tmp_path, data_dir):
    cfg = write_config(tmp_path / "cfg.json")
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "again"), "--seed", "1"]) == 0
    for p in data_dir.glob("*.csv"):
        if not p.name.startswith("edges_"):
            assert sha(p) == sha(tmp_path / "again" / p.name), p.name


def test_invalid_bbox_names_field(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"synth": dict(SYNTH, bbox=[37.5, 37.5, 127.0, 127.1])}))
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
    assert "bbox" in capsys.readouterr().err


def test_config_errors_exit_two(tmp_path, data_dir):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"not_a_key": 1}))
    assert main(["train", "--config", str(bad), "--data", str(data_dir), "--out", str(tmp_path)]) == 2
    assert main(["train", "--data", str(data_dir), "--out", str(tmp_path), "--lr", "-1"]) == 2
    assert main(["train", "--out", str(tmp_path)]) == 2  # no dataset directory anywhere


def test_data_errors_exit_three(tmp_path, data_dir):
    assert main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path)]) == 3
    broken = tmp_path / "broken"
    shutil.copytree(data_dir, broken)
    (broken / "transactions.csv").write_text("transaction_id,resident_id,timestamp,price,ef_0\n1,999,5,1.0,0\n")
    assert main(["train", "--data", str(broken), "--out", str(tmp_path / "o"), *TRAIN]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_four(tmp_path, data_dir):
    code = main(["train", "--data", str(data_dir), "--out", str(tmp_path), "--variant", "t_rap",
                 "--lr", "1e300", "--hidden-dim", "4", "--epochs", "3", "--batch", "8"])
    assert code == 4


def test_env_var_supplies_data_dir(tmp_path, data_dir, monkeypatch):
    monkeypatch.setenv("STRAP_DATA_DIR", str(data_dir))
    assert main(["train", "--out", str(tmp_path), "--variant", "t_rap", *TRAIN]) == 0


def test_train_tiny_is_fast(tmp_path, data_dir):
    start = time.perf_counter()
    assert main(["train", "--data", str(data_dir), "--out", str(tmp_path), *TRAIN]) == 0
    assert time.perf_counter() - start < 10
    log = json.loads((tmp_path / "train_log.json").read_text())
    assert [e["epoch"] for e in log["epochs"]] == [1, 2]
    assert all(e["train_mae"] > 0 and e["val_mae"] > 0 for e in log["epochs"])
    assert (tmp_path / "best.ckpt").exists() and (tmp_path / "last.ckpt").exists()


def test_t_rap_without_graph_files(tmp_path, data_dir):
    bare = tmp_path / "bare"
    shutil.copytree(data_dir, bare)
    for p in [*bare.glob("edges_*.csv"), bare / "graph_meta.json"]:
        p.unlink()
    assert main(["train", "--data", str(bare), "--out", str(tmp_path / "o"), "--variant", "t_rap", *TRAIN]) == 0
    assert main(["evaluate", "--data", str(bare), "--out", str(tmp_path / "o")]) == 0
    assert main(["train", "--data", str(bare), "--out", str(tmp_path / "p"), "--variant", "st_rap", *TRAIN]) == 3


def test_resume_reproduces_uninterrupted(tmp_path, data_dir):
    args = ["--data", str(data_dir), *TRAIN, "--epochs", "3"]
    assert main(["train", "--out", str(tmp_path / "full"), *args]) == 0
    assert main(["train", "--out", str(tmp_path / "cut"), *args, "--stop-after", "1"]) == 0
    assert main(["train", "--out", str(tmp_path / "cut"), *args, "--resume"]) == 0
    for name in ("best.ckpt", "last.ckpt", "train_log.json"):
        assert sha(tmp_path / "full" / name) == sha(tmp_path / "cut" / name), name
    for d in ("full", "cut"):
        assert main(["evaluate", "--data", str(data_dir), "--out", str(tmp_path / d)]) == 0
    assert sha(tmp_path / "full" / "metrics.json") == sha(tmp_path / "cut" / "metrics.json")


def test_two_runs_hash_identical(tmp_path, data_dir):
    for d in ("a", "b"):
        assert main(["train", "--data", str(data_dir), "--out", str(tmp_path / d), *TRAIN]) == 0
        assert main(["evaluate", "--data", str(data_dir), "--out", str(tmp_path / d)]) == 0
    for name in ("best.ckpt", "last.ckpt", "train_log.json", "metrics.json", "history_error.csv"):
        assert sha(tmp_path / "a" / name) == sha(tmp_path / "b" / name), name


def test_metrics_schema_and_path_equivalence(tmp_path, data_dir):
    assert main(["train", "--data", str(data_dir), "--out", str(tmp_path), *TRAIN]) == 0
    assert main(["evaluate", "--data", str(data_dir), "--out", str(tmp_path)]) == 0
    blob = json.loads((tmp_path / "metrics.json").read_text())
    schema = json.loads(resources.files("strap").joinpath("schemas/metrics.schema.json").read_text())
    jsonschema.validate(blob, schema)
    assert blob["version"] == __version__ and blob["model"]["hidden_dim"] == 4 and "out" not in blob["config"]

    params, tcfg, stats = load_model(tmp_path / "best.ckpt")
    ds = load_dataset(data_dir).replace(stats=stats)
    rep = evaluate(ds, load_graph(ds, data_dir), params, chronological_split(ds).test, tcfg)
    for key in ("overall", "cold", "warm", "n_cold", "n_warm"):
        assert blob[key] == rep[key]
    rows = list(csv.DictReader(open(tmp_path / "history_error.csv")))
    assert sum(int(r["n"]) for r in rows) == blob["overall"]["n"]


def test_schema_rejects_missing_keys():
    schema = json.loads(resources.files("strap").joinpath("schemas/metrics.schema.json").read_text())
    with pytest.raises(jsonschema.ValidationError):
        jsonschema.validate({"overall": {"mae": 1.0}}, schema)


def test_perfect_oracle_checkpoint_scores_zero(tmp_path):
    n = 40
    rng = np.random.default_rng(0)
    ds = make_dataset(
        residents={"id": [0, 1], "lat": [37.5, 37.51], "lon": [127.0, 127.0], "rf": rng.normal(size=(2, 2))},
        transactions={"id": list(range(n)), "resident_id": [i % 2 for i in range(n)], "timestamp": list(range(n)),
                      "price": [250.0] * n, "ef": rng.normal(size=(n, 3))},
    )
    save_dataset(ds, tmp_path / "d")
    ds = ds.with_stats(chronological_split(ds).train)
    cfg = TrainConfig(variant="t_rap", hidden_dim=3)
    save_model(zero_params(3, ds.d_e, ds.d_r, ds.d_a, ds.d_s), cfg, ds.stats, tmp_path / "o" / "oracle.ckpt")
    assert main(["evaluate", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "o"),
                 "--checkpoint", str(tmp_path / "o" / "oracle.ckpt")]) == 0
    blob = json.loads((tmp_path / "o" / "metrics.json").read_text())
    assert blob["overall"]["mae"] == 0.0 and blob["overall"]["rmse"] == 0.0 and blob["overall"]["mape"] == 0.0


def test_ablate_grid(tmp_path, data_dir):
    assert main(["ablate", "--data", str(data_dir), "--out", str(tmp_path), "--variant", "t_rap",
                 "--hidden-dim", "4", "--epochs", "1", "--batch", "64"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "ablation.csv")))
    assert [int(r["history_len"]) for r in rows] == [1, 2, 5, 10, 20, 30, 50] == list(ABLATION_LENGTHS)
    assert all(float(r["mae"]) > 0 for r in rows)


def test_baselines_command(tmp_path, data_dir):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"gcn": {"hidden_dim": 4, "epochs": 2}}))
    assert main(["baselines", "--config", str(cfg), "--data", str(data_dir), "--out", str(tmp_path)]) == 0
    blob = json.loads((tmp_path / "baselines.json").read_text())
    assert set(blob["models"]) == {"repeat", "linreg", "gcn"}


def test_console_script_version():
    exe = shutil.which("strap")
    cmd = [exe] if exe else [sys.executable, "-m", "strap.cli"]
    out = subprocess.run([*cmd, "--version"], capture_output=True, text=True, check=True)
    assert __version__ in out.stdout
