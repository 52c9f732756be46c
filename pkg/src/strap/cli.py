"""``strap`` command line: generate, build-graph, train, evaluate, ablate, baselines.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from strap import __version__
from strap.baselines import (
    GcnConfig,
    gcn_predict_ids,
    gcn_train,
    linreg_fit,
    linreg_predict_ids,
    repeat_predict_ids,
    train_mean_price,
)
from strap.datamodel import chronological_split, load_dataset
from strap.errors import ConfigError, DataError, NumericalError
from strap.graph import build_hetero_graph, graph_files_present, load_graph, save_graph
from strap.metrics import history_count_table, metrics_report
from strap.model import TrainConfig, TrainState, Variant, evaluate, load_model, predict_ids, save_model, train
from strap.synth import SynthConfig, generate, write_synth

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
ABLATION_LENGTHS = (1, 2, 5, 10, 20, 30, 50)
DATA_ENV = "STRAP_DATA_DIR"

BEST_CKPT = "best.ckpt"
LAST_CKPT = "last.ckpt"
TRAIN_LOG = "train_log.json"
METRICS_FILE = "metrics.json"
HISTORY_ERROR_FILE = "history_error.csv"
ABLATION_FILE = "ablation.csv"
BASELINES_FILE = "baselines.json"


@dataclass(frozen=True)
class RunConfig:
    subcommand: str
    data_dir: str | None = None
    variant: str = "st_rap"
    hidden_dim: int = 64
    history_len: int | None = 30
    lr: float = 1e-3
    batch: int = 128
    epochs: int = 10
    weight_decay: float = 1e-5
    clip: float = 0.5
    seed: int = 0
    out: str | None = None
    threads: int | None = None
    steps_per_epoch: int | None = None
    radius_km: float = 5.0
    split: str = "test"
    lengths: tuple[int, ...] = ABLATION_LENGTHS
    synth: dict = field(default_factory=dict)
    gcn: dict = field(default_factory=dict)

    def validate(self) -> None:
        Variant.parse(self.variant)
        self.train_config()  # field checks live there
        if self.threads is not None and self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if not self.radius_km > 0:
            raise ConfigError(f"radius_km must be > 0, got {self.radius_km}")
        if self.split not in ("train", "val", "test"):
            raise ConfigError(f"split must be train, val or test, got {self.split!r}")
        if not self.lengths or any(int(v) < 1 for v in self.lengths):
            raise ConfigError(f"lengths must be positive integers, got {self.lengths}")

    def train_config(self, **changes) -> TrainConfig:
        kw = dict(
            variant=self.variant, hidden_dim=self.hidden_dim, history_len=self.history_len, lr=self.lr,
            batch_size=self.batch, epochs=self.epochs, weight_decay=self.weight_decay, clip=self.clip,
            seed=self.seed, steps_per_epoch=self.steps_per_epoch,
        )
        kw.update(changes)
        return TrainConfig(**kw)

    def echo(self) -> dict:
        """Config as echoed into outputs; the output location itself is left out so artifacts are relocatable."""
        out = dataclasses.asdict(self)
        out.pop("out")
        out["lengths"] = list(self.lengths)
        return out


_CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"subcommand"}


def _read_config(path: str) -> dict:
    try:
        blob = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(blob, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = sorted(set(blob) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    return blob


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then environment, then explicit flags."""
    values: dict = {}
    if args.config:
        values.update(_read_config(args.config))
    if "data_dir" not in values and os.environ.get(DATA_ENV):
        values["data_dir"] = os.environ[DATA_ENV]
    for key in _CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if "lengths" in values:
        values["lengths"] = tuple(int(v) for v in values["lengths"])
    try:
        cfg = RunConfig(subcommand=args.command, **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def _require(value, what: str) -> Path:
    if value is None:
        raise ConfigError(f"{what} is required (flag, config file or ${DATA_ENV})")
    return Path(value)


def _write_json(path: Path, blob) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(blob, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _provenance(cfg: RunConfig) -> dict:
    return {"version": __version__, "config": cfg.echo()}


def _load_graph_for(cfg: RunConfig, ds, variant: str):
    data = _require(cfg.data_dir, "--data")
    if Variant.parse(variant) is Variant.T_RAP:
        return None
    return load_graph(ds, data)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(cfg: RunConfig) -> int:
    out = _require(cfg.out or cfg.data_dir, "--out")
    try:
        synth = SynthConfig.from_json({**cfg.synth, "seed": cfg.seed})
    except ConfigError as exc:
        where = "config 'synth' section" if cfg.synth else "synth defaults"
        raise ConfigError(f"{where}: {exc}") from None
    ds, gt = generate(synth)
    paths = write_synth(ds, gt, synth, out)
    print(f"wrote {len(paths)} files to {out} ({ds.n_residents} residents, {ds.n_transactions} transactions)")
    return EXIT_OK


def cmd_build_graph(cfg: RunConfig) -> int:
    data = _require(cfg.data_dir, "--data")
    ds = load_dataset(data)
    g = build_hetero_graph(ds, cfg.radius_km)
    out = Path(cfg.out) if cfg.out else data
    save_graph(g, ds, out)
    deg = g.degrees()
    print(f"graph written to {out}: mean degrees " + ", ".join(f"{k}={v:.1f}" for k, v in deg.items()))
    return EXIT_OK


def cmd_train(cfg: RunConfig, resume: bool = False, stop_after: int | None = None) -> int:
    data = _require(cfg.data_dir, "--data")
    out = _require(cfg.out, "--out")
    out.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(data)
    tcfg = cfg.train_config()
    graph = _load_graph_for(cfg, ds, tcfg.variant)
    state = TrainState.load(out / LAST_CKPT) if resume else None

    def progress(entry):
        val = "n/a" if entry["val_mae"] is None else f"{entry['val_mae']:.4f}"
        print(f"epoch {entry['epoch']}: train MAE {entry['train_mae']:.4f}, val MAE {val}", flush=True)

    result = train(ds, graph, tcfg, resume=state, checkpoint_path=out / LAST_CKPT, stop_after=stop_after,
                   progress=progress)
    st = result.state
    save_model(result.params, tcfg, st.stats, out / BEST_CKPT, extra={"best_epoch": st.best_epoch})
    _write_json(out / TRAIN_LOG, {**_provenance(cfg), "epochs": st.log, "best_epoch": st.best_epoch,
                                  "best_val_mae": st.best_val_mae, "completed_epochs": st.epoch})
    print(f"best epoch {st.best_epoch}; checkpoint {out / BEST_CKPT}")
    return EXIT_OK


def _split_ids(ds, name: str):
    return getattr(chronological_split(ds), name)


def cmd_evaluate(cfg: RunConfig, checkpoint: str | None = None) -> int:
    data = _require(cfg.data_dir, "--data")
    out = _require(cfg.out, "--out")
    ckpt = Path(checkpoint) if checkpoint else out / BEST_CKPT
    params, tcfg, stats = load_model(ckpt)
    ds = load_dataset(data)
    params.check_dims(ds.d_e, ds.d_r, ds.d_a, ds.d_s)
    ds = ds.replace(stats=stats)
    graph = _load_graph_for(cfg, ds, tcfg.variant)
    ids = _split_ids(ds, cfg.split)
    pred = predict_ids(ds, graph, params, ids, tcfg)
    report = metrics_report(ds, ids, pred)
    blob = {**report, **_provenance(cfg), "model": tcfg.to_json(), "split": cfg.split}
    _write_json(out / METRICS_FILE, blob)
    _write_history_csv(out / HISTORY_ERROR_FILE, history_count_table(ds, ids, pred))
    o = report["overall"]
    print(f"{cfg.split}: MAE {o['mae']:.4f}  RMSE {o['rmse']:.4f}  MAPE {o['mape']:.4f}%  "
          f"(COLD {report['n_cold']}, WARM {report['n_warm']})")
    return EXIT_OK


def _write_history_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["history_count", "n", "mae"])
        for r in rows:
            w.writerow([r["history_count"], r["n"], repr(r["mae"])])


def run_ablation(ds, graph, cfg: RunConfig, lengths=None) -> list[dict]:
    rows = []
    split = chronological_split(ds)
    for L in sorted(int(v) for v in (lengths or cfg.lengths)):
        tcfg = cfg.train_config(history_len=L)
        result = train(ds, graph, tcfg, split)
        rep = evaluate(result.dataset, graph, result.params, split.test, tcfg)
        rows.append({"history_len": L, "mae": rep["overall"]["mae"], "rmse": rep["overall"]["rmse"],
                     "mape": rep["overall"]["mape"], "cold_mae": rep["cold"]["mae"], "warm_mae": rep["warm"]["mae"],
                     "best_epoch": result.state.best_epoch})
        print(f"L={L}: test MAE {rep['overall']['mae']:.4f}", flush=True)
    return rows


def cmd_ablate(cfg: RunConfig) -> int:
    data = _require(cfg.data_dir, "--data")
    out = _require(cfg.out, "--out")
    out.mkdir(parents=True, exist_ok=True)
    ds = load_dataset(data)
    graph = _load_graph_for(cfg, ds, cfg.variant)
    rows = run_ablation(ds, graph, cfg)
    cols = ["history_len", "mae", "rmse", "mape", "cold_mae", "warm_mae", "best_epoch"]
    with open(out / ABLATION_FILE, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r[c] is None else (repr(r[c]) if isinstance(r[c], float) else r[c]) for c in cols])
    print(f"wrote {out / ABLATION_FILE}")
    return EXIT_OK


def cmd_baselines(cfg: RunConfig) -> int:
    data = _require(cfg.data_dir, "--data")
    out = _require(cfg.out, "--out")
    ds = load_dataset(data)
    split = chronological_split(ds)
    ids = getattr(split, cfg.split)
    preds = {
        "repeat": repeat_predict_ids(ds, ids, train_mean_price(ds, split.train)),
        "linreg": linreg_predict_ids(linreg_fit(ds, split.train), ds, ids),
    }
    if graph_files_present(data):
        try:
            gcfg = GcnConfig(**{"seed": cfg.seed, **cfg.gcn})
        except TypeError as exc:
            raise ConfigError(f"config 'gcn' section: {exc}") from None
        preds["gcn"] = gcn_predict_ids(gcn_train(ds, load_graph(ds, data), split, gcfg), ds, ids)
    else:
        print("graph files missing; skipping the GCN baseline", file=sys.stderr)
    blob = {**_provenance(cfg), "split": cfg.split,
            "models": {name: metrics_report(ds, ids, p) for name, p in preds.items()}}
    _write_json(out / BASELINES_FILE, blob)
    for name, rep in blob["models"].items():
        print(f"{name}: MAE {rep['overall']['mae']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _opt_int(value: str) -> int | None:
    return None if value.lower() in ("none", "null", "all", "inf") else int(value)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--data", dest="data_dir", help=f"dataset directory (default ${DATA_ENV})")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--variant", choices=[v.value for v in Variant])
    common.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    common.add_argument("--history-len", dest="history_len", type=_opt_int, help="max history length, or 'none'")
    common.add_argument("--lr", type=float)
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch", type=int)
    common.add_argument("--weight-decay", dest="weight_decay", type=float)
    common.add_argument("--clip", type=float)
    common.add_argument("--steps-per-epoch", dest="steps_per_epoch", type=_opt_int)
    common.add_argument("--radius-km", dest="radius_km", type=float)
    common.add_argument("--threads", type=int, help="cap on BLAS worker threads")
    common.add_argument("--split", choices=["train", "val", "test"])

    p = argparse.ArgumentParser(prog="strap", description="Spatio-temporal real-estate appraisal toolkit.")
    p.add_argument("--version", action="version", version=f"strap {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    sub.add_parser("build-graph", parents=[common], help="build the proximity graph edge lists")
    t = sub.add_parser("train", parents=[common], help="train a model")
    t.add_argument("--resume", action="store_true", help="continue from <out>/last.ckpt")
    t.add_argument("--stop-after", dest="stop_after", type=int, help="stop once this many epochs are complete")
    e = sub.add_parser("evaluate", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", help="checkpoint path (default <out>/best.ckpt)")
    a = sub.add_parser("ablate", parents=[common], help="history-length sweep")
    a.add_argument("--lengths", type=lambda s: tuple(int(v) for v in s.split(",")), help="comma-separated L grid")
    sub.add_parser("baselines", parents=[common], help="evaluate Repeat, linear regression and GCN")
    return p


def _limit_threads(n: int | None):
    if n is None:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        with _limit_threads(cfg.threads):
            if args.command == "generate":
                return cmd_generate(cfg)
            if args.command == "build-graph":
                return cmd_build_graph(cfg)
            if args.command == "train":
                return cmd_train(cfg, resume=args.resume, stop_after=args.stop_after)
            if args.command == "evaluate":
                return cmd_evaluate(cfg, args.checkpoint)
            if args.command == "ablate":
                return cmd_ablate(cfg)
            if args.command == "baselines":
                return cmd_baselines(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
