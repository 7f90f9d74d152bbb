"""Command-line entry point: train, evaluate, forecast, ablate, sweep, verify, gen-synthetic."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

from . import autograd as ag
from .config import ExperimentConfig
from .data import DataError, ingest_csv, split
from .experiment import (ABLATIONS, ablation_grid, baseline_metrics, prepare, run,
                         sweep_grid, sweep_settings)
from .model import ConfigError, ModelConfig, load_checkpoint, save_checkpoint
from .oracle import NonStationaryError, SyntheticSpec, generate
from .train import MetricRow, TrainingDiverged, evaluate, mean_rows, write_rows
from . import verify as verify_mod

logger = logging.getLogger("varmaformer")

EXIT_USAGE = 2


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="single seed (overrides seed/seeds)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--horizon", type=int, help="single horizon (overrides horizon/horizons)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="varmaformer", description=__doc__)
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("train", help="train and write checkpoint + metrics"))
    for name in ("evaluate", "forecast"):
        p = sub.add_parser(name)
        _common(p)
        p.add_argument("--checkpoint", required=True)
        if name == "forecast":
            p.add_argument("--origin", type=int,
                           help="row index where the look-back starts (default: first test window)")
    _common(sub.add_parser("ablate", help="AR / MA / VE-atten toggle grid"))
    p = sub.add_parser("sweep", help="one row per value of p, q, alpha or beta")
    _common(p)
    p.add_argument("--param", required=True, help="parameter name, or comma list for a grid")
    p.add_argument("--values", required=True, help="comma-separated values")
    p = sub.add_parser("verify", help="gradient, oracle, shape and normalization checks")
    _common(p)
    p.add_argument("--suite", action="append", choices=list(verify_mod.SUITES))
    p = sub.add_parser("gen-synthetic", help="write a synthetic AR/VARMA/sine dataset CSV")
    _common(p)
    p.add_argument("--kind", default="ar", choices=["ar", "varma", "sine-plus-noise"])
    p.add_argument("--phi", default="0.5,0.3")
    p.add_argument("--theta", default="")
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--length", type=int, default=10_000)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--name", default="")
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config, args.override)
    if args.seed is not None:
        cfg.seed, cfg.seeds = args.seed, ""
    if args.horizon is not None:
        cfg.horizon, cfg.horizons = args.horizon, ""
    if args.out:
        cfg.out = args.out
    ag.set_default_dtype(cfg.dtype)
    return cfg


def _dataset(cfg: ExperimentConfig):
    if not cfg.dataset:
        raise UsageError("no dataset configured (set 'dataset = path.csv')")
    if not os.path.isfile(cfg.dataset):
        raise DataError(f"dataset not found: {cfg.dataset}")
    return ingest_csv(cfg.dataset)


def _outdir(cfg: ExperimentConfig) -> str:
    os.makedirs(cfg.out, exist_ok=True)
    return cfg.out


def _label(mc: ModelConfig) -> str:
    for name, ar, ma, gate in ABLATIONS:
        if bool(mc.p) == ar and bool(mc.q) == ma and mc.ve_atten == gate:
            return name
    return "custom"


# ---------------------------------------------------------------------------
# commands


def cmd_train(cfg: ExperimentConfig) -> int:
    for h in cfg.horizon_list():
        cfg.model_config(horizon=h)  # fail fast on constraint violations
    ds = _dataset(cfg)
    out = _outdir(cfg)
    history, metrics = [], []
    for horizon in cfg.horizon_list():
        data = prepare(ds, cfg.lookback, horizon, cfg.split_policy())
        for seed in cfg.seed_list():
            mc = cfg.model_config(horizon=horizon, seed=seed)
            outcome = run(data, mc, cfg.train_config(seed=seed))
            label = _label(mc)
            for rec in outcome.result.history:
                history.append(MetricRow(ds.name, horizon, label, seed, rec.epoch, "train",
                                         rec.train_mse, None, rec.wall_time_s))
                history.append(MetricRow(ds.name, horizon, label, seed, rec.epoch, "val",
                                         rec.val_mse, rec.val_mae, rec.wall_time_s))
            metrics.append(MetricRow(ds.name, horizon, label, seed, outcome.result.best_epoch,
                                     "test", outcome.test["mse"], outcome.test["mae"],
                                     outcome.wall_time_s))
            ckpt = os.path.join(out, f"model-h{horizon}-s{seed}.vmf")
            save_checkpoint(outcome.model, ckpt)
            logger.info("h=%d seed=%d test mse=%.4f mae=%.4f -> %s", horizon, seed,
                        outcome.test["mse"], outcome.test["mae"], ckpt)
        for name, m in baseline_metrics(data, horizon).items():
            metrics.append(MetricRow(ds.name, horizon, name, "", "", "test", m["mse"], m["mae"], ""))
    metrics += mean_rows([r for r in metrics if isinstance(r.seed, int)])
    write_rows(os.path.join(out, "history.csv"), history)
    write_rows(os.path.join(out, "metrics.csv"), metrics)
    print(f"wrote {out}/metrics.csv and {out}/history.csv")
    return 0


def cmd_evaluate(cfg: ExperimentConfig, checkpoint: str) -> int:
    model = _load_model(checkpoint)
    ds = _dataset(cfg)
    data = prepare(ds, model.cfg.lookback, model.cfg.horizon, cfg.split_policy())
    res = evaluate(model, data.test)
    row = MetricRow(ds.name, model.cfg.horizon, _label(model.cfg), model.cfg.seed, "", "test",
                    res["mse"], res["mae"], "")
    path = os.path.join(_outdir(cfg), "evaluate.csv")
    write_rows(path, [row])
    print(f"test mse={res['mse']:.6f} mae={res['mae']:.6f} ({res['n_samples']} windows) -> {path}")
    return 0


def _load_model(path: str):
    if not os.path.isfile(path):
        raise DataError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def cmd_forecast(cfg: ExperimentConfig, checkpoint: str, origin: int | None) -> int:
    model = _load_model(checkpoint)
    ds = _dataset(cfg)
    L, T = model.cfg.lookback, model.cfg.horizon
    if origin is None:
        origin = split(ds, cfg.split_policy(), L, T)[2].start
    if origin < 0 or origin + L > len(ds):
        raise UsageError(f"origin {origin} leaves no room for a look-back of {L} rows")
    lookback = ds.values[origin:origin + L].T
    pred = model.predict(lookback[None])[0]
    path = os.path.join(_outdir(cfg), "forecast.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# schema-version: 1\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "time_index", "observed", "forecast"])
        for c, name in enumerate(ds.channel_names):
            for k in range(L + T):
                t = origin + k
                obs = f"{ds.values[t, c]:.8g}" if t < len(ds) else ""
                fc = f"{pred[c, k - L]:.8g}" if k >= L else ""
                w.writerow([name, t, obs, fc])
    print(f"wrote {path}")
    return 0


def cmd_ablate(cfg: ExperimentConfig) -> int:
    ds = _dataset(cfg)
    seeds = cfg.seed_list()
    rows = ablation_grid(ds, cfg.model_config(), cfg.train_config(), cfg.horizon_list(),
                         seeds, cfg.split_policy())
    path = os.path.join(_outdir(cfg), "ablation.csv")
    write_rows(path, rows + mean_rows(rows))
    print(f"wrote {len(rows)} rows to {path}")
    return 0


def cmd_sweep(cfg: ExperimentConfig, param: str, values: str) -> int:
    params = [p for p in param.replace(" ", "").split(",") if p]
    vals = [v for v in values.replace(" ", "").split(",") if v]
    if not vals:
        raise UsageError("empty value list")
    settings = sweep_settings(params, vals)
    for s in settings:
        for h in cfg.horizon_list():
            cfg.model_config(horizon=h, **s)
    ds = _dataset(cfg)
    rows = sweep_grid(ds, cfg.model_config(), cfg.train_config(), settings, cfg.horizon_list(),
                      cfg.seed_list(), cfg.split_policy())
    path = os.path.join(_outdir(cfg), "sweep.csv")
    write_rows(path, rows + mean_rows(rows))
    print(f"wrote {len(rows)} rows to {path}")
    return 0


def cmd_verify(cfg: ExperimentConfig, suites) -> int:
    results = verify_mod.run_all(suites)
    report = verify_mod.format_report(results)
    path = os.path.join(_outdir(cfg), "verify.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(report)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.name}: {r.checks - len(r.failures)}/{r.checks} checks "
              f"(max error {r.max_error:.2e})")
        for f in r.failures:
            print(f"    {f}")
    return 0 if all(r.passed for r in results) else 1


def cmd_gen_synthetic(cfg: ExperimentConfig, args) -> int:
    def floats(text):
        return [float(t) for t in text.split(",") if t.strip()]

    spec = SyntheticSpec(kind=args.kind, phi=floats(args.phi) if args.kind != "sine-plus-noise" else (),
                         theta=floats(args.theta), noise_std=args.noise_std, length=args.length,
                         channels=args.channels, seed=cfg.seed, name=args.name)
    ds = generate(spec)
    path = os.path.join(_outdir(cfg), f"{ds.name}.csv")
    ds.to_csv(path)
    print(f"wrote {path} ({len(ds)} rows x {ds.n_channels} channels)")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.checkpoint)
        if args.command == "forecast":
            return cmd_forecast(cfg, args.checkpoint, args.origin)
        if args.command == "ablate":
            return cmd_ablate(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.param, args.values)
        if args.command == "verify":
            return cmd_verify(cfg, args.suite)
        if args.command == "gen-synthetic":
            return cmd_gen_synthetic(cfg, args)
    except (UsageError, ConfigError, DataError, NonStationaryError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    parser.error(f"unknown command {args.command}")
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
