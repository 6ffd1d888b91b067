"""Command-line entry points: train, eval, ablate, synth.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
failure. Every command that writes outputs also writes the fully
resolved configuration next to them.
"""

from __future__ import annotations

import argparse
import csv
import json
import pathlib
import sys

import numpy as np

from . import autodiff as ad
from . import config as cf
from . import model as md
from . import training as tr
from .data import Scaler, load_csv, make_windows, save_csv, synthesize
from .errors import (
    ConfigError,
    DataError,
    NumericError,
    SdgfError,
    ShapeError,
)


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage errors map to exit code 1."""

    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="sdgf", description="Graph-fusion forecaster")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    train = sub.add_parser("train", help="fit a model and write the best checkpoint")
    _config_args(train)
    train.set_defaults(func=_cmd_train)

    evl = sub.add_parser("eval", help="score a checkpoint on a dataset split")
    evl.add_argument("--checkpoint", required=True)
    evl.add_argument("--data", required=True)
    evl.add_argument("--split", default="test", choices=("train", "val", "test"))
    evl.add_argument("--batch", type=int, default=32)
    evl.add_argument("--out", help="output directory (default: the checkpoint's)")
    evl.add_argument("--export-predictions", action="store_true")
    evl.add_argument("--dump-attention", action="store_true")
    evl.add_argument("--dump-graphs", action="store_true")
    evl.set_defaults(func=_cmd_eval)

    abl = sub.add_parser("ablate", help="train full and ablated variants, compare")
    _config_args(abl)
    abl.add_argument("--mode", required=True)
    abl.set_defaults(func=_cmd_ablate)

    syn = sub.add_parser("synth", help="write a synthetic dataset CSV")
    syn.add_argument("--config")
    syn.add_argument("--set", action="append", metavar="KEY=VALUE")
    syn.add_argument("--out", help="output CSV path (overrides synth.out)")
    syn.set_defaults(func=_cmd_synth)
    return parser


def _config_args(parser) -> None:
    parser.add_argument("--config", help="key=value config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE")
    parser.add_argument("--data", help="dataset CSV (overrides data.path)")
    parser.add_argument("--out", help="output directory (overrides out.dir)")


def _resolve_config(args) -> cf.RunConfig:
    cfg = cf.RunConfig.load(args.config) if args.config else cf.RunConfig.defaults()
    cfg = cfg.override(args.set or [])
    values = dict(cfg.values)
    if getattr(args, "data", None):
        values["data.path"] = args.data
    if getattr(args, "out", None):
        values["out.dir"] = args.out
    return cf.RunConfig(values)


def _prepare_dataset(cfg: cf.RunConfig):
    """Load, optionally standardize on train-split statistics, window."""
    path = cfg["data.path"]
    if not path:
        raise ConfigError("data.path is required (set it in the config or via --data)")
    table = load_csv(path)
    length, horizon = cfg["model.input_len"], cfg["model.horizon"]
    dataset = make_windows(table.values, length, horizon)
    scaler = None
    if cfg["data.standardize"]:
        scaler = Scaler.fit(table.values[: dataset.train_end])
        dataset = make_windows(scaler.transform(table.values), length, horizon)
    return table, dataset, scaler


def _checkpoint_extra(table, scaler) -> dict:
    return {
        "names": list(table.names),
        "scaler": scaler.to_dict() if scaler is not None else None,
    }


def _out_dir(cfg: cf.RunConfig) -> pathlib.Path:
    out = pathlib.Path(cfg["out.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _metric_line(split: str, mse: float, mae: float) -> str:
    return f"split={split} mse={mse:.12g} mae={mae:.12g}"


# ---------------------------------------------------------------------------
# train


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    table, dataset, scaler = _prepare_dataset(cfg)
    model = md.build_model(cf.model_config(cfg, table.n_vars))
    report, blob = tr.train(
        model, dataset, cf.train_config(cfg), extra=_checkpoint_extra(table, scaler)
    )
    out = _out_dir(cfg)
    (out / "model.ckpt").write_bytes(blob)
    cfg.save(out / "resolved.cfg")

    best, _ = md.load_checkpoint(blob)
    payload = report.to_dict()
    if len(dataset.split_starts("test")) > 0:
        test_mse, test_mae = tr.evaluate(best, dataset, "test", cfg["train.batch"])
        payload["test_mse"] = test_mse
        payload["test_mae"] = test_mae
        print(_metric_line("test", test_mse, test_mae))
    with open(out / "report.json", "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
    print(f"best epoch {report.best_epoch} val mse {report.best_val_mse:.12g}")
    print(f"wrote {out / 'model.ckpt'}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _branch_names(model: md.SdgfModel) -> list:
    scales = [f"detail_{i}" for i in range(1, model.config.levels + 1)] + ["approx"]
    return ["static", *scales]


def _load_eval_dataset(model: md.SdgfModel, extra: dict, path: str):
    table = load_csv(path)
    if table.n_vars != model.config.n_vars:
        raise ShapeError(
            f"checkpoint expects {model.config.n_vars} variables,"
            f" dataset {path!r} has {table.n_vars}"
        )
    values = table.values
    if extra.get("scaler") is not None:
        values = Scaler.from_dict(extra["scaler"]).transform(values)
    dataset = make_windows(values, model.config.input_len, model.config.horizon)
    return table, dataset


def _cmd_eval(args) -> int:
    try:
        blob = pathlib.Path(args.checkpoint).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {args.checkpoint!r}: {exc}") from exc
    model, extra = md.load_checkpoint(blob)
    table, dataset = _load_eval_dataset(model, extra, args.data)

    preds, targets, starts = tr.predict_split(model, dataset, args.split, args.batch)
    split_mse, split_mae = tr.mse(preds, targets), tr.mae(preds, targets)
    print(_metric_line(args.split, split_mse, split_mae))

    wants_files = args.export_predictions or args.dump_attention or args.dump_graphs
    if not wants_files:
        return 0
    out = pathlib.Path(args.out) if args.out else pathlib.Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "checkpoint": str(args.checkpoint),
        "data": str(args.data),
        "split": args.split,
        "batch": args.batch,
        "mse": split_mse,
        "mae": split_mae,
    }
    with open(out / f"eval_{args.split}.json", "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)

    if args.export_predictions:
        path = out / f"predictions_{args.split}.csv"
        _write_predictions(path, table.names, preds, targets)
        print(f"wrote {path}")
    if args.dump_attention or args.dump_graphs:
        alphas, static_adj, dynamic_means = _collect_details(
            model, dataset, args.split, args.batch
        )
        if args.dump_attention:
            path = out / f"attention_{args.split}.json"
            with open(path, "w", encoding="utf-8") as handle:
                json.dump(
                    {"branch_names": _branch_names(model), "weights": alphas.tolist()},
                    handle,
                )
            print(f"wrote {path}")
        if args.dump_graphs:
            path = out / "static_graph.csv"
            _write_adjacency(path, table.names, static_adj)
            print(f"wrote {path}")
            for name, mean_adj in zip(_branch_names(model)[1:], dynamic_means):
                path = out / f"dynamic_graph_{name}.csv"
                _write_adjacency(path, table.names, mean_adj)
                print(f"wrote {path}")
    return 0


def _write_predictions(path, names, preds, targets) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["window", "variable", "step", "y_true", "y_pred"])
        count, horizon, _ = preds.shape
        for w in range(count):
            for v, name in enumerate(names):
                for step in range(horizon):
                    writer.writerow(
                        [w, name, step + 1,
                         f"{targets[w, step, v]:.17g}", f"{preds[w, step, v]:.17g}"]
                    )


def _write_adjacency(path, names, matrix) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["node", *names])
        for name, row in zip(names, np.asarray(matrix)):
            writer.writerow([name, *(f"{v:.17g}" for v in row)])


def _collect_details(model, dataset, split, batch):
    """Fusion weights per window, static adjacency, mean dynamic adjacencies."""
    starts = dataset.split_starts(split)
    alphas = []
    static_adj = None
    dyn_sums = None
    seen = 0
    with ad.no_grad():
        for i in range(0, len(starts), batch):
            inputs, _ = dataset.batch(starts[i : i + batch])
            _, details = md.forward_with_details(ad.Tensor(inputs), model)
            alphas.append(details["alpha"])
            static_adj = details["static"]
            sums = [np.sum(a, axis=0) for a in details["dynamic"]]
            if dyn_sums is None:
                dyn_sums = sums
            else:
                dyn_sums = [acc + s for acc, s in zip(dyn_sums, sums)]
            seen += len(inputs)
    return np.concatenate(alphas), static_adj, [s / seen for s in dyn_sums]


# ---------------------------------------------------------------------------
# ablate


def _cmd_ablate(args) -> int:
    cfg = _resolve_config(args)
    # Reject bad modes before spending time on training.
    if args.mode not in md.ABLATION_MODES:
        raise ConfigError(
            f"unknown ablation mode {args.mode!r}; available: {md.ABLATION_MODES}"
        )
    table, dataset, scaler = _prepare_dataset(cfg)
    extra = _checkpoint_extra(table, scaler)
    tcfg = cf.train_config(cfg)
    out = _out_dir(cfg)
    cfg.save(out / "resolved.cfg")

    results = {}
    for label, wrap in (("full", None), (f"wo-{args.mode}", args.mode)):
        model = md.build_model(cf.model_config(cfg, table.n_vars))
        if wrap is not None:
            model = md.ablate(model, wrap)
        _, blob = tr.train(model, dataset, tcfg, extra=extra)
        (out / f"{label}.ckpt").write_bytes(blob)
        best, _ = md.load_checkpoint(blob)
        results[label] = tr.evaluate(best, dataset, "test", tcfg.batch)

    lines = ["model,metric,value"]
    for metric, index in (("mse", 0), ("mae", 1)):
        for label in results:
            lines.append(f"{label},{metric},{results[label][index]:.12g}")
    report = "\n".join(lines) + "\n"
    with open(out / "ablation.csv", "w", encoding="utf-8") as handle:
        handle.write(report)
    sys.stdout.write(report)
    return 0


# ---------------------------------------------------------------------------
# synth


def _cmd_synth(args) -> int:
    cfg = cf.RunConfig.load(args.config) if args.config else cf.RunConfig.defaults()
    cfg = cfg.override(args.set or [])
    out = args.out or cfg["synth.out"]
    if not out:
        raise ConfigError("an output path is required (synth.out or --out)")
    table = synthesize(cf.synth_spec(cfg))
    path = pathlib.Path(out)
    if path.parent != pathlib.Path(""):
        path.parent.mkdir(parents=True, exist_ok=True)
    save_csv(table, path)
    cfg.save(str(path) + ".cfg")
    print(f"wrote {path} ({table.rows} rows x {table.n_vars} vars)")
    return 0


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (SdgfError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
