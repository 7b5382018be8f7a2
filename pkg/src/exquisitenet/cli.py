"""Command-line interface.

Settings resolve in three layers: built-in defaults, then an optional JSON
config file (--config), then explicit flags. Every effective setting is
echoed as key=value pairs before the run starts. Exit codes: 0 success,
1 runtime failure, 2 usage error. EXQUISITE_LOG controls verbosity
(quiet|info|debug, default info).
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import bench as bench_mod
from . import data as data_mod
from . import explain as explain_mod
from . import gradcheck as gradcheck_mod
from . import model as model_mod
from . import train as train_mod
from .errors import EngineError

log = logging.getLogger("exquisitenet")


def _setup_logging():
    level_name = os.environ.get("EXQUISITE_LOG", "info").lower()
    level = {"quiet": logging.WARNING, "info": logging.INFO,
             "debug": logging.DEBUG}.get(level_name, logging.INFO)
    logging.basicConfig(format="%(message)s", level=level, stream=sys.stdout)


def _merge(args, defaults):
    """defaults <- JSON config file <- explicit flags (None means unset)."""
    merged = dict(defaults)
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        with open(cfg_path, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        merged.update(loaded)
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    return merged


def _echo(cmd, settings, order):
    pairs = " ".join(f"{k}={settings[k]}" for k in order)
    log.info(f"run: cmd={cmd} {pairs}")


def _parse_schedule(text):
    return tuple(int(tok) for tok in text.split(","))


def _model_config(preset, classes, schedule=None, resolution=None, head=None):
    base = model_mod.MICRO if preset == "micro" else model_mod.FULL
    return model_mod.ModelConfig(
        schedule=_parse_schedule(schedule) if schedule else base.schedule,
        head_width=head if head is not None else base.head_width,
        classes=classes,
        dropout=base.dropout,
        se_reduction=base.se_reduction,
        resolution=resolution if resolution is not None else base.resolution)


# ---- subcommand runners --------------------------------------------------

def _cmd_summary(args):
    s = _merge(args, {"classes": 102, "schedule": None, "resolution": 224,
                      "head": 640, "seed": 0})
    _echo("summary", s, ["classes", "schedule", "resolution", "head", "seed"])
    schedule = _parse_schedule(s["schedule"]) if s["schedule"] else (12, 50, 100, 200, 350)
    config = model_mod.ModelConfig(schedule=schedule, head_width=s["head"],
                                   classes=s["classes"], resolution=s["resolution"])
    net = model_mod.build(config, np.random.default_rng(s["seed"]))
    x = np.zeros((1, 3, config.resolution, config.resolution), dtype=net.dtype)
    _, trace = net.forward_trace(x, train=False)
    counts = model_mod.count_params(net)
    print(f"{'stage':<12}{'output':<22}{'params':>10}")
    for name, shape in trace:
        print(f"{name:<12}{str(list(shape)):<22}{counts.per_stage[name]:>10}")
    print(f"total params: {counts.total} ({counts.millions:.2f}M)")
    return 0


def _cmd_gradcheck(args):
    s = _merge(args, {"seed": 0, "seeds": 20})
    _echo("gradcheck", s, ["seed", "seeds"])
    results = gradcheck_mod.run_suite(seed=s["seed"], n_seeds=s["seeds"])
    ok = True
    for res in results:
        print(res.line())
        ok = ok and res.passed
    print(f"gradcheck: {'all passed' if ok else 'FAILURES'}")
    return 0 if ok else 1


def _cmd_synth(args):
    s = _merge(args, {"out": None, "classes": 4, "per_class": 100,
                      "size": 64, "seed": 0})
    if not s["out"]:
        raise ValueError("--out directory is required")
    _echo("synth", s, ["out", "classes", "per_class", "size", "seed"])
    train_split, test_split = data_mod.synth_generate(
        s["classes"], s["per_class"], s["size"], s["seed"], s["out"])
    print(f"train_images={len(train_split)} test_images={len(test_split)} "
          f"classes={s['classes']} dir={s['out']}")
    return 0


def _cmd_train(args):
    s = _merge(args, {"data": None, "train_list": None, "val_list": None,
                      "test_list": None, "batch": 50, "lr": 0.001,
                      "epochs": 100, "optim": "ranger", "eval_every": 10,
                      "out": None, "seed": 0, "preset": "full",
                      "classes": None, "workers": 0,
                      "mean": "0.5,0.5,0.5", "std": "0.5,0.5,0.5"})
    if not s["data"] or not s["train_list"]:
        raise ValueError("--data and --train-list are required")
    if not s["val_list"] and not s["test_list"]:
        raise ValueError("need --val-list (or --test-list to mimic the "
                         "evaluate-on-test protocol)")
    _echo("train", s, ["data", "train_list", "val_list", "test_list", "preset",
                       "batch", "lr", "epochs", "optim", "eval_every", "seed",
                       "workers", "out"])
    train_split = data_mod.load_split(s["data"], s["train_list"])
    eval_list = s["val_list"] if s["val_list"] else s["test_list"]
    eval_split = data_mod.load_split(s["data"], eval_list)
    classes = s["classes"] if s["classes"] else max(
        train_split.class_count, eval_split.class_count)
    config = _model_config(s["preset"], classes)
    cfg = data_mod.PipelineConfig(resolution=config.resolution,
                                  mean=_parse_floats(s["mean"]),
                                  std=_parse_floats(s["std"]))
    net = model_mod.build(config, np.random.default_rng(s["seed"]))
    result = train_mod.train(
        net, train_split, eval_split, cfg, epochs=s["epochs"],
        batch_size=s["batch"], lr=s["lr"], optim_name=s["optim"],
        eval_every=s["eval_every"], out_path=s["out"], seed=s["seed"],
        workers=s["workers"], log=log.info)
    print(f"best_acc={result.best_acc:.6f} best_epoch={result.best_epoch} "
          f"checkpoint={result.checkpoint or '-'}")
    return 0


def _parse_floats(text):
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(tok) for tok in str(text).split(","))


def _cmd_eval(args):
    s = _merge(args, {"data": None, "list": None, "model": None, "batch": 50,
                      "workers": 0, "mean": "0.5,0.5,0.5", "std": "0.5,0.5,0.5"})
    for key in ("data", "list", "model"):
        if not s[key]:
            raise ValueError(f"--{key} is required")
    _echo("eval", s, ["data", "list", "model", "batch", "workers"])
    net = model_mod.load(s["model"])
    split = data_mod.load_split(s["data"], s["list"])
    cfg = data_mod.PipelineConfig(resolution=net.config.resolution,
                                  mean=_parse_floats(s["mean"]),
                                  std=_parse_floats(s["std"]))
    acc = train_mod.evaluate(net, split, cfg, s["batch"], workers=s["workers"])
    print(f"images={len(split)} top1={acc:.6f}")
    return 0


def _cmd_bench(args):
    s = _merge(args, {"model": None, "batch": 50, "iters": 10, "warmup": 3,
                      "repeats": 5, "threads": 1, "seed": 0, "json": None,
                      "preset": None})
    _echo("bench", s, ["model", "preset", "batch", "iters", "warmup",
                       "repeats", "threads", "seed"])
    if s["model"]:
        net = model_mod.load(s["model"])
    elif s["preset"]:
        config = _model_config(s["preset"], 102 if s["preset"] == "full" else 4)
        net = model_mod.build(config, np.random.default_rng(s["seed"]))
    else:
        raise ValueError("--model (or --preset) is required")
    report = bench_mod.measure_fps(net, batch_size=s["batch"],
                                   iterations=s["iters"], warmup=s["warmup"],
                                   repeats=s["repeats"], seed=s["seed"],
                                   threads=s["threads"])
    print(report.text())
    if s["json"]:
        with open(s["json"], "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
            fh.write("\n")
    return 0


def _cmd_gradcam(args):
    s = _merge(args, {"model": None, "image": None, "class_index": None,
                      "out": None, "layer": None,
                      "mean": "0.5,0.5,0.5", "std": "0.5,0.5,0.5"})
    for key in ("model", "image", "class_index", "out"):
        if s[key] is None:
            flag = "--class" if key == "class_index" else f"--{key}"
            raise ValueError(f"{flag} is required")
    _echo("gradcam", s, ["model", "image", "class_index", "out", "layer"])
    net = model_mod.load(s["model"])
    raw = data_mod.load_image(s["image"])
    if raw.shape[2] != net.config.resolution or raw.shape[3] != net.config.resolution:
        raw = data_mod.resize_bilinear(raw, net.config.resolution)
    cfg = data_mod.PipelineConfig(resolution=net.config.resolution,
                                  mean=_parse_floats(s["mean"]),
                                  std=_parse_floats(s["std"]))
    x = data_mod.normalize(raw, cfg)
    heat = explain_mod.gradcam(net, x, s["class_index"], layer=s["layer"])
    explain_mod.overlay(heat, raw, s["out"])
    print(f"heatmap={s['out']} layer={heat.layer} class={heat.class_index} "
          f"peak={'1.0' if heat.values.max() > 0 else '0.0 (no positive evidence)'}")
    return 0


def _cmd_stats(args):
    s = _merge(args, {"data": None, "list": None, "resolution": 224})
    for key in ("data", "list"):
        if not s[key]:
            raise ValueError(f"--{key} is required")
    _echo("stats", s, ["data", "list", "resolution"])
    split = data_mod.load_split(s["data"], s["list"])
    mean, std = data_mod.compute_stats(split, s["resolution"])
    print("mean=" + ",".join(f"{v:.6f}" for v in mean))
    print("std=" + ",".join(f"{v:.6f}" for v in std))
    return 0


# ---- argument wiring -------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="exquisitenet",
        description="Small-footprint CNN engine: train, evaluate, explain, "
                    "and benchmark.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, fn, helptext):
        p = sub.add_parser(name, help=helptext)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="JSON file of settings (flags win)")
        return p

    p = add("summary", _cmd_summary, "print the stage/shape/parameter table")
    p.add_argument("--classes", type=int)
    p.add_argument("--schedule", help="comma-separated channel schedule")
    p.add_argument("--resolution", type=int)
    p.add_argument("--head", type=int)
    p.add_argument("--seed", type=int)

    p = add("gradcheck", _cmd_gradcheck, "finite-difference gradient suite")
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", type=int, help="number of seeds per case")

    p = add("synth", _cmd_synth, "generate the synthetic dataset")
    p.add_argument("--out")
    p.add_argument("--classes", type=int)
    p.add_argument("--per-class", dest="per_class", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--seed", type=int)

    p = add("train", _cmd_train, "train a model")
    p.add_argument("--data")
    p.add_argument("--train-list", dest="train_list")
    p.add_argument("--val-list", dest="val_list")
    p.add_argument("--test-list", dest="test_list",
                   help="evaluate on the test split (the protocol the "
                        "headline numbers used)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--optim", choices=["ranger", "radam", "adam", "sgd"])
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--preset", choices=["micro", "full"])
    p.add_argument("--classes", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--mean")
    p.add_argument("--std")

    p = add("eval", _cmd_eval, "top-1 accuracy of a checkpoint on a split")
    p.add_argument("--data")
    p.add_argument("--list")
    p.add_argument("--model")
    p.add_argument("--batch", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--mean")
    p.add_argument("--std")

    p = add("bench", _cmd_bench, "inference throughput/latency")
    p.add_argument("--model")
    p.add_argument("--preset", choices=["micro", "full"])
    p.add_argument("--batch", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--json", help="also write the report as JSON here")

    p = add("gradcam", _cmd_gradcam, "class activation heatmap overlay")
    p.add_argument("--model")
    p.add_argument("--image")
    p.add_argument("--class", dest="class_index", type=int)
    p.add_argument("--out")
    p.add_argument("--layer")
    p.add_argument("--mean")
    p.add_argument("--std")

    p = add("stats", _cmd_stats, "per-channel dataset mean/std")
    p.add_argument("--data")
    p.add_argument("--list")
    p.add_argument("--resolution", type=int)

    return parser


def main(argv=None):
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.fn(args)
    except (EngineError, OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
