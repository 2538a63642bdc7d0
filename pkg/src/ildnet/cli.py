"""Command-line front end: synth, train, fv, patch, eval, bench.

Settings resolve as built-in defaults, then the matching ``[section]`` of
an optional ``--config`` file (flat ``key = value`` pairs), then explicit
flags. Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric
failure.
"""
import argparse
import configparser
import csv
import hashlib
import io
import json
import logging
import os
import sys

import numpy as np

from . import __version__, container, evalkit, nn, patchbase, pipeline
from . import rng as rngmod
from .errors import DataError, NumericError, ParameterError
from .preprocess import AttenuationWindow, ChannelStats, make_input
from .synthdata import (GeneratorSpec, LabelMapping, default_threshold, generate_dataset,
                        read_dataset, spec_to_dict, write_dataset)

log = logging.getLogger("ildnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULTS = {
    "synth": {"seed": 0, "patients": 100, "slices": 8, "grid": 64,
              "prevalence": "0.35,0.3,0.25,0.35", "region_fraction": "0.04,0.35", "noise_hu": 20.0},
    "train": {"seed": 0, "head": "mlc", "mapping": "step", "balance": False, "fold": 0, "folds": 5,
              "input_size": 64, "epochs": 25, "lr": 0.003, "momentum": 0.9, "weight_decay": 5e-4,
              "batch_size": 8, "lr_decay": 0.95, "flip": False, "normalizer": 0.0},
    "fv": {"seed": 0, "layer": "conv1", "components": 32, "pca_dim": 512, "ridge": 0.1, "fold": 0, "folds": 5,
           "target": "", "max_descriptors": 200000},
    "patch": {"seed": 0, "fold": 0, "folds": 5, "patch_size": 32, "stride": 10, "epochs": 5, "lr": 0.003,
              "batch_size": 32, "max_patches": 20000},
    "eval": {"fold": 0, "folds": 5, "seed": 0},
    "bench": {"n": 5, "repetitions": 1, "threads": 1, "stride": 10, "fraction": 0.05, "lung_only": True},
    "windows": {"low": "-1400,-950", "normal": "-1400,200", "high": "-160,240"},
}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# config resolution


def _coerce(value, default):
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        v = str(value).strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"not a boolean: {value!r}")
    try:
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise UsageError(f"bad numeric value {value!r}") from None
    return str(value)


def resolve(command, args):
    cfg = dict(DEFAULTS[command])
    windows = dict(DEFAULTS["windows"])
    if args.config:
        parser = configparser.ConfigParser()
        try:
            with open(args.config, encoding="utf-8") as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise DataError(f"config file not found: {args.config}") from None
        except configparser.Error as exc:
            raise UsageError(f"bad config file: {exc}") from None
        for section, target in ((command, cfg), ("windows", windows)):
            if parser.has_section(section):
                for key, value in parser.items(section):
                    key = key.replace("-", "_")
                    if key not in target:
                        raise UsageError(f"unknown key {key!r} in [{section}]")
                    target[key] = _coerce(value, DEFAULTS[section][key])
    for key in cfg:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = _coerce(v, DEFAULTS[command][key])
    cfg["windows"] = windows
    return cfg


def config_hash(cfg):
    raw = json.dumps(cfg, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(raw).hexdigest()[:16]


def provenance(cfg):
    return f"ildnet {__version__} seed={cfg.get('seed', 0)} config_hash={config_hash(cfg)}"


def parse_windows(cfg):
    out = []
    for name in ("low", "normal", "high"):
        try:
            lo, hi = (int(v) for v in str(cfg["windows"][name]).split(","))
        except ValueError:
            raise UsageError(f"window {name!r} must be 'low,high'") from None
        out.append(AttenuationWindow(lo, hi))
    return tuple(out)


def _floats(text, n, what):
    try:
        vals = tuple(float(v) for v in str(text).split(","))
    except ValueError:
        raise UsageError(f"{what} must be {n} comma-separated numbers") from None
    if len(vals) != n:
        raise UsageError(f"{what} must have {n} entries")
    return vals


def _check_fold(cfg):
    if not 0 <= cfg["fold"] < cfg["folds"]:
        raise UsageError(f"--fold must lie in [0, {cfg['folds'] - 1}], got {cfg['fold']}")


def _write_text(path, text):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# --------------------------------------------------------------------------
# commands


def cmd_synth(args):
    cfg = resolve("synth", args)
    out = args.out
    if os.path.isdir(out) and os.listdir(out) and not args.force:
        raise UsageError(f"output directory {out} is not empty (use --force)")
    spec = GeneratorSpec(cfg["patients"], cfg["slices"], cfg["grid"],
                         _floats(cfg["prevalence"], 4, "prevalence"),
                         _floats(cfg["region_fraction"], 2, "region_fraction"), cfg["noise_hu"])
    slices = generate_dataset(spec, cfg["seed"])
    if os.path.isdir(out) and args.force:
        # only files owned by the dataset format are replaced
        old = os.path.join(out, "manifest.json")
        if os.path.exists(old):
            os.remove(old)
        sdir = os.path.join(out, "slices")
        if os.path.isdir(sdir):
            for name in os.listdir(sdir):
                if name.endswith(".bin"):
                    os.remove(os.path.join(sdir, name))
    write_dataset(out, slices, {"seed": cfg["seed"], "generator": spec_to_dict(spec),
                                "provenance": provenance(cfg)})
    log.info("wrote %d slices to %s", len(slices), out)
    return EXIT_OK


def _mapping(text, grid):
    try:
        return LabelMapping.parse(text, default_threshold(grid))
    except ParameterError as exc:
        raise UsageError(str(exc)) from None


def cmd_train(args):
    cfg = resolve("train", args)
    _check_fold(cfg)
    try:
        head = pipeline.resolve_head(cfg["head"])
    except ParameterError as exc:
        raise UsageError(str(exc)) from None
    slices, manifest = read_dataset(args.dataset)
    mapping = _mapping(cfg["mapping"], manifest["height"])
    if head == "multilabel_logistic" and mapping.kind != "step":
        raise UsageError("head mlc requires a step mapping")
    split = pipeline.fold_split(slices, cfg["folds"], cfg["fold"], cfg["seed"])
    opt = nn.OptConfig(lr=cfg["lr"], momentum=cfg["momentum"], weight_decay=cfg["weight_decay"],
                       batch_size=cfg["batch_size"], epochs=cfg["epochs"], seed=cfg["seed"],
                       lr_decay=cfg["lr_decay"], flip=cfg["flip"])

    def progress(epoch, loss):
        log.info("epoch %d loss %.6f", epoch + 1, loss)

    model = pipeline.train_holistic(slices, split.train, head, mapping, cfg["balance"], opt, cfg["input_size"],
                                    cfg["normalizer"] or None, callback=progress, windows=parse_windows(cfg))
    prov = provenance(cfg)
    pipeline.save_holistic(args.out, model, {"provenance": prov, "fold": cfg["fold"], "folds": cfg["folds"],
                                             "seed": cfg["seed"]})
    buf = [f"# {prov}\n", "epoch,loss\n"]
    buf += [f"{i + 1},{v:.8f}\n" for i, v in enumerate(model.history)]
    _write_text(args.history or os.path.splitext(args.out)[0] + "_history.csv", "".join(buf))
    return EXIT_OK


def cmd_fv(args):
    cfg = resolve("fv", args)
    _check_fold(cfg)
    slices, manifest = read_dataset(args.dataset)
    base = pipeline.load_holistic(args.model)
    if cfg["layer"] not in base.net.spec.names:
        raise UsageError(f"unknown layer {cfg['layer']!r}; choose from {', '.join(base.net.spec.names)}")
    target = _mapping(cfg["target"], manifest["height"]) if cfg["target"] else None
    split = pipeline.fold_split(slices, cfg["folds"], cfg["fold"], cfg["seed"])
    fv = pipeline.fit_fv(base, slices, split.train, cfg["layer"], cfg["components"], cfg["pca_dim"], cfg["ridge"],
                         cfg["seed"], target, cfg["max_descriptors"])
    for w in fv.gmm.warnings:
        log.warning("gmm: %s", w)
    pipeline.save_fv(args.out, fv, {"provenance": provenance(cfg), "fold": cfg["fold"], "folds": cfg["folds"],
                                    "seed": cfg["seed"]})
    return EXIT_OK


def cmd_patch(args):
    cfg = resolve("patch", args)
    _check_fold(cfg)
    slices, _ = read_dataset(args.dataset)
    split = pipeline.fold_split(slices, cfg["folds"], cfg["fold"], cfg["seed"])
    images, labels = [], []
    for i in split.train:
        p = patchbase.extract_patches(slices[i], cfg["patch_size"], cfg["stride"], restrict_to_lung=True)
        images.append(p.images)
        labels.append(p.labels)
    images = np.concatenate(images).astype(np.float32)
    labels = np.concatenate(labels)
    if len(images) > cfg["max_patches"]:
        keep = np.sort(rngmod.stream(cfg["seed"], "patches").choice(len(images), cfg["max_patches"], replace=False))
        images, labels = images[keep], labels[keep]
    opt = nn.OptConfig(lr=cfg["lr"], batch_size=cfg["batch_size"], epochs=cfg["epochs"], seed=cfg["seed"])
    model, history = patchbase.patch_train(images, labels, opt=opt)
    nn.save_network(args.out, model.net, {
        "kind": "patch", "patch_size": model.patch_size, "stats_mean": [float(v) for v in model.stats.mean],
        "stats_std": [float(v) for v in model.stats.std], "history": history, "provenance": provenance(cfg)})
    return EXIT_OK


def load_patch_model(path):
    net, meta = nn.load_network(path, np.float32)
    if meta.get("kind") != "patch":
        raise DataError(f"{path} is not a patch model")
    return patchbase.PatchModel(net, ChannelStats(np.array(meta["stats_mean"]), np.array(meta["stats_std"])),
                                int(meta["patch_size"]))


def load_any_model(path):
    """Holistic network or FV model, decided by the container kind."""
    kind, meta = container.peek(path)
    if kind == "fvmodel":
        return pipeline.load_fv(path)
    if kind == "network" and "head" in meta:
        return pipeline.load_holistic(path)
    raise DataError(f"{path}: cannot evaluate a {meta.get('kind', kind)!r} model")


def cmd_eval(args):
    cfg = resolve("eval", args)
    _check_fold(cfg)
    models = [(m, load_any_model(m)) for m in args.model]
    slices, _ = read_dataset(args.dataset)
    split = pipeline.fold_split(slices, cfg["folds"], cfg["fold"], cfg["seed"])
    os.makedirs(args.out_dir, exist_ok=True)
    prov = provenance(dict(cfg, models=[os.path.basename(m) for m, _ in models]))
    for path, model in models:
        stem = os.path.splitext(os.path.basename(path))[0]
        report = pipeline.evaluate_model(model, slices, split.test)
        _write_text(os.path.join(args.out_dir, f"{stem}_report.csv"), evalkit.report_csv(report, prov))
        _write_text(os.path.join(args.out_dir, f"{stem}_curves.csv"), evalkit.curves_csv(report, prov))
        _write_text(os.path.join(args.out_dir, f"{stem}_roc.svg"),
                    evalkit.curves_svg(report.roc, f"ROC - {stem}", "false positive rate", "true positive rate"))
        _write_text(os.path.join(args.out_dir, f"{stem}_pr.svg"),
                    evalkit.curves_svg(report.pr, f"Precision-recall - {stem}", "recall", "precision"))
        log.info("%s: overall F1 %.4f, mean AUC %.4f", stem, report.overall["f1"], report.overall["mean_auc"])
    return EXIT_OK


TIMING_COLUMNS = ("method", "n_slices", "min_s", "max_s", "mean_s", "threads", "speedup")


def timing_csv(stats, reference="holistic", provenance_line=None):
    """Timing rows; ``speedup`` is each method's mean over the reference mean."""
    lines = []
    if provenance_line:
        lines.append(f"# {provenance_line}\n")
    ref = stats[reference].mean_s
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TIMING_COLUMNS)
    for s in stats.values():
        w.writerow([s.method, s.n_slices, f"{s.min_s:.6f}", f"{s.max_s:.6f}", f"{s.mean_s:.6f}", s.threads,
                    f"{s.mean_s / ref:.3f}" if ref > 0 else "inf"])
    return "".join(lines) + buf.getvalue()


def holistic_runner(model):
    def run(s):
        x = model.stats.apply(make_input(s, model.input_size, model.windows)[None]).astype(model.net.dtype)
        return nn.forward(model.net, x, keep=False)[0]
    return run


def patch_runner(model, stride, fraction, lung_only):
    def run(s):
        return patchbase.slide_predict(s, model, stride, fraction, lung_only)
    return run


def cmd_bench(args):
    cfg = resolve("bench", args)
    if cfg["n"] < 1:
        raise UsageError("-n must be >= 1")
    holistic = pipeline.load_holistic(args.holistic)
    patch = load_patch_model(args.patch)
    slices, _ = read_dataset(args.dataset)
    chosen = slices[:cfg["n"]]
    stats = patchbase.benchmark({
        "holistic": holistic_runner(holistic),
        "patch": patch_runner(patch, cfg["stride"], cfg["fraction"], cfg["lung_only"]),
    }, chosen, cfg["repetitions"], cfg["threads"])
    text = timing_csv(stats, "holistic", provenance(cfg))
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def build_parser():
    p = argparse.ArgumentParser(prog="ildnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value config file with [section] headers")
        sp.add_argument("--seed", type=int)

    s = sub.add_parser("synth", help="generate a synthetic dataset directory")
    common(s)
    s.add_argument("--out", required=True)
    s.add_argument("--patients", type=int)
    s.add_argument("--slices", type=int)
    s.add_argument("--grid", type=int)
    s.add_argument("--prevalence")
    s.add_argument("--region-fraction", dest="region_fraction")
    s.add_argument("--noise-hu", dest="noise_hu", type=float)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a holistic multi-label network")
    common(t)
    t.add_argument("dataset")
    t.add_argument("--out", required=True)
    t.add_argument("--history")
    t.add_argument("--head", help="mlc | l2 | sl1")
    t.add_argument("--mapping", help="identity | step[:T] | piecewise[:T1,T2]")
    t.add_argument("--balance", action="store_const", const=True)
    t.add_argument("--fold", type=int)
    t.add_argument("--folds", type=int)
    t.add_argument("--input-size", dest="input_size", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--momentum", type=float)
    t.add_argument("--weight-decay", dest="weight_decay", type=float)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr-decay", dest="lr_decay", type=float)
    t.add_argument("--flip", action="store_const", const=True)
    t.add_argument("--normalizer", type=float)
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("fv", help="fit GMM/PCA/linear regression on pooled activations")
    common(f)
    f.add_argument("dataset")
    f.add_argument("--model", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--layer")
    f.add_argument("-M", "--components", type=int)
    f.add_argument("--pca-dim", dest="pca_dim", type=int)
    f.add_argument("--ridge", type=float)
    f.add_argument("--fold", type=int)
    f.add_argument("--folds", type=int)
    f.add_argument("--target", help="label mapping for the regressor (default: the network's)")
    f.add_argument("--max-descriptors", dest="max_descriptors", type=int)
    f.set_defaults(func=cmd_fv)

    pt = sub.add_parser("patch", help="train the patch-based baseline classifier")
    common(pt)
    pt.add_argument("dataset")
    pt.add_argument("--out", required=True)
    pt.add_argument("--fold", type=int)
    pt.add_argument("--folds", type=int)
    pt.add_argument("--patch-size", dest="patch_size", type=int)
    pt.add_argument("--stride", type=int)
    pt.add_argument("--epochs", type=int)
    pt.add_argument("--lr", type=float)
    pt.add_argument("--batch-size", dest="batch_size", type=int)
    pt.add_argument("--max-patches", dest="max_patches", type=int)
    pt.set_defaults(func=cmd_patch)

    e = sub.add_parser("eval", help="write report CSVs and ROC/PR plots for one or more models")
    common(e)
    e.add_argument("dataset")
    e.add_argument("--model", action="append", required=True)
    e.add_argument("--out-dir", dest="out_dir", required=True)
    e.add_argument("--fold", type=int)
    e.add_argument("--folds", type=int)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="time holistic versus sliding-window patch inference")
    common(b)
    b.add_argument("dataset")
    b.add_argument("--holistic", required=True)
    b.add_argument("--patch", required=True)
    b.add_argument("-n", type=int)
    b.add_argument("--repetitions", type=int)
    b.add_argument("--threads", type=int)
    b.add_argument("--stride", type=int)
    b.add_argument("--fraction", type=float)
    b.add_argument("--all-positions", dest="lung_only", action="store_const", const=False)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ParameterError) as exc:
        print(f"ildnet {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyError as exc:
        print(f"ildnet {args.command}: usage error: {exc.args[0]}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"ildnet {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"ildnet {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
