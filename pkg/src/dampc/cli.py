"""Command-line entry point.

    dampc gen-data   --generator blobs|moons --out DIR
    dampc similarity [--kind NAME|all] [--labeled] A.csv B.csv
    dampc train      --source S.csv --target T.csv --output-dir DIR [--arch arch.json]
    dampc search     --source S.csv --target T.csv --output-dir DIR
    dampc enumerate  --cells N [--list]
    dampc eval       --run-dir DIR --data labeled.csv
    dampc report     --run-dir DIR

``train`` and ``search`` read an optional ``--config file.json`` and accept any
training option as a flat ``--key value`` override (``--lam 0.5``,
``--similarity mmd_rbf``).  Errors go to stderr as ``ERROR:<category>:msg``;
exit status is 1 for usage errors and 2 for data or contract errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
from typing import List, Optional

import numpy as np

from .data import (DataError, LabeledSet, Standardizer, atomic_write_text, class_means_blobs, format_float,
                   gen_shifted_blobs, gen_two_moons, load_features_csv, standardize_fit_apply,
                   write_features_csv)
from .numerics import DimensionError, Rng
from .search_space import (ArchitectureChoice, ArchitectureError, CellChoice, FCSize, InputFrom, SkipFrom,
                           SuperGraph, count_configurations, enumerate_architectures, parse_arch,
                           serialize_arch)
from .similarity import KIND_NAMES, SimilarityKind, measure
from .training import EpochMetrics, TrainConfig, evaluate, search, train_fixed

METRICS_HEADER = ["epoch", "mean_loss", "mean_ce", "mean_sim", "reward", "lr", "target_acc", "arch"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().strip()}")


# ---------------------------------------------------------------------------
# run directory I/O
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return "" if x is None else format_float(x)


def metrics_to_csv(history: List[EpochMetrics]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for m in history:
        w.writerow([m.epoch, _fmt(m.mean_loss), _fmt(m.mean_ce), _fmt(m.mean_sim), _fmt(m.reward),
                    _fmt(m.lr), _fmt(m.target_accuracy), m.sampled_arch or ""])
    return buf.getvalue()


def read_metrics(path) -> List[dict]:
    if not os.path.exists(path):
        raise DataError(f"missing metrics file {path}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != METRICS_HEADER:
        raise DataError(f"{path}: bad or missing header")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(METRICS_HEADER):
            raise DataError(f"{path}:{lineno}: expected {len(METRICS_HEADER)} fields, got {len(row)}")
        rec = {}
        try:
            rec["epoch"] = int(row[0])
            for key, tok in zip(METRICS_HEADER[1:-1], row[1:-1]):
                rec[key] = float(tok) if tok != "" else None
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: {e}") from None
        rec["arch"] = row[-1]
        out.append(rec)
    if not out:
        raise DataError(f"{path}: no epochs recorded")
    return out


def write_report(run_dir) -> str:
    """Summarize a run directory into ``report.txt`` and return the text."""
    rows = read_metrics(os.path.join(run_dir, "metrics.csv"))
    arch_path = os.path.join(run_dir, "arch.json")
    if os.path.exists(arch_path):
        with open(arch_path, encoding="utf-8") as fh:
            arch = parse_arch(fh.read())
    else:
        arch = parse_arch(rows[-1]["arch"])
    last = rows[-1]
    accs = [r["target_acc"] for r in rows]
    if all(a is not None for a in accs):
        best = max(rows, key=lambda r: (r["target_acc"], -r["epoch"]))
        best_line = f"best epoch: {best['epoch']} (target accuracy {best['target_acc']:.4f})"
    else:
        best = min(rows, key=lambda r: (r["mean_loss"], r["epoch"]))
        best_line = f"best epoch: {best['epoch']} (mean loss {best['mean_loss']:.6f})"
    lines = [
        f"epochs: {len(rows)}",
        f"final loss: {last['mean_loss']:.6f}",
        f"final cross-entropy: {last['mean_ce']:.6f}",
    ]
    if last["mean_sim"] is not None:
        lines.append(f"final similarity term: {last['mean_sim']:.6f}")
    if last["target_acc"] is not None:
        lines.append(f"final target accuracy: {last['target_acc']:.4f}")
    lines.append(best_line)
    lines.append("")
    lines.append(f"final architecture ({arch.n_cells} cells):")
    lines += ["  " + s for s in arch.describe()]
    text = "\n".join(lines) + "\n"
    atomic_write_text(os.path.join(run_dir, "report.txt"), text)
    return text


def _write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# config resolution
# ---------------------------------------------------------------------------

_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_RUN_KEYS = {"source_csv", "target_csv", "target_truth_csv", "output_dir", "arch", "standardize"}


def _coerce(key, text, default):
    if key == "similarity":
        if text in ("none", "null", ""):
            return None
        if text.startswith("{"):
            return json.loads(text)
        return {"name": text}
    if isinstance(default, bool):
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise UsageError(f"--{key} expects true/false, got {text!r}")
    try:
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise UsageError(f"--{key} expects a number, got {text!r}") from None
    return text


def parse_overrides(extra: List[str]) -> dict:
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or i + 1 >= len(extra):
            raise UsageError(f"unexpected argument {tok!r}; overrides take the form --key value")
        key = tok[2:].replace("-", "_")
        if key == "lambda":
            key = "lam"
        if key not in _TRAIN_FIELDS and key not in _RUN_KEYS:
            raise UsageError(f"unknown option --{tok[2:]}")
        out[key] = extra[i + 1]
        i += 2
    return out


def resolve_config(args, extra: List[str], command: str) -> dict:
    base = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            base = json.load(fh)
        if not isinstance(base, dict):
            raise DataError("config file must hold a JSON object")
    train = dict(base.get("train", {}))
    run = {k: v for k, v in base.items() if k != "train"}
    unknown = set(run) - _RUN_KEYS - {"command"}
    if unknown:
        raise DataError(f"unknown config keys: {', '.join(sorted(unknown))}")
    defaults = TrainConfig()
    for key, text in parse_overrides(extra).items():
        if key in _TRAIN_FIELDS:
            train[key] = _coerce(key, text, getattr(defaults, key))
        elif key == "standardize":
            run[key] = _coerce(key, text, True)
        else:
            run[key] = text
    for key in ("source", "target", "target_truth", "output_dir", "arch"):
        val = getattr(args, key, None)
        if val is not None:
            run[key if key in ("output_dir", "arch") else key + "_csv"] = val
    if args.seed is not None:
        train["seed"] = args.seed
    try:
        cfg = TrainConfig.from_dict(train)
    except (TypeError, ValueError) as e:
        raise DataError(f"invalid training config: {e}") from None
    for key in ("source_csv", "target_csv", "output_dir"):
        if not run.get(key):
            raise UsageError(f"{command} needs --{key.replace('_csv', '').replace('_', '-')}")
    resolved = {
        "command": command,
        "source_csv": run["source_csv"],
        "target_csv": run["target_csv"],
        "target_truth_csv": run.get("target_truth_csv"),
        "output_dir": run["output_dir"],
        "arch": run.get("arch"),
        "standardize": bool(run.get("standardize", True)),
        "train": cfg.to_dict(),
    }
    return resolved


def default_arch(n_cells: int) -> ArchitectureChoice:
    """A chain of same-width cells with skips after batch norm, tapped at the last cell."""
    cells = [CellChoice(FCSize.SAME, SkipFrom.AFTER_BN)] * n_cells
    return ArchitectureChoice(n_cells, cells, [InputFrom.PREV_CELL] * (n_cells - 1), n_cells - 1, n_cells - 1)


def _load_arch(arch_arg: Optional[str], n_cells: int) -> ArchitectureChoice:
    if arch_arg is None:
        return default_arch(n_cells)
    if arch_arg.lstrip().startswith("{"):
        return parse_arch(arch_arg)
    with open(arch_arg, encoding="utf-8") as fh:
        return parse_arch(fh.read())


def _load_domains(resolved):
    source = load_features_csv(resolved["source_csv"], has_labels=True)
    target = load_features_csv(resolved["target_csv"], has_labels=False)
    truth = None
    if resolved["target_truth_csv"]:
        truth = load_features_csv(resolved["target_truth_csv"], has_labels=True)
    stats = None
    if resolved["standardize"]:
        source, target, stats = standardize_fit_apply(source, target)
        if truth is not None:
            truth = LabeledSet(stats.apply(truth.features), truth.labels, truth.n_classes)
    if truth is not None:
        # class count must cover both domains
        k = max(source.n_classes, truth.n_classes)
        source = LabeledSet(source.features, source.labels, k)
        truth = LabeledSet(truth.features, truth.labels, k)
    return source, target, truth, stats


def _run_training(args, extra, command):
    resolved = resolve_config(args, extra, command)
    out = resolved["output_dir"]
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "config.json"), resolved)
    cfg = TrainConfig.from_dict(resolved["train"])
    source, target, truth, stats = _load_domains(resolved)
    evaluator = None if truth is None else (lambda sg, arch: evaluate(sg, arch, truth))
    history: List[EpochMetrics] = []
    metrics_path = os.path.join(out, "metrics.csv")

    def on_epoch(m):
        history.append(m)
        atomic_write_text(metrics_path, metrics_to_csv(history))

    if command == "train":
        arch = _load_arch(resolved["arch"], cfg.n_cells)
        sg, _ = train_fixed(arch, source, target, cfg, evaluator=evaluator, on_epoch=on_epoch)
    else:
        result = search(source, target, cfg, evaluator=evaluator, on_epoch=on_epoch)
        arch, sg = result.final_arch, result.supergraph
    atomic_write_text(metrics_path, metrics_to_csv(history))
    atomic_write_text(os.path.join(out, "arch.json"), serialize_arch(arch) + "\n")
    tmp = os.path.join(out, ".weights.npz.tmp")
    sg.save(tmp)
    os.replace(tmp, os.path.join(out, "weights.npz"))
    if stats is not None:
        _write_json(os.path.join(out, "standardizer.json"),
                    {"mean": [float(v) for v in stats.mean], "std": [float(v) for v in stats.std]})
    write_report(out)
    final = history[-1]
    msg = f"{command}: {len(history)} epochs, final loss {final.mean_loss:.6f}"
    if truth is not None:
        msg += f", target accuracy {evaluate(sg, arch, truth):.4f}"
    print(msg)
    return 0


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args, extra):
    if extra:
        raise UsageError(f"unexpected arguments: {' '.join(extra)}")
    seed = 0 if args.seed is None else args.seed
    if args.generator == "blobs":
        shift = np.zeros(args.d)
        if args.shift_norm:
            means = class_means_blobs(args.d, args.n_classes, seed)
            direction = means[1] - means[0]
            shift = args.shift_norm * direction / np.linalg.norm(direction)
        src, tgt, truth = gen_shifted_blobs(args.n_per_class, args.d, args.n_classes, shift, args.scale, seed)
    else:
        src, tgt, truth = gen_two_moons(args.n, args.noise, args.rotation, seed)
    os.makedirs(args.out, exist_ok=True)
    write_features_csv(os.path.join(args.out, "source.csv"), src)
    write_features_csv(os.path.join(args.out, "target.csv"), tgt)
    write_features_csv(os.path.join(args.out, "target_truth.csv"), truth)
    print(f"wrote {len(src)} source and {len(tgt)} target rows to {args.out}")
    return 0


def cmd_similarity(args, extra):
    if extra:
        raise UsageError(f"unexpected arguments: {' '.join(extra)}")
    A = load_features_csv(args.a, has_labels=args.labeled).features
    B = load_features_csv(args.b, has_labels=args.labeled).features
    seed = 0 if args.seed is None else args.seed
    names = KIND_NAMES if args.kind == "all" else (args.kind,)
    for name in names:
        sig = measure(SimilarityKind(name), A, B, grad=False, rng=Rng(seed))
        print(f"{name},{format_float(sig.value)}")
    return 0


def cmd_enumerate(args, extra):
    if extra:
        raise UsageError(f"unexpected arguments: {' '.join(extra)}")
    print(count_configurations(args.cells))
    if args.list:
        if args.cells > 3:
            raise UsageError("--list is limited to --cells <= 3")
        for arch in enumerate_architectures(args.cells):
            print(serialize_arch(arch))
    return 0


def cmd_eval(args, extra):
    if extra:
        raise UsageError(f"unexpected arguments: {' '.join(extra)}")
    run = args.run_dir
    arch_path = args.arch or os.path.join(run, "arch.json")
    weights_path = args.weights or os.path.join(run, "weights.npz")
    with open(arch_path, encoding="utf-8") as fh:
        arch = parse_arch(fh.read())
    sg = SuperGraph.load(weights_path)
    data = load_features_csv(args.data, has_labels=True)
    std_path = os.path.join(run, "standardizer.json") if run else None
    if std_path and os.path.exists(std_path):
        with open(std_path, encoding="utf-8") as fh:
            st = json.load(fh)
        stats = Standardizer(np.array(st["mean"]), np.array(st["std"]))
        data = LabeledSet(stats.apply(data.features), data.labels, data.n_classes)
    if data.labels.max() >= sg.n_classes:
        raise DataError(f"labels exceed the model's {sg.n_classes} classes")
    print(f"accuracy,{format_float(evaluate(sg, arch, data))}")
    return 0


def cmd_report(args, extra):
    if extra:
        raise UsageError(f"unexpected arguments: {' '.join(extra)}")
    sys.stdout.write(write_report(args.run_dir))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dampc", description="Population-correlation domain adaptation and architecture search")
    p.add_argument("--seed", type=int, default=None)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-data", help="write a synthetic source/target pair")
    g.add_argument("--generator", choices=["blobs", "moons"], default="blobs")
    g.add_argument("--out", required=True)
    g.add_argument("--n-per-class", type=int, default=200)
    g.add_argument("--d", type=int, default=16)
    g.add_argument("--n-classes", type=int, default=4)
    g.add_argument("--shift-norm", type=float, default=3.0)
    g.add_argument("--scale", type=float, default=1.0)
    g.add_argument("--n", type=int, default=400)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--rotation", type=float, default=30.0)
    g.add_argument("--seed", type=int, default=None)
    g.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("similarity", help="compare two feature CSVs")
    s.add_argument("--kind", choices=list(KIND_NAMES) + ["all"], default="all")
    s.add_argument("--labeled", action="store_true", help="drop the last (label) column")
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("a")
    s.add_argument("b")
    s.set_defaults(fn=cmd_similarity)

    for name, help_ in (("train", "train one fixed architecture"), ("search", "run the architecture search")):
        t = sub.add_parser(name, help=help_)
        t.add_argument("--config")
        t.add_argument("--source")
        t.add_argument("--target")
        t.add_argument("--target-truth", dest="target_truth")
        t.add_argument("--output-dir", dest="output_dir")
        if name == "train":
            t.add_argument("--arch", help="arch.json path or inline JSON")
        t.add_argument("--seed", type=int, default=None)
        t.set_defaults(fn=lambda a, e, name=name: _run_training(a, e, name))

    e = sub.add_parser("enumerate", help="count (and list) architectures")
    e.add_argument("--cells", type=int, default=3)
    e.add_argument("--list", action="store_true")
    e.set_defaults(fn=cmd_enumerate)

    v = sub.add_parser("eval", help="accuracy of a trained run on a labeled CSV")
    v.add_argument("--run-dir", dest="run_dir", default="")
    v.add_argument("--arch")
    v.add_argument("--weights")
    v.add_argument("--data", required=True)
    v.set_defaults(fn=cmd_eval)

    r = sub.add_parser("report", help="write report.txt for a run directory")
    r.add_argument("--run-dir", dest="run_dir", required=True)
    r.set_defaults(fn=cmd_report)
    return p


def _seed_prepass(argv):
    # a global --seed may appear before the subcommand
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None)
    return p.parse_known_args(argv)


def run(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        try:
            args, extra = parser.parse_known_args(argv)
        except SystemExit as e:  # --help
            return int(e.code or 0)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        if args.seed is None:
            args.seed = _seed_prepass(argv)[0].seed
        return args.fn(args, extra)
    except UsageError as e:
        print(f"ERROR:usage:{e}", file=sys.stderr)
        return 1
    except (DataError, ArchitectureError, json.JSONDecodeError) as e:
        print(f"ERROR:data:{e}", file=sys.stderr)
        return 2
    except (DimensionError, ValueError) as e:
        print(f"ERROR:contract:{e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"ERROR:io:{e}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
