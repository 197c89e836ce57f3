"""Command-line interface.

Exit codes: 0 success, 1 validation error, 2 runtime or numeric error, 3 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

from . import checkpoint as ckpt_io
from . import synth
from .config import ABLATIONS, RECIPES, RunConfig, read_config_file, resolve
from .errors import AgraError, ConfigError, StateError
from .evaluate import cluster_stats, embedding_rows, evaluate
from .gradcheck import run_gradcheck
from .model import ModelConfig
from .experiments import run_experiment
from .training import METRICS_COLUMNS, METRICS_VERSION

log = logging.getLogger("agra")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3

CHECKPOINT_NAME = "checkpoint.agra"
METRICS_NAME = "metrics.csv"
CONFIG_NAME = "config.json"
SUMMARY_NAME = "summary.json"


def _check_writable(paths, force):
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise FileExistsError(f"refusing to overwrite {', '.join(existing)} (use --force)")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_rows(fh, rows, columns):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in columns])


def write_csv(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _write_rows(fh, rows, columns)


def _json_safe(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    return obj


def model_config_from(config: dict) -> ModelConfig:
    return RunConfig.from_dict(config).model


# ---------------------------------------------------------------- commands

def cmd_synth(args):
    cfg = synth.PRESETS[args.preset]
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = Path(args.out)
    paths = [out / "source.jsonl", out / "target.jsonl"]
    _check_writable(paths, args.force)
    out.mkdir(parents=True, exist_ok=True)
    source, target = synth.generate(cfg)
    for path, ds in zip(paths, (source, target)):
        digest = synth.save(ds, path)
        print(f"{path}  {len(ds)} samples  sha256 {digest}")
    return EXIT_OK


def _load_pair(args):
    source = synth.load(args.source) if getattr(args, "source", None) else None
    target = synth.load(args.target) if getattr(args, "target", None) else None
    if source is not None and source.domain != "s":
        raise ConfigError(f"{args.source} holds domain {source.domain!r}, expected 's'")
    if target is not None and target.domain != "t":
        raise ConfigError(f"{args.target} holds domain {target.domain!r}, expected 't'")
    return source, target


TRAIN_FLAGS = ("mode", "seed", "recipe", "stage1_epochs", "stage2_epochs", "lr_fg", "lr_d", "adv_weight",
               "adv_loss", "batch_size", "holdout_fraction", "extractor", "t_intra", "t_inter")


def _parse_set(items):
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def cmd_train(args):
    file_values = read_config_file(args.config) if args.config else {}
    flags = _parse_set(args.set)
    flags.update({k: getattr(args, k) for k in TRAIN_FLAGS if getattr(args, k) is not None})
    run = resolve(file_values, flags)
    source, target = _load_pair(args)
    if source.labels is None:
        raise ConfigError("training needs a labelled source dataset")

    out = Path(args.out)
    outputs = [out / CHECKPOINT_NAME, out / METRICS_NAME, out / CONFIG_NAME, out / SUMMARY_NAME]
    _check_writable(outputs, args.force)
    out.mkdir(parents=True, exist_ok=True)

    outcome = run_experiment(run, source, target)
    result = outcome.final

    config = run.to_dict()
    write_csv(out / METRICS_NAME, outcome.history, METRICS_COLUMNS)
    digest = ckpt_io.save(ckpt_io.Checkpoint(result.params, result.bank, config), out / CHECKPOINT_NAME)
    (out / CONFIG_NAME).write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    final = outcome.history[-1] if outcome.history else {}
    summary = {"config_hash": ckpt_io.config_hash(config), "checkpoint_sha256": digest,
               "metrics_version": METRICS_VERSION, "final": final}
    (out / SUMMARY_NAME).write_text(json.dumps(_json_safe(summary), indent=2, sort_keys=True) + "\n",
                                    encoding="utf-8")
    print(json.dumps(_json_safe(summary), sort_keys=True))
    return EXIT_OK


def _load_checkpoint(args):
    return ckpt_io.load(args.checkpoint, expected_hash=getattr(args, "config_hash", None))


def cmd_eval(args):
    ck = _load_checkpoint(args)
    source, target = _load_pair(args)
    report = evaluate(ck.params, model_config_from(ck.config), ck.bank, source, target)
    report["config_hash"] = ck.config_hash
    text = json.dumps(_json_safe(report), indent=2, sort_keys=True)
    if args.out:
        _check_writable([args.out], args.force)
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_export_embeddings(args):
    ck = _load_checkpoint(args)
    source, target = _load_pair(args)
    datasets = [d for d in (source, target) if d is not None]
    if not datasets:
        raise ConfigError("give --source and/or --target")
    _check_writable([args.out], args.force)
    rows = embedding_rows(ck.params, model_config_from(ck.config), ck.bank, datasets)
    write_csv(args.out, rows, ("id", "domain", "label", "pc1", "pc2"))
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_cluster_stats(args):
    ck = _load_checkpoint(args)
    if ck.bank is None:
        raise StateError("checkpoint has no distribution bank (mode without graph)")
    source, target = _load_pair(args)
    datasets = [d for d in (source, target) if d is not None]
    rows = cluster_stats(ck.bank, ck.params, model_config_from(ck.config), datasets)
    columns = list(rows[0])
    if args.out:
        _check_writable([args.out], args.force)
        write_csv(args.out, rows, columns)
    else:
        _write_rows(sys.stdout, rows, columns)
    return EXIT_OK


def cmd_gradcheck(args):
    reports = run_gradcheck(seed=args.seed, step=args.step, extractor=args.extractor, mode=args.model_mode)
    print(f"{'group':<14} {'entries':>8} {'max_rel_err':>12}  status")
    for r in reports:
        print(f"{r.group:<14} {r.n_entries:>8} {r.max_rel_error:>12.3e}  {'ok' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_RUNTIME


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    """Usage errors are validation errors: exit 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="agra", description="Adversarial graph representation adaptation (desk scale).")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic source/target pair")
    s.add_argument("--preset", default="synth-v1", choices=sorted(synth.PRESETS))
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--force", action="store_true", help="overwrite existing files")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="run stage 1 and stage 2 training")
    t.add_argument("--source", required=True)
    t.add_argument("--target", required=True)
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--config", help="flat JSON config file")
    t.add_argument("--mode", choices=sorted(ABLATIONS))
    t.add_argument("--recipe", choices=sorted(RECIPES))
    t.add_argument("--seed", type=int)
    t.add_argument("--stage1-epochs", dest="stage1_epochs", type=int)
    t.add_argument("--stage2-epochs", dest="stage2_epochs", type=int)
    t.add_argument("--lr-fg", dest="lr_fg", type=float)
    t.add_argument("--lr-d", dest="lr_d", type=float)
    t.add_argument("--adv-weight", dest="adv_weight", type=float)
    t.add_argument("--adv-loss", dest="adv_loss", choices=("minimax", "confusion"))
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--holdout-fraction", dest="holdout_fraction", type=float)
    t.add_argument("--extractor", choices=("linear", "mlp"))
    t.add_argument("--t-intra", dest="t_intra", type=int)
    t.add_argument("--t-inter", dest="t_inter", type=int)
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key (JSON value)")
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_train)

    def add_ckpt(q, datasets=True):
        q.add_argument("--checkpoint", required=True)
        q.add_argument("--config-hash", dest="config_hash", help="fail unless the checkpoint has this config hash")
        if datasets:
            q.add_argument("--source")
            q.add_argument("--target")

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    add_ckpt(e)
    e.add_argument("--out", help="write the report as JSON")
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-embeddings", help="2-D principal-component export of the features")
    add_ckpt(x)
    x.add_argument("--out", required=True)
    x.add_argument("--force", action="store_true")
    x.set_defaults(func=cmd_export_embeddings)

    c = sub.add_parser("cluster-stats", help="per-cluster counts and mean norms of the bank")
    add_ckpt(c)
    c.add_argument("--out")
    c.add_argument("--force", action="store_true")
    c.set_defaults(func=cmd_cluster_stats)

    g = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--step", type=float, default=1e-5)
    g.add_argument("--extractor", choices=("linear", "mlp"), default="linear")
    g.add_argument("--model-mode", dest="model_mode", default="full",
                   choices=("full", "hf_only", "hlf_concat", "intra_only", "inter_only", "single_gcn"))
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except OSError as exc:
        code, message = EXIT_IO, str(exc)
    except (ArithmeticError, RuntimeError) as exc:
        code, message = EXIT_RUNTIME, str(exc)
    except (ValueError, AgraError) as exc:
        code, message = EXIT_VALIDATION, str(exc)
    print(f"error: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
