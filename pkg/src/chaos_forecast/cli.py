"""``chaos-forecast`` command line.

Exit status: 0 on success, 1 for invalid input (bad flags, missing files,
schema violations, mismatched comparisons), 2 when a run fails at runtime.
"""

import argparse
import json
import sys

from . import __version__
from .config import PRESETS, load_config
from .datastore import read_bundle, read_container
from .errors import (
    BundleFormatError,
    InvalidCallError,
    InvalidComparisonError,
    InvalidConfigError,
    InvalidInputError,
)
from .evaluate import merge_results, write_results
from .experiment import evaluate_checkpoint, generate_to, train_model
from .forecasters import KINDS

VALIDATION_ERRORS = (
    InvalidConfigError,
    InvalidInputError,
    InvalidCallError,
    InvalidComparisonError,
    BundleFormatError,
    FileNotFoundError,
    IsADirectoryError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _common(p, out_default="."):
    p.add_argument("--config", help="JSON config file, or 'default' for built-in defaults")
    p.add_argument("--preset", choices=PRESETS)
    p.add_argument("--seed", type=_seed)
    p.add_argument("--out", default=out_default, help="output directory")


def build_parser():
    parser = _Parser(prog="chaos-forecast", description="Chaotic-system forecasting experiments")
    parser.add_argument("--version", action="version", version=f"chaos-forecast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name in ("gen-ks", "gen-l96"):
        _common(sub.add_parser(name, help=f"generate a {name[4:].upper()} trajectory bundle"))

    p = sub.add_parser("train", help="train a model on a bundle")
    p.add_argument("bundle")
    p.add_argument("--model", choices=KINDS, help="model kind (overrides the config)")
    _common(p)

    p = sub.add_parser("evaluate", help="roll out a checkpoint on the test split")
    p.add_argument("checkpoint")
    p.add_argument("bundle")
    p.add_argument("--out", default=".")
    p.add_argument("--paper-ref", action="store_true")

    p = sub.add_parser("compare", help="merge results documents into one report")
    p.add_argument("results", nargs="+", help="results.json files or NAME=PATH pairs")
    p.add_argument("--baseline", default="unet_ar")
    p.add_argument("--out", default=".")
    p.add_argument("--paper-ref", action="store_true")

    p = sub.add_parser("inspect", help="print bundle or checkpoint metadata")
    p.add_argument("path")
    return parser


def _resolve(args, system=None):
    path = None if args.config in (None, "default") else args.config
    kind = getattr(args, "model", None)
    cfg = load_config(path, args.preset, kind, system or "ks")
    if kind is not None and cfg.model_kind != kind:
        raise InvalidConfigError(f"--model {kind} conflicts with the config's model kind {cfg.model_kind}")
    if system is not None and cfg.system != system:
        raise InvalidConfigError(f"config is for system {cfg.system!r}, not {system!r}")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_generate(args, system):
    path, bundle = generate_to(_resolve(args, system), args.out)
    S, T, N = bundle.shape
    print(f"wrote {path}: {S} x {T} x {N}")


def cmd_train(args):
    cfg = _resolve(args)
    bundle = read_bundle(args.bundle)
    if bundle.meta.get("system", cfg.system) != cfg.system:
        raise InvalidConfigError(f"bundle holds {bundle.meta.get('system')} data but config is for {cfg.system}")
    result = train_model(cfg, bundle.data, args.out)
    print(f"trained {cfg.model_kind}: best val {result.best_val:.6g} at epoch {result.best_epoch}, "
          f"{result.skipped} skipped batches")


def cmd_evaluate(args):
    paths, doc = evaluate_checkpoint(args.checkpoint, args.bundle, args.out, args.paper_ref)
    for name, block in doc["models"].items():
        print(f"{name}: frmse {block['frmse']:.4f}  end rmse {block['end']['rmse']:.4f}  end acc {block['end']['acc']:.4f}")
    print(f"wrote {', '.join(str(p) for p in paths)}")


def _load_results(item):
    name, _, path = item.rpartition("=") if "=" in item else (None, "", item)
    with open(path) as fh:
        doc = json.load(fh)
    if "models" not in doc or "rollout_spec" not in doc:
        raise InvalidComparisonError(f"{path}: not a results document")
    if name:
        if len(doc["models"]) != 1:
            raise InvalidComparisonError(f"{path}: NAME=PATH needs a single-model results file")
        doc["models"] = {name: next(iter(doc["models"].values()))}
    return doc


def cmd_compare(args):
    docs = [_load_results(r) for r in args.results]
    merged = merge_results(docs, baseline=args.baseline, paper_ref=args.paper_ref)
    merged["version"] = __version__
    paths = write_results(merged, args.out)
    print(format_table(merged))
    print(f"wrote {', '.join(str(p) for p in paths)}")


def format_table(doc):
    base = doc.get("baseline")
    rows = [f"{'model':<12}{'rmse':>10}{'acc':>10}{'spec_err':>11}{'dRMSE%':>9}{'dACC%':>9}{'dSpec%':>9}"]
    for name, block in doc["models"].items():
        e, g = block["end"], block.get("gain_vs_baseline") or {}
        cells = [f"{g[k]:9.1f}" if g.get(k) is not None else f"{'-':>9}" for k in ("rmse", "acc", "spec_err")]
        rows.append(f"{name:<12}{e['rmse']:10.4f}{e['acc']:10.4f}{e['spec_err']:11.4g}" + "".join(cells))
    if base:
        rows.append(f"baseline: {base}")
    if doc.get("paper_reference"):
        end = doc["paper_reference"]["end"]
        rows.append("reference: " + ", ".join(f"{k} rmse {v['rmse']}" for k, v in end.items()))
    return "\n".join(rows)


def cmd_inspect(args):
    arrays, meta = read_container(args.path)
    info = {"path": str(args.path), "arrays": {k: list(v.shape) for k, v in arrays.items() if not k.startswith("opt/")}}
    if "data" in arrays:
        S, T, N = arrays["data"].shape
        info.update(S=S, T=T, N=N)
    n_params = sum(v.size for k, v in arrays.items() if k.startswith("param/"))
    if n_params:
        info["n_parameters"] = int(n_params)
        info["arrays"] = {"param/*": len([k for k in arrays if k.startswith("param/")])}
    info["meta"] = meta
    print(json.dumps(info, indent=2, sort_keys=True, default=str))


def run(argv=None):
    """Run one subcommand; returns the process exit status."""
    try:
        args = build_parser().parse_args(argv)
        if args.command in ("gen-ks", "gen-l96"):
            cmd_generate(args, args.command[4:])
        else:
            {"train": cmd_train, "evaluate": cmd_evaluate, "compare": cmd_compare, "inspect": cmd_inspect}[
                args.command
            ](args)
        return 0
    except SystemExit as exc:  # --help / --version
        return 0 if exc.code in (0, None) else 1
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except VALIDATION_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON input: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime failure
        print(f"error: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
