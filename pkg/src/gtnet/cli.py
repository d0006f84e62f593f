"""Command-line entry point: gtnet {train,eval,interpret,synth,gradcheck}.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .autodiff import finite_diff_check
from .data import DatasetError, SyntheticSpec, desk_spec, generate_synthetic, load_dataset, planted_spec, save_dataset
from .interpret import attention_report, format_metapaths, metapath_report, selector_alphas, to_jsonl, top_k_between
from .model import GtnConfig, GtnParams, gtn_forward, init_params, load_checkpoint, loss, save_checkpoint
from .training import TrainConfig, evaluate_f1, train

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2

MODEL_KEYS = {f.name for f in fields(GtnConfig)}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
PATH_KEYS = {"data", "out", "checkpoint"}

# flag, config key, type, help
MODEL_FLAGS = [
    ("--layers", "num_layers", int, "number of GT layers L"),
    ("--channels", "num_channels", int, "number of channels C"),
    ("--hidden", "hidden_dim", int, "GCN output width d"),
    ("--classifier-hidden", "classifier_hidden", int, "width of the first dense layer"),
    ("--normalize-at", "normalize_at", str, "consumption or output"),
    ("--gcn-norm", "gcn_norm", str, "inverse or symmetric"),
    ("--selector-jitter", "selector_jitter", float, "selector init jitter"),
]
TRAIN_FLAGS = [
    ("--lr", "learning_rate", float, "Adam learning rate"),
    ("--selector-lr", "selector_lr", float, "learning rate for selector logits"),
    ("--weight-decay", "weight_decay", float, "decoupled weight decay"),
    ("--epochs", "max_epochs", int, "maximum epochs"),
    ("--patience", "patience", int, "early-stopping patience"),
]


class CliError(Exception):
    def __init__(self, msg, code=EXIT_INVALID):
        super().__init__(msg)
        self.code = code


def _defaults():
    return {**GtnConfig().to_dict(), **TrainConfig().to_dict()}


def load_run_config(path) -> dict:
    """Flat JSON with model, training and path keys; unknown keys are rejected."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"{path}: config file not found") from None
    except json.JSONDecodeError as err:
        raise CliError(f"{path}: invalid JSON ({err})") from None
    if not isinstance(raw, dict):
        raise CliError(f"{path}: config must be a JSON object")
    unknown = set(raw) - MODEL_KEYS - TRAIN_KEYS - PATH_KEYS
    if unknown:
        raise CliError(f"{path}: unknown config keys {sorted(unknown)}")
    return raw


def resolve(args) -> tuple[GtnConfig, TrainConfig, dict]:
    """Config file values overridden by explicit flags; validated before any compute."""
    merged = load_run_config(args.config) if args.config else {}
    for flag, key, _, _ in MODEL_FLAGS + TRAIN_FLAGS:
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    if getattr(args, "no_identity", False):
        merged["include_identity"] = False
    if args.seed is not None:
        merged["seed"] = args.seed
    for key in ("data", "out", "checkpoint"):
        val = getattr(args, key, None)
        if val is not None:
            merged[key] = val
    model = GtnConfig.from_dict({k: v for k, v in merged.items() if k in MODEL_KEYS})
    tr = TrainConfig.from_dict({k: v for k, v in merged.items() if k in TRAIN_KEYS})
    paths = {k: merged.get(k) for k in PATH_KEYS}
    return model, tr, paths


def _emit(obj, args, text: str | None = None):
    if args.json:
        print(json.dumps(obj, sort_keys=True, indent=2))
    elif text is not None:
        print(text)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _split_metrics(logits, split) -> dict:
    out = {}
    for part in ("train", "val", "test"):
        nodes = getattr(split, part)
        if len(nodes):
            macro, micro = evaluate_f1(logits, split.labels, nodes)
            out[part] = {"macro_f1": macro, "micro_f1": micro, "n": int(len(nodes))}
    return out


def _metrics_table(metrics: dict) -> str:
    lines = [f"{'split':<6} {'n':>6} {'macro-F1':>9} {'micro-F1':>9}"]
    for part, m in metrics.items():
        lines.append(f"{part:<6} {m['n']:>6} {m['macro_f1']:>9.4f} {m['micro_f1']:>9.4f}")
    return "\n".join(lines)


def _require(paths, key):
    if not paths.get(key):
        raise CliError(f"--{key} is required")
    return paths[key]


# -- commands ---------------------------------------------------------------

def cmd_train(args) -> int:
    model_cfg, train_cfg, paths = resolve(args)
    graph, split = load_dataset(_require(paths, "data"))
    out = Path(paths.get("out") or "run")
    out.mkdir(parents=True, exist_ok=True)
    params, history = train(graph, split, model_cfg, train_cfg)
    g = graph.with_identity(model_cfg.include_identity)
    logits = gtn_forward(g, params, model_cfg).logits
    metrics = {"summary": history.summary(), "splits": _split_metrics(logits, split),
               "model": model_cfg.to_dict(), "train": train_cfg.to_dict()}
    meta = {"candidate_names": g.candidate_names, "num_features": g.num_features,
            "num_classes": split.num_classes, "target_type": split.target_type}
    save_checkpoint(out / "checkpoint.npz", params, model_cfg, train_cfg.seed, meta)
    history.to_jsonl(out / "history.jsonl")
    _write_json(out / "metrics.json", metrics)
    _emit(metrics, args, _metrics_table(metrics["splits"]) + f"\nartifacts in {out}")
    return EXIT_OK


def _load_for_checkpoint(args):
    ckpt = load_checkpoint(_require({"checkpoint": args.checkpoint}, "checkpoint"))
    if not args.data:
        raise CliError("--data is required")
    graph, split = load_dataset(args.data, include_identity=ckpt.config.include_identity)
    p = ckpt.params
    if p.gcn_weight.shape[0] != graph.num_features:
        raise CliError(f"checkpoint expects {p.gcn_weight.shape[0]} input features, "
                       f"dataset has {graph.num_features}")
    if p.selectors.shape[2] != len(graph.adj):
        raise CliError(f"checkpoint expects {p.selectors.shape[2]} candidate matrices, "
                       f"dataset provides {len(graph.adj)}")
    if p.dense2_w.shape[1] != split.num_classes:
        raise CliError(f"checkpoint predicts {p.dense2_w.shape[1]} classes, "
                       f"dataset has {split.num_classes}")
    return ckpt, graph, split


def cmd_eval(args) -> int:
    ckpt, graph, split = _load_for_checkpoint(args)
    logits = gtn_forward(graph, ckpt.params, ckpt.config).logits
    metrics = _split_metrics(logits, split)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _write_json(Path(args.out) / "eval.json", metrics)
    _emit(metrics, args, _metrics_table(metrics))
    return EXIT_OK


def cmd_interpret(args) -> int:
    ckpt, graph, split = _load_for_checkpoint(args)
    reg = graph.registry
    alphas = selector_alphas(ckpt.params.selectors)
    report = metapath_report(alphas, reg, args.min_weight)
    att = attention_report(ckpt.params, reg)
    target = args.target_type or split.target_type
    between = top_k_between(report.combined, target, args.top_k) if target else []
    result = {
        "attention": att.records(),
        "metapaths": report.records(),
        "top_all": [d.to_record() for d in report.combined[:args.top_k]],
        "top_between": [d.to_record() for d in between],
        "target_type": target,
        "dropped_weight": report.dropped_weight,
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metapaths.jsonl").write_text(to_jsonl(report.records()))
        (out / "attention.jsonl").write_text(to_jsonl(att.records()))
    text = "\n".join([
        "attention (alpha per selector and channel)", att.table(), "",
        f"top {args.top_k} meta-paths, all node types (combined over channels)",
        format_metapaths(report.combined, args.top_k), "",
        f"top {args.top_k} meta-paths between {target} nodes",
        format_metapaths(between),
    ])
    _emit(result, args, text)
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SyntheticSpec.from_file(args.spec) if args.spec else planted_spec()
    if args.seed is not None:
        spec.seed = args.seed
    if not args.out:
        raise CliError("--out is required")
    graph, split, truth = generate_synthetic(spec)
    path = save_dataset(graph, split, args.out)
    info = {"planted_path": list(truth.path), "path_string": truth.path_string,
            "target_type": truth.target_type, "spec": spec.to_dict(), "manifest": str(path)}
    _write_json(Path(args.out) / "truth.json", {k: v for k, v in info.items() if k != "manifest"})
    _emit(info, args, f"wrote {path} (planted path {truth.path_string})")
    return EXIT_OK


def gradcheck(model_cfg: GtnConfig, seed: int, epsilon: float) -> tuple[float, int]:
    """Max relative error of GTN gradients on the 12-node desk graph."""
    graph, split, _ = generate_synthetic(desk_spec(seed))
    graph = graph.with_identity(model_cfg.include_identity)
    params = init_params(model_cfg, len(graph.adj), graph.num_features, split.num_classes, seed)

    def f(p):
        out = gtn_forward(graph, GtnParams.from_dict(p), model_cfg)
        value = loss(out, split)
        return value, out.backward()

    count = sum(v.size for v in params.as_dict().values())
    return finite_diff_check(f, params.as_dict(), epsilon), count


DESK_MODEL = {"num_layers": 2, "num_channels": 2, "hidden_dim": 8, "classifier_hidden": 8}


def cmd_gradcheck(args) -> int:
    merged = dict(DESK_MODEL)
    if args.config:
        merged.update({k: v for k, v in load_run_config(args.config).items() if k in MODEL_KEYS})
    for flag, key, _, _ in MODEL_FLAGS:
        if getattr(args, key, None) is not None:
            merged[key] = getattr(args, key)
    if args.no_identity:
        merged["include_identity"] = False
    cfg = GtnConfig.from_dict(merged)
    seed = 0 if args.seed is None else args.seed
    err, count = gradcheck(cfg, seed, args.epsilon)
    err = float(err)
    ok = bool(err <= args.threshold)
    result = {"epsilon": args.epsilon, "threshold": args.threshold, "seed": seed,
              "num_parameters": count, "max_rel_error": err, "passed": ok}
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _write_json(Path(args.out) / "gradcheck.json", result)
    _emit(result, args, f"gradcheck epsilon={args.epsilon:g} threshold={args.threshold:g} "
                        f"parameters={count}\nmax relative error {err:.3e} "
                        f"{'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_NUMERIC


# -- parser -------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, out_help: str):
    p.add_argument("--config", help="JSON run config (default: none)")
    p.add_argument("--seed", type=int, default=None, help="random seed (default: config or 0)")
    p.add_argument("--out", default=None, help=out_help)
    p.add_argument("--json", action="store_true", help="print machine-readable JSON (default: off)")


def _model_flags(p, table, defaults):
    for flag, key, typ, text in table:
        p.add_argument(flag, dest=key, type=typ, default=None,
                       help=f"{text} (default: {defaults[key]})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gtnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    d = _defaults()

    p = sub.add_parser("train", help="train GTN on a dataset")
    _common(p, "output directory (default: run)")
    p.add_argument("--data", default=None, help="dataset manifest or directory (required)")
    _model_flags(p, MODEL_FLAGS + TRAIN_FLAGS, d)
    p.add_argument("--no-identity", action="store_true", help="drop the identity candidate (default: off)")
    p.set_defaults(func=cmd_train)

    for name, func, text in (("eval", cmd_eval, "F1 of a checkpoint on each split"),
                             ("interpret", cmd_interpret, "meta-path and attention reports")):
        p = sub.add_parser(name, help=text)
        _common(p, "directory for report files (default: none)")
        p.add_argument("--checkpoint", required=True, help="checkpoint file from train")
        p.add_argument("--data", required=True, help="dataset manifest or directory")
        if name == "interpret":
            p.add_argument("--top-k", type=int, default=3, help="rows per ranking (default: 3)")
            p.add_argument("--target-type", default=None, help="node type for top_k_between (default: dataset target)")
            p.add_argument("--min-weight", type=float, default=0.0, help="drop paths below this weight (default: 0.0)")
        p.set_defaults(func=func)

    p = sub.add_parser("synth", help="generate a synthetic planted-path dataset")
    _common(p, "dataset output directory (required)")
    p.add_argument("--spec", default=None, help="synthetic spec JSON (default: built-in 600-node planted spec)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    _common(p, "directory for gradcheck.json (default: none)")
    p.add_argument("--epsilon", type=float, default=1e-5, help="central difference step (default: 1e-05)")
    p.add_argument("--threshold", type=float, default=1e-4, help="max allowed relative error (default: 0.0001)")
    _model_flags(p, MODEL_FLAGS, {**d, **DESK_MODEL})
    p.add_argument("--no-identity", action="store_true", help="drop the identity candidate (default: off)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except (FloatingPointError, ArithmeticError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, ValueError, KeyError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
