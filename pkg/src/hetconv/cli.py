"""Command-line entry point.

Subcommands: train, evaluate, explain, generate, benchmark, gradcheck,
verify. Exit codes: 0 success, 1 usage or config error, 2 data validation
error, 3 numerical check failure. The env var HETCONV_THREADS pins the
numeric kernels' internal thread count. Every artifact is written through a
temp-file-plus-rename, and every run writes its fully resolved config.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

SPECTRAL_TOL = 1e-10
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


_thread_limiter = None


def _pin_threads() -> int:
    """Apply HETCONV_THREADS to the BLAS/OpenMP pools, return the count."""
    global _thread_limiter
    raw = os.environ.get("HETCONV_THREADS")
    if not raw:
        return 0
    n = int(raw)
    try:
        import threadpoolctl
    except ImportError:
        return n
    _thread_limiter = threadpoolctl.threadpool_limits(limits=n)
    return n


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_graph(path: str):
    from .graph import validate_graph
    from .io import load_graph

    try:
        g = load_graph(path)
    except (FileNotFoundError, ValueError, KeyError) as err:
        raise DataError(str(err)) from err
    problems = validate_graph(g)
    if problems:
        raise DataError("graph validation failed:\n  " + "\n  ".join(problems))
    return g


def _train_config(config_path: str | None, seed: int | None):
    from .train import TrainConfig

    raw = {}
    if config_path:
        try:
            with open(config_path) as f:
                raw = json.load(f)
        except FileNotFoundError as err:
            raise UsageError(str(err)) from err
        except json.JSONDecodeError as err:
            raise UsageError(f"{config_path}: invalid JSON ({err})") from err
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(raw) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    if seed is not None:
        raw["seed"] = seed
    try:
        return TrainConfig(**raw)
    except (TypeError, ValueError) as err:
        raise UsageError(f"bad config: {err}") from err


def cmd_train(args) -> int:
    from .interpret import summarize_attention, summary_to_json
    from .io import atomic_write_text, write_json
    from .model import forward, save_model
    from .train import evaluate, fit

    cfg = _train_config(args.config, args.seed)
    g = _load_graph(args.data)
    if not g.labels:
        raise DataError(
            f"no labels found: expected a labels_<TYPE>.tsv file in {args.data}"
        )
    if not g.splits:
        raise DataError(
            f"no splits found: expected a split_<TYPE>.json file in {args.data}"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        params, log = fit(g, cfg)
    except ValueError as err:
        raise DataError(str(err)) from err
    resolved = dataclasses.asdict(cfg)
    resolved.update(
        {"data": str(args.data), "out": str(args.out), "dims": params.dims}
    )
    write_json(out / "resolved_config.json", resolved)
    atomic_write_text(
        out / "training_log.jsonl",
        "".join(json.dumps(rec) + "\n" for rec in log),
    )
    save_model(out / "model", params, g.schema)
    _, records = forward(params, g, mode="eval")
    write_json(
        out / "attention_summary.json",
        summary_to_json(summarize_attention(records, g.schema)),
    )
    try:
        metrics = evaluate(params, g, "test")
    except (KeyError, ValueError) as err:
        raise DataError(f"test split: {err}") from err
    write_json(out / "test_metrics.json", metrics)
    print(json.dumps(metrics, indent=2))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .io import write_json
    from .model import load_model, schema_hash
    from .train import evaluate

    g = _load_graph(args.data)
    params, schema = load_model(args.model)
    if schema_hash(schema) != schema_hash(g.schema):
        raise DataError("schema hash mismatch between checkpoint and data")
    try:
        metrics = evaluate(params, g, args.split)
    except (KeyError, ValueError) as err:
        raise DataError(str(err)) from err
    if args.out:
        write_json(args.out, metrics)
    print(json.dumps(metrics, indent=2))
    return EXIT_OK


def cmd_explain(args) -> int:
    from .interpret import (
        per_object_scores,
        report_to_json,
        report_to_tsv,
        score_meta_paths,
        summarize_attention,
        summary_from_json,
    )
    from .io import atomic_write_text, write_json
    from .model import forward, load_model, schema_hash

    records = None
    g = None
    if args.summary:
        try:
            with open(args.summary) as f:
                summary = summary_from_json(json.load(f))
        except (OSError, ValueError, KeyError) as err:
            raise DataError(f"bad summary file: {err}") from err
        schema = summary.schema
    elif args.model and args.data:
        g = _load_graph(args.data)
        params, schema = load_model(args.model)
        if schema_hash(schema) != schema_hash(g.schema):
            raise DataError("schema hash mismatch between checkpoint and data")
        _, records = forward(params, g, mode="eval")
        summary = summarize_attention(records, g.schema)
    else:
        raise UsageError("explain needs either --summary or both --model and --data")
    if args.target not in schema.object_types:
        raise UsageError(f"unknown target type: {args.target!r}")
    ranked = score_meta_paths(summary, args.target)
    if args.top_k:
        ranked = ranked[: args.top_k]
    report = {"target": args.target, "global": report_to_json(ranked)}
    if args.per_object:
        if records is None or g is None:
            raise UsageError("--per-object needs --model and --data")
        per_obj = per_object_scores(g, records, args.target, args.max_tracked)
        report["per_object"] = [
            sorted(
                ({"meta_path": list(p), "score": s} for p, s in scores.items()),
                key=lambda e: -e["score"],
            )[: args.top_k or None]
            for scores in per_obj
        ]
    if args.out:
        write_json(args.out, report)
    if args.tsv:
        atomic_write_text(args.tsv, report_to_tsv(ranked))
    print(json.dumps(report["global"], indent=2))
    return EXIT_OK


def cmd_generate(args) -> int:
    from .datagen import generate, spec_from_json, with_splits
    from .io import save_graph

    try:
        with open(args.spec) as f:
            raw = json.load(f)
    except (OSError, json.JSONDecodeError) as err:
        raise UsageError(str(err)) from err
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        spec = spec_from_json(raw)
        g = generate(spec)
    except (KeyError, TypeError, ValueError) as err:
        raise UsageError(f"bad generator spec: {err}") from err
    g = with_splits(g, args.train_fraction, seed=spec.seed)
    save_graph(args.out, g)
    print(
        json.dumps(
            {
                "objects": g.total_objects(),
                "links": g.total_links(),
                "counts": {t: g.n_objects(t) for t in g.schema.object_types},
            }
        )
    )
    return EXIT_OK


def _active_threads() -> int:
    try:
        import threadpoolctl

        pools = threadpoolctl.threadpool_info()
        return max((p["num_threads"] for p in pools), default=1)
    except ImportError:
        return int(os.environ.get("HETCONV_THREADS", "1"))


def cmd_benchmark(args) -> int:
    from .bench import default_scale_specs, run_scaling
    from .io import atomic_write_text, write_json

    cfg = _train_config(args.config, args.seed)
    report = run_scaling(
        default_scale_specs(seed=cfg.seed, n_scales=args.scales),
        cfg,
        repeats=args.repeats,
        threads=_active_threads(),
    )
    payload = report.to_json()
    payload["config"] = dataclasses.asdict(cfg)
    if args.out:
        write_json(args.out, payload)
    if args.csv:
        atomic_write_text(args.csv, report.to_csv())
    print(report.to_text())
    return EXIT_OK


def _downscaled(g, max_objects: int, max_features: int):
    from .graph import induced_subgraph

    small = induced_subgraph(g, {t: max_objects for t in g.schema.object_types})
    feats = {t: f[:, :max_features] for t, f in small.features.items()}
    return dataclasses.replace(small, features=feats)


def cmd_gradcheck(args) -> int:
    from .train import TrainConfig, model_loss_gradcheck

    g = _load_graph(args.data)
    small = _downscaled(g, args.max_objects, args.max_features)
    if not any((lab >= 0).any() for lab in small.labels.values()):
        raise DataError("gradcheck needs labeled objects in the down-scaled graph")
    cfg = TrainConfig(layer_widths=(4, 3), d_a=3, seed=args.seed)
    report = model_loss_gradcheck(small, cfg, h=args.h, tol=args.tol)
    for name in sorted(report.rel_err):
        print(f"{name}: rel_err={report.rel_err[name]:.3e} abs_err={report.abs_err[name]:.3e}")
    status = "PASS" if report.passed else "FAIL"
    print(f"gradcheck {status}: max rel err {report.max_rel_err:.3e} (tol {report.tol:g})")
    return EXIT_OK if report.passed else EXIT_NUMERIC


def cmd_verify(args) -> int:
    from .graph import validate_graph
    from .io import load_graph
    from .model import spectral_equivalence_on_graph
    from .train import TrainConfig, model_loss_gradcheck

    try:
        g = load_graph(args.data)
    except (FileNotFoundError, ValueError, KeyError) as err:
        raise DataError(str(err)) from err
    failed = False
    problems = validate_graph(g)
    if problems:
        print(f"validate_graph FAIL: {len(problems)} violations")
        for p in problems:
            print(f"  {p}")
        return EXIT_DATA
    print("validate_graph PASS: no violations")
    seen = set()
    for src, dst in g.schema.relations:
        pair = tuple(sorted((src, dst)))
        if pair in seen or (dst, src) not in g.schema.relations:
            continue
        seen.add(pair)
        dev = spectral_equivalence_on_graph(g, dst, src, seed=args.seed)
        ok = dev <= SPECTRAL_TOL
        failed |= not ok
        print(
            f"spectral_equivalence {src}<->{dst} "
            f"{'PASS' if ok else 'FAIL'}: max deviation {dev:.3e} "
            f"(tol {SPECTRAL_TOL:g})"
        )
    if not seen:
        print("spectral_equivalence SKIP: no bidirectional relation pairs")
    small = _downscaled(g, args.max_objects, args.max_features)
    if any((lab >= 0).any() for lab in small.labels.values()):
        cfg = TrainConfig(layer_widths=(4, 3), d_a=3, seed=args.seed)
        report = model_loss_gradcheck(small, cfg, h=1e-5, tol=GRADCHECK_TOL)
        failed |= not report.passed
        print(
            f"gradcheck {'PASS' if report.passed else 'FAIL'}: "
            f"max rel err {report.max_rel_err:.3e} (tol {report.tol:g})"
        )
    else:
        print("gradcheck SKIP: no labels in data")
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser() -> _Parser:
    p = _Parser(prog="hetconv", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on a graph directory")
    t.add_argument("--data", required=True)
    t.add_argument("--config", default=None, help="JSON file of TrainConfig keys")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint on a split")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("explain", help="rank meta-paths by importance")
    x.add_argument("--model", default=None)
    x.add_argument("--data", default=None)
    x.add_argument("--summary", default=None, help="attention summary JSON instead of a model")
    x.add_argument("--target", required=True)
    x.add_argument("--per-object", action="store_true", dest="per_object")
    x.add_argument("--top-k", type=int, default=0, dest="top_k")
    x.add_argument("--max-tracked", type=int, default=256, dest="max_tracked")
    x.add_argument("--out", default=None)
    x.add_argument("--tsv", default=None)
    x.set_defaults(func=cmd_explain)

    gn = sub.add_parser("generate", help="write a synthetic graph directory")
    gn.add_argument("--spec", required=True, help="generator spec JSON")
    gn.add_argument("--out", required=True)
    gn.add_argument("--seed", type=int, default=None)
    gn.add_argument("--train-fraction", type=float, default=20.0, dest="train_fraction")
    gn.set_defaults(func=cmd_generate)

    b = sub.add_parser("benchmark", help="epoch-time scaling across graph sizes")
    b.add_argument("--out", default=None)
    b.add_argument("--csv", default=None)
    b.add_argument("--scales", type=int, default=6)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--config", default=None)
    b.add_argument("--seed", type=int, default=None)
    b.set_defaults(func=cmd_benchmark)

    gc = sub.add_parser("gradcheck", help="finite-difference check on a small model")
    gc.add_argument("--data", required=True)
    gc.add_argument("--h", type=float, default=1e-5)
    gc.add_argument("--tol", type=float, default=GRADCHECK_TOL)
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--max-objects", type=int, default=40, dest="max_objects")
    gc.add_argument("--max-features", type=int, default=6, dest="max_features")
    gc.set_defaults(func=cmd_gradcheck)

    v = sub.add_parser("verify", help="validation, spectral equivalence, gradcheck")
    v.add_argument("--data", required=True)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--max-objects", type=int, default=40, dest="max_objects")
    v.add_argument("--max-features", type=int, default=6, dest="max_features")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    _pin_threads()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
