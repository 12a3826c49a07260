"""Command line entry point.

Subcommands::

    precompute --mesh M --radius EPS --out CACHE
    gen-data   --kind K --count N --seed S --out DIR
    train      --config CFG --data DIR --out CKPT
    eval       --ckpt CKPT --data DIR --report REPORT.json
    gradcheck  --config CFG
    invariants --suite NAME

Scalar summaries are printed (and written) as JSON, metric curves as CSV.
Failures print ``{"error": <category>, "message": ...}`` on stderr and exit
with the category's code.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from ..errors import FieldConvError
from ..intrinsic import compute_cache, save_cache
from ..mesh import load_mesh, normalize_unit_area
from . import data, invariants
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .train import evaluate, train

log = logging.getLogger("fieldconv")


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable))


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def cmd_precompute(args) -> int:
    mesh, scale = normalize_unit_area(load_mesh(args.mesh))
    cache = compute_cache(mesh, args.radius, expand_isolated=args.expand_isolated)
    save_cache(cache, args.out)
    counts = np.bincount(cache.center, minlength=cache.n_vertices)
    _emit({
        "vertices": cache.n_vertices,
        "pairs": cache.n_pairs,
        "epsilon": cache.epsilon,
        "scale": scale,
        "neighbors": {"min": int(counts.min()), "mean": float(counts.mean()), "max": int(counts.max())},
        "out": str(args.out),
    })
    return 0


def cmd_gen_data(args) -> int:
    manifest = data.generate_dataset(args.kind, args.count, args.seed, args.out, n_vertices=args.vertices)
    items = manifest["items"]
    _emit({"kind": args.kind, "items": len(items), "out": str(args.out),
           "splits": {s: sum(it["split"] == s for it in items) for s in ("train", "test")}})
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.epochs is not None:
        cfg.epochs = args.epochs
        cfg.validate()
    resume = load_checkpoint(args.resume, epsilon=cfg.epsilon) if args.resume else None
    t0 = time.perf_counter()
    result = train(cfg, args.data, resume=resume, expand_isolated=args.expand_isolated)
    seconds = time.perf_counter() - t0
    save_checkpoint(args.out, result.model, result.optimizer, **result.checkpoint_meta())
    _emit({"task": cfg.task, "epochs": len(result.history), "seconds": round(seconds, 3),
           "metrics": _scalars(result.metrics), "checkpoint": str(args.out)})
    return 0


def _scalars(metrics: dict) -> dict:
    """Drop per-item lists so the summary stays a flat scalar report."""
    return {split: {k: v for k, v in m.items() if not isinstance(v, (list, tuple))}
            for split, m in metrics.items()}


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    metrics = evaluate(ckpt.model, args.data, expand_isolated=args.expand_isolated)
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    summary = {"task": ckpt.config.task, "checkpoint": str(args.ckpt), "metrics": _scalars(metrics)}
    with open(report, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_jsonable)
    stem = report.with_suffix("")
    for split, m in metrics.items():
        if "curve" in m:
            _write_csv(Path(f"{stem}_{split}_geodesic_error.csv"), ["threshold", "fraction"],
                       zip(m["thresholds"], m["curve"]))
        if "precision_curve" in m:
            _write_csv(Path(f"{stem}_{split}_pr.csv"), ["recall", "precision"],
                       zip(m["recall_levels"], m["precision_curve"]))
    history = ckpt.meta.get("history") or []
    if history:
        keys = sorted({k for row in history for k in row}, key=lambda k: (k != "epoch", k))
        _write_csv(Path(f"{stem}_history.csv"), keys, ([row.get(k, "") for k in keys] for row in history))
    _emit(summary)
    return 0


def cmd_gradcheck(args) -> int:
    cfg = load_config(args.config)
    t0 = time.perf_counter()
    rep = invariants.network_gradcheck(cfg, seed=args.seed, tolerance=args.tolerance, samples=args.samples)
    for line in rep.lines():
        print(line)
    _emit({"passed": rep.passed, "max_rel": rep.max_rel, "seconds": round(time.perf_counter() - t0, 3),
           "kinds": {k.kind: {"n": k.n, "max_rel": k.max_rel, "mean_rel": k.mean_rel}
                     for k in rep.kinds.values()}})
    return 0 if rep.passed else 2


def cmd_invariants(args) -> int:
    try:
        checks = invariants.run_suite(args.suite)
    except KeyError:
        raise _UsageError(f"unknown suite {args.suite!r}; choose from {', '.join(invariants.SUITES)} or all")
    for c in checks:
        print(c.line())
    passed = all(c.passed for c in checks)
    _emit({"suite": args.suite, "passed": passed, "failed": [c.name for c in checks if not c.passed]})
    return 0 if passed else 2


class _UsageError(FieldConvError):
    category = "usage"
    exit_code = 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fieldconv", description="Field convolutions on triangle meshes.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("precompute", help="build the intrinsic neighborhood cache of a mesh")
    p.add_argument("--mesh", required=True, help="OFF or OBJ triangle mesh")
    p.add_argument("--radius", type=float, required=True, help="support radius on the unit-area mesh")
    p.add_argument("--out", required=True)
    p.add_argument("--expand-isolated", action="store_true",
                   help="grow empty neighborhoods to the nearest vertex instead of failing")
    p.set_defaults(func=cmd_precompute)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--kind", required=True, choices=data.KINDS)
    p.add_argument("--count", type=int, required=True, help="meshes (per class for classify3, pairs for pairmatch)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vertices", type=int, default=500)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path (.npz)")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--epochs", type=int, help="override the configured epoch count")
    p.add_argument("--expand-isolated", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint; JSON summary plus CSV curves")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True, help="JSON path; curves go next to it")
    p.add_argument("--expand-isolated", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the configured network")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--samples", type=int, default=100, help="coordinates per layer kind")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("invariants", help="run a verification suite")
    p.add_argument("--suite", required=True, help=f"one of {', '.join(invariants.SUITES)}, or all")
    p.set_defaults(func=cmd_invariants)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except FieldConvError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(json.dumps({"error": "io", "message": str(exc)}), file=sys.stderr)
        return 11


if __name__ == "__main__":
    sys.exit(main())
