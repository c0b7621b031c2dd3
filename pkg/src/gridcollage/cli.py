"""Command-line entry point.

Every subcommand accepts ``--config FILE.toml``; keys in the table named after
the subcommand (dashes become underscores) provide defaults, and explicit flags
win. Runs that write into ``--out`` also write a ``manifest.json`` next to the
outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

import numpy as np

from . import metrics as M
from .compose import compose_collage, encode_jpeg
from .dataset import (GenPlan, generate_groups, parse_collage_info, parse_predictions,
                      write_collage_info, write_predictions)
from .features import load_feature_store, save_feature_store
from .grid import GridSpec
from .predictor import PredictorConfig, load_params, save_params
from .search import GaConfig, brute_force, lcp_optimize
from .training import TrainConfig, train, write_history

log = logging.getLogger("gridcollage")


class UsageError(Exception):
    """Bad combination of otherwise well-formed arguments (exit 2)."""


@dataclass
class RunManifest:
    run_id: str
    command: str
    seeds: dict
    config: dict
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    started: str = ""
    finished: str = ""

    @classmethod
    def begin(cls, command: str, config: dict, seeds: dict, inputs: Sequence[str] = ()) -> "RunManifest":
        blob = json.dumps({"command": command, "config": config}, sort_keys=True, default=str)
        return cls(hashlib.sha256(blob.encode()).hexdigest()[:12], command, seeds,
                   json.loads(json.dumps(config, default=str)), [str(p) for p in inputs],
                   started=_now())

    def write(self, directory: Path) -> Path:
        self.finished = _now()
        path = directory / "manifest.json"
        directory.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=1, sort_keys=True) + "\n")
        return path


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _snapshot(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}


def _out_dir(args) -> Path | None:
    return Path(args.out) if getattr(args, "out", None) else None


def _categories(path: str | None, specs) -> list[str]:
    if path:
        text = Path(path).read_text(encoding="utf-8")
        if text.lstrip().startswith("["):
            return [str(c) for c in json.loads(text)]
        return [line.strip() for line in text.splitlines() if line.strip()]
    return sorted({lab for s in specs for lab in s.labels()})


def _read_pool(path: str) -> list[tuple[str, int, str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    try:
        return [(r["image"], int(r["synset_id"]), r.get("label") or f"class {r['synset_id']}") for r in rows]
    except KeyError as exc:
        raise UsageError(f"pool file needs columns image,synset_id[,label]; missing {exc}") from None


def _write_pool(pool, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["image", "synset_id", "label"])
        w.writerows(pool)


# -- subcommands --------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .pipeline import WorldConfig, make_world

    out = Path(args.out)
    k = args.grid * args.grid
    man = RunManifest.begin("gen-data", _snapshot(args), {"seed": args.seed}, [args.pool] if args.pool else [])
    if args.pool:
        pool = _read_pool(args.pool)
        groups = args.groups or len(pool) // k
    else:
        groups = args.groups or 10
        world = make_world(WorldConfig(n=args.grid, seed=args.seed, feat_dim=args.feat_dim), groups)
        pool = world.pool
        (out / "metainfo").mkdir(parents=True, exist_ok=True)
        save_feature_store(world.store, out / "metainfo" / "features.cpfs")
        _write_pool(pool, out / "metainfo" / "pool.csv")
        (out / "metainfo" / "difficulty.json").write_text(json.dumps(world.difficulty, sort_keys=True) + "\n")
        man.outputs += ["metainfo/features.cpfs", "metainfo/pool.csv", "metainfo/difficulty.json"]
    specs = generate_groups(pool, GenPlan(k, groups, args.shuffles, args.seed))
    info = out / "metainfo" / f"collage_info_{args.grid}x{args.grid}.json"
    write_collage_info(specs, info)
    man.outputs.append(str(info.relative_to(out)))
    man.write(out)
    print(f"wrote {len(specs)} collages ({groups} groups x {args.shuffles}) to {info}")
    return 0


def _find_image(root: Path, image_id: str) -> Path:
    direct = root / image_id
    if direct.is_file():
        return direct
    hits = sorted(root.glob(f"{image_id}.*"))
    if not hits:
        raise FileNotFoundError(f"no image file for id {image_id!r} under {root}")
    return hits[0]


def cmd_collage(args) -> int:
    specs = parse_collage_info(args.info)
    root, out = Path(args.images), Path(args.out)
    man = RunManifest.begin("collage", _snapshot(args), {}, [args.info, args.images])

    def render(spec):
        ids = spec.images()
        paths = [_find_image(root, i) for i in ids]
        img = compose_collage(paths, list(range(spec.k)), cell_px=args.cell_px, ids=ids)
        target = out / f"{spec.n}x{spec.n}" / spec.collage_name
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_suffix(".tmp")
        tmp.write_bytes(encode_jpeg(img))
        tmp.replace(target)
        return str(target.relative_to(out))

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        man.outputs = list(pool.map(render, specs))
    man.write(out)
    print(f"composed {len(specs)} collages into {out}")
    return 0


def cmd_train(args) -> int:
    from .pipeline import to_dataset

    store = load_feature_store(args.features)
    records = [r for path in args.records for r in parse_predictions(path)]
    pcfg = PredictorConfig(feat_dim=store.dim, hidden_dim=args.hidden, conv_layers=args.conv_layers,
                           pool_ratio=args.pool_ratio, mlp_dims=tuple(args.mlp_dims))
    tcfg = TrainConfig(batch_size=args.batch_size, learning_rate=args.lr, epochs=args.epochs,
                       patience=args.patience, seed=args.seed)
    man = RunManifest.begin("train", _snapshot(args), {"seed": args.seed}, [args.features, *args.records])
    params, history = train(to_dataset(records, store), pcfg, tcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_params(params, out / "params.cpgp")
    write_history(history, out / "history.csv")
    man.outputs = ["params.cpgp", "history.csv"]
    man.write(out)
    best = min(history, key=lambda r: r.val_mse) if history else None
    print(f"trained {len(history)} epochs on {len(records)} collages"
          + (f"; best val MSE {best.val_mse:.5f} at epoch {best.epoch}" if best else ""))
    return 0


def _ids_arg(args) -> list[str]:
    if args.ids_file:
        ids = [ln.strip() for ln in Path(args.ids_file).read_text().splitlines() if ln.strip()]
    elif args.ids:
        ids = [s for s in args.ids.split(",") if s]
    else:
        raise UsageError("one of --ids or --ids-file is required")
    if args.grid and len(ids) != args.grid * args.grid:
        raise UsageError(f"--grid {args.grid} needs {args.grid ** 2} ids, got {len(ids)}")
    return ids


def cmd_optimize(args) -> int:
    ids = _ids_arg(args)
    store = load_feature_store(args.features)
    params = load_params(args.params)
    man = RunManifest.begin("optimize", _snapshot(args), {"seed": args.seed}, [args.features, args.params])
    if args.mode == "lcp":
        n = GridSpec.from_k(len(ids)).n
        cfg = GaConfig.for_grid(n, seed=args.seed, max_evaluations=args.budget)
        if args.budget is not None:
            # an explicit budget is meant to be spent: no early stop on stagnation
            cfg = replace(cfg, saturation=None, max_generations=10 ** 6)
        overrides = {k: getattr(args, k) for k in ("population", "elites", "max_generations", "saturation")
                     if getattr(args, k) is not None}
        cfg = replace(cfg, **overrides)
        best, trace = lcp_optimize(ids, store, params, cfg)
    else:
        if args.budget is None:
            raise UsageError("--mode brute needs --budget")
        best, trace = brute_force(ids, store, params, args.budget, rng=args.seed)
    fitness = trace.best_fitness[-1]
    result = {"mode": args.mode, "ids": ids, "arrangement": list(best), "fitness": fitness,
              "evaluations": trace.evaluations}
    print(json.dumps(result))
    out = _out_dir(args)
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "best.json").write_text(json.dumps(result, indent=1) + "\n")
        trace.write_csv(out / "trace.csv", with_timing=not args.no_timing)
        man.outputs = ["best.json", "trace.csv"]
        man.write(out)
    return 0


def _recognizer(args, specs, categories):
    from .vlm import ClientConfig, HttpRecognizer, SimConfig, SimulatedRecognizer

    if args.backend == "sim":
        n = specs[0].n
        difficulty = json.loads(Path(args.difficulty).read_text()) if args.difficulty else {}
        sim = SimConfig.default(n, delta_c=args.delta_c, delta_s=args.delta_s, p_loc=args.p_loc,
                                beta=args.beta, difficulty=difficulty, seed=args.seed)
        return SimulatedRecognizer(specs, sim), None
    if not args.collages:
        raise UsageError("--backend http needs --collages (directory of composed .jpeg files)")
    cfg = ClientConfig(endpoint=args.endpoint, model=args.model, seed=args.seed, batch_size=args.batch_size,
                       max_in_flight=args.jobs, rpm=args.rpm, max_retries=args.max_retries,
                       audit_log=args.audit_log)
    root = Path(args.collages)

    def image_for(spec):
        for cand in (root / spec.collage_name, root / f"{spec.n}x{spec.n}" / spec.collage_name):
            if cand.is_file():
                return cand.read_bytes()
        raise FileNotFoundError(f"collage image {spec.collage_name} not found under {root}")

    return HttpRecognizer(cfg, label_tokens=args.label_tokens), image_for


def cmd_eval(args) -> int:
    from .vlm import evaluate

    specs = parse_collage_info(args.info)
    if not specs:
        raise UsageError(f"{args.info} holds no collages")
    categories = _categories(args.categories, specs)
    man = RunManifest.begin("eval", _snapshot(args), {"seed": args.seed}, [args.info])
    recognizer, image_for = _recognizer(args, specs, categories)
    records = evaluate(recognizer, specs, categories, image_for=image_for)
    out = Path(args.out)
    write_predictions(records, out / "predictions.json")
    man.outputs = ["predictions.json"]
    ledger = getattr(recognizer, "ledger", None)
    if ledger is not None:
        (out / "usage.json").write_text(json.dumps({
            "requests": len(ledger.entries), "input_tokens": ledger.input_tokens,
            "output_tokens": ledger.output_tokens, "cost": ledger.total_cost}, indent=1) + "\n")
        man.outputs.append("usage.json")
    man.write(out)
    acc = 100 * np.mean([M.collage_accuracy(r) for r in records])
    print(f"evaluated {len(records)} collages; accuracy {acc:.2f}%")
    return 0


def cmd_metrics(args) -> int:
    row = M.metric_row(args.dataset, args.grid, args.acc, args.cost, args.ref_acc, args.ref_cost, args.gamma)
    print(f"CER {row.cer:.2f}")
    if row.pce is not None:
        print(f"PCE {row.pce:.2f}")
    elif args.ref_acc is not None:
        print("PCE undefined (accuracy equals reference)")
    if args.out:
        Path(args.out).write_text(M.report_csv([row]))
    return 0


def cmd_stats(args) -> int:
    records = [r for path in args.records for r in parse_predictions(path)]
    if not records:
        raise UsageError("no prediction records")
    n = GridSpec.from_k(records[0].k).n
    acc = M.position_accuracy(records, n)
    print(f"{len(records)} collages, overall accuracy {100 * acc.mean():.2f}%")
    for r in range(n):
        print("  ".join(f"{100 * acc[r * n + c]:6.2f}" for c in range(n)))
    if args.out:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell", "row", "col", "accuracy", "count"])
        for i, a in enumerate(acc):
            w.writerow([i, i // n, i % n, f"{a:.6f}", len(records)])
        Path(args.out).write_text(buf.getvalue())
    return 0


def cmd_simulate(args) -> int:
    from .pipeline import ExperimentConfig, WorldConfig, experiment_sim, label_world, make_world, run_experiment

    world_cfg = WorldConfig(n=args.grid, seed=args.seed)
    sim = experiment_sim(args.grid, seed=args.seed)
    man = RunManifest.begin("simulate", _snapshot(args), {"seed": args.seed})
    world = make_world(world_cfg, args.groups)
    specs, records = label_world(world, sim, args.shuffles, seed=args.seed)
    acc = M.position_accuracy(records, args.grid)
    summary = {"collages": len(records), "accuracy": float(acc.mean()),
               "position_accuracy": [round(float(a), 6) for a in acc]}
    if args.experiment:
        cfg = ExperimentConfig(world=world_cfg, train_groups=args.groups, shuffles=args.shuffles,
                               test_groups=args.test_groups, seeds=args.seeds, sim=sim,
                               ga=GaConfig.for_grid(args.grid))
        summary["experiment"] = {k: v for k, v in run_experiment(cfg).summary().items() if k != "seconds"}
    print(json.dumps(summary, indent=1, default=float))
    out = _out_dir(args)
    if out:
        write_collage_info(specs, out / "collage_info.json")
        write_predictions(records, out / "predictions.json")
        (out / "summary.json").write_text(json.dumps(summary, indent=1, default=float) + "\n")
        man.outputs = ["collage_info.json", "predictions.json", "summary.json"]
        man.write(out)
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridcollage", description="Collage prompting toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="TOML file; the [%s] table supplies defaults" % name)
        sp.set_defaults(func=func)
        return sp

    sp = add("gen-data", cmd_gen_data, "generate collage groups and write collage_info")
    sp.add_argument("--grid", type=int, choices=(2, 3), default=3)
    sp.add_argument("--groups", type=int)
    sp.add_argument("--shuffles", type=int, default=5)
    sp.add_argument("--pool", help="CSV with image,synset_id[,label]; synthetic pool if omitted")
    sp.add_argument("--feat-dim", type=int, default=32)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("collage", cmd_collage, "compose collage images")
    sp.add_argument("--info", required=True)
    sp.add_argument("--images", required=True)
    sp.add_argument("--cell-px", type=int)
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", required=True)

    sp = add("train", cmd_train, "train the collage predictor")
    sp.add_argument("--records", nargs="+", required=True)
    sp.add_argument("--features", required=True)
    sp.add_argument("--hidden", type=int, default=128)
    sp.add_argument("--conv-layers", type=int, default=3)
    sp.add_argument("--pool-ratio", type=float, default=0.5)
    sp.add_argument("--mlp-dims", type=int, nargs="+", default=[256, 128, 64])
    sp.add_argument("--batch-size", type=int, default=512)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--epochs", type=int, default=500)
    sp.add_argument("--patience", type=int, default=20)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)

    sp = add("optimize", cmd_optimize, "search for a good arrangement")
    sp.add_argument("--mode", choices=("lcp", "brute"), default="lcp")
    sp.add_argument("--grid", type=int)
    sp.add_argument("--ids")
    sp.add_argument("--ids-file")
    sp.add_argument("--features", required=True)
    sp.add_argument("--params", required=True)
    sp.add_argument("--budget", type=int)
    sp.add_argument("--population", type=int)
    sp.add_argument("--elites", type=int)
    sp.add_argument("--max-generations", type=int)
    sp.add_argument("--saturation", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--no-timing", action="store_true", help="omit elapsed_ms from trace.csv")
    sp.add_argument("--out")

    sp = add("eval", cmd_eval, "recognize collages and write prediction records")
    sp.add_argument("--info", required=True)
    sp.add_argument("--categories")
    sp.add_argument("--backend", choices=("sim", "http"), default="sim")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--delta-c", type=float, default=0.0)
    sp.add_argument("--delta-s", type=float, default=0.0)
    sp.add_argument("--p-loc", type=float, default=0.0)
    sp.add_argument("--beta", type=float, default=0.0)
    sp.add_argument("--difficulty")
    sp.add_argument("--collages")
    sp.add_argument("--endpoint", default="https://api.openai.com/v1/chat/completions")
    sp.add_argument("--model", default="gpt-4-1106-vision-preview")
    sp.add_argument("--batch-size", type=int, default=4)
    sp.add_argument("--rpm", type=float, default=60.0)
    sp.add_argument("--max-retries", type=int, default=5)
    sp.add_argument("--label-tokens", type=int, default=0)
    sp.add_argument("--audit-log")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--out", required=True)

    sp = add("metrics", cmd_metrics, "CER and PCE for one configuration")
    sp.add_argument("--acc", type=float, required=True, help="accuracy in percent")
    sp.add_argument("--cost", type=float, required=True, help="dollars per 1,000 images")
    sp.add_argument("--ref-acc", type=float)
    sp.add_argument("--ref-cost", type=float)
    sp.add_argument("--gamma", type=float, default=2.0)
    sp.add_argument("--dataset", default="-")
    sp.add_argument("--grid", type=int, default=1)
    sp.add_argument("--out")

    sp = add("stats", cmd_stats, "per-position accuracy")
    sp.add_argument("--records", nargs="+", required=True)
    sp.add_argument("--out")

    sp = add("simulate", cmd_simulate, "simulated end-to-end run")
    sp.add_argument("--grid", type=int, choices=(2, 3), default=3)
    sp.add_argument("--groups", type=int, default=50)
    sp.add_argument("--shuffles", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--experiment", action="store_true", help="also train and compare LCP with random")
    sp.add_argument("--test-groups", type=int, default=50)
    sp.add_argument("--seeds", type=int, default=3)
    sp.add_argument("--out")
    return p


def _config_path(argv: Sequence[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    """Parse ``argv`` with the subcommand's config table installed as defaults."""
    path = _config_path(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    command = next((tok for tok in argv if tok in subparsers), None)
    if path and command:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            parser.error(f"cannot read config {path}: {exc}")
        table = doc.get(command, {})
        if not isinstance(table, dict):
            parser.error(f"[{command}] in {path} must be a table")
        table = {k.replace("-", "_"): v for k, v in table.items()}
        sub = subparsers[command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(table) - known)
        if unknown:
            parser.error(f"unknown keys in [{command}]: {', '.join(unknown)}")
        sub.set_defaults(**table)
        for action in sub._actions:
            if action.dest in table:
                action.required = False
    return parser.parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = _apply_config(parser, argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"gridcollage: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "command": args.command}),
              file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
