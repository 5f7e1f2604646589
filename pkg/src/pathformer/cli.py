"""Command-line entry point: ingest, sample, oracle, train, eval, ablate, gradcheck.

Exit status: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import read_config
from .datasets import fixture_paths
from .evaluation import ablation_table, mrr
from .kg import load_split, load_split_dir, save_split
from .model import Pathformer
from .nn import NumericError
from .oracle import answer_set
from .sampler import SamplerConfig, read_jsonl, sample_dataset, write_jsonl
from .training import TrainConfig, train

logger = logging.getLogger("pathformer")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _effective_seed(args, config: dict) -> int:
    # the flag wins; a config file may carry its own seed for reproducible reruns
    if args.seed is not None:
        return args.seed
    return int(config.get("seed", 0))


# -- subcommands ----------------------------------------------------------------


def cmd_ingest(args) -> int:
    if args.fixture:
        paths = fixture_paths(args.fixture)
    elif args.train and args.valid and args.test:
        paths = (args.train, args.valid, args.test)
    else:
        raise UsageError("give --train, --valid and --test, or --fixture")
    split = load_split(*paths)
    save_split(split, args.out, seed=args.seed if args.seed is not None else 0)
    counts = "  ".join(f"{k}={v}" for k, v in split.report.n_triples.items())
    print(f"entities {split.n_entities}  relations {split.n_relations}  triples {counts}  -> {args.out}")
    return EXIT_OK


def cmd_sample(args) -> int:
    split = load_split_dir(args.split)
    raw = read_config(args.config)
    stage = raw.pop("stage", "train")
    stage = args.stage or stage
    raw["seed"] = str(_effective_seed(args, raw))
    config = SamplerConfig.from_mapping(raw)
    instances, shortfall = sample_dataset(split, config, stage=stage)
    meta = {
        "seed": config.seed,
        "stage": stage,
        "counts": config.counts,
        "max_answers": config.max_answers,
        "shortfall": shortfall,
    }
    write_jsonl(instances, args.out, meta)
    for template, missing in shortfall.items():
        print(f"warning: {template}: {missing} queries short of the requested count", file=sys.stderr)
    print(f"wrote {len(instances)} queries to {args.out}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    split = load_split_dir(args.split)
    instances = read_jsonl(args.queries)
    mismatches = 0
    lines = []
    for k, inst in enumerate(instances):
        fresh = {s: answer_set(split.graph(s), inst.tree) for s in ("train", "valid", "test")}
        record = {
            "index": k,
            "structure": inst.structure,
            "answers": sorted(fresh[args.stage]),
        }
        if args.stage != "train":
            record["non_trivial"] = sorted(fresh[args.stage] - fresh["train" if args.stage == "valid" else "valid"])
        if args.check:
            stored = {"train": inst.answers_train, "valid": inst.answers_valid, "test": inst.answers_test}
            bad = [s for s in fresh if stored[s] is not None and frozenset(stored[s]) != fresh[s]]
            if bad:
                mismatches += 1
                record["mismatch"] = bad
        lines.append(json.dumps(record, sort_keys=True))
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.check:
        print(f"{mismatches} of {len(instances)} queries disagree with the stored answers", file=sys.stderr)
        return EXIT_DATA if mismatches else EXIT_OK
    return EXIT_OK


def cmd_train(args) -> int:
    split = load_split_dir(args.split)
    raw = read_config(args.config) if args.config else {}
    raw["seed"] = str(_effective_seed(args, raw))
    config = TrainConfig.from_mapping(raw)
    instances = read_jsonl(args.queries)
    valid = read_jsonl(args.valid) if args.valid else []
    log_path = args.log or str(args.out) + ".log.jsonl"
    start = time.perf_counter()
    result = train(split, instances, config, valid, checkpoint_path=args.out, log_path=log_path)
    elapsed = time.perf_counter() - start
    last = result.log[-1]["loss"] if result.log else float("nan")
    print(f"trained {config.max_steps} steps in {elapsed:.1f}s, last logged loss {last:.4f}, checkpoint {args.out}")
    if result.best_score is not None:
        print(f"best validation MRR {100 * result.best_score:.2f} at step {result.best_step}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, meta = Pathformer.load(args.ckpt)
    instances = read_jsonl(args.queries)
    report = mrr(instances, model, stage=args.stage)
    payload = report.to_dict()
    payload["seed"] = meta.get("seed")
    payload["checkpoint"] = str(args.ckpt)
    print(report.to_text())
    if args.out:
        _write_json(args.out, payload)
    else:
        print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def cmd_ablate(args) -> int:
    if len(args.ckpt) < 2:
        raise UsageError("ablate needs at least two --ckpt")
    names = args.name or []
    if names and len(names) != len(args.ckpt):
        raise UsageError("give one --name per --ckpt")
    models, seeds = {}, {}
    for k, path in enumerate(args.ckpt):
        model, meta = Pathformer.load(path)
        name = names[k] if names else Path(path).stem
        if name in models:
            name = f"{name}#{k}"
        models[name] = model
        seeds[name] = meta.get("seed")
    instances = read_jsonl(args.queries)
    table = ablation_table(models, instances, stage=args.stage)
    payload = table.to_dict()
    payload["seeds"] = seeds
    print(table.to_text())
    if args.out:
        _write_json(args.out, payload)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .diagnostics import run_suite

    if args.draws < 1:
        raise UsageError("--draws must be >= 1")
    seed = args.seed if args.seed is not None else 0
    start = time.perf_counter()
    results = run_suite(seed=seed, draws=args.draws)
    failed = [r for r in results if not r.passed]
    worst = max(results, key=lambda r: r.rel_error)
    for r in failed:
        print(f"FAIL {r.label} rel_error={r.rel_error:.3e}")
    print(
        f"{len(results) - len(failed)}/{len(results)} checks passed over {args.draws} draws "
        f"(worst {worst.label} {worst.rel_error:.2e}, {time.perf_counter() - start:.1f}s)"
    )
    if args.out:
        _write_json(args.out, {"seed": seed, "draws": args.draws, "results": [[r.label, r.rel_error] for r in results]})
    return EXIT_NUMERIC if failed else EXIT_OK


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for every random choice (default: config seed or 0)")
    common.add_argument("--threads", type=int, default=None, help="cap BLAS worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="pathformer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="read TSV triples into a split directory")
    p.add_argument("--train")
    p.add_argument("--valid")
    p.add_argument("--test")
    p.add_argument("--fixture", choices=["toy30", "tiny6"], help="use a shipped fixture instead of files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("sample", parents=[common], help="sample grounded queries with exact answers")
    p.add_argument("--split", required=True)
    p.add_argument("--config", required=True, help="key=value file with count.<template>, max_answers, seed, stage")
    p.add_argument("--stage", choices=["train", "valid", "test"], help="graph the queries are grounded on")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("oracle", parents=[common], help="recompute answer sets from the split")
    p.add_argument("--split", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--stage", choices=["train", "valid", "test"], default="test")
    p.add_argument("--check", action="store_true", help="diff against the answers stored with each query")
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("train", parents=[common], help="train a model and write a checkpoint")
    p.add_argument("--split", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--config", help="key=value training config")
    p.add_argument("--valid", help="validation queries for best-checkpoint selection")
    p.add_argument("--log", help="loss log path (default: <out>.log.jsonl)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="filtered MRR report for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--queries", required=True)
    p.add_argument("--stage", choices=["train", "valid", "test"], default="test")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="side-by-side MRR of several checkpoints")
    p.add_argument("--ckpt", action="append", required=True)
    p.add_argument("--name", action="append")
    p.add_argument("--queries", required=True)
    p.add_argument("--stage", choices=["train", "valid", "test"], default="test")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--draws", type=int, default=20)
    p.add_argument("--out")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("pathformer: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except UsageError as exc:
        print(f"pathformer {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        print(f"pathformer {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"pathformer {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
