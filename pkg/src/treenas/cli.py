"""Command line entry point: ``treenas <command> ...`` or ``python -m treenas``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .distance import MEASURES, DistanceMatrix, encoding_matrix
from .errors import InvalidConfig, TreeNASError
from .harness import (CONFIG_SCHEMA, RunConfig, RunRecord, compare, learned_tree, make_evaluator,
                      rows_table, run, sweep_pretrain_budget)
from .hierarchy import LINKAGES, agglomerative, default_tree, random_tree, save_tree
from .space import load_space

log = logging.getLogger("treenas")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config(path: str, seed: int | None) -> RunConfig:
    if not Path(path).is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        cfg = RunConfig.load(path)
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: not valid JSON ({e})") from None
    except InvalidConfig as e:
        raise UsageError(f"{path}: {e}") from None
    return replace(cfg, seed=seed) if seed is not None else cfg


def _out_dir(args) -> Path:
    out = Path(args.out_dir or os.environ.get("TREENAS_OUT_DIR") or "results")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args):
    cfg = _load_config(args.config, args.seed)
    out = _out_dir(args)
    (out / f"config_{cfg.name}.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    rec = run(cfg, out)
    s = rec.summary
    log.info("%s seed %d: %s acc %.2f rank %d (%.1fs)", rec.label, rec.seed, s["digits"],
             s["final_acc"], s["rank"], rec.wall_time)
    print(json.dumps(s, sort_keys=True))


def cmd_compare(args):
    cfgs = [_load_config(p, args.seed) for p in args.configs]
    out = _out_dir(args)
    for c in cfgs:
        (out / f"config_{c.name}.json").write_text(json.dumps(c.to_dict(), indent=2, sort_keys=True))
    rows, _ = compare(cfgs, args.seeds, out)
    print(rows_table(rows), end="")
    log.info("wrote %s", out / "compare.csv")
    if any(r.failures for r in rows):
        return 2


def cmd_build_tree(args):
    space = load_space(args.space)
    src = args.source or args.measure or "kl"
    rec_cfg = None
    if args.from_run:
        rec = RunRecord.load(args.from_run)
        rec_cfg = RunConfig.from_dict(rec.config)
        t = rec.phases.get("tree_built_at", args.t)
    else:
        t = args.t
    if src in MEASURES:
        if rec_cfg is not None:
            ev_spec = rec_cfg.evaluator
        elif args.evaluator:
            ev_spec = json.loads(args.evaluator)
        else:
            ev_spec = {"kind": "synthetic", "seed": args.seed or 0}
        ev = make_evaluator(args.space, ev_spec)
        tree = learned_tree(space, ev, t, src, args.linkage, args.batch)
    elif src == "default":
        tree = default_tree(space)
    elif src == "random":
        tree = random_tree(space, args.seed or 0, args.linkage)
    elif src in ("one_hot", "vector"):
        tree = agglomerative(encoding_matrix(space, src, args.weighted), args.linkage)
    elif Path(src).is_file():
        D = DistanceMatrix.load(src).validate()
        if D.n != space.cardinality:
            raise UsageError(f"matrix has {D.n} rows but space {space.name!r} has {space.cardinality} architectures")
        tree = agglomerative(D, args.linkage)
    else:
        raise UsageError(f"source {src!r} is neither a measure {MEASURES}, an encoding, "
                         "'default', 'random' nor an existing matrix file")
    out = Path(args.out) if args.out else _out_dir(args) / f"tree_{space.name}.nwk"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_tree(tree, out, stats=False)
    log.info("tree with %d leaves, depth %d -> %s", space.cardinality, tree.depth(), out)
    print(out)


def cmd_export(args):
    if not Path(args.record).is_file():
        raise UsageError(f"run record not found: {args.record}")
    rec = RunRecord.load(args.record)
    text = rec.log_csv() if args.format == "csv" else json.dumps(rec.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(args.out)
    else:
        sys.stdout.write(text)


def cmd_sweep(args):
    cfg = _load_config(args.config, args.seed)
    out = _out_dir(args)
    (out / f"config_{cfg.name}.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    curve = sweep_pretrain_budget(cfg, args.grid, args.seeds, out)
    for c in curve:
        print(f"{c['pretrain_steps']:>8d}  mean acc {c['mean_acc']:.3f}  mean rank {c['mean_rank']:.1f}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    # SUPPRESS so a flag given before the subcommand is not reset by the subparser
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override the config seed")
    common.add_argument("--out-dir", default=argparse.SUPPRESS,
                        help="results directory (default $TREENAS_OUT_DIR or ./results)")
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS, help="only print results")

    p = _Parser(prog="treenas", description="Tree-structured architecture sampling experiments",
                parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", parents=[common], help="one seeded search from a config file")
    r.add_argument("config")
    r.set_defaults(fn=cmd_run)

    c = sub.add_parser("compare", parents=[common], help="several configs over the same seeds")
    c.add_argument("configs", nargs="+")
    c.add_argument("--seeds", type=int, default=3)
    c.set_defaults(fn=cmd_compare)

    b = sub.add_parser("build-tree", parents=[common], help="build and save a search tree as Newick")
    b.add_argument("space", help="builtin space name or space JSON")
    b.add_argument("source", nargs="?", help="measure, encoding, 'default', 'random' or a matrix file")
    b.add_argument("--measure", choices=MEASURES)
    b.add_argument("--from-run", help="reuse evaluator and build time of a run record")
    b.add_argument("--evaluator", help="evaluator settings as JSON")
    b.add_argument("--t", type=float, default=0.4, help="training progress at which outputs are taken")
    b.add_argument("--linkage", choices=LINKAGES, default="average")
    b.add_argument("--batch", type=int, default=256)
    b.add_argument("--weighted", action="store_true")
    b.add_argument("--out")
    b.set_defaults(fn=cmd_build_tree)

    e = sub.add_parser("export", parents=[common], help="convert a run record")
    e.add_argument("record")
    e.add_argument("--format", choices=("csv", "json"), default="csv")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_export)

    s = sub.add_parser("sweep-pretrain", parents=[common], help="final accuracy vs pre-training steps")
    s.add_argument("config")
    s.add_argument("--grid", type=int, nargs="+", required=True)
    s.add_argument("--seeds", type=int, default=3)
    s.set_defaults(fn=cmd_sweep)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}\n\n{parser.format_usage()}\n{CONFIG_SCHEMA}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    for k, v in (("seed", None), ("out_dir", None), ("quiet", False)):
        if not hasattr(args, k):
            setattr(args, k, v)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        return args.fn(args) or 0
    except UsageError as e:
        print(f"usage error: {e}\n\n{CONFIG_SCHEMA}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 0
    except (TreeNASError, ValueError, KeyError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
