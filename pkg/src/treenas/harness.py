"""End-to-end search runs, multi-seed comparisons and pre-training sweeps.

A run has four phases over a step budget (one step = one architecture
evaluation): uniform pre-training, tree construction, warm-up, and guided
search, followed by final selection. Flat strategies share the same phase
split: they sample uniformly during warm-up while their statistics learn.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .distance import build_matrix, encoding_matrix
from .errors import InvalidConfig, OutputsUnavailable
from .evalsrc import Evaluator, SyntheticSupernet, TabularEvaluator, load_benchmark
from .hierarchy import (SearchTree, accuracy_partition_tree, agglomerative, default_tree,
                        export_tree, random_tree, LINKAGES)
from .sampler import (BoltzmannSampler, IndependentSampler, MctsSampler, Sampler,
                      TemperatureSchedule, UniformSampler, sample, select_final)
from .space import SearchSpace, load_space, to_digits

log = logging.getLogger(__name__)

STRATEGIES = ("uniform", "independent", "boltzmann", "mcts_default", "mcts_default_reg",
              "mcts_random", "mcts_acc_partition", "mcts_learned", "mcts_learned_zero_cost")
TREE_STRATEGIES = tuple(s for s in STRATEGIES if s.startswith("mcts"))
LEARNED = ("mcts_learned", "mcts_learned_zero_cost")


@dataclass
class RunConfig:
    space: str = "bench_macro"
    evaluator: dict = field(default_factory=lambda: {"kind": "synthetic", "seed": 0})
    strategy: str = "mcts_learned"
    label: str | None = None
    total_steps: int = 10_000
    fractions: tuple[float, float, float] = (0.40, 0.25, 0.35)
    pretrain_steps: int | None = None
    measure: str = "kl"
    linkage: str = "average"
    output_batch: int = 256
    encoding: str = "one_hot"
    weighted: bool = True
    temperature: dict = field(default_factory=lambda: {"kind": "linear", "start": 0.02, "end": 0.0025})
    beta: float = 0.95
    lam: float = 0.5
    beta_reg: float = 0.99
    c_init: float = 0.5
    k: int = 50
    budget: float | None = None
    lower_frac: float = 0.99
    reward: dict = field(default_factory=lambda: {"metric": "abs", "data": "val", "measure": "acc"})
    seed: int = 0

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        self.validate()

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise InvalidConfig(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions) or sum(self.fractions) > 1 + 1e-9:
            raise InvalidConfig("fractions must be three non-negative numbers summing to at most 1")
        if self.total_steps <= 0:
            raise InvalidConfig("total_steps must be positive")
        if self.pretrain_steps is not None and self.pretrain_steps < 0:
            raise InvalidConfig("pretrain_steps must be non-negative")
        if self.strategy == "mcts_learned" and self.measure not in ("l2", "kl", "cross_entropy", "cross_entropy_raw"):
            raise InvalidConfig(f"unknown distance measure {self.measure!r}")
        if self.linkage not in LINKAGES:
            raise InvalidConfig(f"linkage must be one of {LINKAGES}")
        if self.encoding not in ("one_hot", "vector"):
            raise InvalidConfig("encoding must be 'one_hot' or 'vector'")
        if self.k < 1:
            raise InvalidConfig("k must be at least 1")
        if not (0 < self.lower_frac <= 1):
            raise InvalidConfig("lower_frac must lie in (0, 1]")
        r = self.reward
        if (r.get("metric", "abs") not in ("abs", "rel") or r.get("data", "val") not in ("val", "train")
                or r.get("measure", "acc") not in ("acc", "loss")):
            raise InvalidConfig(f"bad reward settings {r!r}")
        if self.evaluator.get("kind") not in ("synthetic", "tabular"):
            raise InvalidConfig("evaluator.kind must be 'synthetic' or 'tabular'")
        if self.evaluator["kind"] == "tabular" and "path" not in self.evaluator:
            raise InvalidConfig("a tabular evaluator needs a 'path'")
        TemperatureSchedule(**self.temperature)

    @property
    def name(self) -> str:
        return self.label or self.strategy

    def phase_steps(self) -> tuple[int, int, int]:
        f0, f1, f2 = self.fractions
        n = self.total_steps
        pre = self.pretrain_steps if self.pretrain_steps is not None else int(round(f0 * n))
        return pre, int(round(f1 * n)), int(round(f2 * n))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise InvalidConfig(f"unknown config keys: {sorted(extra)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise InvalidConfig(str(e)) from None

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))


CONFIG_SCHEMA = """config JSON keys (all optional):
  space            builtin 'pooling' | 'bench_macro' | path to space JSON
  evaluator        {"kind": "synthetic", "seed", "classes", "sigma_acc", "t_ramp", "density", ...}
                   {"kind": "tabular", "path": "builtin:pooling" | file, "sigma_acc", "t_ramp",
                    "simulate_outputs": bool}
  strategy         """ + " | ".join(STRATEGIES) + """
  total_steps      int > 0; fractions [pretrain, warmup, search], sum <= 1
  pretrain_steps   optional explicit pre-training step count
  measure          l2 | kl | cross_entropy | cross_entropy_raw   (mcts_learned)
  linkage          average | ward | single | complete
  encoding         one_hot | vector; weighted bool               (zero-cost trees)
  temperature      {"kind": "linear"|"constant", "start", "end"}
  beta, lam, beta_reg, c_init, k, budget (MFLOPs), lower_frac, seed
  reward           {"metric": abs|rel, "data": val|train, "measure": acc|loss}"""


# ---------------------------------------------------------------- building blocks

_EVAL_CACHE: dict[str, Evaluator] = {}
_TREE_CACHE: dict[str, SearchTree] = {}


def _key(*parts) -> str:
    return json.dumps(parts, sort_keys=True, default=str)


def make_evaluator(space_ref: str, spec: dict) -> Evaluator:
    key = _key(space_ref, spec)
    if key not in _EVAL_CACHE:
        space = load_space(space_ref)
        params = {k: v for k, v in spec.items() if k not in ("kind", "path")}
        if spec["kind"] == "synthetic":
            ev = SyntheticSupernet(space, **params)
        else:
            ev = TabularEvaluator(load_benchmark(spec["path"], space), **params)
        _EVAL_CACHE[key] = ev
    return _EVAL_CACHE[key]


def build_tree(cfg: RunConfig, space: SearchSpace, ev: Evaluator, t_build: float) -> SearchTree:
    s = cfg.strategy
    if s in ("mcts_default", "mcts_default_reg"):
        key = _key("default", cfg.space)
        make = lambda: default_tree(space)  # noqa: E731
    elif s == "mcts_random":
        key = _key("random", cfg.space, cfg.seed, cfg.linkage)
        make = lambda: random_tree(space, cfg.seed, cfg.linkage)  # noqa: E731
    elif s == "mcts_acc_partition":
        key = _key("acc", cfg.space, cfg.evaluator)
        make = lambda: accuracy_partition_tree(ev)  # noqa: E731
    elif s == "mcts_learned_zero_cost":
        key = _key("zc", cfg.space, cfg.encoding, cfg.weighted, cfg.linkage)
        make = lambda: agglomerative(encoding_matrix(space, cfg.encoding, cfg.weighted), cfg.linkage)  # noqa: E731
    elif s == "mcts_learned":
        key = _key("learned", cfg.space, cfg.evaluator, round(t_build, 12), cfg.measure,
                   cfg.linkage, cfg.output_batch, cfg.encoding, cfg.weighted)
        make = lambda: learned_tree(space, ev, t_build, cfg.measure, cfg.linkage,  # noqa: E731
                                    cfg.output_batch, cfg.encoding, cfg.weighted)
    else:
        raise InvalidConfig(f"{s} does not use a tree")
    if key not in _TREE_CACHE:
        _TREE_CACHE[key] = make()
    tree = _TREE_CACHE[key].clone()
    tree.reset_stats(cfg.c_init)
    return tree


def learned_tree(space: SearchSpace, ev: Evaluator, t: float, measure: str = "kl",
                 linkage: str = "average", batch: int = 256, encoding: str = "one_hot",
                 weighted: bool = True) -> SearchTree:
    """Output vectors of every architecture -> distance matrix -> clustering.

    Falls back to zero-cost encodings when the evaluator has no outputs.
    """
    try:
        outputs = ev.all_output_vectors(None, batch, t)
    except OutputsUnavailable:
        log.warning("no output vectors available; clustering %s encodings instead", encoding)
        D = encoding_matrix(space, encoding, weighted)
    else:
        D = build_matrix(outputs, measure)
        del outputs
    tree = agglomerative(D, linkage)
    tree.kind = "learned"
    return tree


def make_sampler(cfg: RunConfig, space: SearchSpace, ev: Evaluator, t_build: float,
                 warmup: int) -> Sampler:
    s = cfg.strategy
    n = space.cardinality
    if s == "uniform":
        return UniformSampler(n)
    if s == "independent":
        return IndependentSampler(space, cfg.beta, cfg.c_init)
    if s == "boltzmann":
        return BoltzmannSampler(n, cfg.beta, cfg.c_init)
    tree = build_tree(cfg, space, ev, t_build)
    return MctsSampler(tree, cfg.lam, cfg.beta, regularize=(s == "mcts_default_reg"),
                       beta_reg=cfg.beta_reg, warmup_until=warmup)


class Reward:
    """Maps an evaluation to a reward in [0, 1].

    ``measure='loss'`` uses 1 / (1 + loss); ``metric='rel'`` centres the value
    on an EMA baseline of all previous values.
    """

    def __init__(self, metric: str = "abs", data: str = "val", measure: str = "acc", beta: float = 0.95):
        self.metric, self.data, self.measure, self.beta = metric, data, measure, beta
        self.baseline: float | None = None

    def __call__(self, outcome) -> float:
        v = outcome.accuracy if self.measure == "acc" else 1.0 / (1.0 + outcome.loss)
        if self.metric == "abs":
            return v
        if self.baseline is None:
            self.baseline = v
        r = min(1.0, max(0.0, 0.5 + v - self.baseline))
        self.baseline = self.beta * self.baseline + (1 - self.beta) * v
        return r


# ---------------------------------------------------------------- records

@dataclass
class RunRecord:
    config: dict
    seed: int
    strategy: str
    label: str
    phases: dict
    log: dict
    final: list
    summary: dict
    tree: str | None = None
    tree_kind: str | None = None
    wall_time: float = 0.0
    error: str | None = None

    def to_dict(self, wall_time: bool = True) -> dict:
        d = asdict(self)
        if not wall_time:
            d.pop("wall_time")
        return d

    def to_json(self, wall_time: bool = True) -> str:
        return json.dumps(self.to_dict(wall_time), sort_keys=True, separators=(",", ":"))

    def save(self, path: str | Path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RunRecord":
        with open(path) as f:
            return cls(**json.load(f))

    def log_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["step", "phase", "arch", "reward", "best_acc", "best_rank"]
        w.writerow(cols)
        for row in zip(*(self.log[c] for c in cols)):
            w.writerow(row)
        return buf.getvalue()


def run(cfg: RunConfig, out_dir: str | Path | None = None) -> RunRecord:
    """Execute one seeded search. Deterministic given the config."""
    start = time.perf_counter()
    rec = RunRecord(config=cfg.to_dict(), seed=cfg.seed, strategy=cfg.strategy, label=cfg.name,
                    phases={}, log={k: [] for k in ("step", "phase", "arch", "reward", "best_acc", "best_rank")},
                    final=[], summary={})
    try:
        _run(cfg, rec)
    except Exception as e:
        rec.error = f"{type(e).__name__}: {e}"
        rec.wall_time = time.perf_counter() - start
        if out_dir is not None:
            _flush(rec, out_dir)
        raise
    rec.wall_time = time.perf_counter() - start
    if out_dir is not None:
        _flush(rec, out_dir)
    return rec


def _flush(rec: RunRecord, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rec.save(out / f"run_{rec.label}_seed{rec.seed}.json")


def _run(cfg: RunConfig, rec: RunRecord):
    space = load_space(cfg.space)
    ev = make_evaluator(cfg.space, cfg.evaluator)
    n_pre, n_warm, n_search = cfg.phase_steps()
    horizon = cfg.total_steps
    sample_rng, eval_rng, final_rng = (np.random.default_rng(s)
                                       for s in np.random.SeedSequence(cfg.seed).spawn(3))
    reward_fn = Reward(beta=cfg.beta, **cfg.reward)
    data = cfg.reward.get("data", "val")
    L = rec.log
    state = {"step": 0, "best_acc": -math.inf, "best_rank": None}
    rejections = {"pretrain": 0, "warmup": 0, "search": 0}

    def progress() -> float:
        return min(1.0, state["step"] / horizon)

    def step(idx: int, phase: str) -> float:
        outcome = ev.evaluate(idx, progress(), eval_rng, data=data)
        r = reward_fn(outcome)
        acc = ev.final_accuracy(idx)
        if acc > state["best_acc"]:
            state["best_acc"], state["best_rank"] = acc, ev.rank(idx)
        L["step"].append(state["step"])
        L["phase"].append(phase)
        L["arch"].append(int(idx))
        L["reward"].append(r)
        L["best_acc"].append(state["best_acc"])
        L["best_rank"].append(state["best_rank"])
        state["step"] += 1
        return r

    uniform = UniformSampler(space.cardinality)
    draw = lambda s, T: sample(s, space, T, sample_rng, cfg.budget, cfg.lower_frac)  # noqa: E731

    for _ in range(n_pre):
        idx, rej = draw(uniform, 1.0)
        rejections["pretrain"] += rej
        step(idx, "pretrain")

    t_build = min(1.0, n_pre / horizon)
    sampler = make_sampler(cfg, space, ev, t_build, n_warm)
    tree = getattr(sampler, "tree", None)
    if tree is not None:
        rec.tree, rec.tree_kind = export_tree(tree), tree.kind

    is_tree = isinstance(sampler, MctsSampler)
    for _ in range(n_warm):
        idx, rej = draw(sampler if is_tree else uniform, 1.0)
        rejections["warmup"] += rej
        sampler.update(idx, step(idx, "warmup"))

    sched = TemperatureSchedule(horizon=max(n_search, 1), **cfg.temperature)
    for s in range(n_search):
        idx, rej = draw(sampler, sched(s))
        rejections["search"] += rej
        sampler.update(idx, step(idx, "search"))

    T_final = sched(n_search - 1) if n_search else sched.start
    chosen = select_final(sampler, ev, cfg.k, final_rng, T_final, progress(), cfg.budget, cfg.lower_frac)
    rec.final = [{"arch": int(i), "digits": _digits(space, i), "val_acc": v,
                  "final_acc": ev.final_accuracy(i), "rank": ev.rank(i)} for i, v in chosen]
    best = rec.final[0]
    rec.phases = {"pretrain": n_pre, "warmup": n_warm, "search": n_search,
                  "final_candidates": len(chosen), "rejections": rejections,
                  "tree_built_at": t_build}
    rec.summary = {"arch": best["arch"], "digits": best["digits"], "final_acc": best["final_acc"],
                   "rank": best["rank"], "val_acc": best["val_acc"],
                   "best_seen_acc": state["best_acc"] if L["step"] else None,
                   "best_seen_rank": state["best_rank"]}
    if space.name == "pooling":
        from .space import pooling_repr
        rec.summary["hml"] = pooling_repr(space.arch_at(best["arch"]))


def _digits(space: SearchSpace, i: int) -> str:
    try:
        return to_digits(space.arch_at(i))
    except Exception:
        return ",".join(map(str, space.arch_at(i)))


# ---------------------------------------------------------------- comparisons

SUMMARY_COLUMNS = ("strategy", "best_acc", "mean_acc", "std_acc", "best_rank", "mean_rank")


@dataclass
class SummaryRow:
    strategy: str
    best_acc: float
    mean_acc: float
    std_acc: float
    best_rank: int
    mean_rank: float
    best_arch: str = ""
    seeds: int = 0
    failures: list = field(default_factory=list)


def summarize(label: str, records: Sequence[RunRecord], failures=()) -> SummaryRow:
    ok = [r for r in records if r.error is None]
    if not ok:
        nan = float("nan")
        return SummaryRow(label, nan, nan, nan, -1, nan, "", 0, list(failures))
    accs = np.array([r.summary["final_acc"] for r in ok])
    ranks = np.array([r.summary["rank"] for r in ok])
    b = int(np.argmax(accs))
    return SummaryRow(label, float(accs.max()), float(accs.mean()), float(accs.std()),
                      int(ranks.min()), float(ranks.mean()), ok[b].summary["digits"], len(ok),
                      list(failures))


def compare(configs: Sequence[RunConfig], seeds: int | Sequence[int] = 3,
            out_dir: str | Path | None = None) -> tuple[list[SummaryRow], dict[str, list[RunRecord]]]:
    """Run every config over the same seeds; one summary row per config."""
    if not configs:
        raise InvalidConfig("compare needs at least one config")
    first = configs[0]
    for c in configs[1:]:
        if c.space != first.space or c.evaluator != first.evaluator:
            raise InvalidConfig("compared configs must share space and evaluator")
    seed_list = list(range(first.seed, first.seed + seeds)) if isinstance(seeds, int) else list(seeds)
    rows, runs = [], {}
    for cfg in configs:
        recs, fails = [], []
        for s in seed_list:
            try:
                recs.append(run(replace(cfg, seed=s), out_dir))
            except Exception as e:
                log.error("%s seed %d failed: %s", cfg.name, s, e)
                fails.append({"seed": s, "error": f"{type(e).__name__}: {e}"})
        runs[cfg.name] = recs
        rows.append(summarize(cfg.name, recs, fails))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.csv").write_text(rows_csv(rows))
        (out / "compare.txt").write_text(rows_table(rows))
    return rows, runs


def rows_csv(rows: Sequence[SummaryRow], extra: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = list(extra) + list(SUMMARY_COLUMNS) + ["best_arch", "seeds", "failures"]
    w.writerow(cols)
    for r in rows:
        d = asdict(r)
        d["failures"] = len(r.failures)
        w.writerow([d.get(c, getattr(r, c, "")) for c in cols])
    return buf.getvalue()


def rows_table(rows: Sequence[SummaryRow]) -> str:
    head = f"{'Strategy':<26}{'Arch.':>12}{'Best Acc.':>11}{'Avg. Acc.':>18}{'Best Rank':>11}{'Avg. Rank':>11}"
    lines = [head, "-" * len(head)]
    for r in rows:
        avg = f"{r.mean_acc:.2f} ± {r.std_acc:.2f}"
        lines.append(f"{r.strategy:<26}{r.best_arch:>12}{r.best_acc:>11.2f}{avg:>18}"
                     f"{r.best_rank:>11d}{r.mean_rank:>11.1f}")
        for f in r.failures:
            lines.append(f"  ! seed {f['seed']} failed: {f['error']}")
    return "\n".join(lines) + "\n"


def sweep_pretrain_budget(cfg: RunConfig, grid: Sequence[int], seeds: int | Sequence[int] = 3,
                          out_dir: str | Path | None = None) -> list[dict]:
    """Final accuracy as a function of pre-training steps before tree construction.

    Warm-up and search step counts stay fixed at the config's values.
    """
    if not grid:
        raise InvalidConfig("the pre-training grid is empty")
    if cfg.strategy != "mcts_learned":
        raise InvalidConfig("pre-training sweeps need the mcts_learned strategy")
    curve = []
    for g in grid:
        if g < 0:
            raise InvalidConfig("pre-training steps must be non-negative")
        rows, _ = compare([replace(cfg, pretrain_steps=int(g))], seeds)
        r = rows[0]
        curve.append({"pretrain_steps": int(g), **{c: getattr(r, c) for c in SUMMARY_COLUMNS[1:]},
                      "seeds": r.seeds, "failures": len(r.failures)})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(curve[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(curve)
        (out / "sweep_pretrain.csv").write_text(buf.getvalue())
    return curve
