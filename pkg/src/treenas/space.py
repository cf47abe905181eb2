"""Discrete macro search spaces, architecture encodings and FLOPs filtering.

An architecture is a plain tuple of operation indices, one per node.
Enumeration order is lexicographic over the node indices, so the canonical
index of an unconstrained architecture is its mixed-radix value.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, Sequence, Union

import numpy as np

from .errors import CapacityExceeded, InvalidArch, NoCostModel, SchemaError

Architecture = tuple[int, ...]

DEFAULT_CAP = 10**6


@dataclass(frozen=True)
class ExactCount:
    """Assignments must use operation ``op`` on exactly ``count`` nodes."""

    op: str
    count: int

    def __call__(self, space: "SearchSpace", arch: Sequence[int]) -> bool:
        used = sum(1 for i, o in enumerate(arch) if space.nodes[i][o] == self.op)
        return used == self.count

    def to_dict(self) -> dict:
        return {"kind": "exact_count", "op": self.op, "count": self.count}


@dataclass(frozen=True)
class AdditiveCost:
    """FLOPs = base + sum of per-node, per-operation costs (MFLOPs)."""

    per_op: tuple[tuple[float, ...], ...]
    base: float = 0.0

    def __call__(self, arch: Sequence[int]) -> float:
        return self.base + sum(self.per_op[i][o] for i, o in enumerate(arch))

    def to_dict(self) -> dict:
        return {"kind": "additive", "base": self.base, "per_op": [list(r) for r in self.per_op]}


@dataclass(frozen=True)
class TableCost:
    """FLOPs looked up per architecture digit string."""

    flops: Mapping[str, float]

    def __call__(self, arch: Sequence[int]) -> float:
        key = to_digits(arch)
        if key not in self.flops:
            raise InvalidArch(f"no cost recorded for {key}")
        return float(self.flops[key])

    def to_dict(self) -> dict:
        return {"kind": "table", "flops": dict(self.flops)}


Constraint = Union[ExactCount, Callable[["SearchSpace", Sequence[int]], bool]]
CostModel = Callable[[Sequence[int]], float]


@dataclass(frozen=True, eq=False)
class SearchSpace:
    nodes: tuple[tuple[str, ...], ...]
    constraint: Constraint | None = None
    cost_model: CostModel | None = None
    name: str = "custom"
    cap: int = field(default=DEFAULT_CAP, compare=False)

    def __post_init__(self):
        nodes = tuple(tuple(str(o) for o in n) for n in self.nodes)
        if not nodes:
            raise SchemaError("a search space needs at least one node")
        for i, ops in enumerate(nodes):
            if len(ops) < 2:
                raise SchemaError(f"node {i} has arity {len(ops)} < 2")
        object.__setattr__(self, "nodes", nodes)

    @property
    def arities(self) -> tuple[int, ...]:
        return tuple(len(n) for n in self.nodes)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def unconstrained_size(self) -> int:
        return math.prod(self.arities)

    @cached_property
    def cardinality(self) -> int:
        if self.constraint is None:
            return self.unconstrained_size
        if isinstance(self.constraint, ExactCount):
            return _exact_count_cardinality(self.nodes, self.constraint)
        if self.unconstrained_size > self.cap:
            raise CapacityExceeded(
                f"cannot count a predicate-constrained space of raw size {self.unconstrained_size}"
            )
        return len(self.architectures)

    def is_valid(self, arch: Sequence[int]) -> bool:
        if len(arch) != self.n_nodes:
            return False
        for o, k in zip(arch, self.arities):
            if not (0 <= o < k) or int(o) != o:
                return False
        return self.constraint is None or bool(self.constraint(self, arch))

    def validate(self, arch: Sequence[int]) -> Architecture:
        arch = tuple(int(o) for o in arch)
        if not self.is_valid(arch):
            raise InvalidArch(f"{arch} is not a valid architecture of space {self.name!r}")
        return arch

    @cached_property
    def architectures(self) -> list[Architecture]:
        if self.constraint is None:
            size = self.unconstrained_size
        elif isinstance(self.constraint, ExactCount):
            size = _exact_count_cardinality(self.nodes, self.constraint)
        else:
            size = self.unconstrained_size
        if size > self.cap:
            raise CapacityExceeded(f"space {self.name!r} has {size} architectures (cap {self.cap})")
        prod = itertools.product(*(range(k) for k in self.arities))
        if self.constraint is None:
            return list(prod)
        return [a for a in prod if self.constraint(self, a)]

    @cached_property
    def _index(self) -> dict[Architecture, int]:
        return {a: i for i, a in enumerate(self.architectures)}

    def index_of(self, arch: Sequence[int]) -> int:
        key = tuple(int(o) for o in arch)
        try:
            return self._index[key]
        except KeyError:
            raise InvalidArch(f"{key} is not in space {self.name!r}") from None

    def arch_at(self, i: int) -> Architecture:
        return self.architectures[i]

    @cached_property
    def arch_array(self) -> np.ndarray:
        """(|S|, n_nodes) integer matrix of all architectures."""
        return np.asarray(self.architectures, dtype=np.int64).reshape(-1, self.n_nodes)

    def cost(self, arch: Sequence[int]) -> float:
        if self.cost_model is None:
            raise NoCostModel(f"space {self.name!r} has no cost model")
        return float(self.cost_model(arch))

    def to_dict(self) -> dict:
        d: dict = {"name": self.name, "nodes": [list(n) for n in self.nodes]}
        if self.constraint is not None:
            if not isinstance(self.constraint, ExactCount):
                raise SchemaError("only exact_count constraints are serialisable")
            d["constraint"] = self.constraint.to_dict()
        if self.cost_model is not None and hasattr(self.cost_model, "to_dict"):
            d["cost_model"] = self.cost_model.to_dict()
        return d


def _exact_count_cardinality(nodes, c: ExactCount) -> int:
    # polynomial DP over the number of nodes using c.op so far
    ways = [1] + [0] * len(nodes)
    for ops in nodes:
        has = 1 if c.op in ops else 0
        other = len(ops) - has
        new = [0] * len(ways)
        for k, w in enumerate(ways):
            if not w:
                continue
            new[k] += w * other
            if has and k + 1 < len(new):
                new[k + 1] += w
        ways = new
    return ways[c.count] if 0 <= c.count < len(ways) else 0


def to_digits(arch: Sequence[int]) -> str:
    """Digit-string form, e.g. (2, 2, 2, 1, 2, 2, 2, 0) -> '22212220'."""
    if any(not (0 <= o <= 9) for o in arch):
        raise InvalidArch("digit strings need operation indices below 10")
    return "".join(str(int(o)) for o in arch)


def from_digits(s: str) -> Architecture:
    s = s.strip().strip("[]")
    if not s.isdigit():
        raise InvalidArch(f"not a digit string: {s!r}")
    return tuple(int(c) for c in s)


# ---------------------------------------------------------------- builtins

POOL, IDENTITY = "pool", "id"


def pooling_space() -> SearchSpace:
    """ResNet20-like space: 9 gaps between 10 layers, pooling at exactly 2 of them."""
    return SearchSpace(
        nodes=tuple((IDENTITY, POOL) for _ in range(9)),
        constraint=ExactCount(POOL, 2),
        name="pooling",
    )


BENCH_MACRO_OPS = ("Identity", "MB3_K3", "MB6_K5")

# Illustrative per-layer MFLOPs for each op; Identity is free.
_BENCH_MACRO_FLOPS = tuple((0.0, 4.0 + 0.5 * i, 12.0 + 1.5 * i) for i in range(8))


def bench_macro_space() -> SearchSpace:
    return SearchSpace(
        nodes=tuple(BENCH_MACRO_OPS for _ in range(8)),
        cost_model=AdditiveCost(_BENCH_MACRO_FLOPS, base=20.0),
        name="bench_macro",
    )


BUILTIN_SPACES = {"pooling": pooling_space, "bench_macro": bench_macro_space}


def space_from_dict(d: Mapping) -> SearchSpace:
    try:
        nodes = d["nodes"]
    except (KeyError, TypeError):
        raise SchemaError("space document needs a 'nodes' list") from None
    constraint = None
    if d.get("constraint"):
        c = d["constraint"]
        if c.get("kind") != "exact_count":
            raise SchemaError(f"unsupported constraint kind {c.get('kind')!r}")
        constraint = ExactCount(str(c["op"]), int(c["count"]))
    cost = None
    if d.get("cost_model"):
        cm = d["cost_model"]
        kind = cm.get("kind")
        if kind == "additive":
            cost = AdditiveCost(tuple(tuple(float(x) for x in r) for r in cm["per_op"]), float(cm.get("base", 0.0)))
        elif kind == "table":
            cost = TableCost({str(k): float(v) for k, v in cm["flops"].items()})
        else:
            raise SchemaError(f"unsupported cost model kind {kind!r}")
    return SearchSpace(nodes=tuple(tuple(n) for n in nodes), constraint=constraint,
                       cost_model=cost, name=str(d.get("name", "custom")))


def load_space(ref: str | Path) -> SearchSpace:
    """Builtin name ('pooling', 'bench_macro') or path to a space JSON file."""
    if str(ref) in BUILTIN_SPACES:
        return BUILTIN_SPACES[str(ref)]()
    path = Path(ref)
    with open(path) as f:
        doc = json.load(f)
    if isinstance(doc, dict) and "builtin" in doc:
        return BUILTIN_SPACES[doc["builtin"]]()
    return space_from_dict(doc)


# ---------------------------------------------------------------- operations

def enumerate_space(space: SearchSpace) -> list[Architecture]:
    return list(space.architectures)


def pooling_repr(arch: Sequence[int], pool_op: int = 1) -> list[int]:
    """Layers per resolution [high, mid, low] for a 9-gap pooling architecture."""
    if len(arch) != 9:
        raise InvalidArch(f"pooling architectures have 9 gaps, got {len(arch)}")
    gaps = [g + 1 for g, o in enumerate(arch) if o == pool_op]
    if len(gaps) != 2 or any(o not in (0, 1) for o in arch):
        raise InvalidArch(f"{tuple(arch)} does not pool at exactly 2 gaps")
    first, second = gaps
    return [first, second - first, 10 - second]


def from_pooling_repr(hml: Sequence[int], pool_op: int = 1) -> Architecture:
    h, m, l = (int(x) for x in hml)
    if min(h, m, l) < 1 or h + m + l != 10:
        raise InvalidArch(f"{list(hml)} is not a valid [h,m,l] layer split")
    arch = [1 - pool_op] * 9
    arch[h - 1] = pool_op
    arch[h + m - 1] = pool_op
    return tuple(arch)


def encode(arch: Sequence[int], space: SearchSpace, kind: str = "one_hot",
           weighted: bool = False, base: float = 2.0) -> np.ndarray:
    """Zero-cost encoding; with ``weighted`` node l is scaled by base**-l."""
    arch = space.validate(arch)
    w = base ** -np.arange(space.n_nodes, dtype=float) if weighted else np.ones(space.n_nodes)
    if kind == "vector":
        return np.asarray(arch, dtype=float) * w
    if kind == "one_hot":
        blocks = []
        for i, (o, k) in enumerate(zip(arch, space.arities)):
            b = np.zeros(k)
            b[o] = w[i]
            blocks.append(b)
        return np.concatenate(blocks)
    raise ValueError(f"unknown encoding kind {kind!r}")


def encode_all(space: SearchSpace, kind: str = "one_hot", weighted: bool = False,
               base: float = 2.0) -> np.ndarray:
    """Encodings of every enumerated architecture, stacked row-wise."""
    A = space.arch_array
    w = base ** -np.arange(space.n_nodes, dtype=float) if weighted else np.ones(space.n_nodes)
    if kind == "vector":
        return A * w
    if kind == "one_hot":
        offsets = np.concatenate([[0], np.cumsum(space.arities)[:-1]])
        out = np.zeros((len(A), sum(space.arities)))
        rows = np.arange(len(A))[:, None]
        out[rows, A + offsets] = w
        return out
    raise ValueError(f"unknown encoding kind {kind!r}")


def within_budget(arch: Sequence[int], space: SearchSpace, budget: float,
                  lower_frac: float = 0.99) -> bool:
    if not (0 < lower_frac <= 1):
        raise ValueError("lower_frac must lie in (0, 1]")
    c = space.cost(arch)
    return lower_frac * budget <= c <= budget
