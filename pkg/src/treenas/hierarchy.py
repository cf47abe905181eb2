"""Search trees over architectures and the ways of building them.

A ``SearchTree`` is fully pre-expanded: each leaf holds exactly one
architecture (canonical index) and each internal node the union of its
children's leaves. Node statistics (visits, smoothed reward C, UCT score R)
live in flat numpy arrays indexed by node id so samplers can update them
in bulk.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .distance import DistanceMatrix, random_matrix
from .errors import ConstraintUnsupported, DegenerateMatrix, ForeignArchitecture
from .space import SearchSpace

LINKAGES = ("average", "ward", "single", "complete")
C_INIT = 0.5


class SearchTree:
    def __init__(self, parent: Sequence[int], children: Sequence[Sequence[int]],
                 leaf_arch: Sequence[int], height: Sequence[float | None] | None = None,
                 tag: Sequence[tuple[int, int] | None] | None = None, kind: str = "custom",
                 c_init: float = C_INIT):
        self.parent = list(parent)
        self.children = [list(c) for c in children]
        self.leaf_arch = list(leaf_arch)
        n = len(self.parent)
        self.height = list(height) if height is not None else [None] * n
        self.tag = list(tag) if tag is not None else [None] * n
        self.kind = kind
        roots = [i for i, p in enumerate(self.parent) if p < 0]
        if len(roots) != 1:
            raise ValueError(f"a tree needs exactly one root, found {len(roots)}")
        self.root = roots[0]
        self.arch_leaf = {a: i for i, a in enumerate(self.leaf_arch) if a >= 0}
        self.c_init = c_init
        self.reset_stats(c_init)
        self._groups = None

    # ------------------------------------------------------------ structure
    def __len__(self) -> int:
        return len(self.parent)

    @property
    def n_leaves(self) -> int:
        return len(self.arch_leaf)

    def is_leaf(self, node: int) -> bool:
        return not self.children[node]

    def preorder(self) -> list[int]:
        out, stack = [], [self.root]
        while stack:
            v = stack.pop()
            out.append(v)
            stack.extend(reversed(self.children[v]))
        return out

    def leaves_under(self, node: int) -> list[int]:
        """Architecture indices below ``node`` in left-to-right order."""
        out, stack = [], [node]
        while stack:
            v = stack.pop()
            if self.children[v]:
                stack.extend(reversed(self.children[v]))
            else:
                out.append(self.leaf_arch[v])
        return out

    def depth(self) -> int:
        d = {self.root: 0}
        best = 0
        for v in self.preorder():
            for c in self.children[v]:
                d[c] = d[v] + 1
                best = max(best, d[c])
        return best

    def path(self, arch: int) -> list[int]:
        """Node ids from the leaf holding ``arch`` up to the root."""
        try:
            v = self.arch_leaf[int(arch)]
        except KeyError:
            raise ForeignArchitecture(f"architecture {arch} has no leaf in this tree") from None
        out = [v]
        while self.parent[v] >= 0:
            v = self.parent[v]
            out.append(v)
        return out

    def equivalence_groups(self) -> dict[tuple[int, int], np.ndarray]:
        """Node ids sharing each (level, op) tag (default trees only)."""
        if self._groups is None:
            groups: dict[tuple[int, int], list[int]] = {}
            for v, t in enumerate(self.tag):
                if t is not None:
                    groups.setdefault(t, []).append(v)
            self._groups = {k: np.asarray(v) for k, v in groups.items()}
        return self._groups

    def validate(self, n_arch: int | None = None) -> "SearchTree":
        """Check the bijection and partition invariants; raises AssertionError."""
        leaves = self.leaves_under(self.root)
        assert len(leaves) == len(set(leaves)), "an architecture appears on two leaves"
        if n_arch is not None:
            assert sorted(leaves) == list(range(n_arch)), "leaves do not cover the space"
        for v in range(len(self)):
            ch = self.children[v]
            if ch:
                assert len(ch) >= 2, f"internal node {v} has a single child"
                assert all(self.parent[c] == v for c in ch)
            else:
                assert self.leaf_arch[v] >= 0, f"leaf {v} holds no architecture"
        for v in range(len(self)):
            ch = self.children[v]
            if ch:
                kids = [set(self.leaves_under(c)) for c in ch]
                union = set().union(*kids)
                assert sum(map(len, kids)) == len(union), "sibling leaf sets overlap"
                assert union == set(self.leaves_under(v))
            assert self.visits[v] >= sum(self.visits[c] for c in ch)
        return self

    # ------------------------------------------------------------ stats
    def reset_stats(self, c_init: float = C_INIT):
        n = len(self.parent)
        self.visits = np.zeros(n, dtype=np.int64)
        self.C = np.full(n, float(c_init))
        self.R = np.full(n, math.inf)

    def clone(self) -> "SearchTree":
        t = SearchTree.__new__(SearchTree)
        t.__dict__.update(self.__dict__)
        t.visits = self.visits.copy()
        t.C = self.C.copy()
        t.R = self.R.copy()
        return t

    def stats_dict(self) -> dict:
        order = self.preorder()
        R = [None if math.isinf(self.R[v]) else float(self.R[v]) for v in order]
        return {"order": "preorder", "n": [int(self.visits[v]) for v in order],
                "C": [float(self.C[v]) for v in order], "R": R}

    def load_stats(self, doc: dict):
        order = self.preorder()
        if len(doc["n"]) != len(order):
            raise ValueError("stats sidecar does not match the tree size")
        for k, v in enumerate(order):
            self.visits[v] = doc["n"][k]
            self.C[v] = doc["C"][k]
            r = doc["R"][k]
            self.R[v] = math.inf if r is None else r

    # ------------------------------------------------------------ equality
    def canonical(self, node: int | None = None):
        """Nested-tuple structure (leaf = arch index) for structural comparison."""
        node = self.root if node is None else node
        memo: dict[int, object] = {}
        for v in reversed(self.preorder()):
            if self.children[v]:
                memo[v] = tuple(memo[c] for c in self.children[v])
            else:
                memo[v] = self.leaf_arch[v]
        return memo[node]


# ---------------------------------------------------------------- clustering

@dataclass(frozen=True)
class Merge:
    a: int  # smaller cluster id
    b: int
    height: float
    size: int


def _lw_update(method: str, dka, dkb, dab, na, nb, nk):
    """Lance-Williams distance from every cluster k to the merge of a and b."""
    if method == "single":
        return np.minimum(dka, dkb)
    if method == "complete":
        return np.maximum(dka, dkb)
    if method == "average":
        return (na * dka + nb * dkb) / (na + nb)
    if method == "ward":
        tot = na + nb + nk
        d2 = ((na + nk) * dka**2 + (nb + nk) * dkb**2 - nk * dab**2) / tot
        return np.sqrt(np.maximum(d2, 0.0))
    raise ValueError(f"unknown linkage {method!r}")


def linkage_merges(D: DistanceMatrix | np.ndarray, method: str = "average") -> list[Merge]:
    """Greedy agglomerative clustering, merging the globally closest pair each step.

    Clusters carry ids: 0..n-1 for singletons, n+k for the cluster formed at
    merge k. Among equally close pairs the lexicographically smallest
    (min id, max id) pair merges first. A per-row nearest-neighbour cache
    keeps each step O(n) for the usual case.
    """
    if method not in LINKAGES:
        raise ValueError(f"unknown linkage {method!r}")
    vals = D.values if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=float)
    DistanceMatrix(vals).validate()
    n = vals.shape[0]
    if n < 2:
        raise DegenerateMatrix("clustering needs at least two architectures")
    W = np.array(vals, dtype=float, copy=True)
    np.fill_diagonal(W, np.inf)
    ids = np.arange(n, dtype=np.int64)
    size = np.ones(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)

    nn_val = np.empty(n)
    nn_idx = np.empty(n, dtype=np.int64)

    def refresh(k: int):
        row = W[k]
        m = row.min()
        cand = np.flatnonzero(row == m)
        nn_idx[k] = cand[np.argmin(ids[cand])] if len(cand) > 1 else cand[0]
        nn_val[k] = m

    for k in range(n):
        refresh(k)

    merges: list[Merge] = []
    for step in range(n - 1):
        m = nn_val.min()
        rows = np.flatnonzero(nn_val == m)
        i, j = _tie_break(W, ids, rows, m)
        ia, ib = (i, j) if ids[i] < ids[j] else (j, i)
        merges.append(Merge(int(ids[ia]), int(ids[ib]), float(m), int(size[i] + size[j])))
        keep, drop = min(i, j), max(i, j)
        new = _lw_update(method, W[:, keep], W[:, drop], W[keep, drop],
                         size[keep], size[drop], size)
        new[~active] = np.inf
        new[keep] = np.inf
        new[drop] = np.inf
        W[keep, :] = new
        W[:, keep] = new
        W[drop, :] = np.inf
        W[:, drop] = np.inf
        active[drop] = False
        nn_val[drop] = np.inf
        size[keep] += size[drop]
        ids[keep] = n + step
        if step == n - 2:
            break
        stale = np.flatnonzero(active & ((nn_idx == keep) | (nn_idx == drop)))
        for k in stale:
            refresh(int(k))
        refresh(keep)
        better = active & (new < nn_val)
        better[keep] = False
        nn_val[better] = new[better]
        nn_idx[better] = keep
    return merges


def _tie_break(W, ids, rows, m):
    best = None
    for i in rows:
        for j in np.flatnonzero(W[i] == m):
            key = (min(ids[i], ids[j]), max(ids[i], ids[j]))
            if best is None or key < best[0]:
                best = (key, int(i), int(j))
    return best[1], best[2]


def tree_from_merges(merges: Sequence[Merge], n: int, kind: str = "learned") -> SearchTree:
    """Leaves 0..n-1 hold architectures 0..n-1; merge k creates node n+k."""
    total = 2 * n - 1
    parent = [-1] * total
    children: list[list[int]] = [[] for _ in range(total)]
    height: list[float | None] = [None] * total
    for k, mg in enumerate(merges):
        v = n + k
        children[v] = [mg.a, mg.b]
        parent[mg.a] = v
        parent[mg.b] = v
        height[v] = mg.height
    leaf_arch = list(range(n)) + [-1] * (n - 1)
    return SearchTree(parent, children, leaf_arch, height, kind=kind)


def agglomerative(D: DistanceMatrix | np.ndarray, linkage: str = "average") -> SearchTree:
    vals = D.values if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=float)
    merges = linkage_merges(vals, linkage)
    t = tree_from_merges(merges, vals.shape[0], kind=f"agglomerative_{linkage}")
    t.merges = merges
    return t


# ---------------------------------------------------------------- other trees

def default_tree(space: SearchSpace) -> SearchTree:
    """Level t branches on node t's operations in label order."""
    if space.constraint is not None:
        raise ConstraintUnsupported("the layer-order tree needs an unconstrained product space")
    parent, children, leaf_arch, tag = [-1], [[]], [-1], [None]
    frontier = [(0, ())]
    for level, k in enumerate(space.arities):
        nxt = []
        for node, prefix in frontier:
            for o in range(k):
                v = len(parent)
                parent.append(node)
                children.append([])
                leaf_arch.append(-1)
                tag.append((level + 1, o))
                children[node].append(v)
                nxt.append((v, prefix + (o,)))
        frontier = nxt
    for v, prefix in frontier:
        leaf_arch[v] = space.index_of(prefix)
    return SearchTree(parent, children, leaf_arch, tag=tag, kind="default")


def random_tree(space_or_n: SearchSpace | int, seed: int = 0, linkage: str = "average") -> SearchTree:
    n = space_or_n if isinstance(space_or_n, int) else space_or_n.cardinality
    t = agglomerative(random_matrix(n, seed), linkage)
    t.kind = "random"
    return t


def accuracy_partition_tree(source) -> SearchTree:
    """Recursive good/bad halving: top ceil(k/2) by accuracy form the first child.

    ``source`` is an evaluator (its noise-free ground-truth quality is used)
    or a plain accuracy array in canonical order.
    """
    acc = np.asarray(getattr(source, "quality", source), dtype=float)
    n = len(acc)
    # stable descending order, lower index first on ties
    order = list(np.lexsort((np.arange(n), -acc)))
    parent, children, leaf_arch = [-1], [[]], [-1]
    stack = [(0, order)]
    while stack:
        node, members = stack.pop()
        if len(members) == 1:
            leaf_arch[node] = int(members[0])
            continue
        half = (len(members) + 1) // 2
        for part in (members[:half], members[half:]):
            v = len(parent)
            parent.append(node)
            children.append([])
            leaf_arch.append(-1)
            children[node].append(v)
            stack.append((v, part))
    return SearchTree(parent, children, leaf_arch, kind="accuracy_partition")


# ---------------------------------------------------------------- newick

def _fmt_height(h) -> str:
    return "" if h is None else repr(float(h))


def export_tree(tree: SearchTree) -> str:
    """Newick string; leaves are architecture indices, internal labels are merge heights."""
    parts: list[str] = []
    stack: list[tuple[int, int]] = [(tree.root, 0)]
    while stack:
        v, state = stack.pop()
        ch = tree.children[v]
        if not ch:
            parts.append(str(tree.leaf_arch[v]))
            continue
        if state == 0:
            parts.append("(")
        if state < len(ch):
            if state > 0:
                parts.append(",")
            stack.append((v, state + 1))
            stack.append((ch[state], 0))
        else:
            parts.append(")" + _fmt_height(tree.height[v]))
    return "".join(parts) + ";"


def parse_tree(text: str) -> SearchTree:
    s = text.strip()
    if not s.endswith(";"):
        raise ValueError("newick string must end with ';'")
    s = s[:-1]
    parent: list[int] = []
    children: list[list[int]] = []
    leaf_arch: list[int] = []
    height: list[float | None] = []

    def new(p: int) -> int:
        parent.append(p)
        children.append([])
        leaf_arch.append(-1)
        height.append(None)
        if p >= 0:
            children[p].append(len(parent) - 1)
        return len(parent) - 1

    stack: list[int] = []
    i, L = 0, len(s)
    last: int | None = None

    def read_label(i):
        j = i
        while j < L and s[j] not in "(),;":
            j += 1
        return s[i:j].strip(), j

    while i < L:
        c = s[i]
        if c == "(":
            v = new(stack[-1] if stack else -1)
            stack.append(v)
            i += 1
        elif c == ",":
            i += 1
        elif c == ")":
            v = stack.pop()
            lab, i = read_label(i + 1)
            if lab:
                height[v] = float(lab)
            last = v
        else:
            lab, i = read_label(i)
            if not lab:
                raise ValueError(f"unexpected character {c!r} in newick string")
            v = new(stack[-1] if stack else -1)
            leaf_arch[v] = int(lab)
            last = v
    if stack:
        raise ValueError("unbalanced parentheses in newick string")
    if last is None:
        raise ValueError("empty newick string")
    return SearchTree(parent, children, leaf_arch, height, kind="parsed")


def save_tree(tree: SearchTree, path: str | Path, stats: bool = True):
    path = Path(path)
    path.write_text(export_tree(tree) + "\n")
    if stats:
        with open(path.with_suffix(path.suffix + ".stats.json"), "w") as f:
            json.dump(tree.stats_dict(), f)


def load_tree(path: str | Path) -> SearchTree:
    path = Path(path)
    t = parse_tree(path.read_text())
    side = path.with_suffix(path.suffix + ".stats.json")
    if side.exists():
        with open(side) as f:
            t.load_stats(json.load(f))
    return t
