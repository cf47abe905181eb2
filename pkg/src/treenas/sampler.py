"""Architecture sampling strategies.

Flat strategies (uniform, independent-node, joint Boltzmann) and tree search
over a pre-expanded ``SearchTree``. Every sampler returns canonical
architecture indices and learns from scalar rewards in [0, 1] through
``update``; smoothed rewards follow C <- beta*C + (1-beta)*reward.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import log_softmax

from .errors import BudgetExhausted, InvalidConfig
from .hierarchy import SearchTree, export_tree, parse_tree
from .space import SearchSpace, within_budget

REJECTION_CAP = 10**4


@dataclass(frozen=True)
class TemperatureSchedule:
    kind: str = "linear"
    start: float = 0.02
    end: float = 0.0025
    horizon: int = 1

    def __post_init__(self):
        if self.kind not in ("constant", "linear"):
            raise InvalidConfig(f"unknown temperature schedule {self.kind!r}")
        if self.start <= 0 or self.end <= 0:
            raise InvalidConfig("temperatures must be positive")

    def __call__(self, step: int) -> float:
        if self.kind == "constant":
            return self.start
        if self.horizon <= 1:
            return self.end if step > 0 else self.start
        frac = min(1.0, max(0.0, step / (self.horizon - 1)))
        return self.start + frac * (self.end - self.start)


def softmax(x: np.ndarray, T: float) -> np.ndarray:
    z = (np.asarray(x, dtype=float) - np.max(x)) / T
    e = np.exp(z)
    return e / e.sum()


def _draw(p: Sequence[float], u: float) -> int:
    acc = 0.0
    for i, pi in enumerate(p):
        acc += pi
        if u < acc:
            return i
    return len(p) - 1


def _child_probs(children, visits, C, n_parent, T, lam) -> list[float]:
    k = len(children)
    if lam > 0:
        unvisited = [i for i, c in enumerate(children) if visits[c] == 0]
        if unvisited:
            w = 1.0 / len(unvisited)
            p = [0.0] * k
            for i in unvisited:
                p[i] = w
            return p
        bonus = math.log(n_parent) if n_parent > 1 else 0.0
        R = [C[c] + lam * math.sqrt(bonus / visits[c]) for c in children]
    else:
        R = [C[c] for c in children]
    m = max(R)
    e = [math.exp((r - m) / T) for r in R]
    s = sum(e)
    return [x / s for x in e]


def node_probabilities(tree: SearchTree, node: int, T: float, lam: float) -> np.ndarray:
    """Boltzmann distribution over ``node``'s children using their UCT scores.

    R(c) = C(c) + lam * sqrt(ln n(node) / n(c)); with lam > 0 unvisited
    children share all of the mass uniformly until each has been tried.
    """
    ch = tree.children[node]
    if not ch:
        raise ValueError(f"node {node} is a leaf")
    if T <= 0:
        raise ValueError("temperature must be positive")
    return np.asarray(_child_probs(ch, tree.visits, tree.C, tree.visits[node], T, lam))


def uct_score(C: float, n: int, n_parent: int, lam: float) -> float:
    if n == 0:
        return math.inf
    return C + lam * math.sqrt(math.log(n_parent) / n) if n_parent > 0 else C


# ---------------------------------------------------------------- samplers

class Sampler:
    kind = "base"

    def draw(self, rng: np.random.Generator, T: float) -> int | None:
        """One proposal; None means the proposal violated a space constraint."""
        raise NotImplementedError

    def draw_final(self, rng: np.random.Generator, T: float) -> int | None:
        return self.draw(rng, T)

    def greedy(self, rng: np.random.Generator) -> int:
        raise NotImplementedError

    def update(self, idx: int, reward: float):
        pass

    def state_dict(self) -> dict:
        return {"kind": self.kind}


class UniformSampler(Sampler):
    kind = "uniform"

    def __init__(self, n: int):
        self.n = int(n)

    def draw(self, rng, T):
        return int(rng.integers(self.n))

    def greedy(self, rng):
        return self.draw(rng, 1.0)

    def probabilities(self, T: float = 1.0) -> np.ndarray:
        return np.full(self.n, 1.0 / self.n)

    def state_dict(self):
        return {"kind": self.kind, "n": self.n}


class IndependentSampler(Sampler):
    """p(a) = prod_i softmax(eps_i / T)[a_i]; one EMA table per node."""

    kind = "independent"

    def __init__(self, space: SearchSpace, beta: float = 0.95, eps_init: float = 0.5):
        self.space = space
        self.beta = float(beta)
        self.eps = [np.full(k, float(eps_init)) for k in space.arities]

    def marginals(self, T: float) -> list[np.ndarray]:
        return [softmax(e, T) for e in self.eps]

    def probabilities(self, T: float) -> np.ndarray:
        """Product of marginals, renormalised over the valid architectures."""
        A = self.space.arch_array
        logp = sum(log_softmax(e / T)[A[:, i]] for i, e in enumerate(self.eps))
        return softmax(logp, 1.0)

    def draw(self, rng, T):
        if self.space.constraint is not None:
            # conditioning on validity; rejection would stall once marginals sharpen
            p = self.probabilities(T)
            i = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
            return min(i, len(p) - 1)
        arch = tuple(_draw(p, rng.random()) for p in self.marginals(T))
        return self.space.index_of(arch)

    def greedy(self, rng):
        A = self.space.arch_array
        score = sum(self.eps[i][A[:, i]] for i in range(self.space.n_nodes))
        return int(np.argmax(score))

    def update(self, idx, reward):
        arch = self.space.arch_at(idx)
        b = self.beta
        for i, o in enumerate(arch):
            self.eps[i][o] = b * self.eps[i][o] + (1 - b) * reward

    def state_dict(self):
        return {"kind": self.kind, "beta": self.beta, "eps": [e.tolist() for e in self.eps]}


class BoltzmannSampler(Sampler):
    """Joint distribution p(a) proportional to exp(eps_a / T) over every architecture."""

    kind = "boltzmann"

    def __init__(self, n: int, beta: float = 0.95, eps_init: float = 0.5):
        self.beta = float(beta)
        self.eps = np.full(int(n), float(eps_init))

    def probabilities(self, T: float) -> np.ndarray:
        return softmax(self.eps, T)

    def draw(self, rng, T):
        p = self.probabilities(T)
        i = int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))
        return min(i, len(p) - 1)

    def greedy(self, rng):
        return int(np.argmax(self.eps))

    def update(self, idx, reward):
        self.eps[idx] = self.beta * self.eps[idx] + (1 - self.beta) * reward

    def state_dict(self):
        return {"kind": self.kind, "beta": self.beta, "eps": self.eps.tolist()}


class MctsSampler(Sampler):
    """Root-to-leaf Boltzmann walk with UCT scores over a pre-expanded tree.

    Before ``warmup_until`` completed updates, children are drawn uniformly
    (statistics still accumulate). With ``regularize`` on a layer-order tree,
    every node sharing a (level, op) tag with an updated node also gets an
    EMA update with ``beta_reg``, without a visit increment.
    """

    kind = "mcts"

    def __init__(self, tree: SearchTree, lam: float = 0.5, beta: float = 0.95,
                 regularize: bool = False, beta_reg: float = 0.99, warmup_until: int = 0):
        if regularize and not tree.equivalence_groups():
            raise InvalidConfig("regularization needs a tree with (level, op) tags")
        self.tree = tree
        self.lam = float(lam)
        self.beta = float(beta)
        self.regularize = bool(regularize)
        self.beta_reg = float(beta_reg)
        self.warmup_until = int(warmup_until)
        self.steps = 0

    @property
    def in_warmup(self) -> bool:
        return self.steps < self.warmup_until

    def _walk(self, rng, T, lam, uniform):
        t = self.tree
        children, visits, C = t.children, t.visits, t.C
        v = t.root
        while children[v]:
            ch = children[v]
            if uniform:
                v = ch[int(rng.random() * len(ch))]
            else:
                p = _child_probs(ch, visits, C, visits[v], T, lam)
                v = ch[_draw(p, rng.random())]
        return t.leaf_arch[v]

    def draw(self, rng, T):
        return self._walk(rng, T, self.lam, self.in_warmup)

    def draw_final(self, rng, T):
        return self._walk(rng, T, 0.0, False)

    def greedy(self, rng=None):
        t = self.tree
        v = t.root
        while t.children[v]:
            ch = t.children[v]
            v = ch[int(np.argmax([t.C[c] for c in ch]))]
        return t.leaf_arch[v]

    def leaf_probabilities(self, T: float, lam: float | None = None) -> np.ndarray:
        """Exact leaf distribution of one walk (product of conditionals)."""
        lam = self.lam if lam is None else lam
        t = self.tree
        out = np.zeros(t.n_leaves)
        stack = [(t.root, 1.0)]
        while stack:
            v, pv = stack.pop()
            ch = t.children[v]
            if not ch:
                out[t.leaf_arch[v]] += pv
                continue
            if self.in_warmup:
                p = [1.0 / len(ch)] * len(ch)
            else:
                p = _child_probs(ch, t.visits, t.C, t.visits[v], T, lam)
            stack.extend((c, pv * pc) for c, pc in zip(ch, p))
        return out

    def update(self, idx, reward):
        t = self.tree
        path = t.path(idx)
        b = self.beta
        for v in path:
            t.visits[v] += 1
            t.C[v] = b * t.C[v] + (1 - b) * reward
        for v in path[:-1]:
            t.R[v] = uct_score(t.C[v], t.visits[v], t.visits[t.parent[v]], self.lam)
        if self.regularize:
            groups = t.equivalence_groups()
            br = self.beta_reg
            for v in path[:-1]:
                g = groups[t.tag[v]]
                g = g[g != v]
                t.C[g] = br * t.C[g] + (1 - br) * reward
        self.steps += 1

    def state_dict(self):
        return {"kind": self.kind, "lam": self.lam, "beta": self.beta,
                "regularize": self.regularize, "beta_reg": self.beta_reg,
                "warmup_until": self.warmup_until, "steps": self.steps,
                "tree": export_tree(self.tree), "tree_kind": self.tree.kind,
                "tags": [self.tree.tag[v] for v in self.tree.preorder()],
                "stats": self.tree.stats_dict()}


def sampler_from_state(doc: dict, space: SearchSpace | None = None) -> Sampler:
    kind = doc["kind"]
    if kind == "uniform":
        return UniformSampler(doc["n"])
    if kind == "boltzmann":
        s = BoltzmannSampler(len(doc["eps"]), doc["beta"])
        s.eps = np.asarray(doc["eps"], dtype=float)
        return s
    if kind == "independent":
        if space is None:
            raise InvalidConfig("restoring an independent sampler needs its space")
        s = IndependentSampler(space, doc["beta"])
        s.eps = [np.asarray(e, dtype=float) for e in doc["eps"]]
        return s
    if kind == "mcts":
        tree = parse_tree(doc["tree"])
        tree.kind = doc.get("tree_kind", "parsed")
        tree.load_stats(doc["stats"])
        for v, tag in zip(tree.preorder(), doc.get("tags", [])):
            tree.tag[v] = None if tag is None else tuple(tag)
        s = MctsSampler(tree, doc["lam"], doc["beta"], doc["regularize"], doc["beta_reg"],
                        doc["warmup_until"])
        s.steps = doc["steps"]
        return s
    raise InvalidConfig(f"unknown sampler kind {kind!r}")


# ---------------------------------------------------------------- operations

def sample(sampler: Sampler, space: SearchSpace, T: float, rng: np.random.Generator,
           budget: float | None = None, lower_frac: float = 0.99, final: bool = False,
           cap: int = REJECTION_CAP) -> tuple[int, int]:
    """Draw one architecture, rejection-resampling outside the FLOPs budget.

    Returns (canonical index, rejected proposals).
    """
    for attempt in range(cap):
        idx = sampler.draw_final(rng, T) if final else sampler.draw(rng, T)
        if idx is None:
            continue
        if budget is not None and not within_budget(space.arch_at(idx), space, budget, lower_frac):
            continue
        return idx, attempt
    raise BudgetExhausted(f"no admissible architecture in {cap} proposals")


def select_final(sampler: Sampler, evaluator, k: int, rng: np.random.Generator,
                 T: float, t: float = 1.0, budget: float | None = None,
                 lower_frac: float = 0.99) -> list[tuple[int, float]]:
    """Sample k architectures without exploration, rank them on validation accuracy.

    k == 1 takes the greedy (maximum-probability) path instead of sampling.
    """
    if k < 1:
        raise InvalidConfig("k must be at least 1")
    space = evaluator.space
    if k == 1:
        idx = sampler.greedy(rng)
        if budget is not None and not within_budget(space.arch_at(idx), space, budget, lower_frac):
            idx, _ = sample(sampler, space, T, rng, budget, lower_frac, final=True)
        cands = [idx]
    else:
        seen: dict[int, None] = {}
        for _ in range(k):
            idx, _ = sample(sampler, space, T, rng, budget, lower_frac, final=True)
            seen.setdefault(idx, None)
        cands = list(seen)
    scored = [(i, evaluator.validate(i, t, rng)) for i in cands]
    scored.sort(key=lambda x: (-x[1], x[0]))
    return scored

