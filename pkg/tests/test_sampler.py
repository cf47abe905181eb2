import math

import numpy as np
import pytest

from oracles import boltzmann_ref, independent_ref, softmax_ref, tree_leaf_ref
from treenas.errors import BudgetExhausted, ForeignArchitecture, InvalidConfig
from treenas.evalsrc import TabularEvaluator, load_benchmark
from treenas.hierarchy import SearchTree, accuracy_partition_tree, default_tree, random_tree
from treenas.sampler import (BoltzmannSampler, IndependentSampler, MctsSampler, TemperatureSchedule,
                             UniformSampler, node_probabilities, sample, sampler_from_state,
                             select_final, softmax, uct_score)
from treenas.space import (SearchSpace, TableCost, bench_macro_space, from_digits, pooling_space,
                           to_digits)


def freqs(sampler, n, T, draws=10**5, seed=0, final=False):
    rng = np.random.default_rng(seed)
    f = sampler.draw_final if final else sampler.draw
    counts = np.bincount([f(rng, T) for _ in range(draws)], minlength=n)
    return counts / draws


def two_child_tree(C, visits=(0, 0, 0)):
    t = SearchTree([-1, 0, 0], [[1, 2], [], []], [-1, 0, 1])
    t.C[1], t.C[2] = C
    t.visits[:] = visits
    return t


def balanced_tree(depth):
    n = 2**depth
    parent, children, leaf = [-1], [[]], [-1]
    frontier = [0]
    for _ in range(depth):
        nxt = []
        for v in frontier:
            for _ in range(2):
                parent.append(v)
                children.append([])
                leaf.append(-1)
                children[v].append(len(parent) - 1)
                nxt.append(len(parent) - 1)
        frontier = nxt
    for i, v in enumerate(frontier):
        leaf[v] = i
    return SearchTree(parent, children, leaf).validate(n)


# ---------------------------------------------------------------- node scores

def test_node_probabilities_symmetric():
    t = two_child_tree((0.6, 0.6), (10, 5, 5))
    for T in (0.01, 1.0, 7.0):
        assert np.allclose(node_probabilities(t, 0, T, 0.5), [0.5, 0.5])


def test_node_probabilities_softmax_example():
    t = two_child_tree((0.9, 0.8), (10, 5, 5))
    p = node_probabilities(t, 0, 0.1, 0.0)
    e = math.exp(-1)
    assert p == pytest.approx([1 / (1 + e), e / (1 + e)], abs=1e-12)
    assert p == pytest.approx([0.7311, 0.2689], abs=1e-4)


def test_uct_value():
    assert uct_score(0.9, 10, 20, 0.5) == pytest.approx(1.1737, abs=1e-4)
    assert uct_score(0.9, 0, 20, 0.5) == math.inf


def test_unvisited_children_preempt():
    t = SearchTree([-1, 0, 0, 0], [[1, 2, 3], [], [], []], [-1, 0, 1, 2])
    t.visits[:] = [4, 4, 0, 0]
    t.C[1] = 1.0
    assert np.allclose(node_probabilities(t, 0, 0.01, 0.5), [0, 0.5, 0.5])
    # without exploration the sentinel is off
    assert node_probabilities(t, 0, 0.01, 0.0)[0] > 0.99


def test_node_probabilities_uses_bonus():
    t = two_child_tree((0.5, 0.5), (20, 10, 2))
    p = node_probabilities(t, 0, 0.5, 0.5)
    R = [0.5 + 0.5 * math.sqrt(math.log(20) / 10), 0.5 + 0.5 * math.sqrt(math.log(20) / 2)]
    assert p == pytest.approx(softmax_ref(R, 0.5), abs=1e-12)


def test_node_probabilities_rejects_leaf_and_bad_T():
    t = two_child_tree((0.5, 0.5))
    with pytest.raises(ValueError):
        node_probabilities(t, 1, 1.0, 0.0)
    with pytest.raises(ValueError):
        node_probabilities(t, 0, 0.0, 0.0)


def test_softmax_shift_and_overflow():
    x = np.array([1000.0, 999.0, 0.0])
    assert np.allclose(softmax(x, 0.01), softmax(x - 1000, 0.01))
    assert np.isfinite(softmax(x, 1e-4)).all()


# ---------------------------------------------------------------- updates

def test_ema_example():
    t = two_child_tree((0.5, 0.5))
    s = MctsSampler(t)
    t.C[0] = 0.5
    s.update(0, 0.9)
    assert t.C[1] == pytest.approx(0.52, abs=1e-12) and t.C[0] == pytest.approx(0.52, abs=1e-12)
    assert t.visits[:3].tolist() == [1, 1, 0]


@pytest.mark.parametrize("beta,c0,r", [(0.95, 0.5, 0.9), (0.9, 0.1, 0.3), (0.5, 1.0, 0.0)])
def test_ema_closed_form(beta, c0, r):
    t = two_child_tree((c0, c0))
    s = MctsSampler(t, beta=beta)
    for k in range(1, 60):
        s.update(1, r)
        assert abs(t.C[2] - r) == pytest.approx(beta**k * abs(c0 - r), abs=1e-12)


def test_flat_updates():
    b = BoltzmannSampler(3)
    b.update(1, 0.9)
    assert b.eps.tolist() == pytest.approx([0.5, 0.52, 0.5])
    sp = SearchSpace(nodes=(("a", "b"), ("a", "b", "c")))
    ind = IndependentSampler(sp)
    ind.update(sp.index_of((1, 2)), 0.9)
    assert ind.eps[0].tolist() == pytest.approx([0.5, 0.52]) and ind.eps[1].tolist() == pytest.approx([0.5, 0.5, 0.52])


def test_update_refreshes_uct():
    t = two_child_tree((0.5, 0.5))
    s = MctsSampler(t, lam=0.5)
    for i in range(5):
        s.update(i % 2, 0.7)
    assert t.R[1] == pytest.approx(uct_score(t.C[1], t.visits[1], t.visits[0], 0.5))


def test_update_foreign_arch():
    s = MctsSampler(two_child_tree((0.5, 0.5)))
    with pytest.raises(ForeignArchitecture):
        s.update(7, 0.5)


def test_regularized_update_on_default_tree():
    sp = bench_macro_space()
    t = default_tree(sp)
    s = MctsSampler(t, regularize=True, beta_reg=0.99)
    C0, V0 = t.C.copy(), t.visits.copy()
    idx = sp.index_of(from_digits("21000000"))  # level-2 edge takes op 1
    s.update(idx, 0.9)
    group = [v for v in range(len(t)) if t.tag[v] == (2, 1)]
    assert len(group) == 3
    assert all(t.C[v] != C0[v] for v in group)
    path = set(t.path(idx))
    changed_visits = {int(v) for v in np.nonzero(t.visits != V0)[0]}
    assert changed_visits == path
    on_path = [v for v in group if v in path][0]
    assert t.C[on_path] == pytest.approx(0.52)
    for v in group:
        if v != on_path:
            assert t.C[v] == pytest.approx(0.99 * 0.5 + 0.01 * 0.9)


def test_regularize_needs_tags():
    with pytest.raises(InvalidConfig):
        MctsSampler(random_tree(8, 0), regularize=True)


# ---------------------------------------------------------------- sampling

def test_uniform_pooling():
    sp = pooling_space()
    f = freqs(UniformSampler(36), 36, 1.0)
    assert np.abs(f - 1 / 36).max() < 0.005
    assert sp.cardinality == 36


def test_boltzmann_example():
    b = BoltzmannSampler(3)
    b.eps = np.array([1.0, 0.0, 0.0])
    p = b.probabilities(0.5)
    e2 = math.e**2
    assert p == pytest.approx([e2 / (e2 + 2), 1 / (e2 + 2), 1 / (e2 + 2)], abs=1e-12)
    assert p == pytest.approx([0.7870, 0.1065, 0.1065], abs=1e-4)
    assert np.abs(freqs(b, 3, 0.5) - p).max() < 0.01


def test_balanced_tree_uniform_leaves():
    s = MctsSampler(balanced_tree(3))
    assert np.allclose(s.leaf_probabilities(0.02), 1 / 8)
    assert np.abs(freqs(s, 8, 0.02) - 1 / 8).max() < 0.01


def test_frozen_mcts_matches_oracle():
    rng = np.random.default_rng(3)
    t = random_tree(20, 1)
    t.C[:] = rng.uniform(0.4, 0.9, len(t))
    t.visits[:] = rng.integers(0, 6, len(t))
    t.visits[t.root] = 30
    s = MctsSampler(t, lam=0.5)
    for T, lam in [(0.05, 0.5), (0.1, 0.0)]:
        ref = tree_leaf_ref(t.parent, t.children, t.leaf_arch, t.visits, t.C, T, lam)
        assert np.allclose(s.leaf_probabilities(T, lam), ref, atol=1e-12)
    f = freqs(s, 20, 0.05, draws=5 * 10**4)
    assert np.abs(f - s.leaf_probabilities(0.05)).max() < 0.01


def test_warmup_is_uniform():
    t = balanced_tree(2)
    t.C[:] = np.linspace(0.1, 0.9, len(t))
    t.visits[:] = 3
    s = MctsSampler(t, warmup_until=5)
    assert np.allclose(s.leaf_probabilities(0.01), 0.25)
    for _ in range(5):
        s.update(0, 0.5)
    assert not s.in_warmup
    assert not np.allclose(s.leaf_probabilities(0.01), 0.25)


def test_independent_marginals():
    sp = SearchSpace(nodes=(("a", "b", "c"), ("a", "b"), ("a", "b", "c")))
    s = IndependentSampler(sp)
    rng = np.random.default_rng(0)
    s.eps = [rng.random(k) for k in sp.arities]
    T = 0.3
    ref = independent_ref(s.eps, T, sp.architectures)
    f = freqs(s, sp.cardinality, T)
    assert np.abs(f - ref).max() < 0.01
    draws = sp.arch_array[[s.draw(rng, T) for _ in range(10**5)]]
    for i, k in enumerate(sp.arities):
        emp = np.bincount(draws[:, i], minlength=k) / len(draws)
        assert np.abs(emp - softmax_ref(list(s.eps[i]), T)).max() < 0.01


def test_independent_conditions_on_constraint():
    sp = pooling_space()
    s = IndependentSampler(sp)
    rng = np.random.default_rng(0)
    s.eps = [rng.random(2) for _ in range(9)]
    T = 0.5
    ref = independent_ref(s.eps, T, sp.architectures)
    assert np.allclose(s.probabilities(T), ref, atol=1e-12)
    assert np.abs(freqs(s, 36, T) - ref).max() < 0.01
    # sharp marginals still yield valid draws
    assert all(sp.is_valid(sp.arch_at(s.draw(rng, 1e-4))) for _ in range(50))


def test_lambda_zero_low_T_is_greedy():
    rng = np.random.default_rng(4)
    for seed in range(10):
        t = random_tree(30, seed)
        t.C[:] = rng.random(len(t))
        s = MctsSampler(t, lam=0.0)
        g = s.greedy()
        p = s.leaf_probabilities(1e-4)
        assert int(np.argmax(p)) == g and p[g] > 0.99
        assert s.draw_final(rng, 1e-6) == g


def test_greedy_ties_break_by_child_order():
    t = two_child_tree((0.5, 0.5))
    assert MctsSampler(t).greedy() == 0


def test_exploration_visits_every_leaf():
    steps = int(8 * math.log(8) * 10)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        rewards = rng.uniform(0.5, 1.0, 8)
        s = MctsSampler(balanced_tree(3), lam=0.5)
        seen = set()
        for _ in range(steps):
            i = s.draw(rng, 0.02)
            seen.add(i)
            s.update(i, rewards[i])
        assert seen == set(range(8))


def test_temperature_schedule():
    sch = TemperatureSchedule("linear", 0.02, 0.0025, 11)
    assert sch(0) == 0.02 and sch(10) == pytest.approx(0.0025) and sch(100) == pytest.approx(0.0025)
    assert sch(5) == pytest.approx(0.01125)
    assert TemperatureSchedule("constant", 0.3)(99) == 0.3
    with pytest.raises(InvalidConfig):
        TemperatureSchedule("linear", 0.0, 1.0)


# ---------------------------------------------------------------- budget and final selection

def test_budget_filter_and_exhaustion():
    sp = SearchSpace(nodes=(("a", "b", "c"),), cost_model=TableCost({"0": 10.0, "1": 100.0, "2": 99.5}))
    rng = np.random.default_rng(0)
    u = UniformSampler(3)
    got = {sample(u, sp, 1.0, rng, budget=100)[0] for _ in range(200)}
    assert got == {1, 2}
    with pytest.raises(BudgetExhausted):
        sample(u, sp, 1.0, rng, budget=5, cap=50)


def test_select_final_oracle_tree_is_deterministic():
    sp = pooling_space()
    ev = TabularEvaluator(load_benchmark("pooling", sp), sigma_acc=0.0)
    s = MctsSampler(accuracy_partition_tree(ev), lam=0.0)
    best = ev.benchmark.best()
    for seed in range(3):
        out = select_final(s, ev, 1, np.random.default_rng(seed), T=0.0025)
        assert out[0][0] == best and len(out) == 1


def test_select_final_dedupes_and_sorts():
    sp = pooling_space()
    ev = TabularEvaluator(load_benchmark("pooling", sp), sigma_acc=0.0)
    out = select_final(UniformSampler(36), ev, 200, np.random.default_rng(0), T=1.0)
    ids = [i for i, _ in out]
    assert len(ids) == len(set(ids)) <= 36
    accs = [a for _, a in out]
    assert accs == sorted(accs, reverse=True)
    with pytest.raises(InvalidConfig):
        select_final(UniformSampler(36), ev, 0, np.random.default_rng(0), T=1.0)


# ---------------------------------------------------------------- checkpoints

def test_state_roundtrip_resumes_identically():
    sp = bench_macro_space()
    s = MctsSampler(default_tree(sp), regularize=True, warmup_until=3)
    rng = np.random.default_rng(0)
    for _ in range(20):
        i = s.draw(rng, 0.02)
        s.update(i, rng.random())
    r = sampler_from_state(s.state_dict())
    assert r.steps == s.steps
    a, b = np.random.default_rng(9), np.random.default_rng(9)
    seq_s = [to_digits(sp.arch_at(s.draw(a, 0.02))) for _ in range(50)]
    seq_r = [to_digits(sp.arch_at(r.draw(b, 0.02))) for _ in range(50)]
    assert seq_s == seq_r
    r.update(0, 0.9)


@pytest.mark.parametrize("make", [lambda sp: UniformSampler(sp.cardinality), lambda sp: BoltzmannSampler(sp.cardinality),
                                  lambda sp: IndependentSampler(sp)])
def test_flat_state_roundtrip(make):
    sp = SearchSpace(nodes=(("a", "b"), ("a", "b", "c")))
    s = make(sp)
    s.update(3, 0.8)
    r = sampler_from_state(s.state_dict(), sp)
    assert r.state_dict() == s.state_dict()


def test_boltzmann_oracle_probabilities():
    b = BoltzmannSampler(10)
    b.eps = np.random.default_rng(0).random(10)
    assert np.allclose(b.probabilities(0.1), boltzmann_ref(b.eps, 0.1), atol=1e-12)
