"""Architecture evaluators: tabular benchmark lookup and a synthetic supernet.

Both backends expose the same surface:

* ``evaluate(idx, t, rng)`` -- noisy mini-batch accuracy at training progress t
* ``validate(idx, t, rng)`` -- accuracy on the whole validation split (k-batch mean)
* ``output_vectors(idx, B, t)`` -- B x C row-stochastic class-probability matrix
* ``final_accuracy(idx)`` / ``rank(idx)`` -- ground truth for reporting

Architectures are addressed by canonical space index.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CoverageError, OutputsUnavailable, SchemaError
from .space import SearchSpace, encode_all, from_digits, to_digits

DATA_DIR = Path(__file__).parent / "data"
BUILTIN_BENCHMARKS = {
    "pooling": DATA_DIR / "pooling_benchmark.json",
    "bench_macro": DATA_DIR / "bench_macro_benchmark.json",
}


@dataclass
class EvalOutcome:
    accuracy: float
    outputs: np.ndarray | None = None
    flops: float | None = None
    loss: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.accuracy <= 1.0):
            raise ValueError(f"accuracy {self.accuracy} outside [0, 1]")
        if self.outputs is not None:
            o = np.asarray(self.outputs)
            if o.ndim != 2 or (o < 0).any() or not np.allclose(o.sum(1), 1.0, atol=1e-9, rtol=0):
                raise ValueError("outputs must be a row-stochastic B x C matrix")


def ramp(t: float, t_ramp: float) -> float:
    """Supernet maturity factor r(t) = min(1, t / t_ramp)."""
    if t_ramp <= 0:
        return 1.0
    return min(1.0, max(0.0, t) / t_ramp)


def _check_t(t: float):
    if not (0.0 <= t <= 1.0):
        raise ValueError(f"training progress t={t} outside [0, 1]")


# ------------------------------------------------------------------ tabular

@dataclass
class TabularBenchmark:
    space: SearchSpace
    acc: np.ndarray  # percent, canonical order
    flops: np.ndarray
    params: np.ndarray
    curves: dict[int, list[float]] = field(default_factory=dict)
    outputs: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        n = self.space.cardinality
        if len(self.acc) != n:
            raise CoverageError(f"benchmark has {len(self.acc)} records, space has {n}")
        idx = np.arange(n)
        # rank 1 = best; equal accuracy -> lower canonical index wins
        order = np.lexsort((idx, -self.acc))
        self.ranks = np.empty(n, dtype=np.int64)
        self.ranks[order] = idx + 1

    def rank(self, i: int) -> int:
        return int(self.ranks[i])

    def best(self) -> int:
        return int(np.argmin(self.ranks))


def benchmark_from_dict(doc: dict, space: SearchSpace) -> TabularBenchmark:
    recs = doc.get("records") if isinstance(doc, dict) else None
    if not isinstance(recs, dict):
        raise SchemaError("benchmark document needs a 'records' object")
    n = space.cardinality
    acc = np.full(n, np.nan)
    flops = np.full(n, np.nan)
    params = np.full(n, np.nan)
    curves, outputs = {}, {}
    for key, rec in recs.items():
        try:
            arch = from_digits(key)
            i = space.index_of(arch)
        except Exception:
            raise CoverageError(f"record {key!r} is not an architecture of space {space.name!r}") from None
        if not isinstance(rec, dict) or "acc" not in rec:
            raise SchemaError(f"record {key!r} lacks an 'acc' field")
        try:
            a = float(rec["acc"])
        except (TypeError, ValueError):
            raise SchemaError(f"record {key!r}: acc is not a number") from None
        if not (0.0 <= a <= 100.0):
            raise SchemaError(f"record {key!r}: acc {a} outside [0, 100]")
        acc[i] = a
        flops[i] = float(rec.get("flops", np.nan))
        params[i] = float(rec.get("params", np.nan))
        if "curve" in rec:
            curves[i] = [float(x) for x in rec["curve"]]
        if "outputs" in rec:
            o = np.asarray(rec["outputs"], dtype=float)
            if o.ndim != 2:
                raise SchemaError(f"record {key!r}: outputs must be B x C")
            outputs[i] = o
    missing = np.flatnonzero(np.isnan(acc))
    if len(missing):
        ex = to_digits(space.arch_at(int(missing[0])))
        raise CoverageError(f"{len(missing)} architectures without a record (e.g. {ex})")
    if outputs and len(outputs) != n:
        raise SchemaError("outputs must be given for every record or for none")
    return TabularBenchmark(space, acc, flops, params, curves, outputs)


def load_benchmark(path: str | Path, space: SearchSpace) -> TabularBenchmark:
    ref = str(path)
    if ref in BUILTIN_BENCHMARKS or ref.startswith("builtin:"):
        path = BUILTIN_BENCHMARKS[ref.removeprefix("builtin:")]
    with open(path) as f:
        doc = json.load(f)
    if doc.get("space") not in (None, space.name) and space.name != "custom":
        raise SchemaError(f"benchmark is for space {doc.get('space')!r}, not {space.name!r}")
    return benchmark_from_dict(doc, space)


# ------------------------------------------------------------ output model

class OutputModel:
    """Simulated class-probability outputs of a weight-sharing supernet.

    For sample b with label y_b the logits of architecture a are

        M_b z(a) + kappa * r(t) * (s(a) - d_b) * e_{y_b} + sigma_eta * (1 - r(t)) * xi_{a,b}

    where z(a) is a latent embedding (a fixed random projection of the one-hot
    encoding unless ``latent`` is given), s(a) the standardised quality, d_b a
    per-sample difficulty and xi fixed per-(architecture, sample) Gaussian
    noise standing in for untrained weights.
    """

    def __init__(self, space: SearchSpace, quality: np.ndarray, seed: int = 0,
                 classes: int = 10, latent_dim: int = 16, kappa: float = 1.0,
                 sigma_eta: float = 1.0, z_scale: float = 1.0, t_ramp: float = 0.4,
                 latent: np.ndarray | None = None):
        self.space = space
        self.seed = int(seed)
        self.classes = int(classes)
        self.kappa = float(kappa)
        self.sigma_eta = float(sigma_eta)
        self.t_ramp = float(t_ramp)
        if latent is None:
            rng = np.random.default_rng([self.seed, 101])
            onehot = encode_all(space, "one_hot")
            phi = rng.normal(size=(latent_dim, onehot.shape[1])) / math.sqrt(latent_dim)
            latent = onehot @ phi.T
        self.z = z_scale * np.asarray(latent, dtype=float)  # (|S|, latent_dim)
        q = np.asarray(quality, dtype=float)
        self.s = (q - q.mean()) / (q.std() + 1e-12)
        self._samples: list[tuple[np.ndarray, int, float]] = []

    def _sample_params(self, B: int):
        latent_dim = self.z.shape[1]
        while len(self._samples) < B:
            b = len(self._samples)
            rng = np.random.default_rng([self.seed, 202, b])
            M = rng.normal(size=(self.classes, latent_dim))
            y = int(rng.integers(self.classes))
            d = float(rng.normal())
            self._samples.append((M, y, d))
        M = np.stack([s[0] for s in self._samples[:B]])
        y = np.array([s[1] for s in self._samples[:B]])
        d = np.array([s[2] for s in self._samples[:B]])
        return M, y, d

    def _noise(self, i: int, B: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, 303, int(i)])
        return rng.normal(size=(B, self.classes))

    def logits(self, idx: Sequence[int], B: int, t: float) -> np.ndarray:
        idx = np.atleast_1d(np.asarray(idx, dtype=np.int64))
        M, y, d = self._sample_params(B)
        r = ramp(t, self.t_ramp)
        out = np.einsum("bcl,nl->nbc", M, self.z[idx])
        boost = self.kappa * r * (self.s[idx][:, None] - d[None, :])
        out[:, np.arange(B), y] += boost
        amp = self.sigma_eta * (1.0 - r)
        if amp > 0:
            out += amp * np.stack([self._noise(i, B) for i in idx])
        return out

    def probabilities(self, idx: Sequence[int], B: int, t: float) -> np.ndarray:
        lg = self.logits(idx, B, t)
        lg -= lg.max(axis=2, keepdims=True)
        p = np.exp(lg)
        p /= p.sum(axis=2, keepdims=True)
        return p


# ---------------------------------------------------------------- evaluators

class Evaluator:
    """Shared mini-batch noise / ramp logic; subclasses define ``quality``."""

    space: SearchSpace
    quality: np.ndarray  # ground-truth accuracy in [0, 1], canonical order
    ranks: np.ndarray
    output_model: OutputModel | None = None

    def __init__(self, sigma_acc: float = 0.02, t_ramp: float = 0.4, val_batches: int = 100,
                 train_gap: float = 0.02):
        self.sigma_acc = float(sigma_acc)
        self.t_ramp = float(t_ramp)
        self.val_batches = int(val_batches)
        self.train_gap = float(train_gap)

    @property
    def size(self) -> int:
        return len(self.quality)

    def r(self, t: float) -> float:
        return ramp(t, self.t_ramp)

    def final_accuracy(self, i: int) -> float:
        """Ground-truth accuracy in percent."""
        return float(100.0 * self.quality[i])

    def rank(self, i: int) -> int:
        return int(self.ranks[i])

    def flops(self, i: int) -> float | None:
        return None

    @property
    def supports_outputs(self) -> bool:
        return self.output_model is not None

    def _mean_acc(self, i: int, t: float, data: str) -> float:
        m = self.quality[i] * self.r(t)
        if data == "train":
            # optimistic training-set accuracy, larger for bigger models
            m += self.train_gap * self.r(t) * self._complexity[i]
        return m

    @property
    def _complexity(self) -> np.ndarray:
        c = getattr(self, "_cplx", None)
        if c is None:
            A = self.space.arch_array.astype(float)
            tot = A.sum(1)
            c = tot / tot.max() if tot.max() > 0 else tot
            self._cplx = c
        return c

    def evaluate(self, i: int, t: float, rng: np.random.Generator, data: str = "val") -> EvalOutcome:
        _check_t(t)
        m = self._mean_acc(i, t, data)
        acc = m + rng.normal(0.0, self.sigma_acc) if self.sigma_acc > 0 else m
        acc = min(1.0, max(0.0, acc))
        # mini-batch cross-entropy proxy, monotone in accuracy
        loss = -math.log(max(acc, 1e-3))
        return EvalOutcome(accuracy=acc, flops=self.flops(i), loss=loss)

    def validate(self, i: int, t: float, rng: np.random.Generator) -> float:
        """Accuracy over the whole validation split (mean of ``val_batches`` batches)."""
        _check_t(t)
        m = self._mean_acc(i, t, "val")
        if self.sigma_acc > 0 and self.val_batches > 0:
            m += rng.normal(0.0, self.sigma_acc / math.sqrt(self.val_batches))
        return min(1.0, max(0.0, m))

    def output_vectors(self, i: int, B: int = 256, t: float = 1.0) -> np.ndarray:
        return self.all_output_vectors([i], B, t)[0]

    def all_output_vectors(self, idx: Sequence[int] | None = None, B: int = 256,
                           t: float = 1.0) -> np.ndarray:
        _check_t(t)
        if self.output_model is None:
            raise OutputsUnavailable(f"{type(self).__name__} has no output vectors")
        if idx is None:
            idx = np.arange(self.size)
        return self.output_model.probabilities(idx, B, t)


class TabularEvaluator(Evaluator):
    """Benchmark lookup with simulated mini-batch noise.

    Output vectors come from stored outputs in the benchmark file if present,
    else from an optional simulated ``OutputModel``; otherwise unavailable.
    """

    def __init__(self, benchmark: TabularBenchmark, sigma_acc: float = 0.02, t_ramp: float = 0.4,
                 simulate_outputs: bool = False, output_seed: int = 0, classes: int = 10,
                 kappa: float = 1.0, sigma_eta: float = 1.0, **kw):
        super().__init__(sigma_acc, t_ramp, **kw)
        self.benchmark = benchmark
        self.space = benchmark.space
        self.quality = benchmark.acc / 100.0
        self.ranks = benchmark.ranks
        if simulate_outputs and not benchmark.outputs:
            self.output_model = OutputModel(self.space, self.quality, seed=output_seed,
                                            classes=classes, kappa=kappa, sigma_eta=sigma_eta,
                                            t_ramp=t_ramp)

    def final_accuracy(self, i: int) -> float:
        return float(self.benchmark.acc[i])

    def flops(self, i: int) -> float | None:
        f = self.benchmark.flops[i]
        return None if np.isnan(f) else float(f)

    @property
    def supports_outputs(self) -> bool:
        return bool(self.benchmark.outputs) or self.output_model is not None

    def all_output_vectors(self, idx=None, B: int = 256, t: float = 1.0) -> np.ndarray:
        if self.benchmark.outputs:
            if idx is None:
                idx = range(self.size)
            out = np.stack([self.benchmark.outputs[int(i)] for i in idx])
            return out[:, :B]
        return super().all_output_vectors(idx, B, t)


class SyntheticSupernet(Evaluator):
    """Seeded stand-in for a weight-sharing supernet.

    Each architecture gets a latent vector built from per-node main effects
    plus pairwise interaction tables on a random subset (``density``) of node
    pairs, so z(a) is a sparse quadratic in the one-hot features. Base
    quality is a logistic of a fixed linear readout of z, which makes output
    similarity informative about accuracy the way it is for trained networks.
    """

    def __init__(self, space: SearchSpace, seed: int = 0, classes: int = 10,
                 sigma_acc: float = 0.02, t_ramp: float = 0.4, density: float = 0.5,
                 main_scale: float = 0.4, inter_scale: float = 1.0,
                 q_min: float = 0.80, q_max: float = 0.95, latent_dim: int = 4,
                 kappa: float = 2.0, sigma_eta: float = 1.0, slope: float = 1.0,
                 center: bool = True, **kw):
        super().__init__(sigma_acc, t_ramp, **kw)
        self.space = space
        self.seed = int(seed)
        rng = np.random.default_rng([self.seed, 11])
        n, L = space.n_nodes, int(latent_dim)
        self.main = [rng.normal(0.0, main_scale, size=(k, L)) for k in space.arities]
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        keep = rng.random(len(pairs)) < density
        self.interactions = {}
        for p, k in zip(pairs, keep):
            if not k:
                continue
            W = rng.normal(0.0, inter_scale, size=(space.arities[p[0]], space.arities[p[1]], L))
            if center:
                # pure interaction: zero row and column means, no marginal effect
                W = W - W.mean(0, keepdims=True) - W.mean(1, keepdims=True) + W.mean((0, 1), keepdims=True)
            self.interactions[p] = W
        w = rng.normal(size=L)
        self.readout = w / np.linalg.norm(w)
        A = space.arch_array
        z = np.zeros((len(A), L))
        for i, U in enumerate(self.main):
            z += U[A[:, i]]
        for (i, j), W in self.interactions.items():
            z += W[A[:, i], A[:, j]]
        self.latent = z
        score = z @ self.readout
        self.score = score
        u = (score - score.mean()) / (score.std() + 1e-12)
        self.quality = q_min + (q_max - q_min) / (1.0 + np.exp(-slope * u))
        idx = np.arange(len(A))
        order = np.lexsort((idx, -self.quality))
        self.ranks = np.empty(len(A), dtype=np.int64)
        self.ranks[order] = idx + 1
        self.output_model = OutputModel(space, self.quality, seed=self.seed, classes=classes,
                                        kappa=kappa, sigma_eta=sigma_eta, t_ramp=t_ramp,
                                        latent=z / math.sqrt(L))

    def flops(self, i: int) -> float | None:
        if self.space.cost_model is None:
            return None
        return self.space.cost(self.space.arch_at(i))
