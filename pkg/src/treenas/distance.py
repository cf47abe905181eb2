"""Pairwise architecture distance matrices.

Output-based measures compare two B x C class-probability matrices row by row
and average over the B rows. Log-based measures floor probabilities at EPS
and renormalise first so one-hot-like outputs stay finite.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import DegenerateMatrix, NonFinite, ShapeMismatch
from .space import SearchSpace, encode_all

EPS = 1e-9
MEASURES = ("l2", "kl", "cross_entropy", "cross_entropy_raw")


@dataclass
class DistanceMatrix:
    values: np.ndarray
    measure: str = "unknown"
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def validate(self, tol: float = 1e-9) -> "DistanceMatrix":
        v = self.values
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise DegenerateMatrix(f"distance matrix must be square, got {v.shape}")
        if not np.isfinite(v).all():
            raise DegenerateMatrix("distance matrix has non-finite entries")
        if (v < 0).any():
            raise DegenerateMatrix("distance matrix has negative entries")
        if np.abs(np.diag(v)).max(initial=0.0) > tol:
            raise DegenerateMatrix("distance matrix diagonal is not zero")
        if not np.allclose(v, v.T, atol=tol, rtol=0):
            raise DegenerateMatrix("distance matrix is not symmetric")
        return self

    def save(self, path: str | Path):
        path = Path(path)
        if path.suffix == ".npz":
            np.savez(path, values=self.values, measure=self.measure, meta=json.dumps(self.meta))
        else:
            with open(path, "w") as f:
                json.dump({"n": self.n, "measure": self.measure, "meta": self.meta,
                           "values": self.values.ravel().tolist()}, f)

    @classmethod
    def load(cls, path: str | Path) -> "DistanceMatrix":
        path = Path(path)
        if path.suffix == ".npz":
            with np.load(path) as z:
                return cls(z["values"].copy(), str(z["measure"]), json.loads(str(z["meta"])))
        with open(path) as f:
            doc = json.load(f)
        n = int(doc["n"])
        vals = np.asarray(doc["values"], dtype=float).reshape(n, n)
        return cls(vals, doc.get("measure", "unknown"), doc.get("meta", {}))


def _floor(P: np.ndarray) -> np.ndarray:
    P = np.maximum(P, EPS)
    return P / P.sum(axis=-1, keepdims=True)


def _check(A, B):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 2:
        raise ShapeMismatch(f"output matrices must share a 2-D shape, got {A.shape} and {B.shape}")
    if not (np.isfinite(A).all() and np.isfinite(B).all()):
        raise NonFinite("output matrices contain NaN or inf")
    return A, B


def output_distance(A, B, measure: str = "kl") -> float:
    """Mean over rows of the chosen distance between two B x C output matrices."""
    A, B = _check(A, B)
    if measure == "l2":
        return float(np.linalg.norm(A - B, axis=1).mean())
    P, Q = _floor(A), _floor(B)
    lP, lQ = np.log(P), np.log(Q)
    if measure in ("kl", "cross_entropy"):
        # cross-entropy with self terms removed: H(p,q) - H(p,p) = KL(p||q)
        kl_pq = (P * (lP - lQ)).sum(1)
        kl_qp = (Q * (lQ - lP)).sum(1)
        return float((0.5 * (kl_pq + kl_qp)).mean())
    if measure == "cross_entropy_raw":
        if np.array_equal(A, B):
            return 0.0
        return float((-0.5 * ((P * lQ).sum(1) + (Q * lP).sum(1))).mean())
    raise ValueError(f"unknown measure {measure!r}")


def build_matrix(outputs: Sequence[np.ndarray] | np.ndarray, measure: str = "kl",
                 chunk: int = 1024) -> DistanceMatrix:
    """D[i, j] = output_distance(o_i, o_j) for every pair, vectorised."""
    O = np.asarray(outputs, dtype=float)
    if O.ndim != 3:
        raise ShapeMismatch(f"expected an (n, B, C) stack of outputs, got shape {O.shape}")
    if not np.isfinite(O).all():
        raise NonFinite("outputs contain NaN or inf")
    n, B, C = O.shape
    if measure == "l2" and n * n * B * C <= 2**25:
        D = np.stack([np.linalg.norm(O[i] - O, axis=2).mean(1) for i in range(n)])
    elif measure == "l2":
        # Gram expansion per batch row; exact path above for small inputs
        D = np.zeros((n, n))
        sq = (O**2).sum(2)  # (n, B)
        for b in range(B):
            X = O[:, b, :]
            G = X @ X.T
            d2 = sq[:, b, None] + sq[None, :, b] - 2.0 * G
            np.maximum(d2, 0.0, out=d2)
            D += np.sqrt(d2, out=d2)
        D /= B
    elif measure in ("kl", "cross_entropy", "cross_entropy_raw"):
        P = _floor(O).reshape(n, B * C)
        L = np.log(P)
        cross = np.empty((n, n))
        for s in range(0, n, chunk):
            cross[s:s + chunk] = P[s:s + chunk] @ L.T  # sum_b p_i . log p_j
        if measure == "cross_entropy_raw":
            D = -0.5 * (cross + cross.T) / B
        else:
            self_term = np.einsum("ij,ij->i", P, L)
            D = 0.5 * (self_term[:, None] + self_term[None, :] - cross - cross.T) / B
    else:
        raise ValueError(f"unknown measure {measure!r}")
    D = 0.5 * (D + D.T)
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return DistanceMatrix(D, measure)


def encoding_matrix(space: SearchSpace, kind: str = "one_hot", weighted: bool = False,
                    base: float = 2.0) -> DistanceMatrix:
    """Euclidean distances between zero-cost encodings of every architecture."""
    X = encode_all(space, kind, weighted, base)
    D = squareform(pdist(X, "euclidean"))
    name = f"{kind}{'_weighted' if weighted else ''}"
    return DistanceMatrix(D, name)


def random_matrix(n: int, seed: int = 0) -> DistanceMatrix:
    if n < 2:
        raise ValueError("random_matrix needs n >= 2")
    rng = np.random.default_rng(seed)
    D = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    D[iu] = rng.uniform(0.0, 1.0, size=len(iu[0]))
    D = D + D.T
    return DistanceMatrix(D, "random", {"seed": int(seed)})
