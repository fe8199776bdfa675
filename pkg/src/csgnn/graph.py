"""Graph containers, node permutations, and perturbation metrics.

A graph is held densely: an n x n real adjacency matrix plus an n x c_in
feature matrix, integer class labels (-1 marks unlabeled nodes) and three
disjoint boolean split masks. Attack budgets are measured with the l0 edit
count, the vectorized l1 norm, and the Frobenius norm.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def _as_readonly(a: np.ndarray, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Graph:
    """Immutable dense graph with features, labels and split masks."""

    adjacency: np.ndarray
    features: np.ndarray
    labels: np.ndarray = None
    train_mask: np.ndarray = None
    val_mask: np.ndarray = None
    test_mask: np.ndarray = None
    binary: bool = False

    def __post_init__(self):
        adj = _as_readonly(self.adjacency, float)
        feat = _as_readonly(self.features, float)
        if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {adj.shape}")
        n = adj.shape[0]
        if feat.ndim != 2 or feat.shape[0] != n:
            raise ValueError(f"features must have {n} rows, got shape {feat.shape}")
        labels = self.labels if self.labels is not None else -np.ones(n, dtype=int)
        labels = _as_readonly(labels, int)
        if labels.shape != (n,):
            raise ValueError("labels must be a length-n integer vector")
        masks = []
        for name in ("train_mask", "val_mask", "test_mask"):
            m = getattr(self, name)
            m = _as_readonly(m if m is not None else np.zeros(n, dtype=bool), bool)
            if m.shape != (n,):
                raise ValueError(f"{name} must be a length-n boolean vector")
            masks.append(m)
        if np.any(masks[0] & masks[1]) or np.any(masks[0] & masks[2]) or np.any(masks[1] & masks[2]):
            raise ValueError("train/val/test masks must be pairwise disjoint")
        if self.binary and not np.all((adj == 0.0) | (adj == 1.0)):
            raise ValueError("binary graph flag set but adjacency has entries outside {0,1}")
        object.__setattr__(self, "adjacency", adj)
        object.__setattr__(self, "features", feat)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "train_mask", masks[0])
        object.__setattr__(self, "val_mask", masks[1])
        object.__setattr__(self, "test_mask", masks[2])

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    def num_undirected_edges(self) -> int:
        """Count of off-diagonal undirected edges (nonzero entries above the diagonal)."""
        return int(np.count_nonzero(np.triu(self.adjacency, k=1)))

    def replace(self, **changes) -> "Graph":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class Permutation:
    """A bijection on node indices {0..n-1}."""

    perm: np.ndarray

    def __post_init__(self):
        p = _as_readonly(self.perm, int)
        n = p.shape[0]
        if p.ndim != 1 or not np.array_equal(np.sort(p), np.arange(n)):
            raise ValueError("perm must contain each index in {0..n-1} exactly once")
        object.__setattr__(self, "perm", p)

    @property
    def n(self) -> int:
        return self.perm.shape[0]

    def matrix(self) -> np.ndarray:
        """Permutation matrix P with (P x)[i] = x[perm[i]]."""
        P = np.zeros((self.n, self.n))
        P[np.arange(self.n), self.perm] = 1.0
        return P

    def after(self, other: "Permutation") -> "Permutation":
        """Composition self o other: applying `other` first, then `self`.

        Matches matrix composition: (self.after(other)).matrix() == self.matrix() @ other.matrix().
        """
        if self.n != other.n:
            raise ValueError("permutation length mismatch")
        return Permutation(other.perm[self.perm])


@dataclass(frozen=True)
class PerturbationBudget:
    """Attack budget: Frobenius bound on feature noise, vectorized-l1 bound on adjacency edits."""

    eps_feat: float
    eps_adj: float

    def __post_init__(self):
        if self.eps_feat < 0 or self.eps_adj < 0:
            raise ValueError("budgets must be nonnegative")


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def l0_distance(a: np.ndarray, a_star: np.ndarray) -> int:
    """Number of entries where the two matrices differ (exact inequality, no tolerance)."""
    a = np.asarray(a, dtype=float)
    a_star = np.asarray(a_star, dtype=float)
    _check_same_shape(a, a_star)
    return int(np.count_nonzero(a != a_star))


def l1_vec_distance(a: np.ndarray, a_star: np.ndarray) -> float:
    """Vectorized l1 distance: sum of absolute entrywise differences."""
    a = np.asarray(a, dtype=float)
    a_star = np.asarray(a_star, dtype=float)
    _check_same_shape(a, a_star)
    return float(np.abs(a - a_star).sum())


def frobenius_distance(f: np.ndarray, f_star: np.ndarray) -> float:
    f = np.asarray(f, dtype=float)
    f_star = np.asarray(f_star, dtype=float)
    _check_same_shape(f, f_star)
    return float(np.sqrt(((f - f_star) ** 2).sum()))


def permute_graph(g: Graph, p: Permutation) -> Graph:
    """Relabel nodes: adjacency becomes P A P^T, features/labels/masks are row-permuted."""
    if p.n != g.n:
        raise ValueError(f"permutation length {p.n} does not match graph size {g.n}")
    idx = p.perm
    return Graph(
        adjacency=g.adjacency[np.ix_(idx, idx)],
        features=g.features[idx],
        labels=g.labels[idx],
        train_mask=g.train_mask[idx],
        val_mask=g.val_mask[idx],
        test_mask=g.test_mask[idx],
        binary=g.binary,
    )


# On-disk layout: edges.txt ("i j" per undirected edge, 0-indexed), features.csv
# (one row of comma-separated floats per node), labels.csv (one integer per node),
# masks.csv (header train,val,test then 0/1 rows). Loader symmetrizes edges.

_FLOAT_FMT = "%.17g"


def save_graph(g: Graph, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not np.all((g.adjacency == 0.0) | (g.adjacency == 1.0)):
        raise ValueError("edge-list format only stores binary adjacency matrices")
    if not np.array_equal(g.adjacency, g.adjacency.T):
        raise ValueError("edge-list format only stores symmetric adjacency matrices")
    rows, cols = np.nonzero(np.triu(g.adjacency))
    with open(out / "edges.txt", "w", newline="\n") as fh:
        for i, j in zip(rows, cols):
            fh.write(f"{i} {j}\n")
    np.savetxt(out / "features.csv", g.features, fmt=_FLOAT_FMT, delimiter=",", newline="\n")
    np.savetxt(out / "labels.csv", g.labels[:, None], fmt="%d", newline="\n")
    masks = np.stack([g.train_mask, g.val_mask, g.test_mask], axis=1).astype(int)
    np.savetxt(out / "masks.csv", masks, fmt="%d", delimiter=",",
               header="train,val,test", comments="", newline="\n")


def load_graph(in_dir) -> Graph:
    src = Path(in_dir)
    features = np.loadtxt(src / "features.csv", delimiter=",", ndmin=2)
    n = features.shape[0]
    adjacency = np.zeros((n, n))
    edges = np.loadtxt(src / "edges.txt", dtype=int, ndmin=2)
    if edges.size:
        if edges.max() >= n:
            raise ValueError("edge index exceeds node count implied by features.csv")
        adjacency[edges[:, 0], edges[:, 1]] = 1.0
        adjacency[edges[:, 1], edges[:, 0]] = 1.0
    labels = np.loadtxt(src / "labels.csv", dtype=int, ndmin=1)
    masks = np.loadtxt(src / "masks.csv", dtype=int, delimiter=",", skiprows=1, ndmin=2).astype(bool)
    return Graph(
        adjacency=adjacency,
        features=features,
        labels=labels,
        train_mask=masks[:, 0],
        val_mask=masks[:, 1],
        test_mask=masks[:, 2],
        binary=True,
    )
