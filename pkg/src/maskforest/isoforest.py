"""Isolation Forest (axis-aligned cuts) and Extended Isolation Forest
(random oblique hyperplanes) with the usual 2^(-E[h]/c(psi)) score.

All randomness comes from ``detrng`` streams so that a forest is a pure
function of (data, hyperparameters, seed). Each tree draws from its own
stream derived from the base seed and the tree index, so trees can be built
in any order with identical results.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .detrng import RngStream, derive_seed
from .linalg import ShapeError, as_matrix

EULER_GAMMA = 0.5772156649015329
ALGOS = ("if", "eif")
DEFAULT_TREES = 100
DEFAULT_PSI = 256

# EIF may draw hyperplanes that leave one side empty; redraw up to this many
# times before giving up and closing the node.
_MAX_OBLIQUE_TRIES = 64


def avg_path_c(n: int) -> float:
    """Average unsuccessful-search path length in a BST of ``n`` points."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


@dataclass(frozen=True)
class AxisSplit:
    dim: int
    value: float

    def goes_left(self, x: np.ndarray) -> np.ndarray:
        return x[..., self.dim] < self.value


@dataclass(frozen=True)
class ObliqueSplit:
    normal: np.ndarray
    offset_point: np.ndarray

    def goes_left(self, x: np.ndarray) -> np.ndarray:
        return (x - self.offset_point) @ self.normal <= 0


SplitRule = Union[AxisSplit, ObliqueSplit]


@dataclass
class Internal:
    rule: SplitRule
    left: "TreeNode"
    right: "TreeNode"


@dataclass
class External:
    size: int
    depth: int


TreeNode = Union[Internal, External]


@dataclass
class Forest:
    trees: list
    psi: int
    max_depth: int
    algo: str
    dims: int

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _all_identical(x: np.ndarray) -> bool:
    return bool(np.all(x == x[0]))


def _axis_split(x: np.ndarray, stream: RngStream) -> AxisSplit:
    lo, hi = x.min(axis=0), x.max(axis=0)
    # only dimensions with a non-degenerate range can be cut
    candidates = np.flatnonzero(hi > lo)
    dim = int(candidates[stream.below(len(candidates))])
    a, b = lo[dim], hi[dim]
    while True:
        value = a + (b - a) * stream.uniform01()
        if a < value < b:
            return AxisSplit(dim, float(value))


def _oblique_split(x: np.ndarray, stream: RngStream):
    d = x.shape[1]
    lo, hi = x.min(axis=0), x.max(axis=0)
    for _ in range(_MAX_OBLIQUE_TRIES):
        normal = np.array(stream.gaussians(d))
        if not np.any(normal != 0.0):
            continue
        u = stream.uniform_block(d)
        point = lo + (hi - lo) * u
        rule = ObliqueSplit(normal, point)
        left = rule.goes_left(x)
        if 0 < left.sum() < len(x):
            return rule, left
    return None, None


def _grow(x: np.ndarray, depth: int, max_depth: int, algo: str, stream: RngStream) -> TreeNode:
    if len(x) <= 1 or depth >= max_depth or _all_identical(x):
        return External(size=len(x), depth=depth)
    if algo == "if":
        rule = _axis_split(x, stream)
        left = rule.goes_left(x)
    else:
        rule, left = _oblique_split(x, stream)
        if rule is None:
            return External(size=len(x), depth=depth)
    return Internal(
        rule=rule,
        left=_grow(x[left], depth + 1, max_depth, algo, stream),
        right=_grow(x[~left], depth + 1, max_depth, algo, stream),
    )


def build_tree(data: np.ndarray, psi: int, algo: str, seed: int) -> TreeNode:
    """One isolation tree over a ``psi``-row subsample drawn without replacement."""
    stream = RngStream(seed)
    n = len(data)
    if psi >= n:
        rows = list(range(n))
        stream.shuffle(rows)
    else:
        # partial Fisher-Yates: first psi slots of a shuffle
        rows = list(range(n))
        for i in range(psi):
            j = i + stream.below(n - i)
            rows[i], rows[j] = rows[j], rows[i]
        rows = rows[:psi]
    max_depth = math.ceil(math.log2(psi)) if psi > 1 else 0
    return _grow(data[rows], 0, max_depth, algo, stream)


def fit(data, algo: str = "if", t: int = DEFAULT_TREES, psi: int = DEFAULT_PSI,
        seed: int = 0) -> Forest:
    """Train ``t`` trees; ``psi`` is capped at the number of rows."""
    data = as_matrix(data)
    if algo not in ALGOS:
        raise ValueError(f"algo must be one of {ALGOS}, got {algo!r}")
    if data.shape[0] < 1 or data.shape[1] < 1:
        raise ValueError("cannot fit a forest on empty data")
    if t < 1 or psi < 1:
        raise ValueError("t and psi must be positive")
    if not np.all(np.isfinite(data)):
        raise ValueError("data contains non-finite values")
    psi_eff = min(psi, data.shape[0])
    trees = [build_tree(data, psi_eff, algo, derive_seed(seed, k)) for k in range(t)]
    max_depth = math.ceil(math.log2(psi_eff)) if psi_eff > 1 else 0
    return Forest(trees=trees, psi=psi_eff, max_depth=max_depth, algo=algo, dims=data.shape[1])


def path_length(tree: TreeNode, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("path_length expects a single row vector")
    node, edges = tree, 0
    while isinstance(node, Internal):
        if isinstance(node.rule, AxisSplit) and node.rule.dim >= len(x):
            raise ShapeError("row has fewer components than the tree expects")
        if isinstance(node.rule, ObliqueSplit) and len(node.rule.normal) != len(x):
            raise ShapeError("row length does not match the tree's dimension")
        node = node.left if node.rule.goes_left(x) else node.right
        edges += 1
    return edges + avg_path_c(node.size)


def _path_lengths(node: TreeNode, x: np.ndarray, rows: np.ndarray, depth: int, out: np.ndarray):
    if isinstance(node, External):
        out[rows] = depth + avg_path_c(node.size)
        return
    left = node.rule.goes_left(x[rows])
    if left.any():
        _path_lengths(node.left, x, rows[left], depth + 1, out)
    if not left.all():
        _path_lengths(node.right, x, rows[~left], depth + 1, out)


def mean_path_lengths(forest: Forest, data) -> np.ndarray:
    data = as_matrix(data)
    if data.shape[1] != forest.dims:
        raise ShapeError(f"forest expects {forest.dims} columns, got {data.shape[1]}")
    total = np.zeros(len(data))
    buf = np.empty(len(data))
    rows = np.arange(len(data))
    for tree in forest.trees:
        _path_lengths(tree, data, rows, 0, buf)
        total += buf
    return total / forest.n_trees


def score_from_path(mean_path, psi: int):
    c = avg_path_c(psi)
    if c == 0.0:
        # psi = 1 leaves nothing to normalise by; every point is the fixed point
        return np.full_like(np.asarray(mean_path, dtype=np.float64), 0.5)
    return np.power(2.0, -np.asarray(mean_path, dtype=np.float64) / c)


def score_all(forest: Forest, data) -> np.ndarray:
    """Outlier score in (0, 1] for every row; larger means more isolated."""
    return score_from_path(mean_path_lengths(forest, data), forest.psi)
