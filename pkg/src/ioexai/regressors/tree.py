"""Regression trees stored as flat preorder arrays.

Node ``i`` is a leaf when ``feature[i] == -1``; otherwise rows with
``x[feature[i]] <= threshold[i]`` go to ``left[i]`` and the rest to
``right[i]``. Arrays are laid out in preorder so the text dump of a tree is
simply the rows in index order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF = -1


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def node_count(self) -> int:
        return int(self.feature.shape[0])

    @property
    def depth(self) -> int:
        depth = np.zeros(self.node_count, dtype=int)
        for i in range(self.node_count):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f != LEAF}

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = rows[self.feature[node] != LEAF]
        while active.size:
            current = node[active]
            go_left = X[active, self.feature[current]] <= self.threshold[current]
            node[active] = np.where(go_left, self.left[current], self.right[current])
            active = active[self.feature[node[active]] != LEAF]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    @classmethod
    def leaf(cls, value: float, n_samples: int = 1) -> "Tree":
        return cls(
            feature=np.array([LEAF], dtype=np.int64),
            threshold=np.array([0.0]),
            left=np.array([LEAF], dtype=np.int64),
            right=np.array([LEAF], dtype=np.int64),
            value=np.array([float(value)]),
            n_samples=np.array([n_samples], dtype=np.int64),
        )


def check_inputs(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise FitError(f"X must be 2-dimensional, got shape {X.shape}")
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise FitError(f"y must be a vector with {X.shape[0]} entries, got shape {y.shape}")
    if X.shape[0] == 0:
        raise FitError("cannot fit on an empty sample")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise FitError("inputs contain non-finite values")
    return X, y


def _best_exact_split(Xn, yn, features, min_leaf):
    """Scan every cut point of every candidate feature.

    Returns ``(feature, threshold)`` or ``None``. Candidates are compared on
    ``S_L^2/n_L + S_R^2/n_R`` which orders splits exactly like the reduction
    in squared error. ``argmax`` returns the first maximum, so ties go to the
    lowest feature index and then the lowest threshold.
    """
    n = yn.shape[0]
    cols = Xn[:, features]
    order = np.argsort(cols, axis=0, kind="stable")
    xs = np.take_along_axis(cols, order, axis=0)
    ys = yn[order]
    csum = np.cumsum(ys, axis=0)[:-1]
    total = yn.sum()
    n_left = np.arange(1, n, dtype=float)[:, None]
    n_right = n - n_left
    score = csum**2 / n_left + (total - csum) ** 2 / n_right
    valid = xs[:-1] < xs[1:]
    if min_leaf > 1:
        valid[: min_leaf - 1] = False
        valid[n - min_leaf :] = False
    if not valid.any():
        return None
    score = np.where(valid, score, -np.inf)
    flat = int(np.argmax(score.T))
    j, pos = divmod(flat, n - 1)
    lo, hi = xs[pos, j], xs[pos + 1, j]
    threshold = 0.5 * (lo + hi)
    if not lo <= threshold < hi:
        threshold = lo
    return int(features[j]), float(threshold)


def _best_random_split(Xn, yn, features, min_leaf, rng):
    """One uniform threshold per candidate feature; keep the best of them."""
    total = yn.sum()
    n = yn.shape[0]
    best = None
    best_score = -np.inf
    for f in features:
        col = Xn[:, f]
        lo, hi = col.min(), col.max()
        if not lo < hi:
            continue
        threshold = float(rng.uniform(lo, hi))
        if threshold >= hi:
            threshold = float(lo)
        mask = col <= threshold
        nl = int(mask.sum())
        nr = n - nl
        if nl < min_leaf or nr < min_leaf:
            continue
        sl = yn[mask].sum()
        score = sl * sl / nl + (total - sl) ** 2 / nr
        if score > best_score:
            best, best_score = (int(f), threshold), score
    return best


def fit_tree(
    X,
    y,
    max_depth: int | None = None,
    min_samples_leaf: int = 1,
    max_features: float = 1.0,
    randomized_splits: bool = False,
    rng: np.random.Generator | None = None,
) -> Tree:
    """Grow a variance-reduction regression tree; leaves predict node means.

    With ``randomized_splits`` each candidate feature gets a single threshold
    drawn uniformly between its node minimum and maximum (the Extra-Trees
    rule) instead of a full scan of cut points.
    """
    X, y = check_inputs(X, y)
    if min_samples_leaf < 1:
        raise FitError("min_samples_leaf must be >= 1")
    if not 0.0 < max_features <= 1.0:
        raise FitError("max_features must be in (0, 1]")
    if rng is None:
        rng = np.random.default_rng(0)
    n_features = X.shape[1]
    n_candidates = max(1, int(round(max_features * n_features)))
    all_features = np.arange(n_features)

    feature, threshold, left, right, value, counts = [], [], [], [], [], []
    # (row indices, depth, parent id, is_left)
    stack = [(np.arange(X.shape[0]), 0, -1, False)]
    while stack:
        idx, depth, parent, is_left = stack.pop()
        node = len(feature)
        if parent >= 0:
            (left if is_left else right)[parent] = node
        yn = y[idx]
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(yn.mean()))
        counts.append(int(idx.size))

        if (max_depth is not None and depth >= max_depth) or idx.size < 2 * min_samples_leaf or yn.min() == yn.max():
            continue
        Xn = X[idx]
        if n_candidates < n_features:
            features = np.sort(rng.choice(n_features, size=n_candidates, replace=False))
        else:
            features = all_features
        if randomized_splits:
            split = _best_random_split(Xn, yn, features, min_samples_leaf, rng)
        else:
            split = _best_exact_split(Xn, yn, features, min_samples_leaf)
        if split is None:
            continue
        f, t = split
        feature[node] = f
        threshold[node] = t
        mask = Xn[:, f] <= t
        # right pushed first so the left subtree is numbered first (preorder)
        stack.append((idx[~mask], depth + 1, node, False))
        stack.append((idx[mask], depth + 1, node, True))

    return Tree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=float),
        n_samples=np.array(counts, dtype=np.int64),
    )
