"""Exact Shapley attribution by coalition enumeration, plus a permutation-sampling oracle.

The characteristic function is interventional mean masking: a coalition
keeps the explained instance's values for its members and pins every other
feature to its background mean, then asks the model for a prediction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

MAX_EXACT_FEATURES = 20


class EnumerationLimitError(ValueError):
    pass


@dataclass
class EvaluationCounter:
    """Tallies of coalition values and model rows evaluated."""

    coalitions: int = 0
    model_rows: int = 0
    instances: int = 0


def as_batch_function(model) -> Callable[[np.ndarray], np.ndarray]:
    """Accept an object with ``predict(X)`` or a plain callable on 2-D arrays."""
    if hasattr(model, "predict"):
        return lambda X: np.asarray(model.predict(X), dtype=float)
    if callable(model):
        return lambda X: np.asarray(model(X), dtype=float).reshape(-1)
    raise TypeError(f"cannot evaluate {type(model).__name__}: needs predict() or to be callable")


@dataclass(frozen=True)
class BackgroundSet:
    data: np.ndarray
    feature_names: tuple[str, ...]
    means: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        data = np.atleast_2d(np.asarray(self.data, dtype=float))
        if data.shape[0] == 0:
            raise ValueError("background set is empty")
        if data.shape[1] != len(self.feature_names):
            raise ValueError(f"{data.shape[1]} background columns for {len(self.feature_names)} feature names")
        means = data.mean(axis=0)
        if not np.all(np.isfinite(means)):
            raise ValueError("background means must be finite")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "means", means)

    @classmethod
    def from_rows(cls, X, feature_names: Sequence[str], cap: int | None = 200, seed: int = 0) -> "BackgroundSet":
        """Background from a row matrix; more than ``cap`` rows are subsampled under ``seed``."""
        X = np.asarray(X, dtype=float)
        if cap is not None and X.shape[0] > cap:
            keep = np.sort(np.random.default_rng(seed).choice(X.shape[0], size=cap, replace=False))
            X = X[keep]
        return cls(X, tuple(feature_names))

    @property
    def n_features(self) -> int:
        return len(self.feature_names)


@dataclass(frozen=True)
class Explanation:
    base_value: float
    phi: np.ndarray
    instance: np.ndarray
    feature_names: tuple[str, ...]
    prediction: float
    stderr: np.ndarray | None = None

    @property
    def efficiency_gap(self) -> float:
        return abs(self.base_value + math.fsum(self.phi) - self.prediction)


@dataclass(frozen=True)
class GlobalImportance:
    feature_names: tuple[str, ...]
    mean_abs_phi: np.ndarray
    rank: tuple[int, ...]
    n_rows: int

    def ranked(self) -> list[tuple[str, float]]:
        return [(self.feature_names[i], float(self.mean_abs_phi[i])) for i in self.rank]


def shapley_weight(n: int, c: int) -> float:
    """``c! (n - c - 1)! / n!``, the weight of a size-``c`` coalition among ``n`` players."""
    if not 0 <= c <= n - 1:
        raise ValueError(f"coalition size {c} outside [0, {n - 1}]")
    return math.factorial(c) * math.factorial(n - c - 1) / math.factorial(n)


def shapley_weight_exact(n: int, c: int) -> Fraction:
    if not 0 <= c <= n - 1:
        raise ValueError(f"coalition size {c} outside [0, {n - 1}]")
    return Fraction(math.factorial(c) * math.factorial(n - c - 1), math.factorial(n))


def shapley_weight_binomial(n: int, c: int) -> Fraction:
    """Equivalent form ``(1/n) * C(n - 1, c)^-1``."""
    if not 0 <= c <= n - 1:
        raise ValueError(f"coalition size {c} outside [0, {n - 1}]")
    return Fraction(1, n) / math.comb(n - 1, c)


def _check_instance(instance, bg: BackgroundSet) -> np.ndarray:
    x = np.asarray(instance, dtype=float).reshape(-1)
    if x.shape[0] != bg.n_features:
        raise ValueError(f"instance has {x.shape[0]} features, background has {bg.n_features}")
    if not np.all(np.isfinite(x)):
        raise ValueError("instance contains non-finite values")
    return x


def hybrid(instance: np.ndarray, coalition: Iterable[int], means: np.ndarray) -> np.ndarray:
    row = means.copy()
    members = list(coalition)
    row[members] = instance[members]
    return row


def coalition_value(model, instance, coalition: Iterable[int], bg: BackgroundSet) -> float:
    x = _check_instance(instance, bg)
    members = sorted(set(int(i) for i in coalition))
    if any(not 0 <= i < bg.n_features for i in members):
        raise IndexError(f"coalition {members} references a feature outside [0, {bg.n_features})")
    f = as_batch_function(model)
    return float(f(hybrid(x, members, bg.means)[None, :])[0])


def _coalition_masks(n: int) -> np.ndarray:
    """Boolean membership table: row ``m`` has bit ``j`` of ``m`` at column ``j``."""
    m = np.arange(1 << n, dtype=np.int64)
    return ((m[:, None] >> np.arange(n)) & 1).astype(bool)


def _weights_by_size(n: int) -> np.ndarray:
    return np.array([shapley_weight(n, c) for c in range(n)])


def _phi_from_values(values: np.ndarray, n: int) -> np.ndarray:
    """Shapley values from all ``2^n`` coalition values of one or more games.

    ``values`` has shape ``(games, 2^n)`` indexed by coalition bitmask.
    """
    masks = np.arange(1 << n, dtype=np.int64)
    sizes = np.array([bin(int(m)).count("1") for m in masks])
    weights = _weights_by_size(n)
    phi = np.empty((values.shape[0], n))
    for i in range(n):
        without = masks[(masks >> i) & 1 == 0]
        w = weights[sizes[without]]
        phi[:, i] = (values[:, without | (1 << i)] - values[:, without]) @ w
    return phi


def shapley_exact_many(
    model,
    X,
    bg: BackgroundSet,
    counter: EvaluationCounter | None = None,
    chunk: int = 64,
) -> list[Explanation]:
    """Exact Shapley values for every row of ``X``.

    Each instance needs the ``2^n`` coalition values once; all players share
    them. Rows are evaluated in chunks to bound memory.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = bg.n_features
    if n > MAX_EXACT_FEATURES:
        raise EnumerationLimitError(
            f"{n} features means 2^{n} coalitions per instance; "
            "use shapley_permutation_oracle for feature sets above "
            f"{MAX_EXACT_FEATURES}"
        )
    for row in X:
        _check_instance(row, bg)
    f = as_batch_function(model)
    member = _coalition_masks(n)
    n_coalitions = 1 << n
    out = []
    for start in range(0, X.shape[0], chunk):
        block = X[start : start + chunk]
        hybrids = np.where(member[None, :, :], block[:, None, :], bg.means[None, None, :])
        values = f(hybrids.reshape(-1, n)).reshape(block.shape[0], n_coalitions)
        phi = _phi_from_values(values, n)
        if counter is not None:
            counter.coalitions += block.shape[0] * n_coalitions
            counter.model_rows += block.shape[0] * n_coalitions
            counter.instances += block.shape[0]
        for k in range(block.shape[0]):
            out.append(
                Explanation(
                    base_value=float(values[k, 0]),
                    phi=phi[k],
                    instance=block[k].copy(),
                    feature_names=bg.feature_names,
                    prediction=float(values[k, -1]),
                )
            )
    return out


def shapley_exact(model, instance, bg: BackgroundSet, counter: EvaluationCounter | None = None) -> Explanation:
    return shapley_exact_many(model, _check_instance(instance, bg)[None, :], bg, counter)[0]


def shapley_permutation_oracle(
    model,
    instance,
    bg: BackgroundSet,
    n_permutations: int = 1000,
    seed: int = 0,
    exhaustive: bool = False,
) -> Explanation:
    """Average marginal contributions over player orderings.

    Orderings are drawn uniformly under ``seed``; with ``exhaustive`` every
    one of the ``n!`` orderings is used once and the result is the exact
    Shapley value. ``stderr`` holds the standard error of each mean.
    """
    x = _check_instance(instance, bg)
    n = bg.n_features
    if exhaustive:
        orders = np.array(list(itertools.permutations(range(n))), dtype=np.int64).reshape(-1, n)
    else:
        if n_permutations < 1:
            raise ValueError("n_permutations must be >= 1")
        rng = np.random.default_rng(seed)
        orders = np.array([rng.permutation(n) for _ in range(n_permutations)], dtype=np.int64).reshape(-1, n)
    P = orders.shape[0]
    # prefix k of an ordering: its first k players take the instance values
    included = np.zeros((P, n + 1, n), dtype=bool)
    position = np.empty((P, n), dtype=np.int64)
    position[np.arange(P)[:, None], orders] = np.arange(n)[None, :]
    for k in range(1, n + 1):
        included[:, k, :] = position < k
    rows = np.where(included, x[None, None, :], bg.means[None, None, :])
    f = as_batch_function(model)
    values = f(rows.reshape(-1, n)).reshape(P, n + 1)
    steps = np.diff(values, axis=1)  # steps[p, k] = gain from adding orders[p, k]
    marginals = np.empty((P, n))
    marginals[np.arange(P)[:, None], orders] = steps
    phi = marginals.mean(axis=0)
    stderr = marginals.std(axis=0, ddof=1) / math.sqrt(P) if P > 1 else np.zeros(n)
    return Explanation(
        base_value=float(values[0, 0]),
        phi=phi,
        instance=x,
        feature_names=bg.feature_names,
        prediction=float(values[0, -1]),
        stderr=stderr,
    )


def importance_from_explanations(explanations: Sequence[Explanation], feature_names: Sequence[str]) -> GlobalImportance:
    if not explanations:
        raise ValueError("no explanations to aggregate")
    phis = np.vstack([e.phi for e in explanations])
    mean_abs = np.abs(phis).mean(axis=0)
    # stable sort on the negated score keeps lower indices first on ties
    rank = tuple(int(i) for i in np.argsort(-mean_abs, kind="stable"))
    return GlobalImportance(tuple(feature_names), mean_abs, rank, len(explanations))


def global_importance(
    model,
    X,
    bg: BackgroundSet,
    counter: EvaluationCounter | None = None,
) -> GlobalImportance:
    """Mean absolute exact Shapley value per feature over the rows of ``X``.

    ``X`` may also be a :class:`~ioexai.dataset.Dataset`; its columns named
    like the background features are used.
    """
    if hasattr(X, "matrix"):
        X = X.matrix(bg.feature_names)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValueError("cannot compute importance over zero rows")
    return importance_from_explanations(shapley_exact_many(model, X, bg, counter), bg.feature_names)
