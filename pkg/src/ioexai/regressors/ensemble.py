"""Tree ensembles and least squares behind one ``EnsembleModel`` value."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .tree import FitError, Tree, check_inputs, fit_tree

KINDS = ("random_forest", "extra_trees", "gradient_boosting", "adaboost_r2", "linear")
BOOSTING_KINDS = ("gradient_boosting", "adaboost_r2")
AUTO = "auto"

# Defaults for boosting mirror the usual toolkit: shallow base trees; unit
# learning rate for AdaBoost.R2, 0.1 shrinkage for gradient boosting.
_BOOST_DEPTH = 3
_LEARNING_RATE = {"gradient_boosting": 0.1, "adaboost_r2": 1.0}

_MASK64 = (1 << 64) - 1
_GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> int:
    z = state & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seeds(fit_seed: int, count: int) -> list[int]:
    """Per-tree seeds: output ``i`` is splitmix64(fit_seed + (i + 1) * gamma)."""
    base = fit_seed & _MASK64
    return [splitmix64(base + (i + 1) * _GOLDEN_GAMMA) for i in range(count)]


@dataclass(frozen=True)
class FitConfig:
    """Ensemble hyperparameters.

    ``max_depth`` and ``learning_rate`` accept ``"auto"``: unlimited depth
    for the averaging forests and depth 3 for boosting; learning rate 0.1
    for gradient boosting and 1.0 for AdaBoost.R2. ``max_depth=None`` is an
    explicit "unlimited".
    """

    n_estimators: int = 100
    max_depth: int | None | str = AUTO
    min_samples_leaf: int = 1
    learning_rate: float | str = AUTO
    subsample: float = 1.0
    max_features: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_estimators < 1:
            raise FitError(f"n_estimators must be >= 1, got {self.n_estimators}")
        if self.min_samples_leaf < 1:
            raise FitError("min_samples_leaf must be >= 1")
        if self.max_depth not in (AUTO, None) and (not isinstance(self.max_depth, int) or self.max_depth < 0):
            raise FitError(f"max_depth must be a non-negative integer, None or 'auto', got {self.max_depth!r}")
        if self.learning_rate != AUTO and not 0.0 < self.learning_rate <= 1.0:
            raise FitError("learning_rate must be in (0, 1]")
        for name in ("subsample", "max_features"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise FitError(f"{name} must be in (0, 1]")

    def depth_for(self, kind: str) -> int | None:
        if self.max_depth == AUTO:
            return _BOOST_DEPTH if kind in BOOSTING_KINDS else None
        return self.max_depth

    def rate_for(self, kind: str) -> float:
        if self.learning_rate == AUTO:
            return _LEARNING_RATE.get(kind, 1.0)
        return float(self.learning_rate)

    def as_items(self) -> dict[str, str]:
        return {f.name: _config_text(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "FitConfig":
        kwargs = {}
        for key, raw in items.items():
            raw = raw.strip()
            if key in ("n_estimators", "min_samples_leaf", "seed"):
                kwargs[key] = int(raw)
            elif key == "max_depth":
                kwargs[key] = AUTO if raw == AUTO else None if raw.lower() in ("none", "unlimited") else int(raw)
            elif key == "learning_rate":
                kwargs[key] = AUTO if raw == AUTO else float(raw)
            elif key in ("subsample", "max_features"):
                kwargs[key] = float(raw)
            else:
                raise FitError(f"unknown fit option {key!r}")
        return cls(**kwargs)


def _config_text(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True, eq=False)
class EnsembleModel:
    """A trained regressor.

    Prediction rules by kind:

    * averaging forests: weighted mean of tree outputs (uniform weights)
    * gradient boosting: ``intercept + sum(weight_t * tree_t(x))``
    * AdaBoost.R2: weighted median of tree outputs
    * linear: ``intercept + coef @ x``
    """

    kind: str
    feature_names: tuple[str, ...]
    target_name: str
    fit_seed: int
    trees: tuple[Tree, ...] = ()
    tree_weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    intercept: float = 0.0
    coef: np.ndarray | None = None
    config: FitConfig = FitConfig()
    metadata: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected rows of {self.n_features} features {self.feature_names}, got shape {X.shape}")
        # sums accumulate term by term in a fixed order so a row's prediction
        # does not depend on which other rows share the batch
        if self.kind == "linear":
            return _ordered_sum(self.intercept, (X[:, j] for j in range(X.shape[1])), self.coef)
        if self.kind == "adaboost_r2":
            return weighted_median(self.tree_outputs(X), self.tree_weights)
        total = _ordered_sum(0.0, (t.predict(X) for t in self.trees), self.tree_weights)
        if self.kind == "gradient_boosting":
            return self.intercept + total
        return total / self.tree_weights.sum()

    def tree_outputs(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.column_stack([t.predict(X) for t in self.trees])


def _ordered_sum(start: float, columns, weights) -> np.ndarray:
    total = None
    for column, weight in zip(columns, weights):
        term = weight * column
        total = term if total is None else total + term
    if total is None:
        raise ValueError("model has no terms to sum")
    return start + total


def predict(model: EnsembleModel, x):
    """Predict one feature vector (returns a float) or a matrix of rows (returns an array)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return float(model.predict(arr[None, :])[0])
    return model.predict(arr)


def weighted_median(outputs: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per row, the first sorted output whose cumulative weight reaches half the total."""
    order = np.argsort(outputs, axis=1, kind="stable")
    cdf = np.cumsum(weights[order], axis=1)
    at_or_above = cdf >= 0.5 * cdf[:, -1:]
    pick = order[np.arange(outputs.shape[0]), np.argmax(at_or_above, axis=1)]
    return outputs[np.arange(outputs.shape[0]), pick]


def training_loss(predictions, targets) -> float:
    """``1/(2K) * sum((target - prediction)^2)``."""
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    if p.size == 0:
        raise ValueError("training_loss needs at least one pair")
    return math.fsum((t - p) ** 2) / (2.0 * p.size)


def signed_residual_mean(predictions, targets) -> float:
    """``1/(2K) * sum(target - prediction)``: un-squared residual sum, a diagnostic only."""
    p = np.asarray(predictions, dtype=float).ravel()
    t = np.asarray(targets, dtype=float).ravel()
    if p.shape != t.shape or p.size == 0:
        raise ValueError("need equal, non-empty vectors")
    return math.fsum(t - p) / (2.0 * p.size)


def _fit_linear(X, y):
    design = np.column_stack([np.ones(X.shape[0]), X])
    solution, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    # lstsq returns the minimum-norm (pseudo-inverse) solution when rank deficient
    return float(solution[0]), solution[1:].copy(), int(rank) < design.shape[1]


def fit_ensemble(
    X,
    y,
    kind: str,
    cfg: FitConfig | None = None,
    feature_names=None,
    target_name: str = "y",
) -> EnsembleModel:
    """Fit one of :data:`KINDS`. Deterministic for a given ``cfg.seed``."""
    if kind not in KINDS:
        raise FitError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    cfg = cfg or FitConfig()
    X, y = check_inputs(X, y)
    n, p = X.shape
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{i}" for i in range(p))
    if len(names) != p:
        raise FitError(f"{len(names)} feature names for {p} columns")
    base = dict(kind=kind, feature_names=names, target_name=target_name, fit_seed=cfg.seed, config=cfg)

    if kind == "linear":
        intercept, coef, deficient = _fit_linear(X, y)
        return EnsembleModel(**base, intercept=intercept, coef=coef, metadata={"rank_deficient": deficient})

    depth = cfg.depth_for(kind)
    seeds = derive_seeds(cfg.seed, cfg.n_estimators)
    tree_args = dict(max_depth=depth, min_samples_leaf=cfg.min_samples_leaf, max_features=cfg.max_features)

    if kind in ("random_forest", "extra_trees"):
        trees = []
        for s in seeds:
            rng = np.random.default_rng(s)
            if kind == "random_forest":
                rows = rng.integers(0, n, size=n)
                trees.append(fit_tree(X[rows], y[rows], rng=rng, **tree_args))
            else:
                trees.append(fit_tree(X, y, randomized_splits=True, rng=rng, **tree_args))
        return EnsembleModel(**base, trees=tuple(trees), tree_weights=np.ones(len(trees)))

    if kind == "gradient_boosting":
        rate = cfg.rate_for(kind)
        intercept = float(y.mean())
        current = np.full(n, intercept)
        trees, curve = [], [training_loss(current, y)]
        n_sub = max(1, int(round(cfg.subsample * n)))
        for s in seeds:
            rng = np.random.default_rng(s)
            rows = np.sort(rng.choice(n, size=n_sub, replace=False)) if n_sub < n else np.arange(n)
            tree = fit_tree(X[rows], (y - current)[rows], rng=rng, **tree_args)
            current = current + rate * tree.predict(X)
            trees.append(tree)
            curve.append(training_loss(current, y))
        return EnsembleModel(
            **base,
            trees=tuple(trees),
            tree_weights=np.full(len(trees), rate),
            intercept=intercept,
            metadata={"train_loss_curve": curve},
        )

    return _fit_adaboost_r2(X, y, cfg, seeds, tree_args, base)


def _fit_adaboost_r2(X, y, cfg, seeds, tree_args, base) -> EnsembleModel:
    """AdaBoost.R2 with the linear loss and weighted-bootstrap resampling."""
    n = X.shape[0]
    rate = cfg.rate_for("adaboost_r2")
    sample_weight = np.full(n, 1.0 / n)
    trees, weights = [], []
    for t, s in enumerate(seeds):
        rng = np.random.default_rng(s)
        cdf = np.cumsum(sample_weight)
        cdf /= cdf[-1]
        rows = np.minimum(np.searchsorted(cdf, rng.random(n), side="right"), n - 1)
        tree = fit_tree(X[rows], y[rows], rng=rng, **tree_args)
        error = np.abs(tree.predict(X) - y)
        max_error = error.max()
        if max_error > 0:
            error = error / max_error
        avg_loss = float(np.dot(sample_weight, error))
        if avg_loss <= 0:
            trees.append(tree)
            weights.append(1.0)
            break
        if avg_loss >= 0.5:
            if not trees:
                trees.append(tree)
                weights.append(1.0)
            break
        beta = avg_loss / (1.0 - avg_loss)
        trees.append(tree)
        weights.append(rate * math.log(1.0 / beta))
        if t < len(seeds) - 1:
            sample_weight = sample_weight * np.power(beta, (1.0 - error) * rate)
            sample_weight /= sample_weight.sum()
    return EnsembleModel(**base, trees=tuple(trees), tree_weights=np.array(weights), metadata={"rounds": len(trees)})


def with_metadata(model: EnsembleModel, **items) -> EnsembleModel:
    return replace(model, metadata={**model.metadata, **items})
