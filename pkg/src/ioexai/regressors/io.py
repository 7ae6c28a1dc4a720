"""Versioned text serialization of :class:`EnsembleModel`.

Layout (one item per line, reals as ``float.hex`` so round trips are exact)::

    ioexai-model
    format_version 1
    kind extra_trees
    target cqi
    features speed_kmh rssi_dbm ...
    fit_seed 7
    config n_estimators=100
    ...
    meta rank_deficient=0
    intercept 0x0.0p+0
    coef <hex> <hex> ...
    trees 100
    tree <weight> <n_nodes>
    <feature> <threshold> <left> <right> <value> <n_samples>   (preorder)
    ...
    end
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .ensemble import KINDS, EnsembleModel, FitConfig
from .tree import Tree

MAGIC = "ioexai-model"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno is not None else message)


class ModelVersionError(ModelFormatError):
    def __init__(self, found: int, supported: int = FORMAT_VERSION):
        self.found = found
        self.supported = supported
        super().__init__(f"model file format version {found} is newer than supported version {supported}")


def _hex(x: float) -> str:
    return float(x).hex()


def dumps(model: EnsembleModel) -> str:
    for name in model.feature_names + (model.target_name,):
        if not name or any(c.isspace() for c in name):
            raise ValueError(f"names must be non-empty and contain no whitespace: {name!r}")
    lines = [
        MAGIC,
        f"format_version {FORMAT_VERSION}",
        f"kind {model.kind}",
        f"target {model.target_name}",
        "features " + " ".join(model.feature_names),
        f"fit_seed {model.fit_seed}",
    ]
    lines += [f"config {k}={v}" for k, v in model.config.as_items().items()]
    if "rank_deficient" in model.metadata:
        lines.append(f"meta rank_deficient={int(bool(model.metadata['rank_deficient']))}")
    lines.append(f"intercept {_hex(model.intercept)}")
    coef = () if model.coef is None else model.coef
    lines.append("coef" + "".join(" " + _hex(c) for c in coef))
    lines.append(f"trees {len(model.trees)}")
    for tree, weight in zip(model.trees, model.tree_weights):
        lines.append(f"tree {_hex(weight)} {tree.node_count}")
        for i in range(tree.node_count):
            lines.append(
                f"{tree.feature[i]} {_hex(tree.threshold[i])} {tree.left[i]} {tree.right[i]} "
                f"{_hex(tree.value[i])} {tree.n_samples[i]}"
            )
    lines.append("end")
    return "\n".join(lines) + "\n"


class _Reader:
    def __init__(self, text: str):
        self.lines = text.split("\n")
        if self.lines and self.lines[-1] == "":
            self.lines.pop()
        self.pos = 0

    def next(self, what: str) -> str:
        if self.pos >= len(self.lines):
            raise ModelFormatError(f"unexpected end of file, expected {what}", self.pos + 1)
        self.pos += 1
        return self.lines[self.pos - 1]

    def keyed(self, key: str) -> str:
        line = self.next(key)
        head, _, rest = line.partition(" ")
        if head != key:
            raise ModelFormatError(f"expected '{key}', got {line!r}", self.pos)
        return rest

    def peek_key(self) -> str | None:
        if self.pos >= len(self.lines):
            return None
        return self.lines[self.pos].partition(" ")[0]

    def fail(self, message: str):
        raise ModelFormatError(message, self.pos)


def loads(text: str) -> EnsembleModel:
    r = _Reader(text)
    if r.next("header") != MAGIC:
        r.fail("not an ioexai model file")
    try:
        version = int(r.keyed("format_version"))
    except ValueError:
        r.fail("bad format_version")
    if version > FORMAT_VERSION:
        raise ModelVersionError(version)
    if version < 1:
        r.fail(f"unknown format version {version}")
    try:
        kind = r.keyed("kind")
        if kind not in KINDS:
            r.fail(f"unknown model kind {kind!r}")
        target = r.keyed("target")
        features = tuple(r.keyed("features").split())
        fit_seed = int(r.keyed("fit_seed"))
        config_items = {}
        while r.peek_key() == "config":
            key, _, value = r.keyed("config").partition("=")
            config_items[key] = value
        metadata = {}
        while r.peek_key() == "meta":
            key, _, value = r.keyed("meta").partition("=")
            metadata[key] = bool(int(value)) if key == "rank_deficient" else value
        intercept = float.fromhex(r.keyed("intercept"))
        coef_text = r.keyed("coef").split()
        coef = np.array([float.fromhex(c) for c in coef_text]) if kind == "linear" else None
        if coef is not None and coef.size != len(features):
            r.fail(f"{coef.size} coefficients for {len(features)} features")
        n_trees = int(r.keyed("trees"))
        trees, weights = [], []
        for _ in range(n_trees):
            weight_hex, n_nodes = r.keyed("tree").split()
            weights.append(float.fromhex(weight_hex))
            rows = [r.next("tree node").split() for _ in range(int(n_nodes))]
            if any(len(row) != 6 for row in rows):
                r.fail("tree node lines need 6 fields")
            trees.append(
                Tree(
                    feature=np.array([int(row[0]) for row in rows], dtype=np.int64),
                    threshold=np.array([float.fromhex(row[1]) for row in rows]),
                    left=np.array([int(row[2]) for row in rows], dtype=np.int64),
                    right=np.array([int(row[3]) for row in rows], dtype=np.int64),
                    value=np.array([float.fromhex(row[4]) for row in rows]),
                    n_samples=np.array([int(row[5]) for row in rows], dtype=np.int64),
                )
            )
        if r.next("end") != "end":
            r.fail("expected 'end'")
        config = FitConfig.from_items(config_items)
    except ModelFormatError:
        raise
    except ValueError as exc:
        raise ModelFormatError(str(exc), r.pos) from None
    for tree in trees:
        n_nodes = tree.node_count
        internal = tree.feature >= 0
        if np.any(tree.feature >= len(features)) or np.any(
            internal & ((tree.left <= 0) | (tree.left >= n_nodes) | (tree.right <= 0) | (tree.right >= n_nodes))
        ):
            raise ModelFormatError("tree references a missing feature or node")
    return EnsembleModel(
        kind=kind,
        feature_names=features,
        target_name=target,
        fit_seed=fit_seed,
        trees=tuple(trees),
        tree_weights=np.array(weights, dtype=float),
        intercept=intercept,
        coef=coef,
        config=config,
        metadata=metadata,
    )


def save_model(model: EnsembleModel, path: str | Path) -> None:
    Path(path).write_text(dumps(model), encoding="utf-8")


def load_model(path: str | Path) -> EnsembleModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFormatError(f"cannot read model file: {exc}") from exc
    return loads(text)
