"""Quality-aware service delivery: associate users, fit, attribute, predict.

``run_pipeline`` computes per-user link metrics, grants gNB associations
under the RSRP / RSRQ / mobility constraints, fits one regressor per target
on the training partition, extracts exact Shapley importances on the test
partition and predicts the downlink and uplink rates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import radio_metrics as rm
from .dataset import MODEL_FEATURES, Dataset, DatasetError, GnbSite, link_rssi_dbm, serving_metrics
from .kvconfig import ConfigError, format_kv, parse_kv, read_kv
from .regressors import KINDS, EnsembleModel, FitConfig, fit_ensemble, load_model, save_model, training_loss
from .shapley import BackgroundSet, EvaluationCounter, GlobalImportance, importance_from_explanations, shapley_exact_many

COVERAGE = "coverage"
LITERAL = "literal"
TARGETS = ("cqi", "dl_mbps", "ul_mbps")


class AssociationError(ValueError):
    pass


class EmptyCohortError(RuntimeError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    omega_dbm: float = -110.0
    zeta_db: float = -12.0
    h_max_m: float = 1000.0
    delta_t_h: float = 0.01
    mobility_mode: str = COVERAGE
    kind: str = "extra_trees"
    fit: FitConfig = FitConfig()
    targets: tuple[str, ...] = TARGETS
    explain_rows: int | None = None
    background_rows: int = 200
    background_seed: int = 0
    num_rbs: int = 100
    bandwidth_hz: float = 20e6
    linear_uses_cell_id: bool = False

    def __post_init__(self) -> None:
        if not self.h_max_m > 0:
            raise ConfigError(f"h_max_m must be > 0, got {self.h_max_m}")
        if not self.delta_t_h > 0:
            raise ConfigError(f"delta_t_h must be > 0, got {self.delta_t_h}")
        if self.mobility_mode not in (COVERAGE, LITERAL):
            raise ConfigError(f"mobility_mode must be {COVERAGE!r} or {LITERAL!r}")
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        targets = tuple(self.targets)
        unknown = [t for t in targets if t not in MODEL_FEATURES or t == "cell_id"]
        if unknown or "cqi" not in targets or len(set(targets)) != len(targets):
            raise ConfigError(f"targets must be distinct metric columns including cqi, got {targets}")
        object.__setattr__(self, "targets", targets)
        if self.explain_rows is not None and self.explain_rows < 1:
            raise ConfigError("explain_rows must be >= 1")
        if self.background_rows < 1:
            raise ConfigError("background_rows must be >= 1")
        if self.num_rbs < 1 or not self.bandwidth_hz > 0:
            raise ConfigError("num_rbs and bandwidth_hz must be positive")

    @property
    def seed(self) -> int:
        return self.fit.seed

    def with_seed(self, seed: int) -> "PipelineConfig":
        return replace(self, fit=replace(self.fit, seed=seed))

    def as_items(self) -> dict[str, str]:
        items = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "fit":
                items.update(value.as_items())
            elif f.name == "targets":
                items["targets"] = " ".join(value)
            elif value is None:
                items[f.name] = "all"
            elif isinstance(value, bool):
                items[f.name] = "yes" if value else "no"
            elif isinstance(value, float):
                items[f.name] = repr(value)
            else:
                items[f.name] = str(value)
        return items

    @classmethod
    def from_items(cls, items: dict[str, str], source: str = "<config>") -> "PipelineConfig":
        fit_keys = {f.name for f in fields(FitConfig)}
        fit_items, kwargs = {}, {}
        for key, raw in items.items():
            raw = raw.strip()
            try:
                if key in fit_keys:
                    fit_items[key] = raw
                elif key in ("omega_dbm", "zeta_db", "h_max_m", "delta_t_h", "bandwidth_hz"):
                    kwargs[key] = float(raw)
                elif key in ("background_rows", "background_seed", "num_rbs"):
                    kwargs[key] = int(raw)
                elif key == "explain_rows":
                    kwargs[key] = None if raw == "all" else int(raw)
                elif key == "targets":
                    kwargs[key] = tuple(raw.replace(",", " ").split())
                elif key == "linear_uses_cell_id":
                    if raw not in ("yes", "no"):
                        raise ValueError(raw)
                    kwargs[key] = raw == "yes"
                elif key in ("mobility_mode", "kind"):
                    kwargs[key] = raw
                else:
                    raise ConfigError(f"unknown pipeline option {key!r}", source)
            except ValueError as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"bad value for {key}: {raw!r}", source) from None
        try:
            kwargs["fit"] = FitConfig.from_items(fit_items)
        except ValueError as exc:
            raise ConfigError(str(exc), source) from None
        return cls(**kwargs)

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "PipelineConfig":
        items = {}
        for lineno, key, value in parse_kv(text, source):
            if key in items:
                raise ConfigError(f"duplicate key {key!r}", source, lineno)
            items[key] = value
        return cls.from_items(items, source)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        items = {}
        for lineno, key, value in read_kv(path):
            if key in items:
                raise ConfigError(f"duplicate key {key!r}", str(path), lineno)
            items[key] = value
        return cls.from_items(items, str(path))

    def dumps(self) -> str:
        return format_kv(self.as_items())


# --------------------------------------------------------------------------- association


def check_mobility_constraint(speed_kmh: float, delta_t_h: float, h_max_m: float, mode: str = COVERAGE) -> bool:
    """Does the distance covered in one epoch satisfy the coverage constraint?

    ``coverage`` passes users that stay within ``h_max_m`` of where they
    started; ``literal`` applies the reversed inequality (displacement at
    least ``h_max_m``).
    """
    if speed_kmh < 0 or delta_t_h < 0 or h_max_m < 0:
        raise ValueError("mobility inputs must be non-negative")
    displacement_m = speed_kmh * delta_t_h * 1000.0
    if mode == COVERAGE:
        return displacement_m <= h_max_m
    if mode == LITERAL:
        return displacement_m >= h_max_m
    raise ValueError(f"unknown mobility mode {mode!r}")


@dataclass(frozen=True)
class AssociationDecision:
    """Per-user association outcome.

    ``candidate`` is the best-RSRP cell, ``cell`` the granted one (-1 when
    unassociated). ``z[k, j]`` is 1 when user ``k`` is served by
    ``cell_ids[j]``.
    """

    cell_ids: tuple[int, ...]
    candidate: np.ndarray
    cell: np.ndarray
    z: np.ndarray
    rsrp_ok: np.ndarray
    rsrq_ok: np.ndarray
    mobility_ok: np.ndarray
    rssi_dbm: np.ndarray
    rsrp_dbm: np.ndarray
    rsrq_db: np.ndarray
    sinr_db: np.ndarray
    cqi: np.ndarray

    @property
    def associated(self) -> np.ndarray:
        return self.cell >= 0

    @property
    def n_associated(self) -> int:
        return int(self.associated.sum())

    def __len__(self) -> int:
        return int(self.cell.shape[0])


def _cell_ids(ds: Dataset, topology) -> tuple[int, ...]:
    if topology:
        return tuple(sorted(s.cell_id for s in topology))
    ids = sorted({r.cell_id for r in ds.records if r.cell_id is not None})
    if not ids:
        raise AssociationError("no topology and no cell ids in the dataset")
    return tuple(ids)


def associate_users(
    ds: Dataset,
    topology: Sequence[GnbSite] | None,
    cfg: PipelineConfig,
    link_rssi: np.ndarray | None = None,
) -> AssociationDecision:
    """Pick the best-RSRP cell per user and grant it when every constraint holds.

    Per-cell RSSI comes from ``link_rssi`` (users x cells in ``cell_id``
    order) when given, else from the path-loss channel at the user's
    position. Users without either fall back to their recorded cell and
    measurements; a user with neither position nor RSSI is an error.
    """
    cell_ids = _cell_ids(ds, topology)
    n = len(ds)
    noise = rm.noise_power_dbm(cfg.bandwidth_hz)
    if link_rssi is not None:
        link_rssi = np.asarray(link_rssi, dtype=float)
        if link_rssi.shape != (n, len(cell_ids)):
            raise AssociationError(f"link_rssi must have shape {(n, len(cell_ids))}, got {link_rssi.shape}")
    elif topology and ds.channel is not None:
        by_id = sorted(topology, key=lambda s: s.cell_id)
        positioned = [k for k, r in enumerate(ds.records) if r.position is not None]
        if positioned:
            link_rssi = np.full((n, len(cell_ids)), np.nan)
            link_rssi[positioned] = link_rssi_dbm(by_id, ds.channel, [ds.records[k].position for k in positioned])

    candidate = np.full(n, -1, dtype=np.int64)
    metrics = np.full((n, 4), np.nan)
    cqi = np.zeros(n, dtype=np.int64)
    for k, rec in enumerate(ds.records):
        if link_rssi is not None and np.all(np.isfinite(link_rssi[k])):
            # RSRP is monotone in RSSI, and argmax keeps the lowest cell id on ties
            best = int(np.argmax(link_rssi[k]))
            rssi, rsrp, rsrq_db, sinr_db, cqi[k] = serving_metrics(link_rssi[k], best, cfg.num_rbs, noise)
            candidate[k] = cell_ids[best]
        elif rec.rssi_dbm is not None or rec.rsrp_dbm is not None:
            if rec.cell_id is None:
                raise AssociationError(f"record {k}: no position and no cell id")
            rsrp = rec.rsrp_dbm if rec.rsrp_dbm is not None else rm.rsrp_from_rssi(rec.rssi_dbm, cfg.num_rbs)
            rssi = rec.rssi_dbm if rec.rssi_dbm is not None else rsrp + 10.0 * math.log10(rm.SUBCARRIERS_PER_RB * cfg.num_rbs)
            rsrq_db = rec.rsrq_db if rec.rsrq_db is not None else rm.rsrq(rssi, rsrp, cfg.num_rbs)
            # real traces do not expose interferers; trust their SINR when present
            sinr_db = rec.sinr_db if rec.sinr_db is not None else rm.sinr(rsrp, noise)
            cqi[k] = rm.cqi_from_sinr(sinr_db)[1]
            candidate[k] = rec.cell_id
        else:
            raise AssociationError(f"record {k}: neither a position nor an RSSI measurement")
        metrics[k] = (rssi, rsrp, rsrq_db, sinr_db)

    rsrp_ok = metrics[:, 1] >= cfg.omega_dbm
    rsrq_ok = metrics[:, 2] >= cfg.zeta_db
    mobility_ok = np.array(
        [
            r.speed_kmh is not None
            and check_mobility_constraint(r.speed_kmh, cfg.delta_t_h, cfg.h_max_m, cfg.mobility_mode)
            for r in ds.records
        ],
        dtype=bool,
    )
    granted = rsrp_ok & rsrq_ok & mobility_ok & np.isin(candidate, cell_ids)
    cell = np.where(granted, candidate, -1)
    z = np.zeros((n, len(cell_ids)), dtype=np.int8)
    column = {c: j for j, c in enumerate(cell_ids)}
    for k in np.flatnonzero(granted):
        z[k, column[int(cell[k])]] = 1
    return AssociationDecision(
        cell_ids=cell_ids,
        candidate=candidate,
        cell=cell,
        z=z,
        rsrp_ok=rsrp_ok,
        rsrq_ok=rsrq_ok,
        mobility_ok=mobility_ok,
        rssi_dbm=metrics[:, 0],
        rsrp_dbm=metrics[:, 1],
        rsrq_db=metrics[:, 2],
        sinr_db=metrics[:, 3],
        cqi=cqi,
    )


def audit_associations(decision: AssociationDecision, cfg: PipelineConfig, speeds: np.ndarray) -> list[str]:
    """Re-check every granted association against the constraints from scratch."""
    problems = []
    if np.any(decision.z.sum(axis=1) > 1):
        problems.append("a user is associated with more than one cell")
    for k in np.flatnonzero(decision.z.sum(axis=1) > 0):
        served = decision.cell_ids[int(np.argmax(decision.z[k]))]
        if served != decision.cell[k]:
            problems.append(f"user {k}: z and cell disagree")
        if not decision.rsrp_dbm[k] >= cfg.omega_dbm:
            problems.append(f"user {k}: RSRP {decision.rsrp_dbm[k]} below {cfg.omega_dbm}")
        if not decision.rsrq_db[k] >= cfg.zeta_db:
            problems.append(f"user {k}: RSRQ {decision.rsrq_db[k]} below {cfg.zeta_db}")
        if not (np.isfinite(speeds[k]) and check_mobility_constraint(speeds[k], cfg.delta_t_h, cfg.h_max_m, cfg.mobility_mode)):
            problems.append(f"user {k}: mobility constraint fails")
    if np.any((decision.cell >= 0) != (decision.z.sum(axis=1) == 1)):
        problems.append("cell and z disagree on who is associated")
    return problems


# --------------------------------------------------------------------------- pipeline


@dataclass(frozen=True)
class ExplanationTable:
    rows: np.ndarray
    base_value: np.ndarray
    phi: np.ndarray
    prediction: np.ndarray

    @property
    def efficiency_gap(self) -> np.ndarray:
        return np.abs(self.base_value + self.phi.sum(axis=1) - self.prediction)


@dataclass(frozen=True, eq=False)
class PipelineOutput:
    name: str
    kind: str
    config: PipelineConfig
    associations: AssociationDecision
    test_rows: np.ndarray
    predictions: dict[str, np.ndarray]
    truth: dict[str, np.ndarray]
    truth_columns: dict[str, np.ndarray]
    coefficients: dict[str, GlobalImportance]
    explanations: dict[str, ExplanationTable]
    loss_rows: np.ndarray
    loss_predictions: np.ndarray
    loss_truth: np.ndarray
    training_loss: float
    predicted_cqi_all: np.ndarray
    objective: float
    objective_truth: float
    counters: dict[str, int]
    models: dict[str, EnsembleModel] = field(default_factory=dict)

    @property
    def predicted_dl(self) -> np.ndarray | None:
        return self.predictions.get("dl_mbps")

    @property
    def predicted_ul(self) -> np.ndarray | None:
        return self.predictions.get("ul_mbps")


def model_features(target: str, kind: str = "extra_trees", linear_uses_cell_id: bool = False) -> tuple[str, ...]:
    """Every metric column except the target; linear models also drop the categorical cell id."""
    drop = {target}
    if kind == "linear" and not linear_uses_cell_id:
        drop.add("cell_id")
    return tuple(f for f in MODEL_FEATURES if f not in drop)


def objective_value(out: PipelineOutput, ds: Dataset | None = None) -> float:
    """Sum of model-predicted CQI over associated users; negative predictions count as 0."""
    chosen = out.associations.associated & np.isfinite(out.predicted_cqi_all)
    return math.fsum(np.maximum(out.predicted_cqi_all[chosen], 0.0))


def truth_objective(out: PipelineOutput, ds: Dataset) -> float:
    cqi = ds.column("cqi")
    chosen = out.associations.associated & np.isfinite(cqi)
    return math.fsum(cqi[chosen])


def run_pipeline(ds: Dataset, cfg: PipelineConfig, name: str | None = None) -> PipelineOutput:
    train = np.asarray(ds.train_indices, dtype=np.int64)
    test = np.asarray(ds.test_indices, dtype=np.int64)

    decision = associate_users(ds, ds.topology, cfg)
    speeds = ds.column("speed_kmh")
    problems = audit_associations(decision, cfg, speeds)
    if problems:
        raise RuntimeError("association audit failed: " + "; ".join(problems[:5]))
    if decision.n_associated == 0:
        raise EmptyCohortError("no user satisfies the association constraints")

    used = {t: model_features(t, cfg.kind, cfg.linear_uses_cell_id) for t in cfg.targets}
    needed = [f for f in MODEL_FEATURES if any(f in names or f == t for t, names in used.items())]
    fit_complete = ds.complete_rows(needed)
    test_rows = np.intersect1d(test, fit_complete)
    train_rows = np.intersect1d(train, fit_complete)
    if train_rows.size == 0 or test_rows.size == 0:
        raise DatasetError("need complete rows in both the train and the test partition")

    models, predictions, truth, coefficients, explanations = {}, {}, {}, {}, {}
    counters = {"model_evaluations": 0, "coalition_evaluations": 0, "explained_rows": 0}
    explain = test_rows if cfg.explain_rows is None else test_rows[: cfg.explain_rows]
    for target in cfg.targets:
        names = used[target]
        model = fit_ensemble(
            ds.matrix(names, train_rows), ds.column(target)[train_rows], cfg.kind, cfg.fit, names, target
        )
        models[target] = model
        X_test = ds.matrix(names, test_rows)
        raw = model.predict(X_test)
        counters["model_evaluations"] += test_rows.size
        predictions[target] = np.maximum(raw, 0.0)
        truth[target] = ds.column(target)[test_rows]

        bg = BackgroundSet.from_rows(ds.matrix(names, train_rows), names, cfg.background_rows, cfg.background_seed)
        counter = EvaluationCounter()
        exps = shapley_exact_many(model, ds.matrix(names, explain), bg, counter)
        if counter.coalitions != (1 << len(names)) * explain.size:
            raise RuntimeError("coalition counter does not match 2^|N| x explained rows")
        counters["coalition_evaluations"] += counter.coalitions
        counters["model_evaluations"] += counter.model_rows
        counters["explained_rows"] += counter.instances
        counters[f"coalition_evaluations_{target}"] = counter.coalitions
        coefficients[target] = importance_from_explanations(exps, names)
        explanations[target] = ExplanationTable(
            rows=explain.copy(),
            base_value=np.array([e.base_value for e in exps]),
            phi=np.vstack([e.phi for e in exps]),
            prediction=np.array([e.prediction for e in exps]),
        )

    cqi_names = used["cqi"]
    predicted_cqi_all = np.full(len(ds), np.nan)
    cqi_complete = ds.complete_rows(cqi_names)
    predicted_cqi_all[cqi_complete] = models["cqi"].predict(ds.matrix(cqi_names, cqi_complete))
    counters["model_evaluations"] += cqi_complete.size

    loss_rows = train_rows[decision.associated[train_rows]]
    if loss_rows.size == 0:
        raise EmptyCohortError("no associated user in the training partition to evaluate the loss on")
    loss_predictions = predicted_cqi_all[loss_rows]
    loss_truth = ds.column("cqi")[loss_rows]

    counters.update(
        gnbs=len(decision.cell_ids),
        users=len(ds),
        associated_users=decision.n_associated,
        features=len(cqi_names),
        cost_terms=len(decision.cell_ids) * len(ds) * len(cqi_names) + (1 << len(cqi_names)),
    )
    out = PipelineOutput(
        name=name or cfg.kind,
        kind=cfg.kind,
        config=cfg,
        associations=decision,
        test_rows=test_rows,
        predictions=predictions,
        truth=truth,
        truth_columns={c: ds.column(c)[test_rows] for c in MODEL_FEATURES if c != "cell_id"},
        coefficients=coefficients,
        explanations=explanations,
        loss_rows=loss_rows,
        loss_predictions=loss_predictions,
        loss_truth=loss_truth,
        training_loss=training_loss(loss_predictions, loss_truth),
        predicted_cqi_all=predicted_cqi_all,
        objective=0.0,
        objective_truth=0.0,
        counters=counters,
        models=models,
    )
    return replace(out, objective=objective_value(out), objective_truth=truth_objective(out, ds))


# --------------------------------------------------------------------------- run directories

ASSOCIATIONS_FILE = "associations.csv"
PREDICTIONS_FILE = "predictions.csv"
COEFFICIENTS_FILE = "coefficients.csv"
EXPLANATIONS_FILE = "explanations.csv"
LOSS_FILE = "loss_rows.csv"
CONFIG_FILE = "pipeline.conf"
SUMMARY_FILE = "summary.txt"


def _f(x) -> str:
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_run(out: PipelineOutput, directory: str | Path) -> list[Path]:
    """Serialize a run: one CSV per artifact, the config, the models and a summary."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    a = out.associations
    written = []

    path = directory / ASSOCIATIONS_FILE
    _write_rows(
        path,
        ("row", "candidate_cell", "cell_id", "rsrp_ok", "rsrq_ok", "mobility_ok", "rssi_dbm", "rsrp_dbm", "rsrq_db", "sinr_db", "cqi")
        + tuple(f"z_{c}" for c in a.cell_ids),
        (
            (k, int(a.candidate[k]), int(a.cell[k]), int(a.rsrp_ok[k]), int(a.rsrq_ok[k]), int(a.mobility_ok[k]),
             _f(a.rssi_dbm[k]), _f(a.rsrp_dbm[k]), _f(a.rsrq_db[k]), _f(a.sinr_db[k]), int(a.cqi[k]))
            + tuple(int(v) for v in a.z[k])
            for k in range(len(a))
        ),
    )
    written.append(path)

    path = directory / PREDICTIONS_FILE
    metric_names = tuple(out.truth_columns)
    targets = tuple(out.predictions)
    _write_rows(
        path,
        ("row",) + metric_names + tuple(f"pred_{t}" for t in targets),
        (
            (int(row),)
            + tuple(_f(out.truth_columns[m][i]) for m in metric_names)
            + tuple(_f(out.predictions[t][i]) for t in targets)
            for i, row in enumerate(out.test_rows)
        ),
    )
    written.append(path)

    path = directory / COEFFICIENTS_FILE
    _write_rows(
        path,
        ("target", "feature", "mean_abs_phi", "rank", "rows"),
        (
            (t, g.feature_names[i], _f(g.mean_abs_phi[i]), g.rank.index(i) + 1, g.n_rows)
            for t, g in out.coefficients.items()
            for i in range(len(g.feature_names))
        ),
    )
    written.append(path)

    path = directory / EXPLANATIONS_FILE
    _write_rows(
        path,
        ("target", "row", "feature", "phi", "base_value", "prediction"),
        (
            (t, int(e.rows[r]), out.coefficients[t].feature_names[j], _f(e.phi[r, j]), _f(e.base_value[r]), _f(e.prediction[r]))
            for t, e in out.explanations.items()
            for r in range(e.rows.size)
            for j in range(e.phi.shape[1])
        ),
    )
    written.append(path)

    path = directory / LOSS_FILE
    _write_rows(
        path,
        ("row", "cqi", "pred_cqi"),
        ((int(r), _f(t), _f(p)) for r, t, p in zip(out.loss_rows, out.loss_truth, out.loss_predictions)),
    )
    written.append(path)

    path = directory / CONFIG_FILE
    path.write_text(out.config.dumps(), encoding="utf-8")
    written.append(path)

    for target, model in out.models.items():
        path = directory / f"model_{target}.txt"
        save_model(model, path)
        written.append(path)

    summary = {
        "name": out.name,
        "kind": out.kind,
        "training_loss": repr(out.training_loss),
        "objective": repr(out.objective),
        "objective_truth": repr(out.objective_truth),
        "predicted_cqi_all": " ".join(_f(v) or "nan" for v in out.predicted_cqi_all),
    }
    summary.update({f"counter.{k}": str(v) for k, v in out.counters.items()})
    path = directory / SUMMARY_FILE
    path.write_text(format_kv(summary), encoding="utf-8")
    written.append(path)
    return written


def _read_rows(path: Path) -> list[dict[str, str]]:
    if not path.exists():
        raise FileNotFoundError(f"run artifact missing: {path}")
    with path.open(newline="", encoding="utf-8") as handle:
        return list(csv.DictReader(handle))


def _num(text: str) -> float:
    return math.nan if text == "" else float(text)


def read_run(directory: str | Path) -> PipelineOutput:
    """Rebuild a :class:`PipelineOutput` from the files :func:`write_run` produced."""
    directory = Path(directory)
    summary = {k: v for _, k, v in read_kv(directory / SUMMARY_FILE)}
    cfg = PipelineConfig.from_file(directory / CONFIG_FILE)

    rows = _read_rows(directory / ASSOCIATIONS_FILE)
    z_cols = [c for c in (rows[0].keys() if rows else ()) if c.startswith("z_")]
    cell_ids = tuple(int(c[2:]) for c in z_cols)
    col = lambda name, conv=_num: np.array([conv(r[name]) for r in rows])  # noqa: E731
    decision = AssociationDecision(
        cell_ids=cell_ids,
        candidate=col("candidate_cell", int).astype(np.int64),
        cell=col("cell_id", int).astype(np.int64),
        z=np.array([[int(r[c]) for c in z_cols] for r in rows], dtype=np.int8).reshape(len(rows), len(z_cols)),
        rsrp_ok=col("rsrp_ok", int).astype(bool),
        rsrq_ok=col("rsrq_ok", int).astype(bool),
        mobility_ok=col("mobility_ok", int).astype(bool),
        rssi_dbm=col("rssi_dbm"),
        rsrp_dbm=col("rsrp_dbm"),
        rsrq_db=col("rsrq_db"),
        sinr_db=col("sinr_db"),
        cqi=col("cqi", int).astype(np.int64),
    )

    rows = _read_rows(directory / PREDICTIONS_FILE)
    header = list(rows[0].keys()) if rows else []
    targets = [h[5:] for h in header if h.startswith("pred_")]
    metrics = [h for h in header if h != "row" and not h.startswith("pred_")]
    test_rows = np.array([int(r["row"]) for r in rows], dtype=np.int64)
    truth_columns = {m: np.array([_num(r[m]) for r in rows]) for m in metrics}
    predictions = {t: np.array([_num(r[f"pred_{t}"]) for r in rows]) for t in targets}

    coefficients = {}
    by_target: dict[str, list[dict[str, str]]] = {}
    for r in _read_rows(directory / COEFFICIENTS_FILE):
        by_target.setdefault(r["target"], []).append(r)
    for t, items in by_target.items():
        names = tuple(r["feature"] for r in items)
        ranks = [int(r["rank"]) for r in items]
        coefficients[t] = GlobalImportance(
            names,
            np.array([_num(r["mean_abs_phi"]) for r in items]),
            tuple(int(i) for i in np.argsort(ranks, kind="stable")),
            int(items[0]["rows"]),
        )

    explanations = {}
    grouped: dict[str, list[dict[str, str]]] = {}
    for r in _read_rows(directory / EXPLANATIONS_FILE):
        grouped.setdefault(r["target"], []).append(r)
    for t, items in grouped.items():
        n_feat = len(coefficients[t].feature_names)
        per_row = [items[i : i + n_feat] for i in range(0, len(items), n_feat)]
        explanations[t] = ExplanationTable(
            rows=np.array([int(g[0]["row"]) for g in per_row], dtype=np.int64),
            base_value=np.array([_num(g[0]["base_value"]) for g in per_row]),
            phi=np.array([[_num(x["phi"]) for x in g] for g in per_row]),
            prediction=np.array([_num(g[0]["prediction"]) for g in per_row]),
        )

    loss = _read_rows(directory / LOSS_FILE)
    models = {}
    for t in targets:
        path = directory / f"model_{t}.txt"
        if path.exists():
            models[t] = load_model(path)
    counters = {k[len("counter.") :]: int(v) for k, v in summary.items() if k.startswith("counter.")}
    return PipelineOutput(
        name=summary["name"],
        kind=summary["kind"],
        config=cfg,
        associations=decision,
        test_rows=test_rows,
        predictions=predictions,
        truth={t: truth_columns[t] for t in targets if t in truth_columns},
        truth_columns=truth_columns,
        coefficients=coefficients,
        explanations=explanations,
        loss_rows=np.array([int(r["row"]) for r in loss], dtype=np.int64),
        loss_predictions=np.array([_num(r["pred_cqi"]) for r in loss]),
        loss_truth=np.array([_num(r["cqi"]) for r in loss]),
        training_loss=float(summary["training_loss"]),
        predicted_cqi_all=np.array([float(v) for v in summary["predicted_cqi_all"].split()]),
        objective=float(summary["objective"]),
        objective_truth=float(summary["objective_truth"]),
        counters=counters,
        models=models,
    )
