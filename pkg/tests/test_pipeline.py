import math
from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ioexai import radio_metrics as rm
from ioexai.dataset import Dataset, DatasetError, GnbSite, SessionRecord, train_test_split
from ioexai.kvconfig import ConfigError
from ioexai.pipeline import (
    AssociationError,
    EmptyCohortError,
    PipelineConfig,
    associate_users,
    audit_associations,
    check_mobility_constraint,
    model_features,
    objective_value,
    read_run,
    run_pipeline,
    write_run,
)
from ioexai.regressors import FitConfig, training_loss

RB_OFFSET = 10 * math.log10(1200)


def measured(rsrp, rsrq, speed=10.0, cell=1, ts=0.0, **extra):
    values = dict(
        timestamp=ts, cell_id=cell, speed_kmh=speed, rssi_dbm=rsrp + RB_OFFSET, rsrp_dbm=rsrp, rsrq_db=rsrq,
        sinr_db=12.0, cqi=11, dl_mbps=80.0, ul_mbps=0.4,
    )
    values.update(extra)
    return SessionRecord(**values)


def test_mobility_examples():
    assert check_mobility_constraint(60, 0.01, 1000)
    assert not check_mobility_constraint(60, 0.02, 1000)
    assert check_mobility_constraint(0, 5.0, 1.0)
    assert check_mobility_constraint(60, 0.02, 1000, mode="literal")
    assert not check_mobility_constraint(60, 0.01, 1000, mode="literal")
    with pytest.raises(ValueError):
        check_mobility_constraint(-1, 0.01, 1000)


def test_single_user_slack_constraints():
    cfg = PipelineConfig()
    ds = Dataset([measured(cfg.omega_dbm + 5, cfg.zeta_db + 5)], topology=(GnbSite(1, (0.0, 0.0)),))
    a = associate_users(ds, ds.topology, cfg)
    assert a.z.tolist() == [[1]]
    assert a.cell.tolist() == [1]


def test_rsrp_boundary():
    cfg = PipelineConfig()
    ds = Dataset([measured(cfg.omega_dbm - 1, cfg.zeta_db + 5), measured(cfg.omega_dbm, cfg.zeta_db, ts=1.0)])
    a = associate_users(ds, None, cfg)
    assert a.cell.tolist() == [-1, 1]
    assert a.rsrp_ok.tolist() == [False, True]
    assert a.rsrq_ok.tolist() == [True, True]
    assert a.z.sum() == 1


def test_argmax_rsrp_and_ties():
    cfg = PipelineConfig(zeta_db=-20.0)
    sites = (GnbSite(7, (0.0, 0.0)), GnbSite(3, (100.0, 0.0)))
    ds = Dataset([measured(-100.0, -10.0, ts=float(k)) for k in range(2)], topology=sites)
    # columns follow ascending cell id: 3 then 7
    link = np.array([[-95.0, -90.0], [-80.0, -80.0]]) + RB_OFFSET
    a = associate_users(ds, sites, cfg, link_rssi=link)
    assert a.cell_ids == (3, 7)
    assert a.candidate.tolist() == [7, 3]
    assert a.rsrp_dbm[0] == pytest.approx(-90.0)
    assert a.z.tolist() == [[0, 1], [1, 0]]


def test_mobility_failure_marks_user():
    cfg = PipelineConfig()
    ds = Dataset([measured(-90.0, -8.0, speed=120.0)])
    a = associate_users(ds, None, cfg)
    assert a.cell.tolist() == [-1]
    assert a.mobility_ok.tolist() == [False]
    assert a.rsrp_ok.tolist() == [True]


def test_missing_position_and_rssi_is_an_error():
    rec = replace(measured(-90.0, -8.0), rssi_dbm=None, rsrp_dbm=None)
    with pytest.raises(AssociationError, match="record 0"):
        associate_users(Dataset([rec]), None, PipelineConfig())


def test_geometric_association_uses_every_site(small_dataset):
    cfg = PipelineConfig()
    a = associate_users(small_dataset, small_dataset.topology, cfg)
    assert set(a.candidate.tolist()) <= set(a.cell_ids)
    assert np.all(a.z.sum(axis=1) <= 1)
    assert audit_associations(a, cfg, small_dataset.column("speed_kmh")) == []
    # interference from the other sites keeps SINR below the noise-only value
    noise = rm.noise_power_dbm(cfg.bandwidth_hz)
    assert np.all(a.sinr_db < a.rsrp_dbm - noise)


def test_audit_detects_tampering(small_dataset):
    cfg = PipelineConfig()
    a = associate_users(small_dataset, small_dataset.topology, cfg)
    k = int(np.flatnonzero(~a.rsrq_ok)[0])
    z = a.z.copy()
    z[k, 0] = 1
    cell = a.cell.copy()
    cell[k] = a.cell_ids[0]
    bad = replace(a, z=z, cell=cell)
    assert any(f"user {k}" in p for p in audit_associations(bad, cfg, small_dataset.column("speed_kmh")))


def linear_world():
    """Four users on one gNB whose every metric is an affine function of one latent t.

    Train rows sit at t = 0, 2, 4 and the test row at t = 1, the midpoint of
    the first two, so even a rank-deficient least-squares fit predicts it exactly.
    """
    records = []
    for k, t in enumerate((0.0, 2.0, 1.0, 4.0)):
        records.append(
            SessionRecord(
                timestamp=float(k), cell_id=1, speed_kmh=10 + t, rssi_dbm=-70 + t, rsrp_dbm=-70 + t - RB_OFFSET,
                rsrq_db=-10 + 0.1 * t, sinr_db=10 + t, cqi=int(8 + t), dl_mbps=50 + 5 * t, ul_mbps=0.3 + 0.01 * t,
            )
        )
    return Dataset(records, topology=(GnbSite(1, (0.0, 0.0)),), split=((0, 1, 3), (2,)))


def test_degenerate_exact_fit_run():
    ds = linear_world()
    out = run_pipeline(ds, PipelineConfig(kind="linear"))
    assert out.associations.n_associated == 4
    assert out.training_loss <= 1e-9
    assert out.predicted_dl[0] == pytest.approx(55.0, abs=1e-9)
    assert out.predicted_ul[0] == pytest.approx(0.31, abs=1e-9)
    assert out.predictions["cqi"][0] == pytest.approx(9.0, abs=1e-9)
    assert out.objective == pytest.approx(sum(r.cqi for r in ds.records), abs=1e-9)
    assert out.objective_truth == sum(r.cqi for r in ds.records)
    assert "cell_id" not in out.coefficients["cqi"].feature_names
    assert out.counters["coalition_evaluations_cqi"] == 2**7


def test_empty_cohort_is_explicit():
    with pytest.raises(EmptyCohortError):
        run_pipeline(linear_world(), PipelineConfig(kind="linear", omega_dbm=0.0))


def test_missing_split_names_the_fix(small_dataset):
    with pytest.raises(DatasetError, match="train_test_split"):
        run_pipeline(replace(small_dataset, split=None), PipelineConfig())


def test_small_run_contract(small_dataset, small_config, tmp_path):
    out = run_pipeline(small_dataset, small_config)
    assert np.all(out.predicted_dl >= 0) and np.all(out.predicted_ul >= 0)
    for target, imp in out.coefficients.items():
        assert set(imp.feature_names) == set(model_features(target))
        assert sorted(imp.rank) == list(range(len(imp.feature_names)))
    assert out.counters["coalition_evaluations"] == 3 * 256 * 25
    assert np.all(out.explanations["cqi"].efficiency_gap <= 1e-9)
    write_run(out, tmp_path / "a")
    again = run_pipeline(small_dataset, small_config)
    write_run(again, tmp_path / "b")
    for path in sorted((tmp_path / "a").iterdir()):
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes(), path.name


def test_serialized_run_recomputes_loss(small_dataset, small_config, tmp_path):
    out = run_pipeline(small_dataset, small_config)
    write_run(out, tmp_path)
    back = read_run(tmp_path)
    assert abs(training_loss(back.loss_predictions, back.loss_truth) - out.training_loss) <= 1e-12
    assert back.training_loss == out.training_loss
    assert back.objective == out.objective
    np.testing.assert_array_equal(back.predicted_dl, out.predicted_dl)
    np.testing.assert_array_equal(back.associations.z, out.associations.z)
    assert back.coefficients["cqi"].rank == out.coefficients["cqi"].rank
    assert back.counters == out.counters
    probe = small_dataset.matrix(model_features("cqi"), out.test_rows)
    np.testing.assert_array_equal(back.models["cqi"].predict(probe), out.models["cqi"].predict(probe))


def fake_output(associated, predicted):
    return SimpleNamespace(
        associations=SimpleNamespace(associated=np.asarray(associated, dtype=bool)),
        predicted_cqi_all=np.asarray(predicted, dtype=float),
    )


def test_objective_examples():
    assert objective_value(fake_output([False, False], [3.0, 4.0])) == 0.0
    assert objective_value(fake_output([True, True], [10.0, 12.0])) == 22.0
    assert objective_value(fake_output([True, True], [10.0, -2.0])) == 10.0


@given(st.lists(st.tuples(st.booleans(), st.floats(-5, 20)), min_size=1, max_size=30), st.integers(0, 29))
def test_objective_monotone_in_associations(users, extra):
    associated = [a for a, _ in users]
    predicted = [p for _, p in users]
    grown = list(associated)
    grown[extra % len(users)] = True
    assert objective_value(fake_output(grown, predicted)) >= objective_value(fake_output(associated, predicted))


def test_config_file_round_trip(tmp_path):
    cfg = PipelineConfig(omega_dbm=-105.0, mobility_mode="literal", kind="adaboost_r2", fit=FitConfig(n_estimators=7, seed=4), explain_rows=9)
    path = tmp_path / "p.conf"
    path.write_text(cfg.dumps())
    assert PipelineConfig.from_file(path) == cfg
    with pytest.raises(ConfigError):
        PipelineConfig.parse("omega_dbm = -100\nomega_dbm = -90\n")
    with pytest.raises(ConfigError):
        PipelineConfig.parse("h_max_m = 0\n")
    with pytest.raises(ConfigError):
        PipelineConfig.parse("colour = blue\n")
    with pytest.raises(ConfigError):
        PipelineConfig(targets=("dl_mbps",))


def test_recorded_metrics_path_for_ingested_data():
    recs = [measured(-95.0 + k, -9.0, ts=float(k), cell=1 + k % 2, sinr_db=5.0 + k, cqi=int(rm.cqi_from_sinr(5.0 + k)[1]),
                     dl_mbps=20.0 + 3 * k, ul_mbps=0.1 + 0.01 * k) for k in range(40)]
    ds = train_test_split(Dataset(recs), 30, 10, seed=1)
    out = run_pipeline(ds, PipelineConfig(fit=FitConfig(n_estimators=5)))
    assert out.associations.cell_ids == (1, 2)
    np.testing.assert_array_equal(out.associations.sinr_db, ds.column("sinr_db"))
