import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ioexai import radio_metrics as rm
from ioexai.dataset import (
    CANONICAL_FIELDS,
    ColumnMapping,
    Dataset,
    DatasetError,
    GnbSite,
    PathLossModel,
    ScenarioConfig,
    SessionRecord,
    builtin_scenario,
    describe,
    ingest_csv,
    load_dataset,
    parse_scenario,
    save_dataset,
    summary_stats,
    synth_generate,
    train_test_split,
    validate,
    write_csv,
)
from ioexai.kvconfig import ConfigError

HEADER = ",".join(CANONICAL_FIELDS)


def row(ts, cell=1, speed=10.0, rssi=-70.0, rsrp=-100.0, rsrq=-10.0, sinr=12.0, cqi=10, dl=50.0, ul=0.3, x="", y=""):
    return f"{ts},{cell},{speed},{rssi},{rsrp},{rsrq},{sinr},{cqi},{dl},{ul},{x},{y}"


def write(tmp_path, lines, name="trace.csv"):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_ingest_identity_three_rows(tmp_path):
    path = write(tmp_path, [HEADER, row(1), row(2, cell=2), row(3, cqi=7)])
    ds = ingest_csv(path)
    assert len(ds) == 3
    assert [r.cell_id for r in ds.records] == [1, 2, 1]
    assert ds.records[2].cqi == 7
    assert ds.ingest_report.rows_dropped == 0


def test_ingest_kbps_scaling(tmp_path):
    path = write(tmp_path, ["t,cell,v,rssi,rsrp,rsrq,snr,cqi,dl_kbps,ul_kbps", "5,3,20,-70,-100,-10,12,9,52000,300"])
    mapping = ColumnMapping.parse(
        "t = timestamp\ncell = cell_id\nv = speed_kmh\nrssi = rssi_dbm\nrsrp = rsrp_dbm\n"
        "rsrq = rsrq_db\nsnr = sinr_db\ncqi = cqi\ndl_kbps = dl_mbps:0.001\nul_kbps = ul_mbps:0.001\n"
    )
    ds = ingest_csv(path, mapping)
    assert ds.records[0].dl_mbps == pytest.approx(52.0)
    assert ds.records[0].ul_mbps == pytest.approx(0.3)


def test_ingest_sentinels_flagged(tmp_path):
    lines = [HEADER, row(1), row(2, sinr="-"), row(3), row(4, sinr="-"), row(5)]
    ds = ingest_csv(write(tmp_path, lines))
    assert len(ds) == 5
    assert ds.ingest_report.rows_flagged == 2
    assert [i for i, _ in ds.ingest_report.flagged] == [1, 3]
    assert ds.records[1].sinr_db is None


def test_ingest_drops_unparseable_rows(tmp_path):
    ds = ingest_csv(write(tmp_path, [HEADER, row(1), row(2, cqi="abc"), row(3)]))
    assert len(ds) == 2
    assert ds.ingest_report.rows_dropped == 1


def test_ingest_errors(tmp_path):
    with pytest.raises(DatasetError):
        ingest_csv(tmp_path / "absent.csv")
    with pytest.raises(DatasetError, match="no rows"):
        ingest_csv(write(tmp_path, [HEADER, row(1, cqi="x")]))
    mapping = ColumnMapping.parse("\n".join(f"{f} = {f}" for f in CANONICAL_FIELDS if f != "pos_y") + "\nnope = pos_y\n")
    with pytest.raises(DatasetError, match="nope"):
        ingest_csv(write(tmp_path, [HEADER, row(1)]), mapping)


def test_mapping_errors_carry_line_numbers():
    with pytest.raises(ConfigError) as info:
        ColumnMapping.parse("a = cqi\nb = cqi\n", "m.txt")
    assert info.value.lineno == 2
    with pytest.raises(ConfigError) as info:
        ColumnMapping.parse("a = cqi\nb = not_a_field\n", "m.txt")
    assert info.value.lineno == 2
    with pytest.raises(ConfigError, match="required"):
        ColumnMapping.parse("a = cqi\n")


def test_shipped_trace_mapping(tmp_path):
    from importlib import resources

    text = resources.files("ioexai.scenarios").joinpath("b2020_mapping.txt").read_text()
    mapping = ColumnMapping.parse(text)
    path = write(
        tmp_path,
        [
            "Timestamp,Longitude,Latitude,Speed,Operatorname,CellID,NetworkMode,RSRP,RSRQ,SNR,CQI,RSSI,DL_bitrate,UL_bitrate",
            "2020.02.13_13.03.24,1,2,12,A,4,5G,-95,-11,7,9,-65,40000,600",
            "2020.02.13_13.03.25,1,2,13,A,4,5G,-96,-11,-,9,-66,41000,500",
        ],
    )
    ds = ingest_csv(path, mapping)
    assert len(ds) == 2
    assert ds.records[0].dl_mbps == pytest.approx(40.0)
    assert ds.records[1].timestamp - ds.records[0].timestamp == 1.0
    assert ds.ingest_report.rows_flagged == 1


def test_csv_round_trip_is_exact(tmp_path):
    ds = synth_generate(builtin_scenario("five_gnb"))
    path = tmp_path / "out.csv"
    write_csv(ds, path)
    again = ingest_csv(path)
    assert again.records == ds.records


def test_validate_findings():
    good = SessionRecord(1.0, 1, 10.0, -70.0, -100.0, -10.0, 12.0, 10, 50.0, 0.3)
    assert validate(Dataset([good])).ok
    report = validate(Dataset([good, replace(good, timestamp=2.0, cqi=22)]))
    assert [(v.row, v.field) for v in report.violations] == [(1, "cqi")]
    report = validate(Dataset([replace(good, speed_kmh=-1.0)]))
    assert [(v.row, v.field) for v in report.violations] == [(0, "speed_kmh")]
    report = validate(Dataset([good, good]))
    assert report.duplicate_timestamps == ((1, 1.0, (0, 1)),)
    sites = (GnbSite(1, (0.0, 0.0)),)
    report = validate(Dataset([replace(good, cell_id=9)], topology=sites))
    assert [v.field for v in report.violations] == ["cell_id"]


def test_split_sizes_and_determinism():
    records = [SessionRecord(float(i), 1, 1.0, -70.0, -100.0, -10.0, 10.0, 9, 1.0, 0.1) for i in range(2206)]
    ds = Dataset(records)
    a = train_test_split(ds, 1544, 662, seed=3)
    b = train_test_split(ds, 1544, 662, seed=3)
    assert (len(a.train_indices), len(a.test_indices)) == (1544, 662)
    assert a.split == b.split
    assert not set(a.train_indices) & set(a.test_indices)
    small = Dataset(records[:10])
    assert train_test_split(small, 10, 0, seed=9).train_indices == tuple(range(10))
    with pytest.raises(DatasetError):
        train_test_split(small, 8, 3, seed=0)
    with pytest.raises(DatasetError, match="train_test_split"):
        small.train_indices


def test_synthetic_table2_ranges_and_determinism():
    cfg = builtin_scenario("table2")
    ds = synth_generate(cfg)
    assert len(ds) == 2206
    assert (len(ds.train_indices), len(ds.test_indices)) == (1544, 662)
    assert len(ds.topology) == 8
    assert ds.column("speed_kmh").max() <= 88.0
    assert ds.column("dl_mbps").max() <= 170.06
    assert ds.column("ul_mbps").max() <= 0.825
    assert validate(ds).ok
    again = synth_generate(cfg)
    assert again.records == ds.records and again.split == ds.split


def test_synthetic_metric_chain_holds():
    ds = synth_generate(builtin_scenario("five_gnb"))
    for rec in ds.records[:50]:
        assert rec.rsrp_dbm == pytest.approx(rec.rssi_dbm - 10 * math.log10(1200), abs=1e-9)
        assert rec.cqi == rm.cqi_from_sinr(rec.sinr_db)[1]


def test_reference_distance_identity():
    cfg = ScenarioConfig(
        sites=(GnbSite(1, (0.0, 0.0), tx_power_dbm=43.0),),
        n_sessions=1,
        pathloss=PathLossModel(pl0_db=38.0, exponent=3.0, d0_m=1.0),
        shadowing_db=0.0,
        positions=((1.0, 0.0),),
    )
    assert synth_generate(cfg).records[0].rssi_dbm == 43.0 - 38.0


@settings(max_examples=50)
@given(st.floats(1.0, 5000.0), st.floats(0.0, 5000.0))
def test_rssi_non_increasing_with_distance(d, extra):
    model = PathLossModel(pl0_db=30.0, exponent=3.5)
    assert model.loss_db(d + extra) >= model.loss_db(d)


def test_scenario_parse_errors_have_line_numbers():
    with pytest.raises(ConfigError) as info:
        parse_scenario("layout = grid 2x2 100\nn_sessions = many\n", "bad.conf")
    assert info.value.lineno == 2
    with pytest.raises(ConfigError) as info:
        parse_scenario("site = 1, 0, 0\nthis line is broken\n", "bad.conf")
    assert info.value.lineno == 2
    with pytest.raises(ConfigError):
        parse_scenario("n_sessions = 10\n")


def test_describe_matches_sort_oracle():
    values = np.random.default_rng(5).uniform(0, 1, 100)
    ordered = sorted(values)
    stats = describe(values)
    # nearest rank: ceil(p * n) with 1-based ranks; n = 100 gives ranks 25, 50, 75
    assert stats["p25"] == ordered[24]
    assert stats["p50"] == ordered[49]
    assert stats["p75"] == ordered[74]
    assert stats["min"] == ordered[0] and stats["max"] == ordered[-1]
    assert describe([1, 2, 3, 4, 5])["p50"] == 3 and describe([1, 2, 3, 4, 5])["mean"] == 3
    single = describe([7.5])
    assert single["min"] == single["max"] == single["mean"] == 7.5


def test_summary_stats_skips_missing():
    good = SessionRecord(1.0, 1, 10.0, -70.0, -100.0, -10.0, 12.0, 10, 50.0, 0.3)
    ds = Dataset([good, replace(good, timestamp=2.0, sinr_db=None, cqi=4)])
    stats = summary_stats(ds)
    assert stats["sinr_db"]["count"] == 1
    assert stats["cqi"]["mean"] == 7


def test_dataset_directory_round_trip(tmp_path):
    ds = synth_generate(builtin_scenario("five_gnb"))
    save_dataset(ds, tmp_path / "d")
    again = load_dataset(tmp_path / "d")
    assert again.records == ds.records
    assert again.split == ds.split
    assert again.topology == ds.topology
    assert again.channel == ds.channel


def test_dataset_invariants():
    rec = SessionRecord(1.0, 1, 10.0, -70.0, -100.0, -10.0, 12.0, 10, 50.0, 0.3)
    with pytest.raises(DatasetError):
        Dataset([rec], feature_names=("a", "a"))
    with pytest.raises(DatasetError):
        Dataset([rec, rec], split=((0,), (0,)))
    with pytest.raises(DatasetError):
        Dataset([rec], split=((0,), (3,)))
