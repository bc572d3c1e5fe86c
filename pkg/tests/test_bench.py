import pytest

from ftrk import bench
from ftrk.pipeline import STAGE_ORDER, Mode, StageTiming
from ftrk.workloads import WorkloadProfile, derive_timings, preset


def test_size_zero_is_measured_without_division_errors():
    for row in (bench.measure_seal(0, 1), bench.measure_open(0, 1), bench.measure_verify(0, 4, 4, 1)):
        assert row.throughput_Bps == 0.0 and row.source == "measured"


def test_bench_crypto_rows():
    rep = bench.bench_crypto([4096], [1, 4], lanes=4, repeats=1)
    ops = [(r.op, r.n_chains) for r in rep.rows]
    assert ops == [("seal", 1), ("open", 1), ("verify", 1), ("open_multichain", 1), ("verify", 4),
                   ("open_multichain", 4)]
    assert all(r.throughput_Bps > 0 for r in rep.rows)
    assert "cpu" in rep.notes[0]


def _modeled():
    p = preset("resnet50")
    return bench.simulate_rows(p, derive_timings(p), list(Mode), 16)


def test_json_round_trip():
    rep = _modeled()
    assert bench.parse_report(rep.to_json()) == rep


def test_csv_round_trip():
    rep = _modeled()
    back = bench.parse_csv(rep.to_csv())
    assert back.rows == rep.rows
    assert rep.to_csv().splitlines()[0].split(",") == list(bench.CSV_COLUMNS)


def test_parsers_refuse_foreign_columns():
    with pytest.raises(ValueError):
        bench.parse_csv("a,b\n1,2\n")
    with pytest.raises(ValueError):
        bench.parse_report('{"columns": ["x"], "rows": []}')


def test_baseline_stage_columns_sum_to_per_batch():
    row = _modeled().rows[0]
    assert row.mode == "baseline"
    assert sum(row.stages_us.values()) == pytest.approx(row.per_batch_us)
    assert set(row.stages_us) <= set(STAGE_ORDER)


def test_text_table_lists_modes():
    text = _modeled().to_text()
    for m in Mode:
        assert m.value in text
    assert text.endswith("# timings: modeled")


def test_measured_timing_replaces_accelerator_crypto_only():
    base = StageTiming(cpu_enc=1, cpu_mac=2, transfer=3, keystream=4, xor_dec=5, gpu_auth=6, compute=7)
    prof = WorkloadProfile("tiny", 4, 4096)
    t = bench.measured_timing(prof, base, repeats=1)
    assert (t.cpu_enc, t.cpu_mac, t.transfer, t.compute) == (1, 2, 3, 7)
    assert t.keystream > 0 and t.xor_dec > 0 and t.gpu_auth > 0


def test_measured_timing_needs_item_size():
    with pytest.raises(ValueError):
        bench.measured_timing(preset("graphsage"), StageTiming(), repeats=1)
