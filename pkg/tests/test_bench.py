import json
import statistics

import pytest

from dtlsperf.bench.clock import ClockSource, CycleClock, Stage, tsc_available
from dtlsperf.bench.loadgen import (BlackboxPoint, InMemoryTarget, LoadgenError, blackbox_sweep,
                                    run_loadgen)
from dtlsperf.bench.micro import (BenchConfigError, MicroConfig, StageSample, default_warmup,
                                  insert_averages, insert_trace, measure_stage,
                                  predicted_resize_points, stage_timings)
from dtlsperf.bench.report import (BLACKBOX_COLUMNS, PLOT_COLUMNS, SAMPLE_COLUMNS, BenchReport,
                                   ReportFormatError, emit_plotdata, emit_report, from_csv,
                                   plot_series, read_report, to_csv)
from dtlsperf.cost_model import fit_linear
from dtlsperf.gateway import GatewayConfig
from dtlsperf.secure_channel import CipherSuite


def _interleaved_medians(gens, n):
    """Median per generator, sampling them round-robin so drift hits all alike."""
    out = [[] for _ in gens]
    for _ in range(n):
        for i, g in enumerate(gens):
            out[i].append(next(g))
    return [statistics.median(v) for v in out]


# -- clock --------------------------------------------------------------------

def test_clock_monotonic():
    clock = CycleClock()
    vals = [clock() for _ in range(1000)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert clock.seconds(clock.nominal_hz) == 1.0


def test_ns_clock_and_bad_frequency():
    clock = CycleClock("ns", nominal_hz=1e9)
    assert clock.source is ClockSource.NS and clock.describe()["nominal_hz"] == 1e9
    with pytest.raises(ValueError):
        CycleClock(nominal_hz=0)
    if not tsc_available():
        with pytest.raises(RuntimeError):
            CycleClock("tsc")


def test_clock_sanity_spin():
    # a calibrated spin measured twice; each measurement is the median of a
    # few repeats so a single preemption cannot dominate it
    clock = CycleClock()

    def spin(n=10**6):
        t0 = clock()
        for _ in range(n):
            pass
        return (clock() - t0) / n

    spin(10**5)
    first = statistics.median(spin() for _ in range(5))
    second = statistics.median(spin() for _ in range(5))
    assert abs(first - second) / first < 0.10


# -- micro --------------------------------------------------------------------

def test_default_warmup():
    assert default_warmup(1000) == 100
    assert default_warmup(5000) == 500
    assert default_warmup(50) == 49
    assert default_warmup(1) == 0


def test_measure_stage_counts():
    s = measure_stage(Stage.HASH, 1000, 100)
    assert s.iterations == 900
    assert s.min > 0
    assert s.min <= s.mean <= s.max
    assert s.total_cycles == pytest.approx(s.mean * 900)


def test_measure_stage_errors():
    with pytest.raises(ValueError):
        measure_stage(Stage.HASH, 100, 100)
    with pytest.raises(BenchConfigError):
        measure_stage(Stage.CRYPTO_SEAL, 200, 0, MicroConfig())


@pytest.mark.parametrize("stage", [s for s in Stage])
def test_every_stage_measures(stage):
    cfg = MicroConfig(suite=CipherSuite.AES128_GCM, connections=64)
    s = measure_stage(stage, 20, 0, cfg, keep_timings=True)
    assert s.iterations == 20 and s.median > 0
    if stage in (Stage.TABLE_INSERT, Stage.TABLE_LOOKUP):
        assert s.connections == 64
    if stage in (Stage.CRYPTO_SEAL, Stage.IO_RX):
        assert s.bytes == 500


def test_stage_sample_validation():
    with pytest.raises(ValueError):
        StageSample(Stage.HASH, 0, 0, 0, 0, 0)
    with pytest.raises(AttributeError):
        StageSample.from_timings(Stage.HASH, [1, 2]).median


def test_seal_cost_linear_in_bytes():
    sizes = (250, 500, 1000)
    gens = [stage_timings(Stage.CRYPTO_SEAL, MicroConfig(suite=CipherSuite.AES256_GCM,
                                                          payload=n)) for n in sizes]
    _interleaved_medians(gens, 200)
    med = _interleaved_medians(gens, 2000)
    fit = fit_linear(zip(sizes, med))
    assert fit.slope > 0
    assert fit.smape < 10


@pytest.mark.parametrize("stage", [Stage.HASH, Stage.IO_RX, Stage.IO_TX])
def test_size_independent_stages(stage):
    gens = [stage_timings(stage, MicroConfig(payload=n, batch=32)) for n in (100, 1000)]
    _interleaved_medians(gens, 300)
    small, large = _interleaved_medians(gens, 3000)
    assert abs(small - large) / small < 0.20


def test_resize_points_match_growth_rule():
    trace = insert_trace(100_000, seed=1)
    assert trace.resize_at == predicted_resize_points(100_000)
    assert trace.resize_at[:4] == [5, 9, 17, 33]
    assert trace.capacity[-1] == 8 * 2 ** len(trace.resize_at)


def test_insert_averages():
    trace = insert_trace(100, seed=2)
    (c, avg), = insert_averages(trace, [10])
    assert c == 10 and avg == pytest.approx(sum(trace.cycles[:10]) / 10)
    with pytest.raises(ValueError):
        insert_averages(trace, [101])


# -- loadgen ------------------------------------------------------------------

def test_loadgen_single_connection():
    st = run_loadgen(InMemoryTarget(), connections=1, packets_per_conn=10)
    assert st.verified == 10 and st.lost == 0 and st.established == 1


def test_loadgen_hundred_connections_reuse():
    target = InMemoryTarget(GatewayConfig(reuse_kex=True))
    st = run_loadgen(target, connections=100, packets_per_conn=1)
    assert st.established == 100
    assert target.gateway.workers[0].channel_cfg.key_cache.generated == 1


def test_loadgen_saturation():
    target = InMemoryTarget(queue_capacity=64)
    st = run_loadgen(target, connections=2, rate=500_000, duration=0.02)
    assert st.achieved_pps < st.offered_pps
    assert st.lost > 0


def test_loadgen_argument_errors():
    with pytest.raises(ValueError):
        run_loadgen(InMemoryTarget(), connections=0)
    with pytest.raises(ValueError):
        run_loadgen(InMemoryTarget(), rate=10)


def test_blackbox_below_capacity():
    pts = blackbox_sweep(InMemoryTarget(queue_capacity=128), [500, 1000, 2000], duration=0.2)
    for p, rate in zip(pts, (500, 1000, 2000)):
        assert p.offered_pps == pytest.approx(rate)
        assert p.achieved_pps == pytest.approx(rate, rel=0.01)
        assert p.achieved_bps > 0


def test_blackbox_stopped_target_errors_every_rate():
    target = InMemoryTarget(running=False)
    for rate in (100, 1000, 10_000):
        with pytest.raises(LoadgenError):
            blackbox_sweep(target, [rate], duration=0.05)


def test_blackbox_rate_validation():
    with pytest.raises(ValueError):
        blackbox_sweep(InMemoryTarget(), [])
    with pytest.raises(ValueError):
        blackbox_sweep(InMemoryTarget(), [2000, 1000])


# -- reports ------------------------------------------------------------------

def _report(with_blackbox=True):
    samples = [
        StageSample(Stage.HASH, 900, 9000.0, 10.0, 8.0, 20.0),
        StageSample(Stage.TABLE_INSERT, 100, 5000.0, 50.0, 40.0, 90.0, None, 1000),
        StageSample(Stage.HANDSHAKE, 10, 1e6, 1e5, 9e4, 2e5, None, 10),
        StageSample(Stage.CRYPTO_SEAL, 900, 9e5, 1000.0, 900.0, 1500.0, 500, None),
    ]
    bb = [BlackboxPoint(1000.0, 1000.0, 4.4e6), BlackboxPoint(2000.0, 1500.0, 6.6e6)]
    return BenchReport({"suite": "aes256gcm", "kex": "ecdhe"}, samples,
                       bb if with_blackbox else None)


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_report_round_trip(tmp_path, fmt):
    rep = _report()
    path = tmp_path / f"r.{fmt}"
    emit_report(rep, path, fmt)
    back = read_report(path)
    assert back.metadata == rep.metadata
    assert back.samples == rep.samples
    assert back.blackbox == rep.blackbox


def test_csv_layout():
    text = to_csv(_report())
    lines = text.splitlines()
    assert lines[1] == ",".join(SAMPLE_COLUMNS)
    assert "" in lines
    assert lines[lines.index("") + 1] == ",".join(BLACKBOX_COLUMNS)
    assert from_csv(to_csv(_report(False))).blackbox is None


def test_empty_report_is_header_only():
    assert to_csv(BenchReport()) == ",".join(SAMPLE_COLUMNS) + "\n"


def test_bad_csv():
    with pytest.raises(ReportFormatError):
        from_csv("nope\n")
    with pytest.raises(ReportFormatError):
        from_csv(",".join(SAMPLE_COLUMNS) + "\nHASH,1\n")
    with pytest.raises(ValueError):
        emit_report(BenchReport(), "/tmp/x", "xml")


def test_plot_series(tmp_path):
    rep = _report()
    assert len(plot_series(rep, "fig4")) == 4
    assert plot_series(rep, "fig5") == [("HASH", 900, 10.0, 8.0, 20.0)]
    assert plot_series(rep, "fig6") == [("TABLE_INSERT", 1000, 50.0, 40.0, 90.0)]
    assert plot_series(rep, "fig8") == [("HANDSHAKE", 10, 1e5, 9e4, 2e5)]
    blocks = {r[0]: r[2] for r in plot_series(rep, "fig7")}
    assert blocks == {"hash": 10.0, "table": 50.0, "crypto": 1000.0 + 1e5}
    assert {r[0] for r in plot_series(rep, "fig9")} == {"hash", "table"}
    with pytest.raises(ReportFormatError):
        plot_series(_report(False), "fig4")
    with pytest.raises(ValueError):
        plot_series(rep, "fig1")
    out = tmp_path / "p.csv"
    assert emit_plotdata(rep, "fig5", out) == 1
    assert out.read_text().splitlines()[0] == ",".join(PLOT_COLUMNS)


def test_json_mirrors_field_names(tmp_path):
    path = tmp_path / "r.json"
    emit_report(_report(), path, "json")
    data = json.loads(path.read_text())
    assert set(data) == {"metadata", "samples", "blackbox"}
    assert set(data["samples"][0]) == set(SAMPLE_COLUMNS)
