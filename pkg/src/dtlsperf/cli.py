"""Command line entry point: ``dtlsperf <command> ...``.

Exit status is 0 on success, 1 when the operation itself fails (socket
errors, lost handshakes, unreadable files) and 2 for usage errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import random
import signal
import sys
import threading

from . import __version__
from .bench.clock import DEFAULT_NOMINAL_HZ, CycleClock, Stage
from .cost_model import (COMPONENTS, CostModelParams, PredictionInput, eval_component,
                         eval_total, fit_linear, fit_sawtooth, load_params, predict_throughput,
                         save_params, smape)
from .flow_hash import HashKey
from .secure_channel import CipherSuite, KexMethod

log = logging.getLogger("dtlsperf")

SUITES = {"aes128gcm": CipherSuite.AES128_GCM, "aes256gcm": CipherSuite.AES256_GCM,
          "chacha20": CipherSuite.CHACHA20_POLY1305}
KEX = {"ecdhe": KexMethod.ECDHE, "dhe": KexMethod.DHE}

# which parameters a `model fit --component` run updates: (slope field, intercept field)
FIT_TARGETS = {
    "tx": ("tx_per_pkt", None),
    "rx": ("rx_per_pkt", None),
    "hash": ("hash_per_pkt", None),
    "lookup": ("table_lookup_per_pkt", None),
    "openssl_r": ("crypto_per_byte", None),
    "mem": ("mem_per_conn", "mem_fixed"),
    "openssl_s": ("hs_per_conn", "hs_fixed"),
    "dmaps": ("table_insert_saw", "table_insert_base"),
}


class OperationalError(Exception):
    pass


# -- helpers ---------------------------------------------------------------

def _hash_key(text):
    try:
        return HashKey.from_hex(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _rates(text):
    """``A:B:STEP`` (inclusive) or a comma-separated list."""
    try:
        if ":" in text:
            a, b, step = (float(v) for v in text.split(":"))
            if step <= 0 or b < a:
                raise ValueError
            out, v = [], a
            while v <= b + 1e-9:
                out.append(v)
                v += step
            return out
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A:B:STEP or a list, got {text!r}") from None


def _seeded_rng(seed):
    if seed is None:
        return None
    r = random.Random(seed)
    return lambda n: r.randbytes(n)


def _clock(args):
    return CycleClock(args.clock, args.nominal_hz)


def _pin(core):
    if core is None:
        return
    try:
        os.sched_setaffinity(0, {core})
    except (AttributeError, OSError) as exc:
        log.warning("could not pin to core %d: %s", core, exc)


def _effective_config(args) -> dict:
    """The run's settings as recorded in reports (never the hash key)."""
    skip = {"func", "hash_key", "config"}
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = v.name if hasattr(v, "name") and not isinstance(v, str) else v
    return out


def _hash_key_for(args):
    if args.hash_key is not None:
        return args.hash_key
    if args.seed is not None:
        r = random.Random(args.seed ^ 0x5EED)
        return HashKey(r.getrandbits(64), r.getrandbits(64))
    return HashKey.random()


def _fmt_cycles(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else f"{v:.3f}"


# -- gateway ---------------------------------------------------------------

def cmd_gateway_run(args):
    from .gateway import Gateway, GatewayConfig
    from .packet_io import UdpEndpoint, parse_address

    _pin(args.pin)
    cfg = GatewayConfig(suites=tuple(SUITES[s] for s in args.suite), kex=KEX[args.kex],
                        reuse_kex=not args.no_reuse_kex, max_connections=args.max_connections,
                        instrument=args.instrument, batch_size=args.batch,
                        rng=_seeded_rng(args.seed))
    try:
        io = UdpEndpoint(parse_address(args.listen), timeout=0.01)
    except (OSError, ValueError) as exc:
        raise OperationalError(f"cannot listen on {args.listen}: {exc}") from exc
    gw = Gateway(io, args.workers, cfg, _hash_key_for(args), _clock(args))
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    if args.duration:
        threading.Timer(args.duration, stop.set).start()
    print(f"listening on {io.local[0]}:{io.local[1]} with {args.workers} worker(s)", flush=True)
    try:
        totals = gw.run(stop)
    finally:
        io.close()
    out = {"config": _effective_config(args), "stats": totals.as_dict()}
    print(json.dumps(out, indent=2))
    return 0


# -- loadgen ---------------------------------------------------------------

def _memory_target(args):
    from .bench.loadgen import InMemoryTarget
    from .gateway import GatewayConfig

    cfg = GatewayConfig(suites=tuple(SUITES.values()), kex=KEX[args.kex],
                        rng=_seeded_rng(args.seed))
    return InMemoryTarget(cfg, workers=getattr(args, "workers", 1),
                          queue_capacity=getattr(args, "queue_capacity", None),
                          hash_key=_hash_key_for(args), clock=_clock(args))


def cmd_loadgen(args):
    from .bench.loadgen import LoadgenError, run_loadgen

    target = args.target if args.target != "memory" else _memory_target(args)
    try:
        st = run_loadgen(target, connections=args.connections, payload=args.payload,
                         packets_per_conn=args.packets_per_conn, rate=args.rate,
                         duration=args.duration, suite=SUITES[args.suite], kex=KEX[args.kex],
                         timeout=args.timeout, rng=_seeded_rng(args.seed))
    except LoadgenError as exc:
        raise OperationalError(str(exc)) from exc
    print(json.dumps({"config": _effective_config(args), "stats": st.as_dict()}, indent=2))
    return 0 if st.lost == 0 or args.rate else 1


# -- bench -----------------------------------------------------------------

def _report_metadata(args, clock, **extra):
    meta = {"clock": clock.describe(), "config": _effective_config(args)}
    meta.update(extra)
    return meta


def cmd_bench_micro(args):
    from .bench.micro import MicroConfig, measure_stage
    from .bench.report import BenchReport, emit_report

    _pin(args.pin)
    clock = _clock(args)
    stages = [Stage(s) for s in (args.stage or [s.value for s in Stage])]
    samples = []
    for stage in stages:
        for c in (args.connections or [1000]):
            cfg = MicroConfig(suite=SUITES[args.suite], kex=KEX[args.kex],
                              reuse_kex=not args.no_reuse_kex, payload=args.payload,
                              connections=c, batch=args.batch, clock=clock,
                              rng=_seeded_rng(args.seed), seed=args.seed)
            iterations, warmup = args.iterations, args.warmup
            if stage is Stage.HANDSHAKE:
                # one fresh server handling c connections: the amortized cost per connection
                iterations, warmup = c, 0
            sample = measure_stage(stage, iterations, warmup, cfg)
            if stage is Stage.HANDSHAKE:
                sample.connections = c
            samples.append(sample)
            if stage not in (Stage.TABLE_LOOKUP, Stage.TABLE_INSERT, Stage.HANDSHAKE):
                break  # connection count does not apply
    report = BenchReport(_report_metadata(args, clock, suite=args.suite, kex=args.kex,
                                          reuse_kex=not args.no_reuse_kex, payload=args.payload,
                                          warmup=args.warmup, repetitions=1), samples)
    for s in samples:
        print(f"{s.stage.value:<13} n={s.iterations:<7} mean={s.mean:.1f} min={s.min:.0f} "
              f"max={s.max:.0f}")
    if args.out:
        emit_report(report, args.out, args.format)
    return 0


def cmd_bench_blackbox(args):
    from .bench.loadgen import LoadgenError, blackbox_sweep
    from .bench.report import BenchReport, emit_report

    target = args.target if args.target != "memory" else _memory_target(args)
    try:
        points = blackbox_sweep(target, args.rates, duration=args.duration,
                                connections=args.connections, payload=args.payload,
                                suite=SUITES[args.suite], kex=KEX[args.kex],
                                rng=_seeded_rng(args.seed))
    except LoadgenError as exc:
        raise OperationalError(str(exc)) from exc
    for p in points:
        print(f"offered={p.offered_pps:.0f} pps achieved={p.achieved_pps:.0f} pps "
              f"({p.achieved_bps / 1e6:.1f} Mbit/s)")
    if args.out:
        clock = target.clock if not isinstance(target, str) else _clock(args)
        emit_report(BenchReport(_report_metadata(args, clock, suite=args.suite, kex=args.kex,
                                                 payload=args.payload, repetitions=1),
                                [], points), args.out, args.format)
    return 0


def cmd_bench_plotdata(args):
    from .bench.report import ReportFormatError, emit_plotdata, read_report

    try:
        report = read_report(args.input)
        n = emit_plotdata(report, args.figure, args.out)
    except (OSError, ReportFormatError) as exc:
        raise OperationalError(str(exc)) from exc
    print(f"{args.figure}: {n} rows written to {args.out}")
    return 0


def cmd_bench_validate(args):
    from .bench.validation import validate_model

    _pin(args.pin)
    res = validate_model(rounds=args.rounds, payload=args.payload, suite=SUITES[args.suite],
                         kex=KEX[args.kex], clock=_clock(args))
    if args.params_out:
        save_params(res.params, args.params_out)
    for k, v in res.fit_smape.items():
        print(f"fit {k}: sMAPE={v:.3f}%")
    for line in res.lines():
        print(line)
    return 0


# -- model -----------------------------------------------------------------

def _params(args) -> CostModelParams:
    try:
        p = load_params(args.params)
    except (OSError, ValueError, TypeError) as exc:
        raise OperationalError(f"cannot load parameters: {exc}") from exc
    if getattr(args, "crypto_passes", None) is not None:
        p = p.replace(crypto_passes=args.crypto_passes)
    return p


def cmd_model_predict(args):
    params = _params(args)
    inp = PredictionInput(c=args.connections, p=args.packets, b=args.bytes, cpu_hz=args.cpu_hz,
                          bandwidth_cap=args.bandwidth_cap, wire_bytes_per_pkt=args.wire_bytes,
                          conn_rate=args.conn_rate)
    total = eval_total(params, inp)
    tp = predict_throughput(params, inp)
    print(f"total cycles: {_fmt_cycles(total)}")
    print(f"per-packet cycles: {_fmt_cycles(params.per_packet)}")
    print(f"throughput: {tp.pps} pps, {tp.bps:.0f} bit/s" + (" (bandwidth capped)" if tp.capped else ""))
    return 0


def _read_samples(path, columns):
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [c.strip() for c in reader.fieldnames] != columns:
                raise OperationalError(f"{path}: expected header {','.join(columns)}")
            return [{k.strip(): v.strip() for k, v in row.items()} for row in reader]
    except OSError as exc:
        raise OperationalError(str(exc)) from exc


def cmd_model_fit(args):
    rows = _read_samples(args.input, ["x", "cycles"])
    try:
        samples = [(float(r["x"]), float(r["cycles"])) for r in rows]
    except ValueError as exc:
        raise OperationalError(f"{args.input}: {exc}") from exc
    params = _params(args)
    slope_f, icpt_f = FIT_TARGETS[args.component]
    try:
        if args.component == "dmaps":
            fit = fit_sawtooth(samples)
            updates = {"table_insert_base": fit.base, "table_insert_saw": fit.saw}
            print(f"base={fit.base:.3f} saw={fit.saw:.3f} sMAPE={fit.smape:.3f}%")
        else:
            fit = fit_linear(samples, zero_intercept=icpt_f is None)
            updates = {slope_f: fit.slope}
            if icpt_f:
                updates[icpt_f] = fit.intercept
            print(f"slope={fit.slope:.3f} intercept={fit.intercept:.3f} sMAPE={fit.smape:.3f}%")
        updates = {k: max(v, 0.0) for k, v in updates.items()}
        params = params.replace(**updates)
    except ValueError as exc:
        raise OperationalError(f"fit failed: {exc}") from exc
    if args.out:
        save_params(params, args.out)
        print(f"parameters written to {args.out}")
    return 0


def _component_rows(path):
    rows = _read_samples(path, ["component", "arg", "cycles"])
    out = []
    for r in rows:
        if r["component"] not in COMPONENTS:
            raise OperationalError(f"{path}: unknown component {r['component']!r}")
        try:
            out.append((r["component"], float(r["arg"]), float(r["cycles"])))
        except ValueError as exc:
            raise OperationalError(f"{path}: {exc}") from exc
    return out


def cmd_model_validate(args):
    measured = _component_rows(args.measured)
    if not measured:
        raise OperationalError(f"{args.measured}: no rows")
    if args.forecast:
        forecast = _component_rows(args.forecast)
        if [(c, a) for c, a, _ in forecast] != [(c, a) for c, a, _ in measured]:
            raise OperationalError("forecast and measured files list different (component, arg) rows")
    else:
        params = _params(args)
        forecast = [(c, a, eval_component(params, c, a, allow_small=True)) for c, a, _ in measured]
    by_comp = {}
    for (comp, _, f), (_, _, a) in zip(forecast, measured):
        by_comp.setdefault(comp, ([], []))
        by_comp[comp][0].append(f)
        by_comp[comp][1].append(a)
    for comp, (f, a) in by_comp.items():
        print(f"sMAPE {comp}={smape(f, a):.3f}%")
    total = smape([f for _, _, f in forecast], [a for _, _, a in measured])
    print(f"sMAPE total={total:.3f}%")
    return 0


def cmd_model_params(args):
    params = _params(args)
    if args.out:
        save_params(params, args.out)
        print(f"parameters written to {args.out}")
    else:
        print(json.dumps(params.to_dict(), indent=2))
    return 0


# -- parser ----------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON file with default values for any option")
    p.add_argument("--seed", type=int, help="seed for hash key and handshake randoms")
    p.add_argument("--hash-key", type=_hash_key, help="SipHash key, 32 hex digits")
    p.add_argument("--nominal-hz", type=float, default=DEFAULT_NOMINAL_HZ,
                   help="cycles per second for time conversion (default %(default).3g)")
    p.add_argument("--clock", choices=["auto", "tsc", "ns"], default="auto")
    p.add_argument("--pin", type=int, metavar="CORE", help="pin to one CPU core if possible")
    p.add_argument("-v", "--verbose", action="store_true")


def _crypto(p, many=False):
    if many:
        p.add_argument("--suite", choices=list(SUITES), action="append",
                       help="cipher suite to accept (repeatable; default all)")
    else:
        p.add_argument("--suite", choices=list(SUITES), default="aes256gcm")
    p.add_argument("--kex", choices=list(KEX), default="ecdhe")


def _params_arg(p):
    p.add_argument("--params", default="defaults", help="'defaults' or a params.json file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dtlsperf",
                                     description="Instrumented DTLS gateway and cost model.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    leaves = []

    gw = sub.add_parser("gateway", help="run the gateway").add_subparsers(dest="action",
                                                                          metavar="ACTION")
    p = gw.add_parser("run", help="serve DTLS echo over UDP")
    p.add_argument("--listen", required=True, metavar="HOST:PORT")
    p.add_argument("--workers", type=int, default=1)
    _crypto(p, many=True)
    p.add_argument("--no-reuse-kex", action="store_true", help="new key pair per handshake")
    p.add_argument("--max-connections", type=int)
    p.add_argument("--instrument", action="store_true", help="per-stage cycle counters")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--duration", type=float, help="stop after SEC seconds")
    p.set_defaults(func=cmd_gateway_run)
    leaves.append(p)

    p = sub.add_parser("loadgen", help="handshake, send sealed payloads, verify echoes")
    p.add_argument("--target", default="memory", help="HOST:PORT or 'memory' (in-process)")
    p.add_argument("--connections", type=int, default=1)
    p.add_argument("--payload", type=int, default=500)
    p.add_argument("--packets-per-conn", type=int, default=10)
    p.add_argument("--rate", type=float, help="offered packets per second")
    p.add_argument("--duration", type=float)
    p.add_argument("--timeout", type=float, default=1.0)
    _crypto(p)
    p.set_defaults(func=cmd_loadgen)
    leaves.append(p)

    bench = sub.add_parser("bench", help="measurements").add_subparsers(dest="action",
                                                                        metavar="ACTION")
    p = bench.add_parser("micro", help="per-stage microbenchmarks")
    p.add_argument("--stage", action="append", choices=[s.value for s in Stage],
                   help="repeatable; default all stages")
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--warmup", type=int, help="discarded timings (default 10%%, min 100)")
    p.add_argument("--payload", type=int, default=500)
    p.add_argument("--connections", type=int, action="append",
                   help="table size / handshake count, repeatable")
    p.add_argument("--batch", type=int, default=1, help="IO batch size")
    p.add_argument("--no-reuse-kex", action="store_true")
    _crypto(p)
    p.add_argument("--out")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(func=cmd_bench_micro)
    leaves.append(p)

    p = bench.add_parser("blackbox", help="offered versus achieved throughput sweep")
    p.add_argument("--target", default="memory", help="HOST:PORT or 'memory'")
    p.add_argument("--rates", type=_rates, required=True, metavar="A:B:STEP")
    p.add_argument("--duration", type=float, default=0.2)
    p.add_argument("--connections", type=int, default=1)
    p.add_argument("--payload", type=int, default=500)
    p.add_argument("--queue-capacity", type=int, default=128,
                   help="receive queue bound of the in-memory gateway")
    _crypto(p)
    p.add_argument("--out")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.set_defaults(func=cmd_bench_blackbox)
    leaves.append(p)

    p = bench.add_parser("plotdata", help="tidy series for one figure")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--figure", required=True,
                   choices=["fig4", "fig5", "fig6", "fig7", "fig8", "fig9"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_plotdata)
    leaves.append(p)

    p = bench.add_parser("validate", help="refit the model locally and score it on gateway runs")
    p.add_argument("--rounds", type=int, default=7)
    p.add_argument("--payload", type=int, default=500)
    p.add_argument("--params-out", help="write the refit parameters here")
    _crypto(p)
    p.set_defaults(func=cmd_bench_validate)
    leaves.append(p)

    model = sub.add_parser("model", help="cost model").add_subparsers(dest="action",
                                                                      metavar="ACTION")
    p = model.add_parser("predict", help="total cycles and throughput")
    p.add_argument("--connections", type=float, required=True)
    p.add_argument("--packets", type=float, required=True)
    p.add_argument("--bytes", type=float, help="payload bytes (default packets x payload)")
    p.add_argument("--cpu-hz", type=float, default=DEFAULT_NOMINAL_HZ)
    p.add_argument("--bandwidth-cap", type=float, help="bits per second")
    p.add_argument("--wire-bytes", type=int, default=576)
    p.add_argument("--conn-rate", type=float, help="new connections per second")
    p.add_argument("--crypto-passes", type=int)
    _params_arg(p)
    p.set_defaults(func=cmd_model_predict)
    leaves.append(p)

    p = model.add_parser("fit", help="refit one component from x,cycles samples")
    p.add_argument("--component", required=True, choices=sorted(FIT_TARGETS))
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", help="write updated params.json")
    _params_arg(p)
    p.set_defaults(func=cmd_model_fit)
    leaves.append(p)

    p = model.add_parser("validate", help="sMAPE of forecast against measured cycles")
    p.add_argument("--measured", required=True, help="component,arg,cycles CSV")
    p.add_argument("--forecast", help="component,arg,cycles CSV (default: evaluate --params)")
    _params_arg(p)
    p.set_defaults(func=cmd_model_validate)
    leaves.append(p)

    p = model.add_parser("params", help="write the parameter file")
    p.add_argument("--out")
    _params_arg(p)
    p.set_defaults(func=cmd_model_params)
    leaves.append(p)

    for leaf in leaves:
        _common(leaf)
    parser._leaves = leaves
    return parser


def _load_config(argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    try:
        with open(known.config) as fh:
            data = json.load(fh)
    except (OSError, ValueError) as exc:
        raise OperationalError(f"cannot read config {known.config}: {exc}") from exc
    if not isinstance(data, dict):
        raise OperationalError(f"{known.config}: expected a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        config = _load_config(argv)
    except OperationalError as exc:
        print(f"dtlsperf: error: {exc}", file=sys.stderr)
        return 1
    for leaf in parser._leaves:
        # file values become defaults, so explicit flags still win
        leaf.set_defaults(**config)
        for action in leaf._actions:
            if action.dest in config:
                action.required = False
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return 2
    if isinstance(args.hash_key, str):  # came from the config file
        args.hash_key = _hash_key(args.hash_key)
    if getattr(args, "suite", None) is None and args.func is cmd_gateway_run:
        args.suite = list(SUITES)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OperationalError as exc:
        print(f"dtlsperf: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"dtlsperf: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
