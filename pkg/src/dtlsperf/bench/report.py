"""Benchmark reports: CSV/JSON emission, read-back and per-figure plot data.

CSV layout::

    # metadata: {"suite": "aes256gcm", ...}        (only if there is metadata)
    stage,iterations,total_cycles,mean,min,max,bytes,connections
    HASH,900,...
    <blank line>                                     (only with black-box data)
    offered_pps,achieved_pps,achieved_bps
    5000.0,5000.0,...

Empty ``bytes``/``connections`` cells mean "not applicable".
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .clock import Stage
from .loadgen import BlackboxPoint
from .micro import StageSample

SAMPLE_COLUMNS = ["stage", "iterations", "total_cycles", "mean", "min", "max", "bytes",
                  "connections"]
BLACKBOX_COLUMNS = ["offered_pps", "achieved_pps", "achieved_bps"]
PLOT_COLUMNS = ["figure", "series", "x", "y", "y_min", "y_max"]
FIGURES = ("fig4", "fig5", "fig6", "fig7", "fig8", "fig9")
_META_PREFIX = "# metadata: "

# building blocks of the per-packet cost breakdown
BLOCKS = {
    "io": (Stage.IO_RX, Stage.IO_TX),
    "hash": (Stage.HASH,),
    "table": (Stage.TABLE_LOOKUP, Stage.TABLE_INSERT, Stage.STATE_ALLOC),
    "crypto": (Stage.CRYPTO_OPEN, Stage.CRYPTO_SEAL, Stage.HANDSHAKE),
}


class ReportFormatError(ValueError):
    pass


@dataclass
class BenchReport:
    metadata: dict = field(default_factory=dict)
    samples: list = field(default_factory=list)
    blackbox: list | None = None

    def to_dict(self) -> dict:
        return {
            "metadata": self.metadata,
            "samples": [_sample_dict(s) for s in self.samples],
            "blackbox": None if self.blackbox is None else
            [{"offered_pps": p.offered_pps, "achieved_pps": p.achieved_pps,
              "achieved_bps": p.achieved_bps} for p in self.blackbox],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchReport":
        try:
            samples = [StageSample(Stage(s["stage"]), int(s["iterations"]),
                                   float(s["total_cycles"]), float(s["mean"]), float(s["min"]),
                                   float(s["max"]), s.get("bytes"), s.get("connections"))
                       for s in d.get("samples", [])]
            bb = d.get("blackbox")
            if bb is not None:
                bb = [BlackboxPoint(float(p["offered_pps"]), float(p["achieved_pps"]),
                                    float(p["achieved_bps"])) for p in bb]
        except (KeyError, ValueError, TypeError) as exc:
            raise ReportFormatError(f"bad report: {exc}") from exc
        return cls(dict(d.get("metadata") or {}), samples, bb)


def _sample_dict(s: StageSample) -> dict:
    return {"stage": s.stage.value, "iterations": s.iterations, "total_cycles": s.total_cycles,
            "mean": s.mean, "min": s.min, "max": s.max, "bytes": s.bytes,
            "connections": s.connections}


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _opt_int(text):
    return None if text == "" else int(text)


def to_csv(report: BenchReport) -> str:
    buf = io.StringIO()
    if report.metadata:
        buf.write(_META_PREFIX + json.dumps(report.metadata, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SAMPLE_COLUMNS)
    for s in report.samples:
        d = _sample_dict(s)
        w.writerow([_cell(d[c]) for c in SAMPLE_COLUMNS])
    if report.blackbox is not None:
        buf.write("\n")
        w.writerow(BLACKBOX_COLUMNS)
        for p in report.blackbox:
            w.writerow([repr(float(p.offered_pps)), repr(float(p.achieved_pps)),
                        repr(float(p.achieved_bps))])
    return buf.getvalue()


def from_csv(text: str) -> BenchReport:
    lines = text.splitlines()
    metadata = {}
    while lines and lines[0].startswith("#"):
        line = lines.pop(0)
        if line.startswith(_META_PREFIX):
            metadata = json.loads(line[len(_META_PREFIX):])
    if not lines or next(csv.reader([lines[0]])) != SAMPLE_COLUMNS:
        raise ReportFormatError("missing stage sample header")
    samples, blackbox = [], None
    rows = list(csv.reader(lines[1:]))
    i = 0
    while i < len(rows) and rows[i]:
        r = rows[i]
        if len(r) != len(SAMPLE_COLUMNS):
            raise ReportFormatError(f"sample row {i + 2} has {len(r)} fields")
        try:
            samples.append(StageSample(Stage(r[0]), int(r[1]), float(r[2]), float(r[3]),
                                       float(r[4]), float(r[5]), _opt_int(r[6]), _opt_int(r[7])))
        except ValueError as exc:
            raise ReportFormatError(f"sample row {i + 2}: {exc}") from exc
        i += 1
    rest = [r for r in rows[i:] if r]
    if rest:
        if rest[0] != BLACKBOX_COLUMNS:
            raise ReportFormatError("unexpected second section")
        blackbox = [BlackboxPoint(float(a), float(b), float(c)) for a, b, c in rest[1:]]
    return BenchReport(metadata, samples, blackbox)


def emit_report(report: BenchReport, path, format: str = "csv") -> None:
    if format == "csv":
        text = to_csv(report)
    elif format == "json":
        text = json.dumps(report.to_dict(), indent=2) + "\n"
    else:
        raise ValueError(f"unknown report format {format!r}")
    with open(path, "w", newline="") as fh:
        fh.write(text)


def read_report(path, format: str | None = None) -> BenchReport:
    with open(path) as fh:
        text = fh.read()
    if format is None:
        format = "json" if text.lstrip().startswith("{") else "csv"
    if format == "json":
        return BenchReport.from_dict(json.loads(text))
    return from_csv(text)


# -- plot data ----------------------------------------------------------------

def _rows_for_stage(report, stages, x_attr):
    for s in report.samples:
        if s.stage in stages:
            x = getattr(s, x_attr)
            if x is not None:
                yield s, x


def _breakdown(report, blocks):
    means = {}
    for s in report.samples:
        means.setdefault(s.stage, []).append(s.mean)
    label = "/".join(str(report.metadata.get(k, "?")) for k in ("suite", "kex"))
    out = []
    for name in blocks:
        vals = [sum(means[st]) / len(means[st]) for st in BLOCKS[name] if st in means]
        if vals:
            out.append((name, label, sum(vals), None, None))
    return out


def plot_series(report: BenchReport, figure: str) -> list:
    """Tidy ``(series, x, y, y_min, y_max)`` rows for one figure."""
    if figure == "fig4":
        if not report.blackbox:
            raise ReportFormatError("fig4 needs black-box data")
        rows = [("achieved_pps", p.offered_pps, p.achieved_pps, None, None) for p in report.blackbox]
        rows += [("achieved_bps", p.offered_pps, p.achieved_bps, None, None) for p in report.blackbox]
        return rows
    if figure == "fig5":
        return [("HASH", s.iterations, s.mean, s.min, s.max)
                for s, _ in _rows_for_stage(report, (Stage.HASH,), "iterations")]
    if figure == "fig6":
        return [(s.stage.value, x, s.mean, s.min, s.max)
                for s, x in _rows_for_stage(report, (Stage.TABLE_INSERT, Stage.TABLE_LOOKUP),
                                            "connections")]
    if figure == "fig7":
        return _breakdown(report, ("io", "hash", "table", "crypto"))
    if figure == "fig8":
        return [("HANDSHAKE", x, s.mean, s.min, s.max)
                for s, x in _rows_for_stage(report, (Stage.HANDSHAKE,), "connections")]
    if figure == "fig9":
        return _breakdown(report, ("io", "hash", "table"))
    raise ValueError(f"unknown figure {figure!r}; expected one of {', '.join(FIGURES)}")


def emit_plotdata(report: BenchReport, figure: str, path) -> int:
    rows = plot_series(report, figure)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for series, x, y, lo, hi in rows:
            w.writerow([figure, series, _cell(x), _cell(y), _cell(lo), _cell(hi)])
    return len(rows)
