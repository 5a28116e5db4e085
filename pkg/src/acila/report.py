"""Deterministic report rendering: CSV, a human-readable listing, and trace lines."""

from __future__ import annotations

import csv
import io
import re
from pathlib import Path
from typing import Dict, Iterator, Optional, Tuple

from .fabric import trace_lines
from .runner import RunReport

CSV_HEADER = ("device_class", "metric", "value")
FORMATS = ("csv", "human", "trace-lines")


def report_rows(report: RunReport) -> Iterator[Tuple[str, str, int]]:
    entries = report.entries
    yield from entries.rows()
    if entries.gateways:
        for m in ("escc", "escs", "ess", "es_g"):
            yield ("gateway:total", m, sum(getattr(c, m) for c in entries.gateways.values()))
    for c in report.checks:
        yield (f"check:{c.device}", f"{c.metric}.concrete", c.concrete)
    for f in report.flows:
        yield (f"flow:{f.name}:{f.direction}", "delivered", int(f.delivered))
        yield (f"flow:{f.name}:{f.direction}", "priority_hops", len(f.priority_hops))
    for ch in report.changes:
        for m in sorted(ch.analytic):
            yield (f"change:{ch.index}", f"{m}.analytic", ch.analytic[m])
            yield (f"change:{ch.index}", f"{m}.measured", ch.measured[m])


def render_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    w.writerows(report_rows(report))
    return buf.getvalue()


def render_human(report: RunReport) -> str:
    ok = sum(c.ok for c in report.checks)
    lines = [f"# scenario {report.scenario}",
             f"# cross-checks: {ok} passed, {len(report.checks) - ok} failed"]
    for c in report.failures:
        lines.append(f"# MISMATCH {c.device} {c.metric}: analytic={c.analytic} concrete={c.concrete} "
                     f"(expected concrete {c.relation} analytic)")
    width = max((len(d) for d, _, _ in report_rows(report)), default=0)
    lines.extend(f"{d:<{width}}  {m} = {v}" for d, m, v in report_rows(report))
    return "\n".join(lines) + "\n"


_HUMAN_LINE = re.compile(r"^(\S+)\s+(\S+) = (-?\d+)$")


def parse_human(text: str) -> Dict[Tuple[str, str], int]:
    """Read back the (device_class, metric) -> value pairs of a human report."""
    out = {}
    for line in text.splitlines():
        if not line or line.startswith("#"):
            continue
        m = _HUMAN_LINE.match(line)
        if not m:
            raise ValueError(f"unrecognized report line: {line!r}")
        out[(m.group(1), m.group(2))] = int(m.group(3))
    return out


def render_traces(report: RunReport) -> str:
    return "".join(f"# flow {name} {direction}\n" + trace_lines(trace)
                   for name, direction, trace in report.traces)


def render(report: RunReport, fmt: str) -> str:
    if fmt == "csv":
        return render_csv(report)
    if fmt == "human":
        return render_human(report)
    if fmt == "trace-lines":
        return render_traces(report)
    raise ValueError(f"unknown format {fmt!r}; expected one of {', '.join(FORMATS)}")


def emit(report: RunReport, fmt: str, out_path: Optional[str] = None, stream=None) -> int:
    """Write the rendered report to ``out_path`` (or ``stream``); returns bytes written."""
    data = render(report, fmt).encode()
    if out_path is not None:
        Path(out_path).write_bytes(data)
    elif stream is not None:
        stream.write(data)
    return len(data)
