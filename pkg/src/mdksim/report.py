"""Run reports, browser trace files and per-token latency tables."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .config import SimConfig
from .engine import NET, STAGE, EmptyTimeline, Timeline, breakdown


@dataclass
class PhaseStats:
    n_tokens: int
    mean_s: float
    p50_s: float
    p90_s: float
    p99_s: float
    total_s: float

    @classmethod
    def of(cls, lat: np.ndarray) -> "PhaseStats | None":
        if lat.size == 0:
            return None
        p50, p90, p99 = np.percentile(lat, [50, 90, 99])
        return cls(int(lat.size), float(lat.mean()), float(p50), float(p90), float(p99), float(lat.sum()))


@dataclass
class RunReport:
    config: dict
    config_hash: str
    backend: str
    prefill: PhaseStats | None
    decode: PhaseStats | None
    tokens_per_sec: float | None
    breakdown: dict | None
    n_generated: int
    speedup: dict = field(default_factory=dict)
    created: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        for k in ("prefill", "decode"):
            if d.get(k) is not None:
                d[k] = PhaseStats(**d[k])
        return cls(**d)


def make_report(cfg: SimConfig, timeline: Timeline, n_generated: int, backend: str = "",
                baseline: RunReport | None = None) -> RunReport:
    pre = PhaseStats.of(timeline.latencies("prefill"))
    dec = PhaseStats.of(timeline.latencies("decode"))
    tps = cfg.run.gen_len / dec.total_s if dec is not None else None
    try:
        bd = breakdown(timeline, "decode" if dec is not None else "prefill")
    except EmptyTimeline:
        bd = None
    rep = RunReport(cfg.to_dict(), cfg.content_hash(), backend, pre, dec, tps, bd, n_generated,
                    created=datetime.now(timezone.utc).isoformat(timespec="seconds"))
    if baseline is not None:
        rep.speedup = speedup(rep, baseline)
    return rep


def speedup(rep: RunReport, baseline: RunReport) -> dict:
    out = {"baseline_hash": baseline.config_hash}
    if rep.tokens_per_sec and baseline.tokens_per_sec:
        out["tokens_per_sec"] = rep.tokens_per_sec / baseline.tokens_per_sec
    return out


def load_report(path) -> RunReport:
    return RunReport.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# trace and table writers

def trace_events(timeline: Timeline) -> list[dict]:
    """Complete ("X") events in microseconds of virtual time."""
    out = []
    for s, e, node, cat, tag, peer in timeline.intervals:
        tid = "STAGE" if cat == STAGE else cat
        ev = {"name": tag, "cat": cat, "ph": "X", "ts": s * 1e6, "dur": (e - s) * 1e6,
              "pid": node, "tid": tid}
        if cat == NET:
            ev["args"] = {"dst": peer}
        out.append(ev)
    for t in timeline.tokens:
        out.append({"name": f"token{t.index}", "cat": t.phase, "ph": "X", "ts": t.start * 1e6,
                    "dur": (t.end - t.start) * 1e6, "pid": -1, "tid": "host"})
    return out


def write_trace(timeline: Timeline, path) -> None:
    Path(path).write_text(json.dumps(trace_events(timeline)))


def write_latency_csv(timeline: Timeline, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "phase", "start_s", "end_s", "latency_s", "mp_s", "mha_s",
                    "ln_res_s", "aux_s", "net_exposed_s"])
        for t in timeline.tokens:
            x = t.times
            w.writerow([t.index, t.phase, repr(t.start), repr(t.end), repr(t.latency),
                        repr(x["MP"]), repr(x["MHA"]), repr(x["LN_RES"]), repr(x["AUX"]),
                        repr(x["NET_EXPOSED"])])


def write_outputs(out_dir, report: RunReport, timeline: Timeline, stem: str = "run") -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / f"{stem}.report.json", "trace": out / f"{stem}.trace.json",
             "latency": out / f"{stem}.latency.csv"}
    paths["report"].write_text(report.to_json())
    write_trace(timeline, paths["trace"])
    write_latency_csv(timeline, paths["latency"])
    return paths
