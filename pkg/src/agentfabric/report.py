"""CSV report files and summary recomputation from raw logs."""
from __future__ import annotations

import csv
import io
import os
import tempfile
from pathlib import Path

from .gossip import TRACE_HEADER
from .ledger import JOURNAL_HEADER
from .lifecycle import EVENT_HEADER
from .matching import MATCH_HEADER
from .reputation import SNAPSHOT_HEADER
from .trust import TRAJECTORY_HEADER

FILES = {
    "gossip": ("gossip.csv", TRACE_HEADER),
    "trust": ("trust.csv", TRAJECTORY_HEADER),
    "matching": ("matching.csv", MATCH_HEADER),
    "events": ("events.csv", EVENT_HEADER),
    "ledger": ("ledger.csv", JOURNAL_HEADER),
    "reputation": ("reputation.csv", SNAPSHOT_HEADER),
}
BALANCES = ("balances.csv", ("round", "account", "balance"))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def summary_text(summary: dict) -> str:
    return "".join(f"{k}: {_fmt(v)}\n" for k, v in summary.items())


def emit_report(report, out_dir, families=None, balances: bool = False) -> list[Path]:
    """Write one CSV per log family plus ``summary.txt``; returns the paths written."""
    out = Path(out_dir)
    written = []
    for name, (fname, header) in FILES.items():
        if families is not None and name not in families:
            continue
        p = out / fname
        write_atomic(p, csv_text(header, getattr(report, name)))
        written.append(p)
    if balances:
        p = out / BALANCES[0]
        write_atomic(p, csv_text(BALANCES[1], report.balances))
        written.append(p)
    p = out / "summary.txt"
    write_atomic(p, summary_text(report.summary))
    written.append(p)
    return written


def _read(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def recompute_summary(out_dir) -> dict:
    """Rebuild the headline aggregates from the CSV logs alone."""
    out = Path(out_dir)
    gossip = _read(out / "gossip.csv")
    events = _read(out / "events.csv")
    ledger = _read(out / "ledger.csv")
    published = {e["task"]: int(e["time"]) for e in events if e["event"] == "publish"}
    escrow_of = {}
    for e in events:
        if e["event"] == "publish":
            for part in e["detail"].split():
                if part.startswith("escrow="):
                    escrow_of[part.split("=", 1)[1]] = e["task"]
    final = {}
    for e in events:
        if e["event"] == "state" and e["detail"].endswith(("->Settled", "->Failed")):
            final[e["task"]] = (e["detail"].rsplit("->", 1)[1], int(e["time"]))
    settled = [t for t, (s, _) in final.items() if s == "Settled"]
    lat = [final[t][1] - published[t] for t in settled]
    task_releases = sum(int(r["amount"]) for r in ledger if r["op"] == "release" and r["escrow"] in escrow_of)
    return {
        "tasks_published": len(published),
        "tasks_settled": len(settled),
        "tasks_failed": sum(1 for s, _ in final.values() if s == "Failed"),
        "task_success_fraction": len(settled) / len(published) if published else 0.0,
        "mean_settlement_latency": sum(lat) / len(lat) if lat else 0.0,
        "gossip_messages": sum(int(r["messages"]) for r in gossip),
        "escrow_released": sum(int(r["amount"]) for r in ledger if r["op"] == "release"),
        "task_escrow_released": task_releases,
        "total_minted": sum(int(r["amount"]) for r in ledger if r["op"] == "mint"),
    }
