"""
Structured reports with provenance, and the human-readable test table.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

from config import VERSION
from lrt import TestReport
from null_laws import StatId

REPORT_KINDS = ("test_report", "rejection_table", "sweep", "calibration")


@dataclass
class Provenance:
    seed: Optional[int] = None
    input_sha256: Optional[str] = None
    version: str = VERSION
    created_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    config: Dict[str, Any] = field(default_factory=dict)


@dataclass
class ReportDocument:
    kind: str
    payload: Dict[str, Any]
    provenance: Provenance = field(default_factory=Provenance)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "payload": self.payload, "provenance": asdict(self.provenance)}

    @classmethod
    def from_dict(cls, d: dict) -> "ReportDocument":
        if d.get("kind") not in REPORT_KINDS:
            raise ValueError(f"unknown report kind {d.get('kind')!r}")
        return cls(kind=d["kind"], payload=d["payload"], provenance=Provenance(**d["provenance"]))

    def to_bytes(self) -> bytes:
        # repr-based float encoding is the shortest string that round-trips exactly
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=True).encode("utf-8")

    @classmethod
    def from_bytes(cls, b: bytes) -> "ReportDocument":
        return cls.from_dict(json.loads(b.decode("utf-8")))


def save_report(path: Path, doc: ReportDocument) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(doc.to_bytes())


def load_report(path: Path) -> ReportDocument:
    return ReportDocument.from_bytes(Path(path).read_bytes())


def _fmt(x: Optional[float]) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "-"
    return f"{x:.4f}"


def format_test_report(report: TestReport, title: str = "") -> str:
    """Statistic / raw p / adjusted p table, followed by the unrestricted rho-free fit."""
    lines = []
    if title:
        lines.append(title)
    lines.append(f"n = {report.n}")
    lines.append(f"{'test':<8} {'statistic':>10} {'raw p':>32} {'adjusted p':>32}")
    for s in StatId:
        raw, adj = report.p_raw.get(s), report.p_adj.get(s)
        lines.append(
            f"{s.label:<8} {_fmt(report.statistics.get(s)):>10} "
            f"{raw.format() if raw else '-':>32} {adj.format() if adj else '-':>32}"
        )
        if adj is not None and adj.clipped:
            lines.append(f"{'':<8} note: adjustment clipped at n={report.n}")
    for c, fit in report.fits.items():
        if c.value == "free":
            t = fit.theta_hat
            lines.append(
                f"MLE (rho free): mu1={t.mu1:.4f} mu2={t.mu2:.4f} sigma1={t.sigma1:.4f} "
                f"sigma2={t.sigma2:.4f} rho={t.rho:.4f}"
                + ("  [near-singular]" if fit.near_singular else "")
            )
    if report.near_singular:
        lines.append(f"note: near-singular fit ({', '.join(report.near_singular)}); "
                     "statistics using it are unbounded")
    for key, msg in report.errors.items():
        lines.append(f"error [{key}]: {msg}")
    return "\n".join(lines)
