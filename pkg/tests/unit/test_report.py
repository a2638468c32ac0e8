"""Unit tests for report documents and the printed test table."""
from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "homogeneity"))

from estimation import FitOptions
from lrt import run_all
from null_laws import PValue, RLawSettings, build_r_law
from parallel import rng_for
from report import Provenance, ReportDocument, format_test_report, load_report, save_report
from simulate import STANDARD_THETA, generate_dataset


def test_document_round_trip_is_lossless(tmp_path) -> None:
    payload = {"x": 0.1 + 0.2, "tiny": 1e-300, "big": 123456789.123456789, "items": [1, 2]}
    doc = ReportDocument("calibration", payload, Provenance(seed=7, config={"reps": 10}))
    path = tmp_path / "sub" / "doc.json"
    save_report(path, doc)
    back = load_report(path)
    assert back.payload == payload
    assert back.provenance == doc.provenance
    assert ReportDocument.from_bytes(doc.to_bytes()).to_dict() == doc.to_dict()


def test_unknown_kind_is_rejected() -> None:
    doc = ReportDocument("test_report", {})
    d = doc.to_dict()
    d["kind"] = "mystery"
    with pytest.raises(ValueError):
        ReportDocument.from_dict(d)


def test_provenance_has_timestamp_and_version() -> None:
    p = Provenance()
    assert p.version and "T" in p.created_at


def test_pvalue_formatting() -> None:
    assert PValue(0.0123).format() == "1.230e-02"
    coarse = PValue(1 / 1001, below_resolution=True, table_size=1000)
    assert coarse.format().startswith("< 9.990e-04")
    assert "N=1000" in coarse.format()


def test_format_test_report() -> None:
    ds = generate_dataset(30, STANDARD_THETA, rng_for(31, 0))
    report = run_all(ds, FitOptions(n_random_starts=1), r_law=build_r_law(RLawSettings(size=5000)))
    text = format_test_report(report, title="group fathers")
    lines = text.splitlines()
    assert lines[0] == "group fathers"
    assert lines[1] == "n = 30"
    for label in ("R_n1", "R_n2", "R*_n1", "R*_n2"):
        assert any(line.startswith(label) for line in lines)
    assert "MLE (rho free)" in text
    assert "error" not in text
