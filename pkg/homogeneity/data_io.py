"""
Reading unordered-pair files.

Two numeric columns per row, comma or whitespace delimited, optional header row, optional
third column naming a group. Row orientation is ignored (each row is sorted on load).
Lines starting with '#' and blank lines are skipped; reported line numbers are 1-based.
"""

from __future__ import annotations

import hashlib
import io
import logging
from pathlib import Path
from typing import Dict

import numpy as np
import pandas as pd

from errors import InputFormatError
from model import UnorderedDataset

logger = logging.getLogger(__name__)

_COLUMNS = ["y1", "y2", "group", "extra"]


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _is_number(s) -> bool:
    try:
        float(s)
    except (TypeError, ValueError):
        return False
    return True


def read_pairs_frame(path: Path) -> pd.DataFrame:
    """DataFrame with columns y1, y2, group (or None), line."""
    path = Path(path)
    try:
        raw = path.read_text()
    except (OSError, UnicodeDecodeError) as e:
        raise InputFormatError(f"{path}: cannot read ({e})") from e
    lines = ["" if ln.strip().startswith("#") else ln.strip() for ln in raw.splitlines()]
    try:
        df = pd.read_csv(
            io.StringIO("\n".join(lines) + "\n"),
            sep=r"\s*,\s*|\s+",
            engine="python",
            header=None,
            names=_COLUMNS,
            dtype=str,
            skip_blank_lines=False,
        )
    except (pd.errors.ParserError, ValueError) as e:
        raise InputFormatError(f"{path}: {e}") from e
    df["line"] = np.arange(1, len(df) + 1)
    df = df[df[_COLUMNS].notna().any(axis=1)]
    if df.empty:
        raise InputFormatError(f"{path}: no data rows")

    first = df.iloc[0]
    if not (_is_number(first["y1"]) and _is_number(first["y2"])):
        logger.debug("%s: header row detected at line %d", path, first["line"])
        df = df.iloc[1:]
        if df.empty:
            raise InputFormatError(f"{path}: header but no data rows")

    extra = df["extra"].notna()
    if extra.any():
        raise InputFormatError(f"{path}: more than 3 columns", df.loc[extra, "line"].tolist())
    y1 = pd.to_numeric(df["y1"], errors="coerce")
    y2 = pd.to_numeric(df["y2"], errors="coerce")
    bad = ~(np.isfinite(y1.to_numpy(dtype=float)) & np.isfinite(y2.to_numpy(dtype=float)))
    if bad.any():
        raise InputFormatError(
            f"{path}: expected two finite numbers per row", df.loc[bad, "line"].tolist()
        )
    groups = df["group"]
    if groups.notna().any() and groups.isna().any():
        raise InputFormatError(
            f"{path}: group column present on some rows only",
            df.loc[groups.isna(), "line"].tolist(),
        )
    return pd.DataFrame({
        "y1": y1.to_numpy(dtype=float),
        "y2": y2.to_numpy(dtype=float),
        "group": groups.to_numpy(dtype=object),
        "line": df["line"].to_numpy(),
    })


def load_dataset(path: Path) -> UnorderedDataset:
    """All rows of `path` as one dataset (group labels, if any, are ignored)."""
    df = read_pairs_frame(path)
    return UnorderedDataset(df["y1"].to_numpy(), df["y2"].to_numpy())


def load_grouped(path: Path) -> Dict[str, UnorderedDataset]:
    """One dataset per group label, in order of first appearance; '' when ungrouped."""
    df = read_pairs_frame(path)
    if df["group"].isna().all():
        return {"": UnorderedDataset(df["y1"].to_numpy(), df["y2"].to_numpy())}
    out: Dict[str, UnorderedDataset] = {}
    for name, g in df.groupby("group", sort=False):
        out[str(name)] = UnorderedDataset(g["y1"].to_numpy(), g["y2"].to_numpy())
    return out
