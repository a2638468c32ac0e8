"""Unit tests for reading unordered-pair files."""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[2] / "homogeneity"))

from data_io import file_sha256, load_dataset, load_grouped, read_pairs_frame
from errors import InputFormatError


def _write(tmp_path: Path, text: str, name: str = "pairs.csv") -> Path:
    p = tmp_path / name
    p.write_text(text)
    return p


def test_comma_file_with_header(tmp_path) -> None:
    ds = load_dataset(_write(tmp_path, "left,right\n1.5,0.5\n2,3\n-1,4\n"))
    assert ds.n == 3
    np.testing.assert_array_equal(ds.as_array(), [[-1.0, 4.0], [0.5, 1.5], [2.0, 3.0]])


def test_whitespace_comments_and_blank_lines(tmp_path) -> None:
    path = _write(tmp_path, "# measured lengths\n1.0 2.0\n\n3.0\t1.0\n  # trailing note\n")
    frame = read_pairs_frame(path)
    assert frame["line"].tolist() == [2, 4]
    assert load_dataset(path).n == 2


def test_orientation_does_not_matter(tmp_path) -> None:
    a = load_dataset(_write(tmp_path, "1,2\n5,3\n", "a.csv"))
    b = load_dataset(_write(tmp_path, "3,5\n2,1\n", "b.csv"))
    np.testing.assert_array_equal(a.as_array(), b.as_array())


def test_bad_rows_are_reported_by_line(tmp_path) -> None:
    path = _write(tmp_path, "y1,y2\n1,2\n3,abc\n4,5\n6,nan\n")
    with pytest.raises(InputFormatError) as err:
        load_dataset(path)
    assert err.value.lines == [3, 5]
    assert "line 3, 5" in str(err.value)


def test_too_many_columns(tmp_path) -> None:
    with pytest.raises(InputFormatError) as err:
        load_dataset(_write(tmp_path, "1,2,a\n3,4,b,extra\n"))
    assert err.value.lines == [2]


def test_empty_file(tmp_path) -> None:
    with pytest.raises(InputFormatError):
        load_dataset(_write(tmp_path, "# nothing here\n\n"))


def test_missing_file(tmp_path) -> None:
    with pytest.raises(InputFormatError):
        load_dataset(tmp_path / "absent.csv")


def test_grouped_file(tmp_path) -> None:
    path = _write(tmp_path, "y1,y2,group\n1,2,fathers\n2,3,mothers\n3,4,fathers\n")
    groups = load_grouped(path)
    assert list(groups) == ["fathers", "mothers"]
    assert groups["fathers"].n == 2 and groups["mothers"].n == 1
    assert load_dataset(path).n == 3


def test_group_column_on_some_rows_only(tmp_path) -> None:
    with pytest.raises(InputFormatError) as err:
        load_grouped(_write(tmp_path, "1,2,a\n3,4\n"))
    assert err.value.lines == [2]


def test_ungrouped_file_is_one_group(tmp_path) -> None:
    assert list(load_grouped(_write(tmp_path, "1,2\n3,4\n"))) == [""]


def test_file_hash_is_stable(tmp_path) -> None:
    path = _write(tmp_path, "1,2\n")
    assert file_sha256(path) == file_sha256(path)
    assert len(file_sha256(path)) == 64
