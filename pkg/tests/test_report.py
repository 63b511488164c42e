import os

import pytest

from privstream.errors import ParseError
from privstream.report import (SIM_RECORD_SCHEMA, SIM_SUMMARY_SCHEMA,
                               atomic_write, read_rows,
                               simulation_record_rows,
                               write_simulation_report, write_rows)
from privstream.simulate import SimDesign, run_design, aggregate


@pytest.fixture(scope="module")
def tiny_report(small_table):
    design = SimDesign(p=2, n=600, mu=1.0, replications=4, seed=33,
                       eval_ns=(300, 600))
    return aggregate(run_design(design, small_table), design)


def test_records_roundtrip_lossless(tiny_report, tmp_path):
    stem = str(tmp_path / "sim")
    paths = write_simulation_report(tiny_report, stem)
    records = read_rows(paths["records"], SIM_RECORD_SCHEMA)
    # every replication/coefficient/method/eval/level combination present
    assert len(records) == 4 * 3 * 2 * 2 * 1
    original = list(simulation_record_rows(tiny_report))
    for row, orig in zip(records, original):
        for key, value in orig.items():
            if isinstance(value, float):
                assert row[key] == value  # repr round-trip is exact
            else:
                assert row[key] == value or row[key] == int(value)
    summary = read_rows(paths["summary"], SIM_SUMMARY_SCHEMA)
    assert {r["method"] for r in summary} == {"PPI", "PRS"}
    assert all(r["release_budget"] is not None for r in summary)


def test_read_rows_rejects_schema_violations(tmp_path):
    good = tmp_path / "good.csv"
    write_rows(good, SIM_SUMMARY_SCHEMA, [{
        "method": "PI", "n": 10, "level": 0.95, "cp": 0.9, "cp_se": 0.01,
        "al": 0.5, "al_se": 0.01, "release_budget": None}])
    rows = read_rows(good, SIM_SUMMARY_SCHEMA)
    assert rows[0]["release_budget"] is None
    assert rows[0]["cp"] == 0.9

    bad_header = tmp_path / "bad1.csv"
    bad_header.write_text("a,b\n1,2\n")
    with pytest.raises(ParseError, match="header"):
        read_rows(bad_header, SIM_SUMMARY_SCHEMA)

    bad_cell = tmp_path / "bad2.csv"
    text = good.read_text().replace("0.9,", "wat,", 1)
    bad_cell.write_text(text)
    with pytest.raises(ParseError, match="row 2"):
        read_rows(bad_cell, SIM_SUMMARY_SCHEMA)

    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(ParseError, match="empty"):
        read_rows(empty, SIM_SUMMARY_SCHEMA)


def test_atomic_write_leaves_no_partial_file(tmp_path):
    target = tmp_path / "out.csv"
    with pytest.raises(RuntimeError):
        with atomic_write(target) as fh:
            fh.write("partial")
            raise RuntimeError("boom")
    assert not target.exists()
    assert os.listdir(tmp_path) == []
    with atomic_write(target) as fh:
        fh.write("done")
    assert target.read_text() == "done"


def test_report_bytes_deterministic(tiny_report, tmp_path):
    a = str(tmp_path / "a")
    b = str(tmp_path / "b")
    write_simulation_report(tiny_report, a)
    write_simulation_report(tiny_report, b)
    for suffix in (".records.csv", ".summary.csv"):
        assert open(a + suffix, "rb").read() == open(b + suffix, "rb").read()
