import csv
import json

import numpy as np
import pytest

from ark_toolkit.report import CsvReportWriter, JsonReportWriter, create_report_writer, write_solution


def read_csv(path):
    with open(path, newline='', encoding='utf-8') as f:
        return list(csv.DictReader(f))


class TestReportWriters:
    """Test suite for report writers."""

    def test_csv_tables(self, tmp_path):
        """The first table goes to the given path, later ones next to it."""
        writer = create_report_writer("csv", tmp_path / "out" / "report.csv")
        assert isinstance(writer, CsvReportWriter)
        first = writer.write("run", [{"category": "reaction", "seconds": np.float64(0.5)}])
        second = writer.write("transfers", [{"src": "host", "dst": "device", "copies": np.int64(2)}])
        writer.finalize()

        assert first == str(tmp_path / "out" / "report.csv")
        assert second == str(tmp_path / "out" / "report_transfers.csv")
        assert read_csv(first) == [{"category": "reaction", "seconds": "0.5"}]
        assert read_csv(second)[0]["copies"] == "2"
        assert [(info.table, info.rows) for info in writer.get_saved_tables()] == [("run", 1), ("transfers", 1)]

    def test_csv_union_of_columns(self, tmp_path):
        """Rows with differing keys share one header; missing cells stay empty."""
        writer = CsvReportWriter(tmp_path / "bench.csv")
        path = writer.write("bench", [{"op": "dot"}, {"op": "prod", "crossover_length": 100}])
        rows = read_csv(path)
        assert list(rows[0]) == ["op", "crossover_length"]
        assert rows[0]["crossover_length"] == ""

    def test_json_document(self, tmp_path):
        """All tables land in one JSON document on finalize."""
        path = tmp_path / "report.json"
        writer = create_report_writer("json", path)
        assert isinstance(writer, JsonReportWriter)
        writer.write("run", [{"category": "other", "seconds": np.float64(1.25)}])
        writer.write("run", [{"category": "advection", "seconds": 0.5}])
        writer.write("transfers", [])
        assert not path.exists()
        writer.finalize()

        document = json.loads(path.read_text())
        assert [row["category"] for row in document["run"]] == ["other", "advection"]
        assert document["run"][0]["seconds"] == 1.25
        assert document["transfers"] == []
        assert {info.table: info.rows for info in writer.get_saved_tables()} == {"run": 2, "transfers": 0}

    def test_unknown_format(self, tmp_path):
        """Formats other than csv and json are rejected."""
        with pytest.raises(ValueError, match="Unsupported report format"):
            create_report_writer("xlsx", tmp_path / "report.xlsx")


class TestWriteSolution:
    """Test suite for the solution dump."""

    def test_round_trippable_values(self, tmp_path):
        """Values are written with full precision."""
        value = 1.0 / 3.0
        path = write_solution(tmp_path / "solution.txt", [{"x": 0.0, "u": value, "v": 2.0, "w": 3.0}])
        lines = open(path, encoding='utf-8').read().splitlines()
        assert lines[0] == "x,u,v,w"
        assert float(lines[1].split(",")[1]) == value
        assert len(lines) == 2
