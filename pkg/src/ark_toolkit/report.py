"""
Report module for ark_toolkit.

Writers that persist tables of rows (run timings, transfer ledgers, solver
statistics, benchmark results) as CSV files or a single JSON document.
"""

import csv
import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

Row = Dict[str, Any]


@dataclass
class SavedTableInfo:
    """Information about a written table."""
    table: str
    path: str
    rows: int


def _plain(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    return value


class ReportWriter(ABC):
    """Abstract base class for report writers."""

    @abstractmethod
    def write(self, table: str, rows: Sequence[Row]) -> str:
        """
        Write one table.

        Args:
            table: Table name (e.g. "run", "transfers", "bench")
            rows: Rows sharing one set of keys

        Returns:
            Path the table was (or will be) written to
        """
        pass

    @abstractmethod
    def finalize(self) -> None:
        """Flush anything still buffered."""
        pass

    def get_saved_tables(self) -> List[SavedTableInfo]:
        return list(self._saved)


class CsvReportWriter(ReportWriter):
    """
    One CSV file per table.

    The first table written goes to ``path``; later tables go next to it as
    ``<stem>_<table>.csv``.
    """

    def __init__(self, path: Union[str, Path]):
        """
        Initialize CsvReportWriter.

        Args:
            path: File for the first table
        """
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._primary: Optional[str] = None
        self._saved: List[SavedTableInfo] = []

    def _table_path(self, table: str) -> Path:
        if self._primary is None:
            self._primary = table
        if table == self._primary:
            return self.path
        return self.path.with_name(f"{self.path.stem}_{table}{self.path.suffix or '.csv'}")

    def write(self, table: str, rows: Sequence[Row]) -> str:
        file_path = self._table_path(table)
        fieldnames: List[str] = []
        for row in rows:
            for key in row:
                if key not in fieldnames:
                    fieldnames.append(key)

        with open(file_path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.DictWriter(f, fieldnames=fieldnames, restval="")
            writer.writeheader()
            for row in rows:
                writer.writerow({key: _plain(value) for key, value in row.items()})

        self._saved.append(SavedTableInfo(table=table, path=str(file_path), rows=len(rows)))
        logger.info(f"Wrote {len(rows)} {table} rows to {file_path}")
        return str(file_path)

    def finalize(self) -> None:
        """Nothing is buffered."""
        logger.debug(f"CsvReportWriter completed. Wrote {len(self._saved)} tables.")


class JsonReportWriter(ReportWriter):
    """All tables in one JSON document, written on ``finalize``."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.tables: Dict[str, List[Row]] = {}
        self._saved: List[SavedTableInfo] = []

    def write(self, table: str, rows: Sequence[Row]) -> str:
        self.tables.setdefault(table, []).extend(
            {key: _plain(value) for key, value in row.items()} for row in rows
        )
        logger.debug(f"Buffered {len(rows)} {table} rows")
        return str(self.path)

    def finalize(self) -> None:
        with open(self.path, 'w', encoding='utf-8') as f:
            json.dump(self.tables, f, indent=2)
        self._saved = [
            SavedTableInfo(table=table, path=str(self.path), rows=len(rows))
            for table, rows in self.tables.items()
        ]
        logger.info(f"Wrote {len(self.tables)} tables to {self.path}")


def create_report_writer(fmt: str, path: Union[str, Path]) -> ReportWriter:
    """
    Factory function to create a report writer.

    Args:
        fmt: "csv" or "json"
        path: Output file

    Returns:
        Configured report writer

    Raises:
        ValueError: If format is not supported
    """
    if fmt == "csv":
        return CsvReportWriter(path)
    elif fmt == "json":
        return JsonReportWriter(path)
    else:
        raise ValueError(f"Unsupported report format: {fmt}")


def write_solution(path: Union[str, Path], rows: Sequence[Row]) -> str:
    """
    Dump solution rows as plain ``x,u,v,w`` text.

    Args:
        path: Output file
        rows: Rows with keys x, u, v and w

    Returns:
        Path written
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        f.write("x,u,v,w\n")
        for row in rows:
            f.write(f"{row['x']!r},{row['u']!r},{row['v']!r},{row['w']!r}\n")
    logger.info(f"Wrote solution with {len(rows)} cells to {path}")
    return str(path)
