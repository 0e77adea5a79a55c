"""CSV ingestion: header row, numeric columns selected by name."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def load_csv_columns(path, features=None) -> dict:
    """{column name: float64 array}; non-numeric cells become NaN."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path} is empty")
        wanted = [name for name in header if features is None or name in features]
        index = {name: header.index(name) for name in wanted}
        columns = {name: [] for name in wanted}
        for row in reader:
            for name, col in index.items():
                try:
                    columns[name].append(float(row[col]))
                except (ValueError, IndexError):
                    columns[name].append(float("nan"))
    return {name: np.asarray(vals, dtype=np.float64)
            for name, vals in columns.items()}


def write_csv(path, columns: dict) -> None:
    names = list(columns)
    length = len(next(iter(columns.values()))) if columns else 0
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(length):
            writer.writerow([columns[name][i] for name in names])
