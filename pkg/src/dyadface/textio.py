"""Helpers shared by the versioned text file formats."""
from __future__ import annotations

from pathlib import Path

import numpy as np

FLOAT_FMT = "%.17g"


class FormatError(ValueError):
    """Raised when a model or corpus file cannot be parsed."""

    def __init__(self, path, lineno: int, message: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{self.path}:{lineno}: {message}")


def fmt_row(values) -> str:
    return " ".join(FLOAT_FMT % float(v) for v in np.ravel(values))


def write_matrix(lines: list[str], matrix) -> None:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    lines.extend(fmt_row(row) for row in matrix)


def write_text(path, lines: list[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


class LineReader:
    """Sequential reader that knows the current line number for error messages."""

    def __init__(self, path):
        self.path = Path(path)
        with open(self.path, encoding="utf-8") as fh:
            self._lines = fh.read().split("\n")
        if self._lines and self._lines[-1] == "":
            self._lines.pop()
        self.lineno = 0

    def error(self, message: str) -> FormatError:
        return FormatError(self.path, self.lineno, message)

    def at_end(self) -> bool:
        return self.lineno >= len(self._lines)

    def next(self) -> str:
        if self.at_end():
            self.lineno += 1
            raise self.error("unexpected end of file")
        line = self._lines[self.lineno]
        self.lineno += 1
        return line

    def expect(self, header: str) -> str:
        line = self.next()
        if line.strip() != header:
            raise self.error(f"expected {header!r}, got {line.strip()!r}")
        return line

    def int(self) -> int:
        line = self.next().strip()
        try:
            return int(line)
        except ValueError:
            raise self.error(f"expected an integer, got {line!r}") from None

    def floats(self, count: int | None = None) -> np.ndarray:
        line = self.next()
        try:
            row = np.array([float(tok) for tok in line.split()], dtype=np.float64)
        except ValueError:
            raise self.error("non-numeric value") from None
        if count is not None and row.size != count:
            raise self.error(f"expected {count} values, got {row.size}")
        return row

    def matrix(self, rows: int, cols: int) -> np.ndarray:
        out = np.empty((rows, cols), dtype=np.float64)
        for i in range(rows):
            out[i] = self.floats(cols)
        return out

    def keyvalues(self) -> dict[str, str]:
        line = self.next()
        out = {}
        for tok in line.split():
            if "=" not in tok:
                raise self.error(f"expected key=value, got {tok!r}")
            key, value = tok.split("=", 1)
            out[key] = value
        return out
