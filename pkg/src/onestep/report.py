"""Machine-readable report files.

A report is UTF-8 text. The first line is the schema header
``# onestep-report <version>``; the second names the producing command
(``# command: <name>``). Then come sections in a fixed order, each opened
by a bracketed line:

* ``[name]`` starts a key/value section of ``key = value`` lines;
* ``[table name]`` starts a table: one comma-separated header line, then one
  comma-separated line per row.

Floats are written with :func:`repr` (shortest round-trip form), missing
values as ``NA`` and booleans as ``true``/``false``. Within a schema
version, fields are only ever appended, never renamed or reordered.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

SCHEMA_VERSION = 1
HEADER = "# onestep-report"


def format_value(v: Any) -> str:
    if v is None:
        return "NA"
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "NA" if np.isnan(v) else repr(v)
    if isinstance(v, (tuple, list, np.ndarray)):
        return ";".join(format_value(x) for x in v)
    s = str(v)
    if "\n" in s:
        raise ValueError("report values must be single-line")
    return s


@dataclass
class Section:
    name: str
    values: dict[str, str] = field(default_factory=dict)
    header: list[str] | None = None
    rows: list[list[str]] = field(default_factory=list)

    @property
    def is_table(self) -> bool:
        return self.header is not None

    def column(self, name: str) -> list[str]:
        j = self.header.index(name)
        return [r[j] for r in self.rows]


@dataclass
class Report:
    command: str
    sections: list[Section] = field(default_factory=list)
    version: int = SCHEMA_VERSION

    def _new(self, name):
        if any(s.name == name for s in self.sections):
            raise ValueError(f"duplicate report section {name!r}")
        if not name or any(c in name for c in "[]\n"):
            raise ValueError(f"bad section name {name!r}")
        sec = Section(name)
        self.sections.append(sec)
        return sec

    def add_values(self, name: str, values: Mapping[str, Any]) -> Section:
        sec = self._new(name)
        for k, v in values.items():
            if "=" in k or k != k.strip() or not k:
                raise ValueError(f"bad key {k!r}")
            sec.values[k] = format_value(v)
        return sec

    def add_table(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Section:
        sec = self._new(name)
        sec.header = list(header)
        for r in rows:
            r = [format_value(x) for x in r]
            if len(r) != len(sec.header):
                raise ValueError(f"table {name!r}: row has {len(r)} cells, header {len(sec.header)}")
            sec.rows.append(r)
        return sec

    def __getitem__(self, name: str) -> Section:
        for s in self.sections:
            if s.name == name:
                return s
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(s.name == name for s in self.sections)

    def dumps(self) -> str:
        out = io.StringIO()
        out.write(f"{HEADER} {self.version}\n# command: {self.command}\n")
        w = csv.writer(out, lineterminator="\n")
        for s in self.sections:
            if s.is_table:
                out.write(f"[table {s.name}]\n")
                w.writerow(s.header)
                w.writerows(s.rows)
            else:
                out.write(f"[{s.name}]\n")
                for k, v in s.values.items():
                    out.write(f"{k} = {v}\n")
        return out.getvalue()

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.dumps())


def loads(text: str) -> Report:
    lines = text.splitlines()
    if len(lines) < 2 or not lines[0].startswith(HEADER + " "):
        raise ValueError("not a report file (missing schema header)")
    version = int(lines[0][len(HEADER) + 1:])
    if version > SCHEMA_VERSION:
        raise ValueError(f"report schema {version} is newer than supported {SCHEMA_VERSION}")
    if not lines[1].startswith("# command: "):
        raise ValueError("report is missing its command line")
    rep = Report(lines[1][len("# command: "):], version=version)
    sec = None
    for ln in lines[2:]:
        if ln.startswith("[") and ln.endswith("]"):
            inner = ln[1:-1]
            if inner.startswith("table "):
                sec = rep._new(inner[len("table "):])
                sec.header = []
                sec.rows = None  # header pending
            else:
                sec = rep._new(inner)
            continue
        if sec is None:
            raise ValueError(f"content before the first section: {ln!r}")
        if sec.is_table:
            cells = next(csv.reader([ln]))
            if sec.rows is None:
                sec.header, sec.rows = cells, []
            else:
                sec.rows.append(cells)
        else:
            k, sep, v = ln.partition(" = ")
            if not sep:
                raise ValueError(f"malformed line in section {sec.name!r}: {ln!r}")
            sec.values[k] = v
    for s in rep.sections:
        if s.is_table and s.rows is None:
            s.rows = []
    return rep


def read_report(path) -> Report:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def parse_float(s: str) -> float:
    return float("nan") if s == "NA" else float(s)
