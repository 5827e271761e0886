"""CSV emission, run manifests and atomic file writes."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import tempfile
from pathlib import Path


def format_value(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return "%.6g" % v
    if hasattr(v, "dtype"):  # numpy scalar
        return format_value(v.item())
    return str(v)


def _row(record, columns):
    if isinstance(record, dict):
        return [record[c] for c in columns]
    if dataclasses.is_dataclass(record):
        return [getattr(record, c) for c in columns]
    row = list(record)
    if len(row) != len(columns):
        raise ValueError(f"record has {len(row)} fields, expected {len(columns)}")
    return row


def csv_text(records, columns=None) -> str:
    records = list(records)
    if columns is None:
        if not records:
            raise ValueError("columns are required for an empty record list")
        first = records[0]
        if isinstance(first, dict):
            columns = list(first)
        elif dataclasses.is_dataclass(first):
            columns = [f.name for f in dataclasses.fields(first)]
        else:
            raise ValueError("columns are required for tuple records")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in records:
        w.writerow([format_value(v) for v in _row(r, columns)])
    return buf.getvalue()


def atomic_write(path, data) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": ""})) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_csv(records, path, columns=None) -> Path:
    """Header row plus one line per record; floats at 6 significant digits.

    Records may be dicts, dataclasses or plain sequences (the latter need
    ``columns``).
    """
    atomic_write(path, csv_text(records, columns))
    return Path(path)


def read_csv(path) -> list:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclasses.dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    version: str
    duration_s: float
    outputs: dict  # file name -> sha256

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True) + "\n"

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "manifest.json"
        atomic_write(path, self.to_json())
        return path

    @classmethod
    def read(cls, path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))

    def verify(self, out_dir) -> bool:
        return all(sha256_file(Path(out_dir) / name) == digest for name, digest in self.outputs.items())
