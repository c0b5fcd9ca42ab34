"""CSV and JSON emitters with a fixed, round-trippable float format."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path


def format_float(x) -> str:
    """17 significant digits: enough to round-trip any double exactly."""
    if isinstance(x, (int, str)) and not isinstance(x, bool):
        return str(x)
    return f"{float(x):.17g}"


def emit_csv(rows, header, path) -> Path:
    """Write rows (iterables matching ``header``) as UTF-8 CSV."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([format_float(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write CSV {path}: {exc}") from exc
    return path


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def emit_manifest(meta: dict, path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n",
                        encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write manifest {path}: {exc}") from exc
    return path
