"""CSV / JSON writers that refuse to overwrite unless forced."""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


def _default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default, allow_nan=True)


def check_new(paths, force: bool = False) -> None:
    """Raise FileExistsError if any target exists and ``force`` is not set."""
    if force:
        return
    taken = [str(p) for p in paths if Path(p).exists()]
    if taken:
        raise FileExistsError(f"refusing to overwrite {', '.join(taken)} (use --force)")


def write_json(path, obj, force: bool = False) -> Path:
    path = Path(path)
    check_new([path], force)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj) + "\n", encoding="utf-8")
    return path


def write_csv(path, header, rows, force: bool = False) -> Path:
    path = Path(path)
    check_new([path], force)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])
    return path


def read_columns(path, *names) -> list[np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [n for n in names if n not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
        cols = {n: [] for n in names}
        for row in reader:
            for n in names:
                cols[n].append(float(row[n]))
    return [np.array(cols[n]) for n in names]
