"""JSON-lines datasets, chain files, CSV export and ``key = value`` config files.

Fragment lines::

    {"id": "f000001", "t": [...], "x": [...], "y": [...], "length": 15.0,
     "width": 6.0, "direction": 1, "gt_id": "gt00003"}

Trajectory lines carry ``fragment_ids`` and the derivative series as well.
Chain lines are ``{"id": ..., "fragment_ids": [...]}``.
Times are seconds, positions feet.
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import math
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .core import Fragment, Trajectory


class RecordError(ValueError):
    """A malformed line in a dataset file."""

    def __init__(self, path, lineno: int, msg: str):
        self.path = str(path)
        self.lineno = lineno
        super().__init__(f"{path}:{lineno}: {msg}")


FRAGMENT_FIELDS = ("id", "t", "x", "y", "length", "width", "direction")
TRAJECTORY_SERIES = ("t", "x", "y", "vx", "vy", "ax", "ay", "theta")
_OPTIONAL_SERIES = ("jx", "jy", "ex", "ey")


def _floats(v):
    return [float(a) for a in np.asarray(v, dtype=np.float64).tolist()]


def fragment_to_record(f: Fragment) -> dict:
    rec = {"id": f.id, "t": _floats(f.t), "x": _floats(f.x), "y": _floats(f.y),
           "length": float(f.length), "width": float(f.width), "direction": int(f.direction)}
    if f.gt_id is not None:
        rec["gt_id"] = f.gt_id
    return rec


def trajectory_to_record(tr: Trajectory) -> dict:
    rec = {"id": tr.id, "fragment_ids": list(tr.fragment_ids)}
    for name in TRAJECTORY_SERIES + _OPTIONAL_SERIES:
        rec[name] = _floats(getattr(tr, name))
    rec.update(length=float(tr.length), width=float(tr.width), direction=int(tr.direction),
               rectified=bool(tr.rectified))
    return rec


def _require(rec: dict, names, where):
    for name in names:
        if name not in rec:
            raise ValueError(f"missing field {name!r}{where}")


def fragment_from_record(rec: dict) -> Fragment:
    if not isinstance(rec, dict):
        raise ValueError("record is not a JSON object")
    _require(rec, ("id", "t", "x", "y"), "")
    try:
        return Fragment(str(rec["id"]), rec["t"], rec["x"], rec["y"],
                        float(rec.get("length", 15.0)), float(rec.get("width", 6.0)),
                        int(rec.get("direction", 1)), rec.get("gt_id"))
    except (TypeError, ValueError) as e:
        raise ValueError(f"fragment {rec.get('id')!r}: {e}") from None


def trajectory_from_record(rec: dict) -> Trajectory:
    if not isinstance(rec, dict):
        raise ValueError("record is not a JSON object")
    _require(rec, ("id", "t", "x", "y"), "")
    t = np.asarray(rec["t"], dtype=np.float64)
    x = np.asarray(rec["x"], dtype=np.float64)
    y = np.asarray(rec["y"], dtype=np.float64)
    if not (t.size == x.size == y.size):
        raise ValueError(f"trajectory {rec['id']!r}: t, x and y differ in length")
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError(f"trajectory {rec['id']!r}: t must be strictly increasing")
    n = t.size
    series = {}
    # derivative lengths shrink by one per order
    want = {"vx": n - 1, "vy": n - 1, "ax": n - 2, "ay": n - 2, "jx": n - 3, "jy": n - 3, "theta": n - 1}
    for name, m in want.items():
        if name in rec:
            v = np.asarray(rec[name], dtype=np.float64)
            if v.size != max(m, 0):
                raise ValueError(f"trajectory {rec['id']!r}: field {name!r} has length {v.size}, expected {max(m, 0)}")
        else:
            v = np.zeros(max(m, 0))
        series[name] = v
    ex = np.asarray(rec.get("ex", []), dtype=np.float64)
    ey = np.asarray(rec.get("ey", []), dtype=np.float64)
    return Trajectory(str(rec["id"]), [str(i) for i in rec.get("fragment_ids", [])], t, x, y,
                      series["vx"], series["vy"], series["ax"], series["ay"], series["jx"], series["jy"],
                      series["theta"], ex, ey, float(rec.get("length", 15.0)), float(rec.get("width", 6.0)),
                      int(rec.get("direction", 1)), bool(rec.get("rectified", True)))


def iter_records(path) -> Iterator[tuple[int, dict]]:
    """Yield ``(line number, parsed object)`` for every non-blank line."""
    path = Path(path)
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as e:
                raise RecordError(path, lineno, f"invalid JSON ({e.msg})") from None


def _load(path, parse) -> list:
    out = []
    for lineno, rec in iter_records(path):
        try:
            out.append(parse(rec))
        except ValueError as e:
            raise RecordError(path, lineno, str(e)) from None
    return out


def read_fragments(path) -> list[Fragment]:
    return _load(path, fragment_from_record)


def read_trajectories(path) -> list[Trajectory]:
    return _load(path, trajectory_from_record)


def _dataset_record(rec):
    if isinstance(rec, dict) and "fragment_ids" in rec:
        return trajectory_from_record(rec)
    return fragment_from_record(rec)


def load_external(path) -> list:
    """Load a fragment or trajectory JSONL file, whichever each line holds.

    Malformed lines raise :class:`RecordError` carrying the line number.
    """
    return _load(path, _dataset_record)


def _write_lines(path, records: Iterable[dict], append: bool = False) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "a" if append else "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, separators=(",", ":")))
            fh.write("\n")
            n += 1
    return n


def write_fragments(path, fragments: Iterable[Fragment], append: bool = False) -> int:
    return _write_lines(path, (fragment_to_record(f) for f in fragments), append)


def write_trajectories(path, trajectories: Iterable[Trajectory], append: bool = False) -> int:
    return _write_lines(path, (trajectory_to_record(t) for t in trajectories), append)


def write_dataset(path, dataset: Iterable) -> int:
    recs = (trajectory_to_record(o) if isinstance(o, Trajectory) else fragment_to_record(o) for o in dataset)
    return _write_lines(path, recs)


def write_chains(path, chains: Sequence[Sequence[str]], ids: Sequence[str] | None = None) -> int:
    ids = ids or [c[0] for c in chains]
    return _write_lines(path, ({"id": i, "fragment_ids": list(c)} for i, c in zip(ids, chains)))


def read_chains(path) -> list[list[str]]:
    def parse(rec):
        if not isinstance(rec, dict):
            raise ValueError("record is not a JSON object")
        _require(rec, ("fragment_ids",), "")
        ids = rec["fragment_ids"]
        if not isinstance(ids, list) or not ids:
            raise ValueError("field 'fragment_ids' must be a non-empty list")
        return [str(i) for i in ids]
    return _load(path, parse)


def export_csv(path, dataset: Iterable) -> int:
    """One row per sample: ``id, t, x, y`` plus derivatives when present."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "t", "x", "y", "vx", "vy", "ax", "ay", "theta", "length", "width", "direction"])
        for o in dataset:
            n = len(o.t)
            cols = []
            for name in ("vx", "vy", "ax", "ay", "theta"):
                v = getattr(o, name, None)
                cols.append(np.asarray(v) if v is not None else np.zeros(0))
            for i in range(n):
                extra = [f"{c[i]:.6g}" if i < c.size else "" for c in cols]
                w.writerow([o.id, f"{o.t[i]:.2f}", f"{o.x[i]:.4f}", f"{o.y[i]:.4f}", *extra,
                            o.length, o.width, o.direction])
                rows += 1
    return rows


# ---------------------------------------------------------------------------
# config files

_TOP = "general"


def read_config(path) -> dict[str, dict[str, str]]:
    """Parse a ``key = value`` file into ``{section: {key: raw value}}``.

    Keys before the first ``[section]`` header land in ``"general"``.
    ``#`` and ``;`` start comments.
    """
    path = Path(path)
    text = path.read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(f"[{_TOP}]\n" + text, source=str(path))
    except configparser.Error as e:
        raise ValueError(f"{path}: {e}") from None
    return {s: dict(cp.items(s)) for s in cp.sections()}


def _convert(raw: str, default, name: str):
    raw = raw.strip()
    if raw.lower() in ("none", "null", ""):
        return None
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, (tuple, list)):
        try:
            return tuple(float(p) for p in raw.replace(",", " ").split())
        except ValueError:
            raise ValueError(f"{name}: expected a list of numbers, got {raw!r}") from None
    if isinstance(default, str):
        return raw
    for cast in ((int, float) if not isinstance(default, float) else (float,)):
        try:
            return cast(raw)
        except ValueError:
            pass
    if default is None:
        return raw
    raise ValueError(f"{name}: expected a number, got {raw!r}")


def apply_config(obj_cls, values: dict, base=None):
    """Build a dataclass instance, overriding fields named in ``values``.

    Unknown keys raise ``ValueError`` so typos do not pass silently.
    """
    base = base if base is not None else obj_cls()
    names = {f.name for f in dataclasses.fields(obj_cls) if f.init}
    kw = {}
    for key, raw in values.items():
        if key not in names:
            raise ValueError(f"unknown {obj_cls.__name__} key {key!r}")
        default = getattr(base, key)
        kw[key] = _convert(raw, default, key) if isinstance(raw, str) else raw
    return dataclasses.replace(base, **kw)


def format_config(sections: dict) -> str:
    """Inverse of :func:`read_config` for dataclass instances or plain dicts."""
    lines = []
    for name, obj in sections.items():
        items = dataclasses.asdict(obj) if dataclasses.is_dataclass(obj) else dict(obj)
        lines.append(f"[{name}]")
        for k, v in items.items():
            if isinstance(v, (list, tuple)):
                v = ", ".join(str(a) for a in v)
            elif isinstance(v, float) and math.isinf(v):
                v = "inf"
            lines.append(f"{k} = {v}")
        lines.append("")
    return "\n".join(lines)
