"""Deterministic JSON/CSV writers, key=value configs and the run manifest."""
from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math
import os
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


class RunWriter:
    """Collects every file a run writes so the manifest can list them."""

    def __init__(self, out: str | os.PathLike):
        self.out = Path(out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def _register(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.out / name

    def json(self, name: str, obj) -> Path:
        path = self._register(name)
        path.write_text(dumps(obj))
        return path

    def csv(self, name: str, header: list[str], rows: Iterable) -> Path:
        path = self._register(name)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        return path

    def text(self, name: str, content: str) -> Path:
        path = self._register(name)
        path.write_text(content)
        return path

    def path(self, name: str) -> Path:
        """Register a file that the caller writes itself."""
        return self._register(name)

    def manifest(self, command: str, config: dict, seed) -> Path:
        files = []
        for name in self.files:
            data = (self.out / name).read_bytes()
            files.append({"name": name, "sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)})
        doc = {
            "artifact_version": __version__,
            "command": command,
            "config": config,
            "seed": seed,
            "timestamp": _timestamp(),
            "files": files,
        }
        path = self.out / "manifest.json"
        path.write_text(dumps(doc))
        return path


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        t = _dt.datetime.fromtimestamp(int(epoch), tz=_dt.timezone.utc)
    else:
        t = _dt.datetime.now(tz=_dt.timezone.utc)
    return t.replace(microsecond=0).isoformat()


def read_config(path) -> dict:
    """key=value per line, '#' comments, blank lines ignored."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def format_config(values: dict) -> str:
    lines = [f"{k}={values[k]}" for k in sorted(values) if values[k] is not None]
    return "\n".join(lines) + "\n"
