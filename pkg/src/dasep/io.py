"""Deterministic CSV/JSON outputs and run manifests."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

TOOL_VERSION = "0.1.0"
MANIFEST = "manifest.json"
TIMING = "timing.json"


class IoError(OSError):
    pass


def fmt(v) -> str:
    """17 significant digits for floats, plain text for everything else."""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def csv_text(columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    lines = [",".join(columns)]
    for row in rows:
        if len(row) != len(columns):
            raise IoError(f"row has {len(row)} fields, expected {len(columns)}")
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_csv(text: str) -> tuple[list[str], list[list[str]]]:
    lines = text.strip("\n").split("\n")
    return lines[0].split(","), [ln.split(",") for ln in lines[1:]]


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if np.isfinite(f) else str(f)
    return obj


def json_text(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=1) + "\n"


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(text.encode())
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IoError(str(exc)) from exc


def write_outputs(artifacts: dict[str, str], out_dir) -> dict[str, str]:
    """Write ``{filename: text}`` into ``out_dir``; return their sha256 hashes."""
    out = Path(out_dir)
    hashes = {}
    for name in sorted(artifacts):
        text = artifacts[name]
        atomic_write(out / name, text)
        hashes[name] = sha256(text.encode())
    return hashes


@dataclass
class RunManifest:
    kind: str
    config: dict
    seeds: list
    hashes: dict
    metrics: dict = field(default_factory=dict)
    passed: bool = True
    seed_overridden: bool = False
    tool_version: str = TOOL_VERSION

    def to_json(self) -> str:
        return json_text(self.__dict__)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    def write(self, out_dir) -> None:
        # written last so a complete manifest implies complete outputs
        atomic_write(Path(out_dir) / MANIFEST, self.to_json())


def verify_hashes(out_dir) -> dict[str, bool]:
    out = Path(out_dir)
    m = RunManifest.from_json((out / MANIFEST).read_text())
    return {name: sha256((out / name).read_bytes()) == h for name, h in m.hashes.items()}


def array_csv(columns: Sequence[str], *arrays) -> str:
    cols = [np.asarray(a).ravel() for a in arrays]
    return csv_text(columns, zip(*cols))
