"""
File formats: trace CSV, sweep manifests, canonical JSON and atomic writes.
"""
import csv
import hashlib
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .sigmodel import DOWN, UP, FrequencySweep

TRACE_HEADER = ("freq_hz", "s21_re", "s21_im")


class InputError(ValueError):
    """Malformed or inconsistent user input (exit code 2)."""


# ---------------------------------------------------------------------------
# canonical JSON
# ---------------------------------------------------------------------------

def _fmt_float(x):
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def _encode(obj, out):
    if obj is None or obj is True or obj is False:
        out.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, dict):
        out.append("{")
        for i, k in enumerate(sorted(obj, key=str)):
            if i:
                out.append(",")
            out.append(json.dumps(str(k), ensure_ascii=False))
            out.append(":")
            _encode(obj[k], out)
        out.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        out.append("[")
        for i, v in enumerate(obj.tolist() if isinstance(obj, np.ndarray) else obj):
            if i:
                out.append(",")
            _encode(v, out)
        out.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj):
    """Sorted keys, no whitespace, floats with 17 significant digits, NaN/inf as null."""
    out = []
    _encode(obj, out)
    return "".join(out) + "\n"


def config_hash(cfg):
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# atomic writes
# ---------------------------------------------------------------------------

def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_json(path, obj):
    atomic_write_text(path, canonical_json(obj))


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt_cell(v) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _fmt_cell(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    x = float(v)
    return "nan" if math.isnan(x) else format(x, ".17g")


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

def write_trace(path, sweep: FrequencySweep):
    rows = zip(sweep.freqs_hz, sweep.s21.real, sweep.s21.imag)
    write_csv(path, TRACE_HEADER, rows)


def read_trace(path, source_power_dbm=0.0, attenuation_db=-75.0, temperature_k=0.015, direction=UP):
    """Parse a trace CSV; every problem is reported with its line number."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    f, re_, im_ = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InputError(f"{path}:1: empty file")
        if tuple(h.strip() for h in header) != TRACE_HEADER:
            raise InputError(f"{path}:1: expected header {','.join(TRACE_HEADER)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise InputError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric value in {row!r}") from None
            if not all(math.isfinite(v) for v in vals):
                raise InputError(f"{path}:{lineno}: non-finite value")
            if f and vals[0] <= f[-1]:
                raise InputError(f"{path}:{lineno}: frequency {vals[0]} is not above the previous row "
                                 "(ascending order required)")
            f.append(vals[0])
            re_.append(vals[1])
            im_.append(vals[2])
    if not f:
        raise InputError(f"{path}: no data rows")
    return FrequencySweep(np.array(f), np.array(re_) + 1j * np.array(im_), source_power_dbm=source_power_dbm,
                          attenuation_db=attenuation_db, temperature_k=temperature_k, sweep_direction=direction)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    trace_path: Path
    source_power_dbm: float
    sweep_direction: str = UP


@dataclass
class SweepManifest:
    entries: list
    attenuation_db: float = -75.0
    temperature_k: float = 0.015
    z0_ohm: float = 50.0
    zr_ohm: float = 50.0
    resonator_meta: dict = field(default_factory=dict)
    source: Optional[Path] = None

    def load_sweep(self, i):
        e = self.entries[i]
        return read_trace(e.trace_path, e.source_power_dbm, self.attenuation_db, self.temperature_k,
                          e.sweep_direction)

    def to_json(self, relative_to=None):
        base = Path(relative_to) if relative_to else None
        ents = []
        for e in self.entries:
            p = Path(e.trace_path)
            if base is not None:
                p = Path(os.path.relpath(p, base))
            ents.append({"trace_path": p.as_posix(), "source_power_dbm": e.source_power_dbm,
                         "sweep_direction": e.sweep_direction})
        return {
            "schema": "reskit/manifest/v1",
            "entries": ents,
            "shared": {"attenuation_db": self.attenuation_db, "temperature_k": self.temperature_k,
                       "z0_ohm": self.z0_ohm, "zr_ohm": self.zr_ohm},
            "resonator_meta": self.resonator_meta,
        }


def load_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such manifest")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(raw, dict) or "entries" not in raw:
        raise InputError(f"{path}: manifest needs an 'entries' list")
    shared = raw.get("shared", {})
    att = float(shared.get("attenuation_db", -75.0))
    if att > 0:
        raise InputError(f"{path}: attenuation_db must be <= 0, got {att}")
    entries = []
    seen = set()
    for i, e in enumerate(raw["entries"]):
        try:
            tp = Path(e["trace_path"])
            pw = float(e["source_power_dbm"])
        except (KeyError, TypeError, ValueError):
            raise InputError(f"{path}: entry {i} needs trace_path and source_power_dbm") from None
        if not tp.is_absolute():
            tp = path.parent / tp
        if not tp.is_file():
            raise InputError(f"{path}: entry {i}: trace {tp} does not exist")
        direction = e.get("sweep_direction", UP)
        if direction not in (UP, DOWN):
            raise InputError(f"{path}: entry {i}: sweep_direction must be up or down")
        key = (pw, direction)
        if key in seen:
            raise InputError(f"{path}: entry {i}: duplicate source power {pw} dBm ({direction})")
        seen.add(key)
        entries.append(ManifestEntry(tp, pw, direction))
    return SweepManifest(entries, attenuation_db=att, temperature_k=float(shared.get("temperature_k", 0.015)),
                         z0_ohm=float(shared.get("z0_ohm", 50.0)), zr_ohm=float(shared.get("zr_ohm", 50.0)),
                         resonator_meta=dict(raw.get("resonator_meta", {})), source=path)


def load_json_config(path):
    if path is None:
        return {}
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such config file")
    try:
        cfg = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(cfg, dict):
        raise InputError(f"{path}: config must be a JSON object")
    return cfg


def schema(name):
    """Load a bundled JSON schema by name, e.g. ``"fitone"``."""
    text = resources.files("reskit.schemas").joinpath(f"{name}.schema.json").read_text(encoding="utf-8")
    return json.loads(text)
