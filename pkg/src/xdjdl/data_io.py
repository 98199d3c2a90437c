"""File formats: signal CSV, cycle sets, the binary model container, label
files and evaluation reports.

Model container layout (all integers little-endian)::

    magic      4 bytes  b"XDJD"
    version    u16
    reserved   u16
    n_entries  u32
    json_len   u32
    entries    n_entries x (name_len u16, name utf-8, rows u64, cols u64, offset u64)
    json       json_len bytes, utf-8 (model kind, hyperparameters, scalars)
    payload    float64 little-endian, row-major, one block per entry

Offsets are absolute file positions.  Loading only parses numbers and
JSON; nothing in a file is ever executed.
"""

import csv
import io
import json
import math
import struct
from pathlib import Path

import numpy as np

from .dict_learning import HyperParams, LcXdjdlModel, XdjdlModel
from .errors import (BadMagic, CorruptEntryTable, ParseError, ShapeMismatch,
                     UnsupportedVersion)
from .inference import DctBaselineModel
from .preprocess import CyclePairSet, RawRecord

MAGIC = b"XDJD"
FORMAT_VERSION = 1
CYCLES_FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHHII")
_ENTRY_TAIL = struct.Struct("<QQQ")
_F64 = np.dtype("<f8")


# ---------------------------------------------------------------- models

def _model_parts(model):
    if isinstance(model, DctBaselineModel):
        return {"W_dct": model.W_dct}, {"kind": "dct", "ridge": model.ridge}
    meta = {"kind": "xdjdl", "hyper": model.hyper.to_dict(),
            "trace": [float(v) for v in model.trace]}
    mats = {"D_e": model.D_e, "D_p": model.D_p, "W": model.W}
    if isinstance(model, LcXdjdlModel):
        meta["kind"] = "lc_xdjdl"
        meta["class_count"] = int(model.class_count)
        mats["H"] = model.H
    return mats, meta


def save_model(model, path):
    mats, meta = _model_parts(model)
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    names = [n.encode("utf-8") for n in mats]
    table_len = sum(2 + len(n) + _ENTRY_TAIL.size for n in names)
    offset = _HEADER.size + table_len + len(blob)
    table, payload = [], []
    for name, M in zip(names, mats.values()):
        M = np.ascontiguousarray(M, dtype=_F64)
        if M.ndim != 2:
            raise ShapeMismatch(f"matrix {name.decode()} is not 2-D")
        table.append(struct.pack("<H", len(name)) + name
                     + _ENTRY_TAIL.pack(M.shape[0], M.shape[1], offset))
        payload.append(M.tobytes(order="C"))
        offset += M.nbytes
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, 0, len(names), len(blob))
    with open(path, "wb") as fh:
        fh.write(header + b"".join(table) + blob + b"".join(payload))


def _read_container(raw):
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagic("not a model container (bad magic)")
    if len(raw) < _HEADER.size:
        raise CorruptEntryTable("truncated header")
    _, version, _, n_entries, json_len = _HEADER.unpack_from(raw, 0)
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"container version {version}, expected {FORMAT_VERSION}")
    pos = _HEADER.size
    entries = []
    for _ in range(n_entries):
        if pos + 2 > len(raw):
            raise CorruptEntryTable("truncated entry table")
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        if pos + name_len + _ENTRY_TAIL.size > len(raw):
            raise CorruptEntryTable("truncated entry table")
        try:
            name = raw[pos:pos + name_len].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptEntryTable("entry name is not utf-8") from exc
        pos += name_len
        rows, cols, offset = _ENTRY_TAIL.unpack_from(raw, pos)
        pos += _ENTRY_TAIL.size
        entries.append((name, rows, cols, offset))
    if pos + json_len > len(raw):
        raise CorruptEntryTable("truncated metadata block")
    try:
        meta = json.loads(raw[pos:pos + json_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptEntryTable("metadata block is not valid JSON") from exc
    data_start = pos + json_len

    mats, spans = {}, []
    for name, rows, cols, offset in entries:
        if rows > len(raw) or cols > len(raw):
            raise CorruptEntryTable(f"entry {name!r} declares an impossible shape")
        size = rows * cols * 8
        if offset < data_start or offset + size > len(raw):
            raise CorruptEntryTable(f"entry {name!r} points outside the payload")
        if name in mats:
            raise CorruptEntryTable(f"duplicate entry {name!r}")
        spans.append((offset, offset + size))
        mats[name] = np.frombuffer(raw, dtype=_F64, count=rows * cols,
                                   offset=offset).reshape(rows, cols).astype(float)
    spans.sort()
    if any(a[1] > b[0] for a, b in zip(spans, spans[1:])):
        raise CorruptEntryTable("entry payloads overlap")
    return mats, meta


def load_model(path):
    """Inverse of :func:`save_model`.  OSError propagates for I/O failures."""
    raw = Path(path).read_bytes()
    mats, meta = _read_container(raw)
    if not isinstance(meta, dict):
        raise CorruptEntryTable("metadata block must be a JSON object")
    kind = meta.get("kind")
    try:
        if kind == "dct":
            return DctBaselineModel(W_dct=mats["W_dct"], ridge=float(meta["ridge"]))
        if kind not in ("xdjdl", "lc_xdjdl"):
            raise CorruptEntryTable(f"unknown model kind {kind!r}")
        hyper = HyperParams.from_dict(meta["hyper"])
        common = dict(D_e=mats["D_e"], D_p=mats["D_p"], W=mats["W"], hyper=hyper,
                      trace=list(meta.get("trace", [])))
        if kind == "lc_xdjdl":
            return LcXdjdlModel(**common, H=mats["H"], class_count=int(meta["class_count"]))
        return XdjdlModel(**common)
    except KeyError as exc:
        raise CorruptEntryTable(f"missing entry or field {exc}") from exc
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CorruptEntryTable):
            raise
        raise CorruptEntryTable(f"inconsistent model content: {exc}") from exc


# ---------------------------------------------------------------- text helpers

def _fmt(v):
    return format(float(v), ".17g")


def _parse_float(tok, line, path):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"not a number: {tok!r}", line=line, path=path) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {tok!r}", line=line, path=path)
    return v


def write_matrix_csv(M, path):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ShapeMismatch("only 2-D matrices can be written")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for row in M:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def read_matrix_csv(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rows.append([_parse_float(t.strip(), i, str(path)) for t in line.split(",")])
            if len(rows[-1]) != len(rows[0]):
                raise ParseError(f"expected {len(rows[0])} fields, got {len(rows[-1])}",
                                 line=i, path=str(path))
    if not rows:
        raise ParseError("empty matrix file", line=0, path=str(path))
    return np.array(rows, dtype=float)


# ---------------------------------------------------------------- signals

def read_signals(path, fs=None):
    """Read a ``t,ppg,ecg`` or ``ppg,ecg`` CSV into a :class:`RawRecord`.

    With a ``t`` column the sampling rate is ``1 / median(diff(t))`` unless
    ``fs`` is given; without one ``fs`` defaults to 125 Hz.
    """
    path = str(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty signal file", line=1, path=path) from None
        if header not in (["t", "ppg", "ecg"], ["ppg", "ecg"]):
            raise ParseError(f"unexpected header {header}", line=1, path=path)
        cols = [[] for _ in header]
        for i, row in enumerate(reader, 2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=i, path=path)
            for c, tok in zip(cols, row):
                c.append(_parse_float(tok.strip(), i, path))
    data = dict(zip(header, (np.asarray(c) for c in cols)))
    if fs is None:
        fs = 125.0
        if "t" in data and data["t"].size > 1:
            step = float(np.median(np.diff(data["t"])))
            if not step > 0:
                raise ParseError("time column is not increasing", line=2, path=path)
            fs = 1.0 / step
    return RawRecord(ppg=data["ppg"], ecg=data["ecg"], fs=float(fs))


def write_signals(record, path, with_time=True):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if with_time:
            fh.write("t,ppg,ecg\n")
            for i, (p, e) in enumerate(zip(record.ppg, record.ecg)):
                fh.write(f"{_fmt(i / record.fs)},{_fmt(p)},{_fmt(e)}\n")
        else:
            fh.write("ppg,ecg\n")
            for p, e in zip(record.ppg, record.ecg):
                fh.write(f"{_fmt(p)},{_fmt(e)}\n")


# ---------------------------------------------------------------- cycle sets

def cycle_paths(prefix):
    prefix = str(prefix)
    return {"P": prefix + ".ppg.csv", "E": prefix + ".ecg.csv", "meta": prefix + ".json"}


def write_cycles(cycles, prefix):
    """Write a :class:`CyclePairSet` as two ``d x N`` CSVs plus a JSON sidecar."""
    paths = cycle_paths(prefix)
    write_matrix_csv(cycles.P, paths["P"])
    write_matrix_csv(cycles.E, paths["E"])
    as_list = lambda v: None if v is None else [int(x) for x in v]
    meta = {"format_version": CYCLES_FORMAT_VERSION, "d": cycles.d, "N": cycles.n,
            "fs": cycles.fs, "mode": cycles.mode, "labels": as_list(cycles.labels),
            "record_ids": as_list(cycles.record_ids), "starts": as_list(cycles.starts),
            "lengths": as_list(cycles.lengths), "skipped": int(cycles.skipped),
            "meta": cycles.meta}
    with open(paths["meta"], "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return paths


def read_cycles(prefix):
    paths = cycle_paths(prefix)
    try:
        with open(paths["meta"], encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"bad sidecar JSON: {exc.msg}", line=exc.lineno, path=paths["meta"]) from exc
    for key in ("d", "N", "fs", "mode"):
        if key not in meta:
            raise ParseError(f"sidecar lacks {key!r}", path=paths["meta"])
    if meta.get("format_version", CYCLES_FORMAT_VERSION) != CYCLES_FORMAT_VERSION:
        raise UnsupportedVersion(f"cycle-set version {meta['format_version']}")
    P = read_matrix_csv(paths["P"])
    E = read_matrix_csv(paths["E"])
    want = (int(meta["d"]), int(meta["N"]))
    for name, M in (("PPG", P), ("ECG", E)):
        if M.shape != want:
            raise ShapeMismatch(f"{name} matrix is {M.shape[0]}x{M.shape[1]}, sidecar says {want[0]}x{want[1]}")
    try:
        return CyclePairSet(P=P, E=E, fs=float(meta["fs"]), mode=meta["mode"],
                            labels=meta.get("labels"), record_ids=meta.get("record_ids"),
                            starts=meta.get("starts"), lengths=meta.get("lengths"),
                            skipped=int(meta.get("skipped", 0)), meta=meta.get("meta") or {})
    except ValueError as exc:
        raise ShapeMismatch(str(exc)) from exc


# ---------------------------------------------------------------- labels

def write_labels(labels, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("cycle_index,class_id\n")
        for i, c in enumerate(labels):
            fh.write(f"{i},{int(c)}\n")


def read_labels(path, n=None, class_count=None):
    """Read ``cycle_index,class_id`` rows into a dense label vector.

    Indices must be unique and cover ``0..n-1`` (``n`` defaults to the row
    count); class ids must be nonnegative and below ``class_count`` if given.
    """
    path = str(path)
    seen = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["cycle_index", "class_id"]:
            raise ParseError("expected header cycle_index,class_id", line=1, path=path)
        for i, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError("expected 2 fields", line=i, path=path)
            try:
                idx, cls = int(row[0]), int(row[1])
            except ValueError:
                raise ParseError("non-integer field", line=i, path=path) from None
            if idx in seen:
                raise ParseError(f"duplicate cycle index {idx}", line=i, path=path)
            if cls < 0 or (class_count is not None and cls >= class_count):
                raise ParseError(f"class id {cls} out of range", line=i, path=path)
            seen[idx] = cls
    n = len(seen) if n is None else n
    if sorted(seen) != list(range(n)):
        raise ShapeMismatch(f"label indices do not cover 0..{n - 1}")
    return np.array([seen[i] for i in range(n)], dtype=int)


# ---------------------------------------------------------------- reports

def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=1, allow_nan=False)
        fh.write("\n")


def write_report(report, path):
    write_json(report.to_dict(), path)


PER_CYCLE_FIELDS = ("index", "rho", "rrmse", "effective", "fs_effective",
                    "pr_rec", "pr_ref", "qrs_rec", "qrs_ref", "qt_rec", "qt_ref")


def per_cycle_csv(report):
    buf = io.StringIO()
    buf.write(",".join(PER_CYCLE_FIELDS) + "\n")
    for row in report.per_cycle:
        out = []
        for k in PER_CYCLE_FIELDS:
            v = row.get(k)
            if v is None:
                out.append("")
            elif isinstance(v, bool):
                out.append(str(int(v)))
            elif isinstance(v, (int, np.integer)):
                out.append(str(int(v)))
            else:
                out.append(_fmt(v))
        buf.write(",".join(out) + "\n")
    return buf.getvalue()


def write_per_cycle_csv(report, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(per_cycle_csv(report))
