"""File formats: the EMB1 embedding container, CSV interop, report emitters,
and the line-oriented run configuration.

EMB1 layout (little-endian, 20-byte header):

    offset  size  field
    0       4     magic "EMB1"
    4       4     n_rows (uint32)
    8       4     dim (uint32)
    12      1     dtype: 0 = float32, 1 = float64
    13      1     normalized: 0 or 1
    14      6     reserved, must be zero
    20      -     row-major payload, n_rows * dim values

Readers reject malformed files outright; nothing is repaired silently.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingSet
from .errors import (
    BadHeader,
    BadMagic,
    ConfigError,
    ParseError,
    RaggedRows,
    SizeMismatch,
    TruncatedFile,
)
from .hubsim import TheoremReport
from .metrics import GroundTruth, RetrievalReport

MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIIBB6s")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

FORMAT_KV = "kv"
FORMAT_CSV = "csv"


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


# ---------------------------------------------------------------------------
# EMB1 binary embeddings


def write_embeddings(embeddings: EmbeddingSet, path, dtype: str = "f8") -> None:
    """Write an EMB1 file; dtype "f4" is for interop and loses precision."""
    if dtype not in ("f4", "f8"):
        raise ConfigError(f"dtype must be 'f4' or 'f8', got {dtype!r}")
    code = 1 if dtype == "f8" else 0
    payload = np.ascontiguousarray(embeddings.data, dtype=_DTYPES[code])
    header = _HEADER.pack(
        MAGIC,
        embeddings.n_rows,
        embeddings.dim,
        code,
        1 if embeddings.normalized else 0,
        b"\x00" * 6,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def read_embeddings(path) -> EmbeddingSet:
    """Read an EMB1 file; float32 payloads widen losslessly to float64."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise TruncatedFile(f"{path}: {len(blob)} bytes is shorter than the header")
    magic, n_rows, dim, dtype_code, norm_code, reserved = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagic(f"{path}: magic {magic!r} != {MAGIC!r}")
    if dtype_code not in _DTYPES:
        raise BadHeader(f"{path}: unknown dtype code {dtype_code}")
    if norm_code not in (0, 1):
        raise BadHeader(f"{path}: normalized byte must be 0 or 1, got {norm_code}")
    if reserved != b"\x00" * 6:
        raise BadHeader(f"{path}: reserved bytes are not zero")
    if n_rows < 1 or dim < 1:
        raise BadHeader(f"{path}: empty shape {n_rows}x{dim}")
    dt = _DTYPES[dtype_code]
    expected = _HEADER.size + n_rows * dim * dt.itemsize
    if len(blob) < expected:
        raise TruncatedFile(f"{path}: {len(blob)} bytes, header declares {expected}")
    if len(blob) > expected:
        raise SizeMismatch(f"{path}: {len(blob)} bytes, header declares {expected}")
    data = np.frombuffer(blob, dtype=dt, count=n_rows * dim, offset=_HEADER.size)
    return EmbeddingSet(data.astype(np.float64).reshape(n_rows, dim), normalized=bool(norm_code))


# ---------------------------------------------------------------------------
# CSV embeddings (interop with external dumps)


def read_csv_embeddings(path, has_header: bool = False) -> EmbeddingSet:
    """Parse a rectangular numeric CSV into an embedding matrix."""
    with open(path, "r", newline="") as fh:
        raw = list(csv.reader(fh))
    first_data_line = 2 if has_header else 1
    if has_header and raw:
        raw = raw[1:]
    while raw and raw[-1] == []:
        raw.pop()
    if not raw:
        raise TruncatedFile(f"{path}: no data rows")
    width = len(raw[0])
    rows = np.empty((len(raw), width), dtype=np.float64)
    for r, cells in enumerate(raw):
        line_no = first_data_line + r
        if len(cells) != width:
            raise RaggedRows(line_no, width, len(cells))
        for c, cell in enumerate(cells):
            try:
                rows[r, c] = float(cell)
            except ValueError:
                raise ParseError(line_no, c + 1, cell) from None
    return EmbeddingSet(rows)


def load_embeddings(path) -> EmbeddingSet:
    """Dispatch on extension: .csv is parsed as text, anything else as EMB1."""
    if Path(path).suffix.lower() == ".csv":
        return read_csv_embeddings(path)
    return read_embeddings(path)


# ---------------------------------------------------------------------------
# Ground truth


def read_ground_truth(path) -> GroundTruth:
    """One line per query: comma-separated correct gallery indices."""
    correct = []
    with open(path, "r") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                correct.append(np.array([int(tok) for tok in line.split(",")], dtype=np.int64))
            except ValueError:
                raise ParseError(line_no, 1, line) from None
    if not correct:
        raise TruncatedFile(f"{path}: no ground-truth rows")
    return GroundTruth(tuple(correct))


def write_ground_truth(truth: GroundTruth, path) -> None:
    with open(path, "w", newline="\n") as fh:
        for idx in truth.correct:
            fh.write(",".join(str(int(i)) for i in idx) + "\n")


# ---------------------------------------------------------------------------
# Reports


def _retrieval_items(report: RetrievalReport) -> list[tuple[str, str]]:
    items = [(f"r_at_{k}", _fmt(report.r_at[k])) for k in sorted(report.r_at)]
    items += [
        ("mdr", _fmt(report.mdr)),
        ("mnr", _fmt(report.mnr)),
        ("skewness", _fmt(report.skewness)),
        ("occurrence_k", _fmt(report.k_occurrence.k)),
        ("occurrence_counts", ";".join(str(int(c)) for c in report.k_occurrence.counts)),
    ]
    return items


def _theorem_items(report: TheoremReport) -> list[tuple[str, str]]:
    return [
        ("theorem_id", report.theorem_id),
        ("variant", report.variant),
        ("n_trials", _fmt(report.n_trials)),
        ("empirical_delta", _fmt(report.empirical_delta)),
        ("analytic_delta", _fmt(report.analytic_delta)),
        ("standard_error", _fmt(report.standard_error)),
        ("pass", _fmt(report.passed)),
    ]


def report_items(report) -> list[tuple[str, str]]:
    if isinstance(report, RetrievalReport):
        return _retrieval_items(report)
    if isinstance(report, TheoremReport):
        return _theorem_items(report)
    raise ConfigError(f"cannot serialize {type(report).__name__}")


def format_report(report, fmt: str = FORMAT_KV) -> str:
    items = report_items(report)
    if fmt == FORMAT_KV:
        return "".join(f"{k}={v}\n" for k, v in items)
    if fmt == FORMAT_CSV:
        head = ",".join(k for k, _ in items)
        body = ",".join(v for _, v in items)
        return f"{head}\n{body}\n"
    raise ConfigError(f"unknown report format {fmt!r}")


def write_report(report, path, fmt: str = FORMAT_KV) -> None:
    """Emit one report; key order is fixed and floats keep 17 significant digits."""
    with open(path, "w", newline="\n") as fh:
        fh.write(format_report(report, fmt))


def read_report_kv(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            key, _, value = line.partition("=")
            out[key] = value
    return out


def read_report_csv(path) -> dict[str, str]:
    with open(path, "r", newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) != 2:
        raise TruncatedFile(f"{path}: expected a header row and one data row")
    return dict(zip(rows[0], rows[1]))


# ---------------------------------------------------------------------------
# Run configuration


@dataclass
class RunConfig:
    """Every pipeline knob, overridable from a key=value file and CLI flags."""

    method: str = "dual_is"
    metric: str = "cosine"
    beta1: float = 20.0
    beta2: float = 20.0
    aggregation: str = "multiply"
    activation_k: int = 1
    csls_k: int = 10
    bank_fraction_q: float = 1.0
    bank_fraction_g: float = 1.0
    seed: int = 0
    threads: int = 1
    ks: str = "1,5,10"
    occurrence_k: int = 1
    skewness_k: int = 10
    report_format: str = FORMAT_KV
    n_trials: int = 100000
    sim_families: str = "gaussian,uniform_box,laplacian"
    sim_dims: str = "2,8,64"
    sim_seeds: str = "0,1,2,3,4"
    sweep_beta1: str = ""
    sweep_beta2: str = ""
    sweep_fractions: str = ""
    bench_galleries: int = 2000
    bench_bank: int = 2000
    bench_dim: int = 64
    bench_probes: int = 50
    queries: str = ""
    galleries: str = ""
    query_bank: str = ""
    gallery_bank: str = ""
    truth: str = ""
    output: str = ""

    @classmethod
    def key_types(cls) -> dict[str, type]:
        return {f.name: f.type if isinstance(f.type, type) else type(f.default) for f in fields(cls)}


def _convert(key: str, raw: str, target: type):
    try:
        if target is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return target(raw)
    except ValueError:
        raise ConfigError(f"config key {key}: cannot parse {raw!r} as {target.__name__}") from None


def parse_config_file(path) -> dict[str, str]:
    """key=value per line; '#' starts a comment; unknown keys are rejected."""
    known = RunConfig.key_types()
    out: dict[str, str] = {}
    with open(path, "r") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep:
                raise ConfigError(f"{path}:{line_no}: expected key=value, got {line!r}")
            if key not in known:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            out[key] = value.strip()
    return out


def build_config(file_values: dict[str, str] | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then config-file values, then explicit overrides."""
    cfg = RunConfig()
    types = RunConfig.key_types()
    for key, raw in (file_values or {}).items():
        setattr(cfg, key, _convert(key, raw, types[key]))
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in types:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, value if not isinstance(value, str) else _convert(key, value, types[key]))
    return cfg
