"""Feature matrices, label vectors and training checkpoints on disk.

Binary matrix layout (little-endian): 4-byte magic ``DCCM``, uint64 rows,
uint64 cols, then the row-major float64 payload.

Checkpoints use a small self-describing container: 8-byte magic, uint32
format version, uint64 header length, a JSON header (scalars plus an array
directory) and the raw array bytes. Unlike ``np.savez`` the bytes depend only
on the contents, so identical runs give identical files.
"""
from dataclasses import dataclass
import json
import struct

import numpy as np

from .errors import CheckpointError, LengthMismatchError, NonFiniteError, ParseError, VersionMismatchError

MATRIX_MAGIC = b"DCCM"
_MATRIX_HEADER = struct.Struct("<4sQQ")

CHECKPOINT_MAGIC = b"DCCCKPT\x00"
CHECKPOINT_VERSION = 1
_CKPT_PREFIX = struct.Struct("<8sIQ")


@dataclass(frozen=True)
class DataMatrix:
    values: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ParseError(f"expected a 2-D matrix, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteError("matrix contains NaN or Inf entries")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (values.shape[0],):
                raise LengthMismatchError(
                    f"{labels.shape[0]} labels for {values.shape[0]} points")
            object.__setattr__(self, "labels", labels)

    @property
    def n_points(self):
        return self.values.shape[0]

    @property
    def n_dims(self):
        return self.values.shape[1]

    def with_labels(self, labels):
        return DataMatrix(self.values, labels)


def _parse_csv(text):
    rows = []
    width = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            row = [float(tok) for tok in line.split(",")]
        except ValueError as exc:
            raise ParseError(f"line {lineno}: {exc}") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"line {lineno}: expected {width} fields, got {len(row)}")
        rows.append(row)
    if not rows:
        raise ParseError("no rows found")
    return np.array(rows, dtype=np.float64)


def load_matrix(path, format="csv"):
    """Read a feature matrix; raises OSError, ParseError or NonFiniteError."""
    if format == "csv":
        with open(path, "r") as f:
            values = _parse_csv(f.read())
    elif format in ("binary", "bin", "binary-matrix"):
        values = read_binary_matrix(path)
    else:
        raise ParseError(f"unknown matrix format {format!r}")
    return DataMatrix(values)


def read_binary_matrix(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _MATRIX_HEADER.size:
        raise ParseError("binary matrix header truncated")
    magic, rows, cols = _MATRIX_HEADER.unpack_from(blob)
    if magic != MATRIX_MAGIC:
        raise ParseError("not a binary matrix file (bad magic)")
    payload = blob[_MATRIX_HEADER.size:]
    if len(payload) != rows * cols * 8:
        raise ParseError(f"payload holds {len(payload)} bytes, expected {rows * cols * 8}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).astype(np.float64)


def save_matrix(path, values):
    values = np.asarray(values, dtype="<f8")
    if values.ndim != 2:
        raise ParseError("only 2-D matrices can be saved")
    with open(path, "wb") as f:
        f.write(_MATRIX_HEADER.pack(MATRIX_MAGIC, values.shape[0], values.shape[1]))
        f.write(np.ascontiguousarray(values).tobytes())


def normalize_features(m):
    """Min-max rescale every column to [0, 1]; constant columns become 0."""
    x = m.values
    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    scale = np.where(span > 0, span, 1.0)
    out = (x - lo) / scale
    out[:, span == 0] = 0.0
    np.clip(out, 0.0, 1.0, out=out)
    return DataMatrix(out, m.labels)


def relabel(codes):
    """Map arbitrary integer codes onto 0..K-1 in sorted-code order."""
    codes = np.asarray(codes, dtype=np.int64)
    return np.unique(codes, return_inverse=True)[1].astype(np.int64).reshape(codes.shape)


def load_labels(path, n_points=None):
    codes = []
    with open(path, "r") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                codes.append(int(line))
            except ValueError:
                raise ParseError(f"line {lineno}: {line!r} is not an integer") from None
    labels = relabel(np.array(codes, dtype=np.int64))
    if n_points is not None and len(labels) != n_points:
        raise LengthMismatchError(f"{len(labels)} labels for {n_points} points")
    return labels


def save_labels(path, labels):
    with open(path, "w") as f:
        f.writelines(f"{int(v)}\n" for v in labels)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, arrays, scalars):
    """Persist named arrays plus JSON-serializable scalars.

    Arrays keep dtype and shape exactly; a float scalar round-trips through
    ``repr`` so it comes back bit-identical.
    """
    directory = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
        raw = a.astype(dt, copy=False).tobytes()
        directory.append({"name": name, "dtype": dt.str, "shape": list(a.shape),
                          "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"scalars": scalars, "arrays": directory},
                        sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_PREFIX.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path):
    """Return ``(arrays, scalars)``; any damage raises CheckpointError."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _CKPT_PREFIX.size:
        raise CheckpointError("checkpoint truncated before header")
    magic, version, hlen = _CKPT_PREFIX.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    start = _CKPT_PREFIX.size
    if len(blob) < start + hlen:
        raise CheckpointError("checkpoint truncated inside header")
    try:
        header = json.loads(blob[start:start + hlen])
    except ValueError as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
    payload = blob[start + hlen:]
    total = sum(d["nbytes"] for d in header["arrays"])
    if len(payload) != total:
        raise CheckpointError(f"checkpoint payload holds {len(payload)} bytes, expected {total}")
    arrays = {}
    for d in header["arrays"]:
        raw = payload[d["offset"]:d["offset"] + d["nbytes"]]
        arrays[d["name"]] = np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()
    return arrays, header["scalars"]
