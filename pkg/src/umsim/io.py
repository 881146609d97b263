"""CSV records and the binary complex sidecar."""
import csv
import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

HEADER = ("scenario_id", "algorithm", "sweep_name", "sweep_value", "trial_index",
          "metric_name", "value", "seed", "stream_id")
SIDECAR_MAGIC = b"UMSIMCPX"


@dataclass(frozen=True)
class TrialRecord:
    scenario_id: str
    algorithm: str
    sweep_name: str
    sweep_value: float
    trial_index: int
    metric_name: str
    value: float
    seed: int
    stream_id: int

    def key(self):
        return (self.algorithm, self.sweep_value, self.trial_index, self.metric_name)


def sort_records(records):
    return sorted(records, key=TrialRecord.key)


def format_real(x):
    """Shortest round-trip decimal form (``repr``); ``nan``/``inf`` spelled out."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _row(r):
    return [r.scenario_id, r.algorithm, r.sweep_name, format_real(r.sweep_value), str(r.trial_index),
            r.metric_name, format_real(r.value), str(r.seed), str(r.stream_id)]


def dumps_csv(records):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in sort_records(records):
        w.writerow(_row(r))
    return buf.getvalue()


def write_csv(records, path):
    """Write records sorted by (algorithm, sweep_value, trial_index, metric_name)."""
    Path(path).write_bytes(dumps_csv(records).encode("utf-8"))


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != HEADER:
        raise ValueError(f"{path} does not start with the record header")
    out = []
    for row in rows[1:]:
        sid, alg, sname, sval, ti, metric, val, seed, stream = row
        out.append(TrialRecord(sid, alg, sname, float(sval), int(ti), metric, float(val), int(seed), int(stream)))
    return out


def aggregate(records, metric=None):
    """Mean value per (algorithm, sweep_value, metric_name), ignoring nan."""
    acc = {}
    for r in records:
        if metric is not None and r.metric_name != metric:
            continue
        if math.isnan(r.value):
            continue
        acc.setdefault((r.algorithm, r.sweep_value, r.metric_name), []).append(r.value)
    return {k: math.fsum(v) / len(v) for k, v in sorted(acc.items())}


def write_sidecar(path, array):
    """Little-endian 16-byte header (magic, two uint32 dims) then interleaved re/im float64."""
    a = np.asarray(array, dtype=np.complex128)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError("sidecar arrays must be 1-D or 2-D")
    rows, cols = a.shape
    body = np.empty((rows, cols, 2), dtype="<f8")
    body[..., 0], body[..., 1] = a.real, a.imag
    with open(path, "wb") as fh:
        fh.write(SIDECAR_MAGIC + struct.pack("<II", rows, cols))
        fh.write(body.tobytes())


def read_sidecar(path):
    data = Path(path).read_bytes()
    if data[:8] != SIDECAR_MAGIC:
        raise ValueError("not a complex sidecar file")
    rows, cols = struct.unpack("<II", data[8:16])
    body = np.frombuffer(data[16:], dtype="<f8").reshape(rows, cols, 2)
    return body[..., 0] + 1j * body[..., 1]
