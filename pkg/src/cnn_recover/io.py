"""File formats: binary sample sets, flat third-moment dumps and CSV exports.

Binary sample set (little endian)::

    8s  magic  b"CNNSAMP1"
    I   version (1)
    5Q  d, k, r, t, n
    16s activation name, NUL padded ASCII
    d   leaky-ReLU slope
    Q   seed
    n*d float64 inputs, row major
    n   float64 labels

Flat third moment: ``b"CNNM3\\0\\0\\0"``, ``I`` version, ``Q`` k, then the
``k^3`` float64 entries in lexicographic (C) index order.

CSV floats are written with ``repr`` so values round-trip exactly and reruns
produce identical bytes.
"""

import csv
import struct

import numpy as np

from .activation import Activation
from .errors import ConfigError
from .model import ProblemConfig, SampleSet

SAMPLES_MAGIC = b"CNNSAMP1"
M3_MAGIC = b"CNNM3\0\0\0"
VERSION = 1
_SAMPLES_HEADER = struct.Struct("<8sI5Q16sdQ")
_M3_HEADER = struct.Struct("<8sIQ")


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "" if value is None else str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def save_samples(S: SampleSet, path) -> None:
    cfg = S.cfg
    name = cfg.activation.kind.encode("ascii")
    header = _SAMPLES_HEADER.pack(SAMPLES_MAGIC, VERSION, cfg.d, cfg.k, cfg.r, cfg.t, len(S),
                                  name, float(cfg.activation.slope), int(S.seed))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(S.inputs, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(S.labels, dtype="<f8").tobytes())


def load_samples(path) -> SampleSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _SAMPLES_HEADER.size:
        raise ConfigError(f"{path}: truncated header")
    magic, version, d, k, r, t, n, name, slope, seed = _SAMPLES_HEADER.unpack_from(raw)
    if magic != SAMPLES_MAGIC:
        raise ConfigError(f"{path}: not a sample-set file")
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=_SAMPLES_HEADER.size)
    if body.size != n * d + n:
        raise ConfigError(f"{path}: expected {n * d + n} values, found {body.size}")
    act = Activation(name.rstrip(b"\0").decode("ascii"), slope)
    cfg = ProblemConfig(k=k, r=r, t=t, activation=act, seed=seed, d=d)
    X = body[: n * d].reshape(n, d).astype(float)
    y = body[n * d:].astype(float)
    return SampleSet(X, y, cfg, seed)


def samples_to_csv(S: SampleSet, path) -> None:
    header = [f"x_{i + 1}" for i in range(S.cfg.d)] + ["y"]
    write_csv(path, header, (list(x) + [y] for x, y in zip(S.inputs, S.labels)))


def save_m3(m3, path) -> None:
    m3 = np.asarray(m3, dtype="<f8")
    k = m3.shape[0]
    if m3.shape != (k, k, k):
        raise ConfigError("m3 must be a cubic k x k x k array")
    with open(path, "wb") as fh:
        fh.write(_M3_HEADER.pack(M3_MAGIC, VERSION, k))
        fh.write(np.ascontiguousarray(m3).tobytes())


def load_m3(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, version, k = _M3_HEADER.unpack_from(raw)
    if magic != M3_MAGIC or version != VERSION:
        raise ConfigError(f"{path}: not a version-{VERSION} m3 dump")
    return np.frombuffer(raw, dtype="<f8", offset=_M3_HEADER.size).reshape(k, k, k).astype(float)


def matrix_to_csv(W, path, prefix: str = "w") -> None:
    W = np.atleast_2d(np.asarray(W, dtype=float))
    write_csv(path, [f"{prefix}_{j + 1}" for j in range(W.shape[1])], W.tolist())


def matrix_from_csv(path) -> np.ndarray:
    _, rows = read_csv(path)
    return np.array([[float(v) for v in row] for row in rows])


def trace_to_csv(report, path) -> None:
    write_csv(path, ["iter", "loss", "dist_to_Wstar", "grad_norm"],
              ([rec.iter, rec.loss, rec.dist, rec.grad_norm] for rec in report.trace))


def decomposition_to_csv(dec, path) -> None:
    k = dec.directions.shape[0]
    header = ["component", "coeff3", "coeff2"] + [f"dir_{a + 1}" for a in range(k)]
    rows = ([j + 1, dec.coeffs3[j], dec.coeffs2[j], *dec.directions[:, j]]
            for j in range(dec.directions.shape[1]))
    write_csv(path, header, rows)


SPECTRUM_HEADER = ["config_hash", "activation", "n", "seed", "source", "lambda_min",
                   "lambda_max", "m0_nominal", "M0_nominal", "stderr"]


def spectrum_row(config_hash, activation, n, seed, source, report):
    return [config_hash, activation, n, seed, source, report.lambda_min, report.lambda_max,
            report.m0_nominal, report.M0_nominal, report.mc_stderr]
