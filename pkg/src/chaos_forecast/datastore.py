"""Dataset container format, trajectory-level splits, normalization and windowing.

Container layout (all integers little-endian)::

    b"CFB1"
    uint64   header length H
    H bytes  UTF-8 JSON header {"arrays": [{"name", "shape", "dtype": "f64le"}...], "meta": {...}}
    ...      raw float64 arrays, in header order
    uint32   CRC32 of everything between the magic and the checksum

The same framing stores trajectory bundles and training checkpoints.
"""

import json
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BundleFormatError, ChecksumError, InvalidConfigError

MAGIC = b"CFB1"
DTYPE_TAG = "f64le"
STD_FLOOR = 1e-8


def _header_bytes(arrays, meta):
    header = {
        "arrays": [{"name": k, "shape": list(v.shape), "dtype": DTYPE_TAG} for k, v in arrays.items()],
        "meta": meta,
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(path, arrays, meta=None):
    """Write named float64 arrays and a JSON-serializable metadata dict."""
    arrays = {k: np.asarray(v, dtype="<f8") for k, v in arrays.items()}
    header = _header_bytes(arrays, meta or {})
    body = struct.pack("<Q", len(header)) + header + b"".join(a.tobytes(order="C") for a in arrays.values())
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(MAGIC + body + struct.pack("<I", crc))


def read_container(path):
    """Inverse of :func:`write_container`; returns ``(arrays, meta)``."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise BundleFormatError(f"{path}: not a CFB1 file")
    if len(raw) < 16:
        raise ChecksumError(f"{path}: file truncated")
    body, tail = raw[4:-4], raw[-4:]
    if zlib.crc32(body) & 0xFFFFFFFF != struct.unpack("<I", tail)[0]:
        raise ChecksumError(f"{path}: CRC32 mismatch (truncated or corrupted file)")
    (hlen,) = struct.unpack("<Q", body[:8])
    try:
        header = json.loads(body[8 : 8 + hlen].decode("utf-8"))
        specs = header["arrays"]
    except (ValueError, KeyError) as exc:
        raise BundleFormatError(f"{path}: malformed header") from exc
    offset = 8 + hlen
    arrays = {}
    for spec in specs:
        if spec.get("dtype") != DTYPE_TAG:
            raise BundleFormatError(f"{path}: unsupported dtype {spec.get('dtype')!r}")
        shape = tuple(spec["shape"])
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        chunk = body[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise BundleFormatError(f"{path}: array {spec['name']!r} shorter than declared shape")
        arrays[spec["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(body):
        raise BundleFormatError(f"{path}: {len(body) - offset} trailing bytes after arrays")
    return arrays, header.get("meta", {})


@dataclass
class TrajectoryBundle:
    data: np.ndarray  # (S, T, N)
    times: np.ndarray  # (T,)
    start_state: np.ndarray = None  # (S, N) canonical burn-in states, KS only
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.data.ndim != 3:
            raise BundleFormatError(f"data must be S x T x N, got shape {self.data.shape}")
        if self.times.shape != (self.data.shape[1],):
            raise BundleFormatError("times length does not match data")
        if np.any(np.diff(self.times) <= 0):
            raise BundleFormatError("times must be strictly increasing")
        if self.start_state is not None:
            self.start_state = np.asarray(self.start_state, dtype=np.float64)
            if self.start_state.shape[-1] != self.data.shape[2]:
                raise BundleFormatError("start_state width does not match data")

    @property
    def shape(self):
        return self.data.shape


def write_bundle(bundle: TrajectoryBundle, path):
    arrays = {"data": bundle.data, "times": bundle.times}
    if bundle.start_state is not None:
        arrays["start_state"] = bundle.start_state
    write_container(path, arrays, {"kind": "trajectory_bundle", **bundle.meta})


def read_bundle(path) -> TrajectoryBundle:
    arrays, meta = read_container(path)
    if "data" not in arrays or "times" not in arrays:
        raise BundleFormatError(f"{path}: missing data/times arrays")
    meta = dict(meta)
    meta.pop("kind", None)
    return TrajectoryBundle(arrays["data"], arrays["times"], arrays.get("start_state"), meta)


@dataclass
class SplitSpec:
    fractions: tuple = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        if len(self.fractions) != 3 or any(f < 0 for f in self.fractions):
            raise InvalidConfigError("fractions must be three nonnegative numbers")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise InvalidConfigError("split fractions must sum to 1")


def split_by_trajectory(S, spec: SplitSpec = None):
    """Disjoint (train, val, test) trajectory index arrays; floor sizes, remainder to train."""
    spec = SplitSpec() if spec is None else spec
    if S < 3:
        raise InvalidConfigError("need at least 3 trajectories to split")
    n_val = int(np.floor(spec.fractions[1] * S + 1e-9))
    n_test = int(np.floor(spec.fractions[2] * S + 1e-9))
    n_train = S - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise InvalidConfigError(f"split {spec.fractions} of S={S} leaves an empty split")
    perm = np.random.default_rng(spec.seed).permutation(S)
    return (
        np.sort(perm[:n_train]),
        np.sort(perm[n_train : n_train + n_val]),
        np.sort(perm[n_train + n_val :]),
    )


@dataclass
class Normalizer:
    """Affine standardization.  ``per_sample`` normalizes each trajectory by its own statistics."""

    mode: str
    mean: np.ndarray
    std: np.ndarray

    def to_meta(self):
        return {"mode": self.mode, "mean": np.asarray(self.mean).tolist(), "std": np.asarray(self.std).tolist()}

    @classmethod
    def from_meta(cls, d):
        return cls(d["mode"], np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def _floor_std(std):
    std = np.asarray(std, dtype=np.float64)
    if np.any(std < STD_FLOOR):
        warnings.warn("zero-variance channel: std floored to 1e-8", RuntimeWarning, stacklevel=3)
    return np.maximum(std, STD_FLOOR)


def fit_normalizer(train_data, mode="global"):
    x = np.asarray(train_data, dtype=np.float64)
    n = x.shape[-1]
    flat = x.reshape(-1, n)
    if mode == "global":
        mean, std = np.mean(flat), np.std(flat)
    elif mode == "per_variable":
        mean, std = flat.mean(axis=0), flat.std(axis=0)
    elif mode == "per_sample":
        # statistics are taken from each sample at transform time
        mean, std = np.float64(0.0), np.float64(1.0)
    else:
        raise InvalidConfigError(f"unknown normalization mode {mode!r}")
    return Normalizer(mode, np.asarray(mean, dtype=np.float64), _floor_std(std))


def sample_statistics(x):
    """Per-trajectory mean and std over (time, space) for ``x`` of shape ``(S, T, N)``."""
    x = np.asarray(x, dtype=np.float64)
    axes = tuple(range(1, x.ndim))
    return x.mean(axis=axes, keepdims=True), _floor_std(x.std(axis=axes, keepdims=True))


def apply(norm: Normalizer, x, direction="forward", sample_stats=None):
    x = np.asarray(x, dtype=np.float64)
    if norm.mode == "per_sample":
        if sample_stats is None:
            if direction != "forward":
                raise InvalidConfigError("per_sample inverse needs the forward sample statistics")
            sample_stats = sample_statistics(x)
        mean, std = sample_stats
    else:
        mean, std = norm.mean, norm.std
    if direction == "forward":
        return (x - mean) / std
    if direction == "inverse":
        return x * std + mean
    raise InvalidConfigError(f"unknown direction {direction!r}")


@dataclass
class Window:
    states: np.ndarray  # (L+1, N)
    trajectory: int
    start: int


def window_starts(T, L, stride=1):
    if T < L + 1:
        return np.zeros(0, dtype=np.int64)
    return np.arange(0, T - L, stride, dtype=np.int64)


def windows(trajectory, L, stride=1, trajectory_id=0):
    trajectory = np.asarray(trajectory)
    T = trajectory.shape[0]
    if T < L + 1:
        warnings.warn(f"trajectory of length {T} is shorter than a window of {L + 1}", RuntimeWarning, stacklevel=2)
        return []
    return [Window(trajectory[t0 : t0 + L + 1], trajectory_id, int(t0)) for t0 in window_starts(T, L, stride)]
