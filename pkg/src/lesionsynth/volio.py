"""Binary volume and checkpoint formats, flat config files, run manifests.

A purpose-built container instead of a medical-imaging format: the point is
bit-exact round trips with zero dependencies, not interchange.  Volumes are
"PVAE" files (one 3-d array, f32 or u8); checkpoints are "PVCK" files
holding named f32 blobs keyed by parameter id.  Both are written atomically
via a temp file and rename.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
import time

import numpy as np

__all__ = [
    "FormatError",
    "read_volume",
    "write_volume",
    "read_checkpoint",
    "write_checkpoint",
    "Config",
    "RunManifest",
    "content_hash",
    "ARTIFACT_VERSION",
]

ARTIFACT_VERSION = "0.1.0"

_VOL_MAGIC = b"PVAE"
_CKPT_MAGIC = b"PVCK"
_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("uint8"): 1}


class FormatError(ValueError):
    """A file does not conform to the volume or checkpoint format."""


def _atomic_write(path, payload):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_volume(path, volume):
    """Serialize one 3-d array as an f32 or u8 volume file."""
    arr = np.asarray(volume)
    if arr.ndim != 3:
        raise ValueError(f"volumes are 3-d, got shape {arr.shape}")
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    if arr.dtype not in _DTYPE_CODES:
        arr = arr.astype(np.float32)
    code = _DTYPE_CODES[arr.dtype]
    if code == 1 and not np.isin(arr, (0, 1)).all():
        raise ValueError("u8 volumes are masks and must contain only 0 and 1")
    d, h, w = arr.shape
    head = _VOL_MAGIC + struct.pack("<BBHIII", _VERSION, code, 0, d, h, w)
    _atomic_write(path, head + arr.astype(_DTYPES[code]).tobytes(order="C"))


def read_volume(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _VOL_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {_VOL_MAGIC!r}")
    if len(blob) < 20:
        raise FormatError(f"{path}: truncated header, {len(blob)} bytes of 20")
    version, code, reserved, d, h, w = struct.unpack("<BBHIII", blob[4:20])
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if reserved != 0:
        raise FormatError(f"{path}: reserved field is {reserved}, expected 0")
    dtype = _DTYPES[code]
    want = 20 + d * h * w * dtype.itemsize
    if len(blob) != want:
        raise FormatError(
            f"{path}: payload truncated, expected {want} bytes, got {len(blob)}")
    arr = np.frombuffer(blob[20:], dtype=dtype).reshape(d, h, w)
    if code == 1 and not np.isin(arr, (0, 1)).all():
        raise FormatError(f"{path}: mask payload contains values outside {{0, 1}}")
    return np.array(arr)  # writable copy


def write_checkpoint(path, params):
    """Store named f32 arrays; ``params`` maps parameter id to array.

    Entries are written in sorted key order so equal states produce
    byte-identical files.
    """
    chunks = [_CKPT_MAGIC + struct.pack("<BxHI", _VERSION, 0, len(params))]
    for key in sorted(params):
        arr = np.asarray(params[key], dtype="<f4")  # 0-d survives, unlike ascontiguousarray
        name = key.encode()
        chunks.append(struct.pack("<H", len(name)) + name)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    _atomic_write(path, b"".join(chunks))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _CKPT_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {_CKPT_MAGIC!r}")
    version, _, count = struct.unpack("<BxHI", blob[4:12])
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    at = 12
    out = {}
    try:
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", blob, at); at += 2
            key = blob[at:at + klen].decode(); at += klen
            (ndim,) = struct.unpack_from("<B", blob, at); at += 1
            shape = struct.unpack_from(f"<{ndim}I", blob, at); at += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64)) * 4
            if at + size > len(blob):
                raise FormatError(
                    f"{path}: truncated, entry {key!r} wants {size} bytes, "
                    f"{len(blob) - at} remain")
            out[key] = np.frombuffer(blob[at:at + size], dtype="<f4").reshape(shape).copy()
            at += size
    except struct.error as exc:
        raise FormatError(f"{path}: truncated entry table ({exc})") from None
    if at != len(blob):
        raise FormatError(f"{path}: {len(blob) - at} trailing bytes")
    return out


# --- flat key=value configuration ------------------------------------------

_CONFIG_DEFAULTS = {
    "side": 32,
    "levels": 3,
    "base_channels": 16,
    "latent_dim": 64,
    "lr": 5e-5,
    "batch": 8,
    "epochs": 10,
    "n_critic": 5,
    "gp_lambda": 10.0,
    "w_rec": 1.0,
    "w_kl": 1.0,
    "w_adv": 0.01,
    "seed": 0,
    "threshold": 0.5,
}
_INT_KEYS = {"side", "levels", "base_channels", "latent_dim", "batch",
             "epochs", "n_critic", "seed"}


class Config:
    """Flat key=value settings; every key has a default, unknown keys fail."""

    def __init__(self, **overrides):
        unknown = set(overrides) - set(_CONFIG_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        self._values = dict(_CONFIG_DEFAULTS)
        for key, val in overrides.items():
            self._values[key] = int(val) if key in _INT_KEYS else float(val)

    def __getattr__(self, key):
        try:
            return self._values[key]
        except KeyError:
            raise AttributeError(key) from None

    def as_dict(self):
        return dict(self._values)

    def dumps(self):
        return "".join(f"{k}={self._values[k]!r}\n" for k in sorted(self._values))

    @classmethod
    def loads(cls, text):
        overrides = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
            key, val = (part.strip() for part in line.split("=", 1))
            overrides[key] = val
        return cls(**overrides)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.loads(fh.read())

    def save(self, path):
        _atomic_write(path, self.dumps().encode())

    def __eq__(self, other):
        return isinstance(other, Config) and self._values == other._values

    def __repr__(self):
        inner = ", ".join(f"{k}={v}" for k, v in sorted(self._values.items()))
        return f"Config({inner})"


# --- run manifest -----------------------------------------------------------

def content_hash(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunManifest:
    """Everything needed to re-execute a run and get identical bytes."""

    def __init__(self, command, config, inputs=None, timestamp=None):
        self.command = command
        self.config = config
        self.inputs = dict(inputs or {})  # path -> sha256
        self.timestamp = timestamp or time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        self.artifact_version = ARTIFACT_VERSION

    def to_json(self):
        return json.dumps({
            "artifact_version": self.artifact_version,
            "command": self.command,
            "config": {k: v for k, v in sorted(self.config.as_dict().items())},
            "inputs": {k: self.inputs[k] for k in sorted(self.inputs)},
            "seed": self.config.seed,
            "timestamp": self.timestamp,
        }, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        cfg = Config(**raw["config"])
        manifest = cls(raw["command"], cfg, raw.get("inputs"), raw.get("timestamp"))
        manifest.artifact_version = raw.get("artifact_version", ARTIFACT_VERSION)
        return manifest

    def save(self, path):
        _atomic_write(path, (self.to_json() + "\n").encode())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())
