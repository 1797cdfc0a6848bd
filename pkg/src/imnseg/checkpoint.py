"""Binary checkpoint format.

Layout (all integers little-endian u32)::

    b"IMN1"                      magic
    version                      currently 1
    config_len, config bytes     UTF-8 "key = value" lines, sorted by key
    record_count
    record_count x:
        name_len, name bytes     UTF-8, e.g. "param/enc0.0.conv.weight"
        ndim, dims[ndim]
        float32 LE values        prod(dims) of them

Records cover every parameter (``param/``), batch-norm running statistics
(``bn_mean/``, ``bn_var/``, ``bn_count/``) and Adam state (``adam_m/``,
``adam_v/``, ``adam_t/``), in the network's canonical order. Values are
stored as float32, so float32 networks round-trip bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .networks import ArchitectureConfig, Network, build

MAGIC = b"IMN1"
VERSION = 1

__all__ = [
    "MAGIC",
    "VERSION",
    "CheckpointError",
    "CheckpointVersionError",
    "CheckpointFormatError",
    "CheckpointNameError",
    "CheckpointConfigError",
    "config_block",
    "save_checkpoint",
    "load_checkpoint",
]


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    """Wrong magic bytes or unsupported format version."""


class CheckpointFormatError(CheckpointError):
    """Truncated or malformed file."""


class CheckpointNameError(CheckpointError):
    """Stored records do not match the network rebuilt from the config."""


class CheckpointConfigError(CheckpointError):
    """Stored config differs from the one the caller expects."""


_CONFIG_TYPES = {f: type(v) for f, v in ArchitectureConfig().to_dict().items()}


def config_block(cfg: ArchitectureConfig) -> str:
    return "".join(f"{k} = {v!r}\n" for k, v in sorted(cfg.to_dict().items()))


def _parse_config(text: str) -> ArchitectureConfig:
    values = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, raw = line.partition(" = ")
        if key not in _CONFIG_TYPES:
            raise CheckpointFormatError(f"unknown config key {key!r}")
        typ = _CONFIG_TYPES[key]
        values[key] = raw.strip("'\"") if typ is str else typ(raw)
    return ArchitectureConfig(**values)


def save_checkpoint(net: Network, path) -> None:
    arrays = net.state_arrays()
    cfg = config_block(net.config).encode("utf-8")
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(cfg)), cfg,
              struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr)
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError("checkpoint is truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def read_records(path) -> tuple[ArchitectureConfig, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    rd = _Reader(data)
    if rd.take(4) != MAGIC:
        raise CheckpointVersionError(f"{path}: bad magic, not an IMN checkpoint")
    version = rd.u32()
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: unsupported checkpoint version {version}")
    try:
        cfg = _parse_config(rd.take(rd.u32()).decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: malformed config block ({exc})") from exc
    records = {}
    for _ in range(rd.u32()):
        name = rd.take(rd.u32()).decode("utf-8")
        ndim = rd.u32()
        dims = struct.unpack(f"<{ndim}I", rd.take(4 * ndim))
        count = int(np.prod(dims)) if ndim else 1
        records[name] = np.frombuffer(rd.take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
    if rd.pos != len(data):
        raise CheckpointFormatError(f"{path}: trailing bytes after last record")
    return cfg, records


def load_checkpoint(path, expect: ArchitectureConfig | None = None) -> Network:
    """Rebuild the network from the stored config and restore all state.

    If ``expect`` is given, the stored architecture must match it.
    """
    cfg, records = read_records(path)
    if expect is not None and expect != cfg:
        diff = {k: (v, getattr(cfg, k)) for k, v in expect.to_dict().items() if getattr(cfg, k) != v}
        raise CheckpointConfigError(f"{path}: checkpoint config differs from expected: {diff}")
    net = build(cfg, dtype=np.float32)
    wanted = net.state_arrays()
    if list(wanted) != list(records):
        missing = sorted(set(wanted) - set(records))[:3]
        extra = sorted(set(records) - set(wanted))[:3]
        raise CheckpointNameError(f"{path}: record names do not match network (missing {missing}, extra {extra})")
    for name, arr in records.items():
        if arr.shape != wanted[name].shape:
            raise CheckpointNameError(f"{path}: record {name} has dims {arr.shape}, expected {wanted[name].shape}")
    for pname, p in net.params.items():
        p.tensor.values = records[f"param/{pname}"].copy()
        p.adam_m = records[f"adam_m/{pname}"].copy()
        p.adam_v = records[f"adam_v/{pname}"].copy()
        p.step_count = int(records[f"adam_t/{pname}"][0])
    for bname, st in net.bn_states.items():
        st.running_mean = records[f"bn_mean/{bname}"].copy()
        st.running_var = records[f"bn_var/{bname}"].copy()
        st.num_batches = int(records[f"bn_count/{bname}"][0])
    return net
