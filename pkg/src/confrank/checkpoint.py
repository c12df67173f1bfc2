"""Binary checkpoint of a :class:`RankerNetwork`.

Layout, all integers little-endian::

    magic        4 bytes   b"CRNK"
    version      uint32    FORMAT_VERSION
    seed         int64     rng seed the network was initialised with
    meta_len     uint32
    meta         meta_len bytes of UTF-8 JSON (sorted keys); holds
                 {"config": RankerConfig fields, "extra": caller metadata}
    n_arrays     uint32
    n_arrays times, in sorted name order:
        name_len uint16
        name     name_len bytes UTF-8
        ndim     uint8
        dims     ndim x uint32
        data     prod(dims) x float64 little-endian, C order

Arrays are stored as raw IEEE-754 doubles, so a save/load cycle is bitwise
exact, and the file bytes are a pure function of the network state.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .net.network import RankerConfig, RankerNetwork
from .validation import InvalidInputError

MAGIC = b"CRNK"
FORMAT_VERSION = 1


def dumps(net: RankerNetwork, extra: dict | None = None) -> bytes:
    meta = json.dumps({"config": net.config.as_dict(), "extra": extra or {}}, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<Iq", FORMAT_VERSION, net.rng_seed), struct.pack("<I", len(meta)), meta]
    names = sorted(net.parameters)
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        arr = np.ascontiguousarray(net.parameters[name], dtype="<f8")
        raw = name.encode()
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise InvalidInputError(f"checkpoint truncated at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def loads(data: bytes) -> tuple[RankerNetwork, dict]:
    """Rebuild the network; returns ``(net, extra)``."""
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise InvalidInputError("not a checkpoint file (bad magic)")
    version, seed = r.unpack("<Iq")
    if version != FORMAT_VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {version}")
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode())
        config = RankerConfig(**meta["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise InvalidInputError(f"corrupt checkpoint metadata: {exc}") from None
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise InvalidInputError(f"{len(data) - r.pos} trailing bytes after checkpoint")
    return RankerNetwork(config, seed, parameters=params), meta.get("extra", {})


def save(path, net: RankerNetwork, extra: dict | None = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(dumps(net, extra))


def load(path) -> tuple[RankerNetwork, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    return loads(path.read_bytes())
