"""Single-file model checkpoint.

Layout (all integers little-endian)::

    offset  size  content
    0       8     magic b"DLSTMCK\\x00"
    8       4     uint32 format version (1)
    12      8     uint64 header length H
    20      H     UTF-8 JSON header
    20+H    ...   payload: every parameter tensor in declaration order,
                  row-major, as float64 little-endian

The header holds ``network`` (the NetworkConfig as a dict), ``tensors``
(a list of ``{"name", "shape", "offset"}`` with byte offsets into the
payload), ``rng_state`` (numpy bit-generator state or null) and ``extra``
(free-form JSON, e.g. the run configuration).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .network import Network, NetworkConfig

MAGIC = b"DLSTMCK\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


@dataclass
class Checkpoint:
    network: Network
    rng_state: Optional[dict]
    extra: Any

    def rng(self) -> Optional[np.random.Generator]:
        if self.rng_state is None:
            return None
        bitgen = getattr(np.random, self.rng_state["bit_generator"])()
        bitgen.state = self.rng_state
        return np.random.Generator(bitgen)


def encode_checkpoint(net: Network, rng: Optional[np.random.Generator] = None, extra: Any = None) -> bytes:
    tensors = []
    chunks = []
    offset = 0
    for name, arr in net.named_parameters():
        data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(data)
        offset += len(data)
    header = {
        "network": net.config.to_dict(),
        "tensors": tensors,
        "rng_state": None if rng is None else rng.bit_generator.state,
        "extra": extra,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return _PREFIX.pack(MAGIC, VERSION, len(hbytes)) + hbytes + b"".join(chunks)


def decode_checkpoint(blob: bytes) -> Checkpoint:
    if len(blob) < _PREFIX.size:
        raise ValueError("truncated checkpoint")
    magic, version, hlen = _PREFIX.unpack_from(blob)
    if magic != MAGIC:
        raise ValueError("not a checkpoint file (bad magic)")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    start = _PREFIX.size
    header = json.loads(blob[start:start + hlen].decode("utf-8"))
    payload = memoryview(blob)[start + hlen:]
    net = Network.initialize(NetworkConfig.from_dict(header["network"]), np.random.default_rng(0))
    params = net.parameters()
    if [t["name"] for t in header["tensors"]] != list(params):
        raise ValueError("checkpoint tensor table does not match the network layout")
    for t in header["tensors"]:
        shape = tuple(t["shape"])
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=t["offset"]).reshape(shape)
        if params[t["name"]].shape != shape:
            raise ValueError(f"tensor {t['name']} has shape {shape}, expected {params[t['name']].shape}")
        params[t["name"]][...] = arr
    return Checkpoint(net, header["rng_state"], header["extra"])


def save_checkpoint(path, net: Network, rng: Optional[np.random.Generator] = None, extra: Any = None) -> None:
    Path(path).write_bytes(encode_checkpoint(net, rng, extra))


def load_checkpoint(path) -> Checkpoint:
    return decode_checkpoint(Path(path).read_bytes())
