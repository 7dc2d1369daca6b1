"""Binary checkpoints.

Layout::

    b"LCKPT <version>\\n"
    <header length as 8-byte little-endian unsigned>
    <UTF-8 JSON header: config text, config digest, epoch, RNG state, tensor index>
    <tensor payload: little-endian float64, in index order>
    <CRC32 of everything above, 4-byte little-endian unsigned>

The JSON header is written with sorted keys so load -> save reproduces the bytes.
"""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"LCKPT"
VERSION = 1


class CheckpointError(IOError):
    pass


class ChecksumError(CheckpointError):
    pass


class IncompatibleCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config_text: str
    epoch: int
    params: dict[str, np.ndarray]
    optimizer: dict[str, np.ndarray | int]
    rng_state: dict
    step: int = 0
    log: list[str] | None = None

    def to_bytes(self) -> bytes:
        index = []
        blobs = []
        offset = 0
        for group, tensors in (("param", self.params),
                               ("optim", {k: v for k, v in self.optimizer.items() if k != "step"})):
            for name, arr in tensors.items():
                arr = np.asarray(arr, dtype="<f8")
                index.append({"group": group, "name": name, "shape": list(arr.shape), "offset": offset})
                blobs.append(arr.tobytes())
                offset += arr.nbytes
        header = {
            "config": self.config_text,
            "config_digest": _digest(self.config_text),
            "epoch": self.epoch,
            "step": self.step,
            "optimizer_step": int(self.optimizer.get("step", 0)),
            "rng_state": self.rng_state,
            "log": self.log or [],
            "tensors": index,
        }
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        body = (MAGIC + f" {VERSION}\n".encode() + struct.pack("<Q", len(hbytes)) + hbytes
                + b"".join(blobs))
        return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if len(raw) < 4 or not raw.startswith(MAGIC):
            raise CheckpointError("not a checkpoint file")
        body, trailer = raw[:-4], raw[-4:]
        nl = raw.find(b"\n")
        try:
            version = int(raw[len(MAGIC):nl])
        except ValueError:
            raise CheckpointError("unreadable checkpoint version") from None
        if version != VERSION:
            raise IncompatibleCheckpointError(f"checkpoint format version {version}, expected {VERSION}")
        if struct.unpack("<I", trailer)[0] != zlib.crc32(body) & 0xFFFFFFFF:
            raise ChecksumError("checkpoint CRC32 mismatch (file corrupted)")
        pos = nl + 1
        (hlen,) = struct.unpack("<Q", body[pos:pos + 8])
        pos += 8
        header = json.loads(body[pos:pos + hlen])
        payload = body[pos + hlen:]
        if header["config_digest"] != _digest(header["config"]):
            raise CheckpointError("config digest mismatch")
        params, optim = {}, {"step": header["optimizer_step"]}
        for entry in header["tensors"]:
            n = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
            arr = np.frombuffer(payload, dtype="<f8", count=n, offset=entry["offset"])
            arr = arr.reshape(tuple(entry["shape"])).astype(np.float64)
            (params if entry["group"] == "param" else optim)[entry["name"]] = arr
        return cls(header["config"], header["epoch"], params, optim, header["rng_state"],
                   header["step"], header["log"])


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(ckpt.to_bytes())
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return Checkpoint.from_bytes(path.read_bytes())
