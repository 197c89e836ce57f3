"""Single-file checkpoints: a JSON manifest followed by raw float64 arrays.

Layout::

    b"AGRACKPT"                      8-byte magic
    uint64 little-endian             manifest length in bytes
    manifest                         UTF-8 JSON, sorted keys
    array bytes                      little-endian float64, C order, manifest order

The manifest lists every array with its name, shape, dtype and byte offset
(relative to the start of the array section), the run configuration, its
sha256 hash, and the scalar bank settings. Nothing depends on Python pickling,
so other languages can read the file with a JSON parser and a byte buffer.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bank import ClassDistributionBank
from .errors import ParseError, VersionError

MAGIC = b"AGRACKPT"
FORMAT = "agra-checkpoint"
VERSION = 1
DTYPE = "<f8"
BANK_ARRAY = "bank_means"


def config_hash(config: dict) -> str:
    """sha256 of the canonical JSON form of ``config``."""
    text = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    bank: ClassDistributionBank | None
    config: dict

    @property
    def config_hash(self) -> str:
        return config_hash(self.config)


def dumps(ckpt: Checkpoint) -> bytes:
    arrays = dict(sorted(ckpt.params.items()))
    if ckpt.bank is not None:
        arrays[BANK_ARRAY] = ckpt.bank.means
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype=DTYPE).tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "dtype": DTYPE, "offset": offset,
                        "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    bank = None
    if ckpt.bank is not None:
        b = ckpt.bank
        bank = {"alpha": b.alpha, "recluster_period": b.recluster_period, "source_mode": b.source_mode,
                "seed": b.seed}
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "arrays": entries,
        "config": ckpt.config,
        "config_hash": config_hash(ckpt.config),
        "bank": bank,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(head)) + head + b"".join(chunks)


def loads(data: bytes, expected_hash: str | None = None) -> Checkpoint:
    if data[:8] != MAGIC:
        raise ParseError("not an AGRA checkpoint (bad magic)")
    if len(data) < 16:
        raise ParseError("truncated checkpoint header")
    (n,) = struct.unpack("<Q", data[8:16])
    try:
        manifest = json.loads(data[16:16 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"unreadable checkpoint manifest: {exc}") from None
    if manifest.get("format") != FORMAT:
        raise ParseError(f"not an {FORMAT} manifest")
    if manifest.get("version") != VERSION:
        raise VersionError(f"checkpoint version {manifest.get('version')} != {VERSION}")
    config = manifest["config"]
    if config_hash(config) != manifest["config_hash"]:
        raise VersionError("checkpoint config does not match its recorded hash")
    if expected_hash is not None and manifest["config_hash"] != expected_hash:
        raise VersionError(f"checkpoint config hash {manifest['config_hash'][:12]} != expected {expected_hash[:12]}")

    body = memoryview(data)[16 + n:]
    arrays = {}
    for e in manifest["arrays"]:
        start, stop = e["offset"], e["offset"] + e["nbytes"]
        if stop > len(body):
            raise ParseError(f"array {e['name']!r} runs past the end of the file")
        arr = np.frombuffer(body[start:stop], dtype=e["dtype"]).reshape(e["shape"])
        arrays[e["name"]] = arr.astype(np.float64)  # copies into a writable native array
    bank = None
    if manifest["bank"] is not None:
        bank = ClassDistributionBank(arrays.pop(BANK_ARRAY), **manifest["bank"])
    return Checkpoint(arrays, bank, config)


def save(ckpt: Checkpoint, path) -> str:
    """Write ``ckpt``; returns the sha256 of the file bytes."""
    data = dumps(ckpt)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load(path, expected_hash: str | None = None) -> Checkpoint:
    return loads(Path(path).read_bytes(), expected_hash)
