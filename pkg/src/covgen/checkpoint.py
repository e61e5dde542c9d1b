"""Versioned binary tensor container with a JSON sidecar manifest.

Layout (little-endian)::

    magic      8 bytes   b"CVGCKPT\\0"
    version    uint32
    count      uint32
    per tensor:
        name_len  uint16, name (UTF-8)
        ndim      uint8, dims uint32 * ndim
        data      float32 * prod(dims)

The sidecar ``<path>.json`` holds the vocabulary, model configuration and
config hash.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Mapping, Union

import numpy as np
import torch

from covgen.data import atomic_write_bytes, write_json

logger = logging.getLogger(__name__)

MAGIC = b"CVGCKPT\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint file is missing, truncated or of an unsupported version."""


def manifest_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def encode_tensors(tensors: Mapping[str, Union[np.ndarray, torch.Tensor]]) -> bytes:
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(tensors))]
    for name, tensor in tensors.items():
        if isinstance(tensor, torch.Tensor):
            tensor = tensor.detach().cpu().numpy()
        array = np.ascontiguousarray(tensor, dtype="<f4")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(array.tobytes())
    return b"".join(chunks)


def decode_tensors(payload: bytes, source: str = "<bytes>") -> dict[str, np.ndarray]:
    if payload[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source}: not a covgen checkpoint (bad magic bytes)")
    offset = len(MAGIC)
    try:
        version, count = struct.unpack_from("<II", payload, offset)
        offset += 8
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{source}: unsupported checkpoint version {version}. Available: {FORMAT_VERSION}"
            )
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", payload, offset)
            offset += 2
            name = payload[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", payload, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", payload, offset)
            offset += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if offset + 4 * size > len(payload):
                raise CheckpointError(f"{source}: truncated data for tensor {name!r}")
            tensors[name] = np.frombuffer(payload, dtype="<f4", count=size, offset=offset).reshape(shape).copy()
            offset += 4 * size
    except struct.error as e:
        raise CheckpointError(f"{source}: truncated checkpoint ({e})") from e
    if offset != len(payload):
        raise CheckpointError(f"{source}: {len(payload) - offset} trailing bytes after last tensor")
    return tensors


def save_checkpoint(path: Union[str, Path], tensors: Mapping[str, Union[np.ndarray, torch.Tensor]],
                    manifest: dict) -> Path:
    """Write tensors and the sidecar manifest atomically."""
    path = Path(path)
    atomic_write_bytes(path, encode_tensors(tensors))
    write_json(manifest_path(path), {"format_version": FORMAT_VERSION, **manifest,
                                     "tensors": list(tensors)})
    logger.info(f"✓ Saved checkpoint with {len(tensors)} tensors to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> tuple[dict[str, np.ndarray], dict]:
    """
    Read a checkpoint and its manifest.

    Raises
    ------
    CheckpointError
        If either file is missing or malformed.
    """
    path = Path(path)
    sidecar = manifest_path(path)
    if not path.exists() or not sidecar.exists():
        raise CheckpointError(f"Checkpoint {path} or its manifest {sidecar} does not exist")
    tensors = decode_tensors(path.read_bytes(), str(path))
    manifest = json.loads(sidecar.read_text(encoding="utf-8"))
    return tensors, manifest


def state_tensors(module: torch.nn.Module) -> dict[str, torch.Tensor]:
    """Floating-point parameters and buffers of a module, in state-dict order."""
    return {name: t for name, t in module.state_dict().items() if torch.is_floating_point(t)}


def load_state(module: torch.nn.Module, tensors: Mapping[str, np.ndarray]) -> None:
    state = module.state_dict()
    missing = [name for name in state_tensors(module) if name not in tensors]
    if missing:
        raise CheckpointError(f"Checkpoint lacks tensors {missing}. Available: {list(tensors)}")
    for name, value in tensors.items():
        if name in state:
            state[name] = torch.from_numpy(np.asarray(value, dtype=np.float32)).to(state[name].dtype)
    module.load_state_dict(state)
