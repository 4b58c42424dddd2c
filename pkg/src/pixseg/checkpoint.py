"""Binary checkpoints for :class:`~pixseg.model.PixelNet`.

Layout (integers little-endian)::

    b"PXSEG1\\0"
    repeated until end of file:
        u32 name length, UTF-8 name
        u32 rank, u32 dims[rank]
        f64 payload[prod(dims)]

The run config travels as the reserved entry ``__config__``: a rank-1 entry
whose f64 values are the bytes of the JSON-encoded config, one byte per value.
Parameters are written in model order, so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

import json
import logging
import math
import struct
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from pixseg.config import model_config_from_dict, model_config_to_dict
from pixseg.errors import CheckpointError, ConfigError
from pixseg.model import PixelNet

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"PXSEG1\0"
MAGIC_PREFIX = b"PXSEG"
CONFIG_ENTRY = "__config__"
_U32 = struct.Struct("<I")


def encode_entries(entries: List[Tuple[str, np.ndarray]]) -> bytes:
    """Serialize ``(name, array)`` pairs after the magic, in the given order."""
    chunks = [CHECKPOINT_MAGIC]
    for name, array in entries:
        encoded = name.encode("utf-8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(array.ndim))
        chunks.extend(_U32.pack(int(d)) for d in array.shape)
        chunks.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    return b"".join(chunks)


def decode_entries(raw: bytes, source: str = "<bytes>") -> List[Tuple[str, np.ndarray]]:
    """Inverse of :func:`encode_entries`.

    Raises:
        CheckpointError: bad magic, unsupported version, truncation or corrupt
            dimensions. ``source`` names the file in the message.
    """
    if not raw.startswith(CHECKPOINT_MAGIC):
        if raw.startswith(MAGIC_PREFIX) and len(raw) > len(MAGIC_PREFIX):
            version = raw[len(MAGIC_PREFIX):len(MAGIC_PREFIX) + 1].decode("ascii", errors="replace")
            raise CheckpointError(f"{source}: unsupported version {version!r} (expected '1')")
        raise CheckpointError(f"{source}: not a pixseg checkpoint (bad magic)")

    entries: List[Tuple[str, np.ndarray]] = []
    offset = len(CHECKPOINT_MAGIC)
    try:
        while offset < len(raw):
            (name_len,) = _U32.unpack_from(raw, offset)
            offset += _U32.size
            if offset + name_len > len(raw):
                raise CheckpointError(f"{source}: truncated entry name")
            name = raw[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = _U32.unpack_from(raw, offset)
            offset += _U32.size
            dims = struct.unpack_from(f"<{rank}I", raw, offset)
            offset += _U32.size * rank
            # Python ints: corrupt dims must not wrap around.
            count = math.prod(dims)
            end = offset + 8 * count
            if end > len(raw):
                raise CheckpointError(
                    f"{source}: payload for {name!r} needs {count} values, file is too short"
                )
            array = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(dims)
            entries.append((name, array.astype(np.float64)))
            offset = end
    except (struct.error, UnicodeDecodeError, ValueError) as err:
        raise CheckpointError(f"{source}: corrupt checkpoint: {err}") from err
    return entries


def save_checkpoint(model: PixelNet, path: Union[str, Path]) -> None:
    config_bytes = json.dumps(model_config_to_dict(model.config), sort_keys=True).encode("utf-8")
    entries = [(CONFIG_ENTRY, np.frombuffer(config_bytes, dtype=np.uint8).astype(np.float64))]
    entries.extend((name, p.data) for name, p in model.named_parameters())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_entries(entries))
    logger.info("saved checkpoint %s (%d parameter tensors)", path, len(entries) - 1)


def load_checkpoint(path: Union[str, Path]) -> PixelNet:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    entries = decode_entries(raw, source=str(path))
    if not entries or entries[0][0] != CONFIG_ENTRY:
        raise CheckpointError(f"{path}: missing {CONFIG_ENTRY} entry")
    config_codes = entries[0][1]
    try:
        config_json = bytes(config_codes.astype(np.uint8)).decode("utf-8")
        config = model_config_from_dict(json.loads(config_json))
    except (UnicodeDecodeError, json.JSONDecodeError, ConfigError) as err:
        raise CheckpointError(f"{path}: unreadable embedded config: {err}") from err

    model = PixelNet(config)
    state: Dict[str, np.ndarray] = dict(entries[1:])
    if len(state) != len(entries) - 1:
        raise CheckpointError(f"{path}: duplicate parameter names")
    try:
        model.load_state_dict(state)
    except ValueError as err:
        raise CheckpointError(f"{path}: {err}") from err
    logger.info("loaded checkpoint %s", path)
    return model


__all__ = [
    "CHECKPOINT_MAGIC",
    "encode_entries",
    "decode_entries",
    "save_checkpoint",
    "load_checkpoint",
]
