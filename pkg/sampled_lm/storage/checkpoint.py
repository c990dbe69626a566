"""Versioned binary checkpoints: JSON header followed by float64 arrays."""

from __future__ import annotations

import json
import logging
import os
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from sampled_lm.models.lm import ModelParams, TrainState
from sampled_lm.schemas.config import ModelConfig

from .exceptions import StorageError

logger = logging.getLogger(__name__)

MAGIC = b"SLMCKPT\0"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<IQ")  # version, header length


def save_checkpoint(
    path: Union[str, Path],
    params: ModelParams,
    state: Optional[TrainState] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write atomically (temporary file, then rename)."""
    path = Path(path)
    names = list(params.arrays)
    header = {
        "model": params.config.model_dump(mode="json"),
        "num_classes": params.num_classes,
        "arrays": [{"name": n, "shape": list(params[n].shape)} for n in names],
        "state": None if state is None else {
            "next_epoch": state.next_epoch,
            "lr": state.lr,
            "last_validation_ppl": state.last_validation_ppl,
        },
        "extra": extra or {},
    }
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with tmp.open("wb") as handle:
            handle.write(MAGIC)
            handle.write(_PREFIX.pack(FORMAT_VERSION, len(encoded)))
            handle.write(encoded)
            for name in names:
                handle.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())
        os.replace(tmp, path)
    except OSError as e:
        logger.error(f"Failed to write checkpoint {path}: {str(e)}")
        raise StorageError(f"cannot write checkpoint {path}: {e}") from e
    logger.info("Checkpoint written to %s", path)
    return path


def load_checkpoint(
    path: Union[str, Path]
) -> Tuple[ModelParams, Optional[TrainState], Dict[str, Any]]:
    """
    Read a checkpoint.

    Returns:
        (params, trainer state or None, extra header fields)

    Raises:
        StorageError: missing file, unknown magic or version, truncated data
    """
    path = Path(path)
    if not path.is_file():
        raise StorageError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise StorageError(f"{path} is not a checkpoint")
    offset = len(MAGIC)
    if len(data) < offset + _PREFIX.size:
        raise StorageError(f"{path}: truncated checkpoint")
    version, header_len = _PREFIX.unpack_from(data, offset)
    if version != FORMAT_VERSION:
        raise StorageError(f"{path}: unsupported checkpoint version {version}")
    offset += _PREFIX.size
    try:
        header = json.loads(data[offset : offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as e:
        raise StorageError(f"{path}: corrupt header") from e
    offset += header_len

    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(data):
            raise StorageError(f"{path}: truncated checkpoint")
        arrays[spec["name"]] = (
            np.frombuffer(data[offset:end], dtype="<f8")
            .astype(np.float64)
            .reshape(shape)
        )
        offset = end

    params = ModelParams(
        config=ModelConfig(**header["model"]),
        num_classes=int(header["num_classes"]),
        arrays=arrays,
    )
    state = None
    if header.get("state") is not None:
        state = TrainState(**header["state"])
    return params, state, header.get("extra", {})
