"""Versioned binary checkpoints.

Layout: ``b"MSCT"``, a little-endian uint16 format version, a uint32 header
length, a UTF-8 JSON header, then raw little-endian float64 payloads in
header order. The header echoes the model config, the standardisation, the
parameter names, shapes and groups, and any caller extras (training config
hash, epoch counters, optimizer moments). Round trips are bitwise exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Any

import numpy as np

from msct.data import Normalizer
from msct.errors import DatasetError
from msct.logging_config import logger
from msct.models.config import MsctConfig
from msct.models.msct import MsctModel
from msct.utils.json_utils import dumps

MAGIC = b"MSCT"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


def write_container(path: str | Path, header: dict, arrays: dict[str, np.ndarray]) -> Path:
    """Write ``header`` plus named float64 ``arrays`` into one container file."""
    path = Path(path)
    entries = []
    offset = 0
    for name, array in arrays.items():
        array = np.asarray(array, dtype=np.float64)
        entries.append({"name": name, "shape": list(array.shape), "offset": offset})
        offset += array.size
    header = dict(header, arrays=entries)
    encoded = dumps(header).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        with open(path, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<HI", FORMAT_VERSION, len(encoded)))
            f.write(encoded)
            for array in arrays.values():
                f.write(np.ascontiguousarray(array, dtype=_DTYPE).tobytes())
    except OSError as err:
        raise OSError(f"Could not write checkpoint {path}: {err}") from err
    logger.file("Wrote checkpoint %s (%d arrays)", path, len(entries))
    return path


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as err:
        raise OSError(f"Could not read checkpoint {path}: {err}") from err
    if raw[:4] != MAGIC:
        raise DatasetError(f"{path} is not a checkpoint (bad magic)")
    version, header_len = struct.unpack("<HI", raw[4:10])
    if version != FORMAT_VERSION:
        raise DatasetError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[10 : 10 + header_len].decode("utf-8"))
    payload = np.frombuffer(raw, dtype=_DTYPE, offset=10 + header_len)
    arrays = {}
    for entry in header["arrays"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        arrays[entry["name"]] = payload[start : start + size].reshape(entry["shape"]).copy()
    return header, arrays


def save_checkpoint(
    path: str | Path,
    model: MsctModel,
    extras: dict[str, Any] | None = None,
    extra_arrays: dict[str, np.ndarray] | None = None,
) -> Path:
    groups = {
        name: group
        for group, params in model.parameter_groups().items()
        for name in _names_for(model, params)
    }
    arrays = {f"param.{name}": p.data for name, p in model.named_parameters()}
    arrays.update(extra_arrays or {})
    header = {
        "model": "msct",
        "config": asdict(model.cfg),
        "normalizer": model.normalizer.to_dict(),
        "groups": groups,
        "extras": extras or {},
    }
    return write_container(path, header, arrays)


def _names_for(model: MsctModel, params) -> list[str]:
    ids = {id(p) for p in params}
    return [name for name, p in model.named_parameters() if id(p) in ids]


def load_checkpoint(path: str | Path) -> tuple[MsctModel, dict, dict[str, np.ndarray]]:
    """Rebuild the model; returns it with the header extras and non-parameter arrays."""
    header, arrays = read_container(path)
    if header.get("model") != "msct":
        raise DatasetError(f"{path} holds a '{header.get('model')}' model, not msct")
    model = MsctModel(MsctConfig(**header["config"]), Normalizer.from_dict(header["normalizer"]))
    for name, p in model.named_parameters():
        key = f"param.{name}"
        if key not in arrays:
            raise DatasetError(f"{path}: parameter {name} missing")
        if arrays[key].shape != p.shape:
            raise DatasetError(f"{path}: parameter {name} has shape {arrays[key].shape}, expected {p.shape}")
        p.data[...] = arrays[key]
    rest = {k: v for k, v in arrays.items() if not k.startswith("param.")}
    return model, header["extras"], rest
