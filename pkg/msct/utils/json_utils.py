import json
from pathlib import Path
from typing import Any, Iterable, Iterator

import numpy as np

from msct.logging_config import logger


def _default(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def dumps(payload: Any, indent: int | None = None) -> str:
    """Deterministic JSON: sorted keys, shortest round-trip float repr."""
    return json.dumps(payload, default=_default, sort_keys=True, indent=indent)


def write_json(file_path: Path, payload: Any) -> None:
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    try:
        file_path.write_text(dumps(payload, indent=2) + "\n", encoding="utf-8")
    except OSError as err:
        raise OSError(f"Could not write {file_path}: {err}") from err
    logger.file("Wrote %s", file_path)


def read_json(file_path: Path) -> Any:
    file_path = Path(file_path)
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            return json.load(f)
    except OSError as err:
        raise OSError(f"Could not read {file_path}: {err}") from err


def write_jsonl(file_path: Path, records: Iterable[dict]) -> int:
    """Write one JSON object per line; returns the record count."""
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    try:
        with open(file_path, "w", encoding="utf-8") as f:
            for record in records:
                f.write(dumps(record) + "\n")
                count += 1
    except OSError as err:
        raise OSError(f"Could not write {file_path}: {err}") from err
    logger.file("Wrote %d records to %s", count, file_path)
    return count


def append_jsonl(file_path: Path, record: dict) -> None:
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with open(file_path, "a", encoding="utf-8") as f:
        f.write(dumps(record) + "\n")


def iter_jsonl(file_path: Path) -> Iterator[dict]:
    file_path = Path(file_path)
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    yield json.loads(line)
    except OSError as err:
        raise OSError(f"Could not read {file_path}: {err}") from err
