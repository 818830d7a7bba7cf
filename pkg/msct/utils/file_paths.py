from pathlib import Path


def construct_file_path(filepath: str | Path, model: str, seed: int | None = None) -> Path:
    """Prefix a file name with the model name and, when given, the seed."""
    path = Path(filepath)
    prefix = model if seed is None else f"{model}_seed{seed}"
    return path.parent / f"{prefix}_{path.name}"


def ensure_dir(path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
