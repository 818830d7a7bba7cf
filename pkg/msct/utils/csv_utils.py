from pathlib import Path

import pandas as pd

from msct.logging_config import logger


def write_table(file_path: Path, rows: list[dict], columns: list[str] | None = None) -> pd.DataFrame:
    """Write ``rows`` as CSV with a stable column order."""
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    df = pd.DataFrame(rows, columns=columns)
    df.to_csv(file_path, index=False, float_format="%.6f")
    logger.file("Wrote %d rows to %s", len(df), file_path)
    return df


def upsert_row(file_path: Path, key: str, row: dict) -> None:
    """Replace the row whose ``key`` column matches ``row[key]``, or append it."""
    file_path = Path(file_path)
    if file_path.exists():
        df = pd.read_csv(file_path)
    else:
        file_path.parent.mkdir(parents=True, exist_ok=True)
        df = pd.DataFrame(columns=list(row))

    for column in row:
        if column not in df.columns:
            df[column] = None

    if row[key] in df[key].values:
        for column, value in row.items():
            df.loc[df[key] == row[key], column] = value
    else:
        df = pd.concat([df, pd.DataFrame([row])], ignore_index=True)
    df.to_csv(file_path, index=False)
