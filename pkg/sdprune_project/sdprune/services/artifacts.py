"""Artifact writers: CSV tables with a provenance line, JSON records via pydantic."""
import csv
import logging
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

from pydantic import BaseModel

logger = logging.getLogger(__name__)


def format_cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[Any]], config_hash: str,
              seed: Optional[int] = None) -> Path:
    """Comment line ``# config_hash=<hash>, seed=<seed>``, then a header row, then the rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        f.write(f"# config_hash={config_hash}, seed={'' if seed is None else seed}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(x) for x in row])
    logger.debug("wrote %s", path)
    return path


def write_json(path, record: BaseModel) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(record.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.debug("wrote %s", path)
    return path


def read_csv_rows(path):
    """Rows of a CSV written by write_csv, skipping the provenance line and the header."""
    with Path(path).open(newline="", encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    return list(csv.reader(lines))[1:]


def float_tag(value: float) -> str:
    """Stable file-name fragment for a float (``1e-3`` -> ``0.001``)."""
    return repr(float(value))
