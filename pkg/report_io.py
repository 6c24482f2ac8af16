"""
Report output - JSON reports, CSV tables and two-column plot data.
Every file is written to a temporary sibling and renamed into place.
"""

import json
import logging
import os
import tempfile
from datetime import datetime
from pathlib import Path
from typing import Any, Sequence

import pandas as pd
from pydantic import BaseModel

logger = logging.getLogger(__name__)


def atomic_write_text(path: Path, text: str) -> Path:
    """Write `text` to `path` via write-then-rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle, temporary = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(handle, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(temporary, path)
    except BaseException:
        if os.path.exists(temporary):
            os.remove(temporary)
        raise
    logger.debug("Wrote %s", path)
    return path


def _jsonable(payload: Any) -> Any:
    if isinstance(payload, BaseModel):
        return payload.model_dump(mode="json")
    if isinstance(payload, dict):
        return {key: _jsonable(value) for key, value in payload.items()}
    if isinstance(payload, (list, tuple)):
        return [_jsonable(value) for value in payload]
    return payload


def report_payload(command: str, result: Any) -> dict:
    """Envelope shared by all JSON reports; only `generated_at` varies between reruns."""
    return {
        "command": command,
        "generated_at": datetime.now().isoformat(),
        "result": _jsonable(result),
    }


def write_json(path: Path, command: str, result: Any) -> Path:
    return atomic_write_text(path, json.dumps(report_payload(command, result), indent=2) + "\n")


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False))


def write_plot_data(path: Path, xs: Sequence[float], ys: Sequence[float]) -> Path:
    """Whitespace-separated two-column data, one point per line (gnuplot `plot 'file'`)."""
    lines = [f"{float(x)!r} {float(y)!r}" for x, y in zip(xs, ys)]
    return atomic_write_text(path, "\n".join(lines) + "\n")


def slug(name: str) -> str:
    """File-name friendly operator name ('scale:0.5' -> 'scale-0.5')."""
    return name.replace(":", "-").replace("/", "-")
