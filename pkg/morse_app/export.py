"""Deterministic report files: JSON with floats rounded to 12 significant
digits and CSV tables written with numpy."""
import json
import logging
import math
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.12g'


def round_floats(value):
    """Recursively round floats to 12 significant digits; non-finite values become strings."""
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return str(value)
        return float(FLOAT_FORMAT % value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return round_floats(value.tolist())
    if isinstance(value, dict):
        return {str(k): round_floats(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [round_floats(v) for v in value]
    return value


def dumps(data):
    return json.dumps(round_floats(data), sort_keys=True, indent=2)


def write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(data) + '\n')
    logger.debug(f"Wrote {path}")
    return path


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = np.asarray(rows, dtype=float).reshape(-1, len(header))
    np.savetxt(path, rows, fmt=FLOAT_FORMAT, delimiter=',', header=','.join(header), comments='')
    logger.debug(f"Wrote {path} ({len(rows)} rows)")
    return path


def write_trajectory(path, problem, traj):
    return write_csv(path, ['t', 'x1', 'x2', 'eta', 'F', 'energy'], list(traj.csv_rows(problem)))
