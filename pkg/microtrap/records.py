#!/usr/bin/env python3
"""
CSV/JSON persistence for records, curves, maps and waveforms.

Record CSV layout:
    # seed: 7
    # config_hash: 3f2a...
    # variable: detuning
    # unit: kHz
    scan_value,probe,p,err,N
    ...
Floats are written with a fixed format so reruns are byte-identical.
"""
import json
import logging
import os
from typing import Dict, Optional, Tuple

import numpy as np
import pandas as pd

from microtrap.errors import ConfigError
from microtrap.sequence_engine import RECORD_COLUMNS, ExperimentRecord
from microtrap.waveform_synth import Waveform, waveform_sidecar

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"


def _ensure_dir(path: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)


def write_frame(frame: pd.DataFrame, path: str, metadata: Optional[Dict[str, str]] = None) -> str:
    """Write a DataFrame as CSV with optional '# key: value' header lines."""
    _ensure_dir(path)
    with open(path, "w", newline="") as f:
        for key, value in (metadata or {}).items():
            f.write(f"# {key}: {value}\n")
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("Wrote %s", path)
    return path


def read_metadata(path: str) -> Dict[str, str]:
    meta = {}
    with open(path, "r") as f:
        for line in f:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition(":")
            meta[key.strip()] = value.strip()
    return meta


def read_frame(path: str) -> Tuple[pd.DataFrame, Dict[str, str]]:
    if not os.path.exists(path):
        raise ConfigError(f"File not found: {path}")
    try:
        frame = pd.read_csv(path, comment="#")
    except pd.errors.EmptyDataError:
        frame = pd.DataFrame()
    except pd.errors.ParserError as e:
        raise ConfigError(f"{path}: cannot parse CSV ({e})")
    return frame, read_metadata(path)


def write_record(record: ExperimentRecord, path: str) -> str:
    frame = record.frame[RECORD_COLUMNS]
    return write_frame(frame, path, record.metadata)


def read_record(path: str) -> Tuple[pd.DataFrame, Dict[str, str]]:
    """
    Read a record CSV back.

    Raises:
        ConfigError: missing file or missing record columns
    """
    frame, meta = read_frame(path)
    if frame.empty and not len(frame.columns):
        return pd.DataFrame(columns=RECORD_COLUMNS), meta
    missing = [c for c in RECORD_COLUMNS if c not in frame.columns]
    if missing:
        raise ConfigError(f"{path}: not a record file, missing columns {missing}")
    frame["probe"] = frame["probe"].astype(str)
    return frame, meta


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"Not JSON serialisable: {type(obj).__name__}")


def write_json(doc: Dict, path: str) -> str:
    _ensure_dir(path)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, default=_json_default, allow_nan=True)
        f.write("\n")
    logger.info("Wrote %s", path)
    return path


def read_json(path: str) -> Dict:
    if not os.path.exists(path):
        raise ConfigError(f"File not found: {path}")
    with open(path, "r") as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{e.lineno}:{e.colno}: invalid JSON ({e.msg})")


def sidecar_path(csv_path: str) -> str:
    root, _ = os.path.splitext(csv_path)
    return root + ".json"


def write_waveform(
    waveform: Waveform, path: str, omega_target: float, extra: Optional[Dict] = None
) -> Tuple[str, str]:
    """Waveform CSV (t_us + one column per pair) plus a JSON metadata sidecar."""
    write_frame(waveform.to_frame(), path)
    side = write_json(waveform_sidecar(waveform, omega_target, extra), sidecar_path(path))
    return path, side


def read_waveform(path: str) -> Tuple[pd.DataFrame, Dict]:
    frame, _ = read_frame(path)
    if "t_us" not in frame.columns:
        raise ConfigError(f"{path}: not a waveform file")
    side = sidecar_path(path)
    return frame, read_json(side) if os.path.exists(side) else {}
