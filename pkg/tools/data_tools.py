"""Data tools for loading parameter/network documents and writing run artifacts (CSV, JSON)."""

import json
import logging
import math
import os
import tempfile

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np
import pandas as pd

from model.errors import ConfigurationError, ParameterError, ParseError, ValidationError
from model.params import ENDOGENOUS, ModelParams
from services.network_service import SpilloverMatrix, SpilloverNetwork, load_network, spillover_table

logger = logging.getLogger(__name__)

PARAM_KEYS = ("sigma", "wage", "discount", "gamma", "alpha", "z_max", "price_mode")
FLOAT_FORMAT = "%.17g"


def _require_file(file_path: str):
    if not os.path.isfile(file_path):
        raise ConfigurationError(f"file not found: {file_path}")


def params_from_document(doc: dict) -> ModelParams:
    """
    Build ModelParams from a parsed parameter document.

    Keys are exactly sigma, wage, discount, gamma, alpha, z_max, price_mode;
    price_mode is "endogenous" or a positive number (a fixed B).
    """
    missing = [k for k in PARAM_KEYS if k not in doc]
    if missing:
        raise ValidationError(missing[0], "missing required key")
    unknown = sorted(set(doc) - set(PARAM_KEYS))
    if unknown:
        raise ValidationError(unknown[0], "unknown key")

    values = {}
    for key in PARAM_KEYS[:-1]:
        value = doc[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(key, f"must be a number, got {value!r}")
        values[key] = float(value)

    mode = doc["price_mode"]
    try:
        if mode == ENDOGENOUS:
            return ModelParams(**values)
        if isinstance(mode, bool) or not isinstance(mode, (int, float)) or not math.isfinite(mode) or mode <= 0:
            raise ValidationError("price_mode", f"expected '{ENDOGENOUS}' or a positive number, got {mode!r}")
        return ModelParams.fixed(float(mode), **values)
    except ParameterError as e:
        raise ValidationError("params", str(e)) from e


def load_params(file_path: str) -> ModelParams:
    """Load a TOML parameter document."""
    _require_file(file_path)
    try:
        with open(file_path, "rb") as f:
            doc = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ParseError(f"{file_path}: {e}") from e
    params = params_from_document(doc)
    logger.info("Loaded parameters from %s: %s", file_path, params.to_dict())
    return params


def params_to_toml(params: ModelParams) -> str:
    doc = params.to_dict()
    lines = [f"{key} = {doc[key]!r}" for key in PARAM_KEYS[:-1]]
    mode = doc["price_mode"]
    lines.append(f'price_mode = "{mode}"' if mode == ENDOGENOUS else f"price_mode = {mode!r}")
    return "\n".join(lines) + "\n"


def load_network_file(file_path: str) -> SpilloverNetwork:
    """Load a JSON network document."""
    _require_file(file_path)
    with open(file_path, "r", encoding="utf-8") as f:
        net = load_network(f.read())
    logger.info("Loaded network from %s: %d sector(s)", file_path, net.n_sectors)
    return net


def ensure_output_dir(path: str) -> str:
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise ConfigurationError(f"cannot create output directory {path}: {e}") from e
    if not os.access(path, os.W_OK):
        raise ConfigurationError(f"output directory is not writable: {path}")
    return path


def _atomic_write(output_path: str, write):
    directory = os.path.dirname(os.path.abspath(output_path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(output_path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            write(f)
        os.replace(tmp_path, output_path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def save_csv(df: pd.DataFrame, output_path: str) -> str:
    """Write a table atomically with full double precision."""
    _atomic_write(output_path, lambda f: df.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))
    logger.info("Saved %d rows to %s", len(df), output_path)
    return output_path


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "value"):
        return obj.value
    raise TypeError(f"{type(obj).__name__} is not JSON serializable")


def to_json(data) -> str:
    return json.dumps(data, ensure_ascii=False, indent=2, default=_json_default)


def save_json(data, output_path: str) -> str:
    """Write a JSON document atomically."""
    text = to_json(data)
    _atomic_write(output_path, lambda f: f.write(text + "\n"))
    logger.info("Saved JSON to %s", output_path)
    return output_path


def save_text(text: str, output_path: str) -> str:
    _atomic_write(output_path, lambda f: f.write(text))
    logger.info("Saved %s", output_path)
    return output_path


def export_spillover_csv(matrix: SpilloverMatrix, output_path: str) -> str:
    """Write S with header `sector,1..L`."""
    return save_csv(spillover_table(matrix), output_path)
