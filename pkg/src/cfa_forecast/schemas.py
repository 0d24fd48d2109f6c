"""JSON Schemas for every artifact the command line writes, plus CSV header checks.

``validate_artifact(path)`` picks the schema from the file name.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import jsonschema

from .exceptions import ContractError

_num = {"type": "number"}
_num_or_null = {"type": ["number", "null"]}
_range = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}

SERIES_LINE = {
    "type": "object",
    "required": ["id", "freq", "target"],
    "properties": {
        "id": {"type": "string"},
        "freq": {"type": "string"},
        "start": {"type": "string"},
        "target": {"type": "array", "items": _num, "minItems": 1},
    },
    "additionalProperties": False,
}

SYNTH_MANIFEST = {
    "type": "object",
    "required": ["name", "synthetic", "n_train", "n_test", "files"],
    "properties": {
        "name": {"type": "string"},
        "n_train": {"type": "integer", "minimum": 0},
        "n_test": {"type": "integer", "minimum": 0},
        "synthetic": {
            "type": "object",
            "required": ["p_min", "p_max", "amp_min", "amp_max", "noise_sigma", "n_series", "tau_c",
                         "tau_f", "seed"],
        },
        "files": {"type": "object", "required": ["train", "test"]},
    },
}

_source_losses = {
    "type": "object",
    "required": ["generative_loss", "forecast_loss", "discriminator_loss"],
    "properties": {"generative_loss": _num, "forecast_loss": _num, "discriminator_loss": _num_or_null},
}

HISTORY = {
    "type": "object",
    "required": ["model", "params", "sources", "epochs"],
    "properties": {
        "model": {"enum": ["mean", "cfa", "lstm"]},
        "params": {"type": "object"},
        "sources": {"type": "array", "items": {"type": "object", "required": ["name", "tau_c", "tau_f"]}},
        "epochs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["epoch", "sources"],
                "properties": {
                    "epoch": {"type": "integer", "minimum": 0},
                    "sources": {"type": "object", "additionalProperties": _source_losses},
                },
            },
        },
    },
}

REPORT = {
    "type": "object",
    "required": ["meta", "rows"],
    "properties": {
        "meta": {"type": "object"},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["source", "target", "model", "metric", "values", "mean", "std", "status"],
                "properties": {
                    "metric": {"enum": ["mse", "nd"]},
                    "values": {"type": "array", "items": _num},
                    "mean": _num_or_null,
                    "std": _num_or_null,
                    "status": {"enum": ["ok", "failed"]},
                },
            },
        },
    },
}

CELL_LINE = {
    "type": "object",
    "required": ["source", "target", "model", "seed", "value", "status"],
    "properties": {"seed": {"type": "integer"}, "value": _num_or_null, "status": {"enum": ["ok", "failed"]}},
}

_probe_side = {
    "type": "object",
    "required": ["train_mse", "test_mse", "n_train", "n_test"],
    "properties": {"train_mse": _num, "test_mse": _num, "n_train": {"type": "integer"},
                   "n_test": {"type": "integer"}},
}

PROBE = {
    "type": "object",
    "required": ["a", "b", "ratio", "source_range"],
    "properties": {"a": _probe_side, "b": _probe_side, "ratio": _num_or_null, "source_range": _range},
}

JSON_SCHEMAS = {
    "manifest.json": SYNTH_MANIFEST,
    "history.json": HISTORY,
    "report.json": REPORT,
    "grid.json": REPORT,
    "probe.json": PROBE,
}
JSONL_SCHEMAS = {"train.jsonl": SERIES_LINE, "test.jsonl": SERIES_LINE, "cells.jsonl": CELL_LINE}
CSV_HEADERS = {
    "forecasts.csv": ["series_id", "step", "y_true", "y_pred"],
    "grid.csv": None,  # source_range, target_range, then one column per model
    "keys.csv": None,  # k0..k{d-1}, period
}


def _check(obj, schema, where):
    try:
        jsonschema.validate(obj, schema)
    except jsonschema.ValidationError as exc:
        raise ContractError(f"{where}: {exc.message}") from exc


def _check_csv(path: Path):
    try:
        _check_csv_rows(path)
    except (ValueError, IndexError) as exc:
        raise ContractError(f"{path}: malformed row ({exc})") from exc


def _check_csv_rows(path: Path):
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ContractError(f"{path}: empty CSV")
    header = rows[0]
    name = path.name
    if name == "forecasts.csv":
        if header != CSV_HEADERS[name]:
            raise ContractError(f"{path}: header {header}")
        for r in rows[1:]:
            int(r[1]), float(r[2]), float(r[3])
    elif name == "grid.csv":
        if header[:2] != ["source_range", "target_range"] or len(header) < 3:
            raise ContractError(f"{path}: header {header}")
    elif name == "keys.csv":
        d = len(header) - 1
        if d < 1 or header != [f"k{i}" for i in range(d)] + ["period"]:
            raise ContractError(f"{path}: header {header}")
        for r in rows[1:]:
            if len(r) != d + 1:
                raise ContractError(f"{path}: ragged row")
            [float(v) for v in r]
    if any(len(r) != len(header) for r in rows[1:]):
        raise ContractError(f"{path}: ragged row")


def validate_artifact(path) -> None:
    """Raise ``ContractError`` unless ``path`` matches its documented format."""
    path = Path(path)
    name = path.name
    if name in JSON_SCHEMAS:
        _check(json.loads(path.read_text(encoding="utf-8")), JSON_SCHEMAS[name], str(path))
    elif name in JSONL_SCHEMAS:
        for i, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
            _check(json.loads(line), JSONL_SCHEMAS[name], f"{path}:{i + 1}")
    elif name in CSV_HEADERS:
        _check_csv(path)
    else:
        raise ContractError(f"{path}: no schema for this artifact")
