"""Validation of emitted/consumed JSON artifacts against the shipped schemas."""

from __future__ import annotations

import json
from importlib import resources

import jsonschema

_SCHEMAS = {
    "split_manifest",
    "train_log_record",
    "metric_report",
    "energy_report",
    "run_config",
}


def load_schema(name: str) -> dict:
    if name not in _SCHEMAS:
        raise KeyError(f"unknown schema: {name!r}")
    text = resources.files("spikelink.schemas").joinpath(f"{name}.json").read_text()
    return json.loads(text)


def validate(instance: dict, schema_name: str) -> None:
    """Raise jsonschema.ValidationError if the instance does not conform."""
    jsonschema.validate(instance=instance, schema=load_schema(schema_name))
