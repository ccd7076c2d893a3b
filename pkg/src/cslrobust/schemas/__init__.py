"""JSON schemas for every emitted artifact (CSV rows are checked after parsing)."""

import json
from importlib import resources

NAMES = ("manifest", "metrics_record", "eval_report", "comparison_row", "summary_row", "sweep_row",
         "embedding_row")


def load_schema(name: str) -> dict:
    if name not in NAMES:
        raise KeyError(f"unknown schema {name!r}; expected one of {NAMES}")
    return json.loads(resources.files(__name__).joinpath(f"{name}.schema.json").read_text())
