"""Instance files (JSON) and results tables (CSV)."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .planning import Instance

SCHEMA_VERSION = 1
DEFAULT_P_HAT = 0.75


class SchemaError(ValueError):
    """Input file does not follow the expected layout."""


@dataclass(frozen=True)
class AmbiguitySpec:
    N: int
    alpha: float
    n_probs: int
    p_hat: Optional[Tuple[float, ...]] = None
    samples: Optional[Tuple[Tuple[int, ...], ...]] = None

    def resolve_p_hat(self, i_max) -> np.ndarray:
        """Point estimate: explicit, from samples, or 0.75 on every day."""
        from .intake import mle_success_probs

        if self.p_hat is not None:
            return np.asarray(self.p_hat, dtype=float)
        if self.samples is not None:
            return mle_success_probs(np.asarray(self.samples), i_max)
        return np.full(len(i_max), DEFAULT_P_HAT)


def instance_to_dict(instance: Instance, ambiguity: Optional[AmbiguitySpec] = None) -> dict:
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": instance.name,
        "L": instance.L,
        "K": instance.K,
        "capacity": list(instance.capacity),
        "workstack": list(instance.workstack),
        "rollover_cost": list(instance.rollover_cost),
        "i_max": list(instance.i_max),
    }
    if ambiguity is not None:
        amb = {"N": ambiguity.N, "alpha": ambiguity.alpha, "n_probs": ambiguity.n_probs}
        if ambiguity.p_hat is not None:
            amb["p_hat"] = list(ambiguity.p_hat)
        if ambiguity.samples is not None:
            amb["samples"] = [list(s) for s in ambiguity.samples]
        doc["ambiguity"] = amb
    return doc


def instance_from_dict(doc: dict) -> Tuple[Instance, Optional[AmbiguitySpec]]:
    if not isinstance(doc, dict):
        raise SchemaError("instance document must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    for key in ("L", "K", "capacity", "workstack", "rollover_cost", "i_max"):
        if key not in doc:
            raise SchemaError(f"missing field {key!r}")
    inst = Instance(doc["L"], doc["K"], doc["capacity"], doc["workstack"], doc["rollover_cost"], doc["i_max"],
                    name=doc.get("name", ""))
    amb = None
    if "ambiguity" in doc:
        a = doc["ambiguity"]
        for key in ("N", "alpha", "n_probs"):
            if key not in a:
                raise SchemaError(f"missing field ambiguity.{key}")
        p_hat = tuple(float(v) for v in a["p_hat"]) if a.get("p_hat") is not None else None
        samples = tuple(tuple(int(v) for v in s) for s in a["samples"]) if a.get("samples") is not None else None
        if p_hat is not None and len(p_hat) != inst.L:
            raise SchemaError("ambiguity.p_hat length differs from L")
        amb = AmbiguitySpec(int(a["N"]), float(a["alpha"]), int(a["n_probs"]), p_hat, samples)
    return inst, amb


def save_instance(path, instance: Instance, ambiguity: Optional[AmbiguitySpec] = None) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance, ambiguity), indent=2) + "\n")


def load_instance(path) -> Tuple[Instance, Optional[AmbiguitySpec]]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return instance_from_dict(doc)


def fmt(value) -> str:
    """CSV cell: floats with 10 significant digits, blanks for missing values."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return ""
        return f"{float(value):.10g}"
    return str(value)


def write_csv(path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in columns])


def read_csv(path, required: Sequence[str] = ()) -> List[Dict[str, str]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing column {col!r}")
        return list(reader)
