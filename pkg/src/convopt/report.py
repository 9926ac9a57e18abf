"""Plain result records shared by the solver, optimizer and verification code."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def digest(obj) -> str:
    blob = json.dumps(_plain(obj), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class DiagnosticReport:
    name: str
    passed: bool
    values: dict[str, Any] = field(default_factory=dict)
    tolerance: float | None = None
    seed: int | None = None
    inputs_digest: str = ""

    def to_dict(self) -> dict:
        return _plain(asdict(self))
