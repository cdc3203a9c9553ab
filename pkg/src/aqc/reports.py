"""Generic report container and JSON helpers."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

SCHEMA_VERSION = 1


def to_jsonable(obj: Any) -> Any:
    """Convert numpy scalars/arrays, dataclasses and non-finite floats to JSON types.

    Non-finite floats become the strings ``"inf"``, ``"-inf"`` and ``"nan"``
    so that the output is strict JSON.
    """
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "to_dict"):
            return to_jsonable(obj.to_dict())
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def from_jsonable_float(x) -> float:
    """Inverse of the float encoding used by :func:`to_jsonable`."""
    if isinstance(x, str):
        return float(x)
    return float(x)


def digest(*arrays, **params) -> str:
    """Short SHA-256 digest of sample arrays and parameters."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(np.asarray(a, dtype=float))
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    h.update(json.dumps(to_jsonable(params), sort_keys=True).encode())
    return h.hexdigest()[:16]


@dataclass
class Report:
    """Structured outcome of a scan or diagnostic.

    Attributes
    ----------
    name : str
        Which check produced the report.
    holds : bool or None
        Verdict, or None when the check only records numbers.
    data : dict
        Named results (constants, tables, flags).
    """

    name: str
    holds: bool | None = None
    data: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.data[key]

    def to_dict(self) -> dict:
        return {"name": self.name, "holds": self.holds, "data": to_jsonable(self.data)}
