"""Container for evaluated constants and checks."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

__all__ = ["BoundReport"]


@dataclass(frozen=True)
class BoundReport:
    """Named constants with the inputs that produced them.

    Parameters
    ----------
    values : mapping of str to float
        Evaluated constants; each must be finite and non-negative.
    inputs : mapping
        Echo of the inputs.
    formulas : mapping of str to str
        Human-readable formula identifier per value.
    checks : mapping of str to bool
        Pass/fail flags of any inequality that was verified.
    """

    values: Mapping[str, float]
    inputs: Mapping[str, Any] = field(default_factory=dict)
    formulas: Mapping[str, str] = field(default_factory=dict)
    checks: Mapping[str, bool] = field(default_factory=dict)

    def __post_init__(self):
        for name, v in self.values.items():
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"report value {name}={v} is not finite and non-negative")

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    @property
    def ok(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {
            "values": {k: float(v) for k, v in sorted(self.values.items())},
            "inputs": dict(sorted(self.inputs.items())),
            "formulas": dict(sorted(self.formulas.items())),
            "checks": {k: bool(v) for k, v in sorted(self.checks.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)
