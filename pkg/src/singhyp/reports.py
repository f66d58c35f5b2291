from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

CONDITIONS = ("SH7", "L3", "THM41B", "CONES")
VERDICTS = ("pass", "fail", "inconclusive")


@dataclass
class Witness:
    j: int
    point: tuple
    distance: float
    vector: tuple | None = None


@dataclass
class CheckReport:
    """Verdict plus the quantitative evidence behind it."""

    condition: str
    verdict: str
    k_used: int | None = None
    lambda_used: float | None = None
    lambda_definition: str | None = None
    witnesses: list = field(default_factory=list)
    margins: dict = field(default_factory=dict)
    notes: str = ""
    data: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return _clean(asdict(self))

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def _clean(obj):
    # JSON has no inf/nan; encode them as strings
    if isinstance(obj, float):
        if math.isfinite(obj):
            return obj
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "tolist") and getattr(obj, "ndim", 0) > 0:
        return _clean(obj.tolist())
    if hasattr(obj, "item") and callable(obj.item):
        return _clean(obj.item())
    return obj
