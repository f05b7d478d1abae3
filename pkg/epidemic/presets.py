"""Named scenarios. Each preset is a partial flat config layered over the defaults."""
from __future__ import annotations

from copy import deepcopy
from typing import Any

from .exceptions import ConfigurationError

LETTER_BOX = [1.15, 1.85, -0.35, 0.35]

PRESETS: dict[str, dict[str, Any]] = {
    "A-M": {
        "scenario": "A-M",
        "delta": 0.0,
        "inclusions": [
            {"target": "gamma", "shape": "A", "box": LETTER_BOX, "value": 0.4},
            {"target": "beta", "shape": "M", "box": LETTER_BOX, "value": 0.6},
        ],
    },
    "Omega-B-low": {
        "scenario": "Omega-B-low",
        "delta": 0.02,
        "inclusions": [
            {"target": "gamma", "shape": "Omega", "box": LETTER_BOX, "value": 0.4},
            {"target": "beta", "shape": "B", "box": LETTER_BOX, "value": 0.6},
        ],
    },
    "Omega-B-high": {
        "scenario": "Omega-B-high",
        "delta": 0.02,
        "inclusions": [
            {"target": "gamma", "shape": "Omega", "box": LETTER_BOX, "value": 0.8},
            {"target": "beta", "shape": "B", "box": LETTER_BOX, "value": 1.0},
        ],
    },
    # constant coefficients, no transport: the spatially homogeneous reference case
    "homogeneous": {
        "scenario": "homogeneous",
        "delta": 0.0,
        "q_S": [0.0, 0.0],
        "q_I": [0.0, 0.0],
        "q_R": [0.0, 0.0],
        "inclusions": [],
    },
}


def get_preset(name: str) -> dict[str, Any]:
    try:
        return deepcopy(PRESETS[name])
    except KeyError:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None
