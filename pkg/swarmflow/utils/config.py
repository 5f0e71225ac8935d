import hashlib
import os
import re
from typing import Any, Dict, List

import numpy as np

from swarmflow.errors import ConfigError

THREADS_ENV = "SWARMFLOW_THREADS"
KEY_PATTERN = re.compile(r"^[a-z_][a-z0-9_]*(\.[A-Za-z_][A-Za-z0-9_]*)+$")
INT_PATTERN = re.compile(r"^[+-]?\d+$")

REQUIRED_KEYS = ("scenario.name", "scenario.pipeline", "grid.dim", "grid.cells", "time.T")


def parse_value(text: str, line: int = None, key: str = None):
    text = text.strip()
    if text == "":
        raise ConfigError("Empty value", line=line, key=key)
    if "," in text:
        return [parse_value(item, line, key) for item in text.split(",")]
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if INT_PATTERN.match(text):
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(format_value(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


class ScenarioConfig(object):
    """Flat ``section.key = value`` scenario description."""

    def __init__(self, values: Dict[str, Any] = None):
        self.values: Dict[str, Any] = dict(values or {})

    def __eq__(self, other):
        return isinstance(other, ScenarioConfig) and self.values == other.values

    def __repr__(self):
        return f"ScenarioConfig(name={self.values.get('scenario.name')})"

    def __contains__(self, key: str):
        return key in self.values

    def __getitem__(self, key: str):
        if key not in self.values:
            raise ConfigError("Missing required key", key=key)
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def get_float(self, key: str, default: float = None) -> float:
        value = self.values.get(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"Expected a number, got {value!r}", key=key)
        return float(value)

    def get_int(self, key: str, default: int = None) -> int:
        value = self.values.get(key, default)
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"Expected an integer, got {value!r}", key=key)
        return value

    def get_list(self, key: str, default=None) -> List:
        value = self.values.get(key, default)
        if value is None:
            return []
        return list(value) if isinstance(value, (list, tuple)) else [value]

    def section(self, prefix: str) -> Dict[str, Any]:
        """Keys below ``prefix.`` with the prefix stripped (nested dots kept)."""
        start = prefix + "."
        return {k[len(start) :]: v for (k, v) in self.values.items() if k.startswith(start)}

    def params(self, prefix: str) -> Dict[str, Any]:
        """Direct children of ``prefix`` except ``kind``, suitable as keyword arguments."""
        return {k: v for (k, v) in self.section(prefix).items() if "." not in k and k != "kind"}

    def with_overrides(self, **overrides) -> "ScenarioConfig":
        values = dict(self.values)
        values.update({k.replace("__", "."): v for (k, v) in overrides.items()})
        return ScenarioConfig(values)

    def validate(self) -> "ScenarioConfig":
        for key in REQUIRED_KEYS:
            if key not in self.values:
                raise ConfigError("Missing required key", key=key)
        if self.get_int("grid.dim") not in (1, 2, 3):
            raise ConfigError("grid.dim must be 1, 2 or 3", key="grid.dim")
        if self.get_float("time.T") <= 0.0:
            raise ConfigError("time.T must be positive", key="time.T")
        return self

    @property
    def name(self) -> str:
        return str(self["scenario.name"])

    @property
    def pipeline(self) -> str:
        return str(self["scenario.pipeline"])

    @property
    def seed(self) -> int:
        return self.get_int("runtime.seed", 0)

    @property
    def threads(self) -> int:
        if os.environ.get(THREADS_ENV):
            try:
                return int(os.environ[THREADS_ENV])
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {os.environ[THREADS_ENV]!r}")
        return self.get_int("runtime.threads", 1)

    def output_times(self) -> np.ndarray:
        """Either an explicit list of times or a count of equal intervals on [0, T]."""
        T = self.get_float("time.T")
        outputs = self.get("time.outputs", 10)
        if isinstance(outputs, list):
            return np.array(sorted(float(t) for t in outputs))
        if isinstance(outputs, bool) or not isinstance(outputs, int) or outputs < 1:
            raise ConfigError(f"time.outputs must be a positive count or a list, got {outputs!r}", key="time.outputs")
        return np.linspace(0.0, T, outputs + 1)

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.values)

    @staticmethod
    def from_dict(values: Dict[str, Any]) -> "ScenarioConfig":
        return ScenarioConfig(values)

    @staticmethod
    def loads(text: str) -> "ScenarioConfig":
        values: Dict[str, Any] = {}
        for (index, raw) in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"Expected 'section.key = value', got {raw.strip()!r}", line=index)
            key, value = (part.strip() for part in line.split("=", 1))
            if not KEY_PATTERN.match(key):
                raise ConfigError("Malformed key", line=index, key=key)
            if key in values:
                raise ConfigError("Duplicate key", line=index, key=key)
            values[key] = parse_value(value, line=index, key=key)
        return ScenarioConfig(values)

    @staticmethod
    def load(path: str) -> "ScenarioConfig":
        if not os.path.exists(path):
            raise FileNotFoundError(f"Config file not found: {path}")
        with open(path, encoding="utf-8") as f:
            return ScenarioConfig.loads(f.read())

    def dumps(self) -> str:
        return "".join(f"{key} = {format_value(self.values[key])}\n" for key in sorted(self.values))

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as f:
            f.write(self.dumps())

    def fingerprint(self) -> str:
        return hashlib.sha1(self.dumps().encode("utf-8")).hexdigest()
