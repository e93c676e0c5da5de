"""Flat key=value experiment configuration.

One setting per line, ``#`` starts a comment, blank lines are ignored.
Any key can be overridden from the environment as ``MEMBRANE_<KEY>`` (key
upper-cased).  Values are kept as strings until a subcommand asks for a
typed value, so a config round-trips through ``dumps`` unchanged.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

ENV_PREFIX = "MEMBRANE_"


class ConfigError(ValueError):
    pass


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"not a number: {text!r}") from exc


@dataclass
class ExperimentConfig:
    values: dict[str, str] = field(default_factory=dict)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        out: dict[str, str] = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {n}: expected key = value")
            key, val = (part.strip() for part in line.split("=", 1))
            if not key or any(c.isspace() for c in key):
                raise ConfigError(f"line {n}: bad key {key!r}")
            if key in out:
                raise ConfigError(f"line {n}: duplicate key {key!r}")
            out[key] = val
        return cls(out)

    @classmethod
    def load(cls, path: str | Path | None, env: Mapping[str, str] | None = None) -> "ExperimentConfig":
        cfg = cls.loads(Path(path).read_text()) if path else cls()
        cfg.apply_env(os.environ if env is None else env)
        return cfg

    def apply_env(self, env: Mapping[str, str]) -> None:
        for k, v in env.items():
            if k.startswith(ENV_PREFIX) and len(k) > len(ENV_PREFIX):
                self.values[k[len(ENV_PREFIX):].lower()] = v

    def dumps(self) -> str:
        return "".join(f"{k} = {self.values[k]}\n" for k in sorted(self.values))

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()[:16]

    def set_default(self, key: str, value: object) -> None:
        self.values.setdefault(key, str(value))

    def has(self, key: str) -> bool:
        return key in self.values

    def get_str(self, key: str, default: str | None = None) -> str:
        if key in self.values:
            return self.values[key]
        if default is None:
            raise ConfigError(f"missing key {key!r}")
        return default

    def get_int(self, key: str, default: int | None = None, minimum: int | None = None) -> int:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing key {key!r}")
            return default
        try:
            val = int(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"{key}: not an integer: {self.values[key]!r}") from exc
        if minimum is not None and val < minimum:
            raise ConfigError(f"{key} must be >= {minimum}, got {val}")
        return val

    def get_float(self, key: str, default: float | None = None, positive: bool = False) -> float:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing key {key!r}")
            return default
        val = _parse_float(self.values[key])
        if positive and not val > 0:
            raise ConfigError(f"{key} must be positive, got {val}")
        return val

    def get_floats(self, key: str, default: list[float] | None = None) -> list[float]:
        if key not in self.values:
            if default is None:
                raise ConfigError(f"missing key {key!r}")
            return list(default)
        parts = [p for p in self.values[key].replace(",", " ").split() if p]
        return [_parse_float(p) for p in parts]

    def get_ints(self, key: str, default: list[int] | None = None) -> list[int]:
        return [int(v) for v in self.get_floats(key, None if default is None else [float(d) for d in default])]


def fmt(x: float) -> str:
    """17 significant digits, the round-trip precision of a double."""
    return f"{x:.17g}"


def header(command: str, cfg: ExperimentConfig, version: str) -> str:
    return f"# membrane-pinning {version} command={command} config={cfg.digest()}\n"
