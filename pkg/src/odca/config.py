"""TOML run configuration: strict schema validation plus flag overrides.

A run file groups parameters into sections mirroring the library dataclasses
(``[synth]``, ``[feature]``, ``[gate]``, ``[loss]``, ``[train]``,
``[kalman]``, ``[scenario]``), a ``[eval]`` section for split/seed settings,
and ``[forecaster]`` for backend selection.  Unknown sections or keys are
rejected outright so typos cannot silently fall back to defaults.  Values use
the target field's default to pick a coercion (ints widen to floats, lists
become tuples); the string ``"none"`` clears optional float fields.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import tomli

from .baselines import KalmanParams
from .closedloop import SimConfig
from .evalrun import EvalConfig
from .gatefuse import GateParams
from .repair import FeatureConfig, LossParams, TrainConfig
from .synth import SynthConfig


class ConfigError(ValueError):
    """Raised when a run configuration file or override is malformed."""


@dataclass(frozen=True)
class RunConfig:
    """Fully-resolved parameters for one CLI invocation."""

    eval: EvalConfig = field(default_factory=EvalConfig)
    scenario: SimConfig = field(default_factory=SimConfig)
    forecaster: str = "builtin"


_EVAL_KEYS = ("seed", "train_frac", "val_frac", "severities")
_SECTION_TYPES = {
    "synth": SynthConfig,
    "feature": FeatureConfig,
    "gate": GateParams,
    "loss": LossParams,
    "train": TrainConfig,
    "kalman": KalmanParams,
    "scenario": SimConfig,
}
_KNOWN_SECTIONS = ("eval", "forecaster", *_SECTION_TYPES)


def _coerce(default: Any, raw: Any, where: str) -> Any:
    if isinstance(default, bool):
        if isinstance(raw, bool):
            return raw
    elif isinstance(default, float) or default is None:
        if isinstance(raw, str) and raw.lower() == "none":
            return None
        if isinstance(raw, (int, float)) and not isinstance(raw, bool):
            return float(raw)
    elif isinstance(default, int):
        if isinstance(raw, int) and not isinstance(raw, bool):
            return raw
    elif isinstance(default, str):
        if isinstance(raw, str):
            return raw
    elif isinstance(default, tuple):
        if isinstance(raw, (list, tuple)):
            if default and isinstance(default[0], float):
                return tuple(float(x) for x in raw)
            if default and isinstance(default[0], str):
                return tuple(str(x) for x in raw)
            return tuple(raw)
    raise ConfigError(
        f"{where}: cannot use {raw!r} where the default is {default!r}")


def _section_kwargs(cls: type, raw: dict, section: str) -> dict:
    defaults = {f.name: f.default if f.default is not dataclasses.MISSING
                else f.default_factory()  # type: ignore[misc]
                for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(defaults)
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in section [{section}]")
    return {k: _coerce(defaults[k], v, f"[{section}].{k}") for k, v in raw.items()}


def build_run_config(data: dict) -> RunConfig:
    """Assemble a :class:`RunConfig` from a parsed (nested-dict) document."""
    unknown = set(data) - set(_KNOWN_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {sorted(unknown)}")
    for name in data:
        if not isinstance(data[name], dict):
            raise ConfigError(f"section [{name}] must be a table")

    eval_raw = dict(data.get("eval", {}))
    unknown = set(eval_raw) - set(_EVAL_KEYS)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in section [eval]")
    eval_defaults = EvalConfig()
    eval_kwargs = {k: _coerce(getattr(eval_defaults, k), v, f"[eval].{k}")
                   for k, v in eval_raw.items()}

    scenario = SimConfig()
    for section, cls in _SECTION_TYPES.items():
        if section in data:
            kwargs = _section_kwargs(cls, data[section], section)
            try:
                built = cls(**kwargs)
            except ValueError as exc:
                raise ConfigError(f"section [{section}]: {exc}") from exc
            if section == "scenario":
                scenario = built
            else:
                eval_kwargs[section] = built

    forecaster_raw = dict(data.get("forecaster", {}))
    unknown = set(forecaster_raw) - {"backend"}
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in section [forecaster]")
    backend = forecaster_raw.get("backend", "builtin")
    if not isinstance(backend, str):
        raise ConfigError("[forecaster].backend must be a string")

    try:
        eval_cfg = EvalConfig(**eval_kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(eval=eval_cfg, scenario=scenario, forecaster=backend)


def parse_override(text: str) -> tuple[str, str, Any]:
    """Parse one ``section.key=value`` override into its parts."""
    head, sep, value_text = text.partition("=")
    if not sep:
        raise ConfigError(
            f"override {text!r} must look like section.key=value")
    section, dot, key = head.strip().partition(".")
    if not dot or not section or not key:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    value_text = value_text.strip()
    try:
        value = tomli.loads(f"v = {value_text}")["v"]
    except tomli.TOMLDecodeError:
        value = value_text  # bare strings are allowed unquoted
    return section, key, value


def load_run_config(path: str | Path | None = None,
                    overrides: Sequence[str] = (),
                    seed: int | None = None) -> RunConfig:
    """Read an optional TOML file, apply overrides (flags win), and build."""
    data: dict = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomli.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from exc
    for text in overrides:
        section, key, value = parse_override(text)
        data.setdefault(section, {})
        if not isinstance(data[section], dict):
            raise ConfigError(f"section [{section}] must be a table")
        data[section][key] = value
    if seed is not None:
        data.setdefault("eval", {})["seed"] = int(seed)
    return build_run_config(data)
