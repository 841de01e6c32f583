"""Flat ``key = value`` run configuration.

Every key maps onto exactly one field of the experiment's sub-configs, plus
``out_dir``. Unknown keys are rejected with the offending line number.
``seed`` drives initialization and batch order; ``data_seed`` fixes the
synthetic benchmark so runs with different seeds see the same data.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .harness import ExperimentConfig, TrainConfig
from .localize import ThresholdConfig
from .model import ModelConfig
from .separate import SeparationConfig
from .synth import SynthConfig


class ConfigError(ValueError):
    pass


# key -> (section attribute, field name)
_SECTIONS = {
    "synth": SynthConfig,
    "thresholds": ThresholdConfig,
    "separation": SeparationConfig,
    "model": ModelConfig,
    "train": TrainConfig,
}
_RENAMED = {("synth", "seed"): "data_seed"}


def _key_table() -> dict[str, tuple[str, str, type]]:
    table = {}
    for section, cls in _SECTIONS.items():
        for f in fields(cls):
            key = _RENAMED.get((section, f.name), f.name)
            assert key not in table, key
            table[key] = (section, f.name, f.type)
    return table


KEYS = _key_table()


def _coerce(raw: str, type_name):
    t = type_name if isinstance(type_name, str) else type_name.__name__
    if t == "int":
        return int(raw)
    if t == "float":
        return float(raw)
    if t == "bool":
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    return raw


@dataclass(frozen=True)
class RunConfig:
    experiment: ExperimentConfig = ExperimentConfig()
    out_dir: str = "runs/default"

    def items(self) -> list[tuple[str, object]]:
        out = []
        for key, (section, name, _) in KEYS.items():
            out.append((key, getattr(getattr(self.experiment, section), name)))
        out.append(("out_dir", self.out_dir))
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())

    def with_updates(self, updates: list[tuple[str, str, str]]) -> "RunConfig":
        """Apply ``(key, raw value, where)`` triples; ``where`` labels diagnostics."""
        grouped: dict[str, dict[str, object]] = {}
        out_dir = self.out_dir
        for key, raw, where in updates:
            if key == "out_dir":
                out_dir = raw
                continue
            if key not in KEYS:
                raise ConfigError(f"{where}: unknown key {key!r}")
            section, name, type_name = KEYS[key]
            try:
                grouped.setdefault(section, {})[name] = _coerce(raw, type_name)
            except ValueError as exc:
                raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None
        exp = self.experiment
        try:
            for section, changes in grouped.items():
                exp = replace(exp, **{section: replace(getattr(exp, section), **changes)})
        except ValueError as exc:
            raise ConfigError(f"invalid configuration: {exc}") from None
        return RunConfig(exp, out_dir)


def parse_lines(text: str, source: str = "<config>") -> list[tuple[str, str, str]]:
    updates = []
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        updates.append((key, value, f"{source}:{n}"))
    return updates


def load_config(path=None, overrides=()) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {p}: {exc.strerror or exc}") from None
        cfg = cfg.with_updates(parse_lines(text, str(p)))
    sets = []
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected KEY=VALUE")
        k, v = item.split("=", 1)
        sets.append((k.strip(), v.strip(), f"--set {item}"))
    return cfg.with_updates(sets)
