"""Experiment configuration: one flat record shared by the CLI and the
config-file format.

Config files are flat `key = value` text with '#' comments; keys are
exactly the CLI flag names (dashes included). Flags override file values.
Booleans accept true/false, yes/no, on/off and 1/0.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace


class ConfigError(ValueError):
    """Invalid configuration (maps to CLI exit code 2)."""


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 1
    out: str | None = None
    mkd: bool = True
    da: bool = True
    ml: bool = True
    tasks: int = 5
    mem_per_task: int = 65
    lr: float = 0.1
    rho: float = 2.0
    kd_weight: float = 0.1
    inner_steps: int = 2
    inner_lr: float | None = None  # falls back to lr
    batch: int = 10
    data: str | None = None  # optional MMDS dataset path

    def __post_init__(self):
        if self.tasks < 1:
            raise ConfigError(f"tasks must be >= 1, got {self.tasks}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        if self.mem_per_task < 0:
            raise ConfigError(f"mem-per-task must be >= 0, got {self.mem_per_task}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.inner_lr is not None and self.inner_lr <= 0:
            raise ConfigError(f"inner-lr must be > 0, got {self.inner_lr}")
        if self.rho < 0:
            raise ConfigError(f"rho must be >= 0, got {self.rho}")
        if self.kd_weight < 0:
            raise ConfigError(f"kd-weight must be >= 0, got {self.kd_weight}")
        if self.inner_steps < 1:
            raise ConfigError(f"inner-steps must be >= 1, got {self.inner_steps}")

    @property
    def effective_inner_lr(self) -> float:
        return self.lr if self.inner_lr is None else self.inner_lr

    def toggles_label(self) -> str:
        parts = [name for name, on in (("mkd", self.mkd), ("da", self.da), ("ml", self.ml)) if on]
        return "+".join(parts) if parts else "base"


def _field_types():
    hints = {
        "seed": int, "out": str, "mkd": bool, "da": bool, "ml": bool,
        "tasks": int, "mem_per_task": int, "lr": float, "rho": float,
        "kd_weight": float, "inner_steps": int, "inner_lr": float,
        "batch": int, "data": str,
    }
    return hints


def config_keys():
    """Config-file key per field, in declaration order (flag spelling)."""
    return {f.name.replace("_", "-"): f.name for f in fields(ExperimentConfig)}


def _parse_value(key, field_name, raw):
    kind = _field_types()[field_name]
    raw = raw.strip()
    if kind is bool:
        lowered = raw.lower()
        if lowered in ("true", "yes", "on", "1"):
            return True
        if lowered in ("false", "no", "off", "0"):
            return False
        raise ConfigError(f"key {key!r}: expected a boolean, got {raw!r}")
    if kind is str:
        return raw
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"key {key!r}: expected {kind.__name__}, got {raw!r}") from None


def parse_config_text(text, source="<config>") -> dict:
    """Flat key = value lines into a field dict; unknown keys are errors."""
    keys = config_keys()
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in keys:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        field_name = keys[key]
        if field_name in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[field_name] = _parse_value(key, field_name, value)
    return out


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config_text(text, source=str(path))


def build_config(file_values: dict | None = None, flag_values: dict | None = None
                 ) -> ExperimentConfig:
    """Defaults, overridden by file values, overridden by explicit flags."""
    merged = dict(file_values or {})
    for name, value in (flag_values or {}).items():
        if value is not None:
            merged[name] = value
    try:
        return ExperimentConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def config_snapshot(cfg: ExperimentConfig) -> str:
    """Re-runnable flat text form of a config.

    The output directory is a run location, not behavior, so it is left
    out: replaying the snapshot into a fresh directory reproduces the
    same numbers.
    """
    lines = []
    for key, field_name in config_keys().items():
        if field_name == "out":
            continue
        value = getattr(cfg, field_name)
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def with_toggles(cfg: ExperimentConfig, mkd: bool, da: bool, ml: bool) -> ExperimentConfig:
    return replace(cfg, mkd=mkd, da=da, ml=ml)
