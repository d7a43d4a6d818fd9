"""Experiment configuration: flat key-value text with section headers.

The on-disk format is INI-style and intentionally diff-friendly; parsing
produces a canonical nested mapping that serializes back losslessly.
Typed accessors build the environment and solver configurations, raising
:class:`ConfigError` with the offending key on malformed input.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field

from .gridworld import Cell, GridSpec, parse_cell, spec_from_mapping
from .particles import ISConfig
from .svim import SVIMConfig

SOLVERS = ("pathcount", "ba", "svim", "particles")


class ConfigError(ValueError):
    """Malformed experiment configuration."""


@dataclass
class ExperimentConfig:
    """Raw section/key/value mapping plus typed views onto it."""

    sections: dict[str, dict[str, str]]

    def get(self, section: str, key: str, default: str | None = None) -> str | None:
        return self.sections.get(section, {}).get(key, default)

    @property
    def solver(self) -> str:
        value = self.get("experiment", "solver")
        if value is None:
            raise ConfigError("missing key 'solver' in section [experiment]")
        if value not in SOLVERS:
            raise ConfigError(
                f"invalid value for 'solver': {value!r} (expected one of {SOLVERS})"
            )
        return value

    @property
    def seed(self) -> int:
        return self._int("experiment", "seed", 0)

    @property
    def out_dir(self) -> str:
        return self.get("experiment", "out", "runs/out") or "runs/out"

    def _int(self, section: str, key: str, default: int) -> int:
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError as exc:
            raise ConfigError(f"key '{key}' in [{section}] is not an integer: {raw!r}") from exc

    def _float(self, section: str, key: str, default: float) -> float:
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError as exc:
            raise ConfigError(f"key '{key}' in [{section}] is not a number: {raw!r}") from exc

    def _bool(self, section: str, key: str, default: bool) -> bool:
        raw = self.get(section, key)
        if raw is None:
            return default
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"key '{key}' in [{section}] is not a boolean: {raw!r}")

    def env_spec(self) -> GridSpec:
        if "environment" not in self.sections:
            raise ConfigError("missing section [environment]")
        try:
            return spec_from_mapping(self.sections["environment"])
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"bad [environment] section: {exc}") from exc

    def svim_config(self, seed: int | None = None) -> SVIMConfig:
        if "svim" not in self.sections:
            raise ConfigError("solver 'svim' needs a [svim] section")
        try:
            return SVIMConfig(
                beta=self._float("svim", "beta", 1.0),
                horizon=self._int("svim", "horizon", 3),
                batch_size=self._int("svim", "batch_size", 64),
                decoder_lr=self._float("svim", "decoder_lr", 0.05),
                source_lr=self._float("svim", "source_lr", 0.02),
                buffer_capacity=self._int("svim", "buffer_capacity", 10_000),
                exploration_mix=self._float("svim", "exploration_mix", 0.2),
                total_steps=self._int("svim", "total_steps", 20_000),
                seed=self.seed if seed is None else seed,
                repr_dim=self._int("svim", "repr_dim", 100),
                hidden_dim=self._int("svim", "hidden_dim", 100),
                render_size=self._int("svim", "render_size", 20),
            )
        except ValueError as exc:
            raise ConfigError(f"bad [svim] section: {exc}") from exc

    def is_config(self, seed: int | None = None) -> ISConfig:
        if "particles" not in self.sections:
            raise ConfigError("solver 'particles' needs a [particles] section")
        try:
            return ISConfig(
                n_particles=self._int("particles", "particles", 25),
                n_futures=self._int("particles", "futures", 64),
                iterations=self._int("particles", "iterations", 200),
                seed=self.seed if seed is None else seed,
                exhaustive=self._bool("particles", "exhaustive", False),
                analytic_futures=self._bool("particles", "analytic_futures", False),
            )
        except ValueError as exc:
            raise ConfigError(f"bad [particles] section: {exc}") from exc

    def horizon(self, section: str) -> int:
        return self._int(section, "horizon", 3)

    def start_cell(self, section: str) -> Cell | None:
        raw = self.get(section, "start")
        if raw is None:
            return None
        try:
            return parse_cell(raw)
        except ValueError as exc:
            raise ConfigError(f"key 'start' in [{section}] is not a cell: {raw!r}") from exc

    def validate(self) -> None:
        """Check cross-section consistency; raises :class:`ConfigError`."""
        if "experiment" not in self.sections:
            raise ConfigError("missing section [experiment]")
        solver = self.solver
        if solver == "svim" and "svim" not in self.sections:
            raise ConfigError("solver 'svim' needs a [svim] section")
        if solver == "particles" and "particles" not in self.sections:
            raise ConfigError("solver 'particles' needs a [particles] section")
        if "environment" not in self.sections and self.get("capacity", "channel_csv") is None:
            raise ConfigError("missing section [environment]")


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from exc
    sections = {
        name: {k: v.strip() for k, v in parser.items(name)} for name in parser.sections()
    }
    return ExperimentConfig(sections=sections)


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form: sections and keys in sorted order."""
    lines = []
    for section in sorted(cfg.sections):
        lines.append(f"[{section}]")
        for key in sorted(cfg.sections[section]):
            lines.append(f"{key} = {cfg.sections[section][key]}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()
