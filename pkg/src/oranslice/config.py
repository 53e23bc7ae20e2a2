"""Experiment configuration: dataclasses, INI loading with line-numbered errors, presets.

The file format is INI with one section per component::

    [radio-env]
    total_rbs = 50
    [slices]
    embb_lambda_bps = 2e6
    [trainer-harness]
    n_actors = 6

Unknown sections or keys are errors. Every key is optional; omitted keys keep
the defaults below, which are the full-scale settings.
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .radio import RadioConfig, SliceTargets

BANDWIDTH_PRESETS = {
    "low": {"total_rbs": 50, "total_bandwidth_hz": 10e6},
    "high": {"total_rbs": 200, "total_bandwidth_hz": 20e6},
}


class ConfigError(ValueError):
    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path, self.line = path, line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


@dataclass(frozen=True)
class TrainConfig:
    n_iterations: int = 100
    n_actors: int = 6
    n_evaluations: int = 10
    batch_size: int = 128
    buffer_capacity: int = 1_000_000
    gamma: float = 0.99
    beta_temp: float = 0.2
    polyak_mix: float = 0.005
    lr: float = 1e-4
    convergence_window: int = 10
    convergence_threshold: float = 1e-3
    seed: int = 0
    episode_length: int = 50
    updates_per_iteration: int = 1
    parallel_rollouts: bool = False
    auto_temperature: bool = False

    def __post_init__(self):
        for name in ("n_iterations", "n_actors", "n_evaluations", "batch_size", "episode_length",
                     "updates_per_iteration", "convergence_window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.buffer_capacity < self.batch_size:
            raise ValueError("buffer_capacity must be >= batch_size")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.beta_temp < 0:
            raise ValueError("beta_temp must be >= 0")
        if not 0.0 < self.polyak_mix <= 1.0:
            raise ValueError("polyak_mix must lie in (0, 1]")
        if self.lr <= 0:
            raise ValueError("lr must be positive")


@dataclass(frozen=True)
class ExperimentConfig:
    radio: RadioConfig = field(default_factory=RadioConfig)
    slices: SliceTargets = field(default_factory=SliceTargets)
    train: TrainConfig = field(default_factory=TrainConfig)
    mode: str = "attention"
    bw: str = "low"
    total_bandwidth_hz: float = 10e6
    population_concentration: float = 1.0
    compare_seeds: int = 5
    final_eval_episodes: int = 5

    def __post_init__(self):
        if self.mode not in ("attention", "baseline"):
            raise ValueError(f"mode must be attention or baseline, got {self.mode!r}")
        if self.bw not in (*BANDWIDTH_PRESETS, "custom"):
            raise ValueError(f"bw must be low, high or custom, got {self.bw!r}")
        if self.population_concentration <= 0:
            raise ValueError("population_concentration must be positive")
        if self.compare_seeds < 1 or self.final_eval_episodes < 0:
            raise ValueError("compare_seeds must be >= 1 and final_eval_episodes >= 0")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def with_bandwidth(self, bw: str) -> "ExperimentConfig":
        preset = BANDWIDTH_PRESETS[bw]
        radio = dataclasses.replace(self.radio, total_rbs=preset["total_rbs"])
        return dataclasses.replace(self, radio=radio, bw=bw, total_bandwidth_hz=preset["total_bandwidth_hz"])

    def to_dict(self) -> dict[str, dict[str, Any]]:
        top = {k: getattr(self, k) for k in _EXPERIMENT_KEYS}
        return {
            "radio-env": dataclasses.asdict(self.radio),
            "slices": dataclasses.asdict(self.slices),
            "trainer-harness": dataclasses.asdict(self.train),
            "experiment": top,
        }


_EXPERIMENT_KEYS = ("mode", "bw", "total_bandwidth_hz", "population_concentration",
                    "compare_seeds", "final_eval_episodes")
_SECTIONS = {
    "radio-env": RadioConfig,
    "slices": SliceTargets,
    "trainer-harness": TrainConfig,
    "experiment": None,
}


def desk_config(seed: int = 0, mode: str = "attention") -> ExperimentConfig:
    """Reduced scale used by the acceptance suite: 3 DUs, 10 UEs, 20 RBs."""
    radio = RadioConfig(total_rbs=20, n_ues=10)
    # with a handful of MTC devices a 10% band admits no integer count; widen it
    slices = SliceTargets(mtc_epsilon_frac=0.2)
    train = TrainConfig(n_iterations=100, n_actors=3, n_evaluations=5, batch_size=128,
                        updates_per_iteration=10, seed=seed)
    return ExperimentConfig(radio=radio, slices=slices, train=train, mode=mode, bw="custom",
                            total_bandwidth_hz=4e6)


def _coerce(raw: str, typ: Any, key: str):
    typ = {"int": int, "float": float, "bool": bool, "str": str}.get(typ, typ) if isinstance(typ, str) else typ
    s = raw.strip()
    if typ is bool:
        low = s.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if typ is int:
        try:
            v = float(s)
        except ValueError:
            raise ValueError(f"{key}: expected an integer, got {raw!r}") from None
        if not v.is_integer():
            raise ValueError(f"{key}: expected an integer, got {raw!r}")
        return int(v)
    if typ is float:
        try:
            return float(s)
        except ValueError:
            raise ValueError(f"{key}: expected a number, got {raw!r}") from None
    return s


def _key_lines(text: str) -> dict[tuple[str, str], int]:
    lines: dict[tuple[str, str], int] = {}
    section = None
    for no, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            lines[(section, "")] = no
            continue
        m = re.match(r"\s*([^#;=:\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            lines[(section, m.group(1).strip().lower())] = no
    return lines


def load_config(path: str | Path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse an INI file on top of ``base``; errors carry the offending line."""
    path = str(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path) from None
    return parse_config(text, path, base)


def parse_config(text: str, path: str = "<config>", base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        parser.read_string(text, source=path)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        msg = getattr(exc, "message", str(exc)).splitlines()[0]
        raise ConfigError(msg, path, line) from None
    lines = _key_lines(text)
    values: dict[str, dict[str, Any]] = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]", path, lines.get((section, "")))
        cls = _SECTIONS[section]
        if cls is None:
            types = {k: type(getattr(base, k)) for k in _EXPERIMENT_KEYS}
        else:
            types = {f.name: f.type for f in dataclasses.fields(cls)}
        out = values.setdefault(section, {})
        for key, raw in parser.items(section):
            line = lines.get((section, key))
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in [{section}]", path, line)
            try:
                out[key] = _coerce(raw, types[key], key)
            except ValueError as exc:
                raise ConfigError(str(exc), path, line) from None

    def build(section: str, current):
        changes = values.get(section, {})
        try:
            return dataclasses.replace(current, **changes)
        except ValueError as exc:
            line = _blame(str(exc), section, changes, lines)
            raise ConfigError(f"[{section}] {exc}", path, line) from None

    radio = build("radio-env", base.radio)
    slices = build("slices", base.slices)
    train = build("trainer-harness", base.train)
    top = values.get("experiment", {})
    try:
        cfg = dataclasses.replace(base, radio=radio, slices=slices, train=train, **top)
    except ValueError as exc:
        raise ConfigError(f"[experiment] {exc}", path, _blame(str(exc), "experiment", top, lines)) from None
    rbs_given = "total_rbs" in values.get("radio-env", {})
    if top.get("bw") in BANDWIDTH_PRESETS:
        preset = BANDWIDTH_PRESETS[top["bw"]]
        if rbs_given and radio.total_rbs != preset["total_rbs"]:
            raise ConfigError(f"total_rbs = {radio.total_rbs} contradicts bw = {top['bw']} "
                              f"({preset['total_rbs']} RBs)", path, lines.get(("radio-env", "total_rbs")))
        bw_hz = top.get("total_bandwidth_hz", preset["total_bandwidth_hz"])
        cfg = dataclasses.replace(cfg.with_bandwidth(top["bw"]), total_bandwidth_hz=bw_hz)
    elif rbs_given and "bw" not in top:
        cfg = dataclasses.replace(cfg, bw="custom")
    return cfg


def _blame(message: str, section: str, changes: dict, lines) -> int | None:
    """Best-effort line of the key an invariant message mentions."""
    for key in changes:
        if key in message:
            return lines.get((section, key))
    if changes:
        return lines.get((section, next(iter(changes))))
    return lines.get((section, ""))


def dump_config(cfg: ExperimentConfig) -> str:
    parts = []
    for section, body in cfg.to_dict().items():
        parts.append(f"[{section}]")
        for k, v in body.items():
            parts.append(f"{k} = {v!r}" if isinstance(v, float) else f"{k} = {v}")
        parts.append("")
    return "\n".join(parts)
