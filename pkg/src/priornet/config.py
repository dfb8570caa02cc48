"""Run configuration files and dataset manifests.

A run config is UTF-8 text of ``key = value`` lines; ``#`` starts a comment.
Keys are the fields of :class:`PriorNetConfig`, :class:`TrainConfig` (whose
``seed`` doubles as the run seed) and the haze synthesis ranges. Unknown or
repeated keys are errors.

A manifest holds one ``path<TAB>path`` pair per line, resolved relative to
the manifest's own directory.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from priornet.errors import ConfigError, DataIOError, FormatError, UsageError
from priornet.model import PriorNetConfig
from priornet.training import TrainConfig


@dataclass(frozen=True)
class SynthRanges:
    A_min: float = 0.7
    A_max: float = 1.0
    beta_min: float = 0.6
    beta_max: float = 1.8

    def __post_init__(self):
        if not (0 <= self.A_min <= self.A_max <= 1):
            raise UsageError("need 0 <= A_min <= A_max <= 1")
        if not (0 <= self.beta_min <= self.beta_max):
            raise UsageError("need 0 <= beta_min <= beta_max")


@dataclass
class RunConfig:
    model: PriorNetConfig = field(default_factory=PriorNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthRanges = field(default_factory=SynthRanges)

    @property
    def seed(self) -> int:
        return self.train.seed


_SECTIONS = {"model": PriorNetConfig, "train": TrainConfig, "synth": SynthRanges}
_KEYS = {f.name: (section, f.type) for section, cls in _SECTIONS.items() for f in dataclasses.fields(cls)}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _convert(raw: str, typ: str):
    if typ == "bool":
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if typ == "int":
        return int(raw)
    if typ == "float":
        return float(raw)
    return raw


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    values: dict[str, dict] = {s: {} for s in _SECTIONS}
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: key {key!r} given twice")
        seen.add(key)
        section, typ = _KEYS[key]
        try:
            values[section][key] = _convert(raw, typ)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for key {key!r}: {exc}") from exc
    try:
        return RunConfig(**{s: cls(**values[s]) for s, cls in _SECTIONS.items()})
    except UsageError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_run_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc
    return parse_run_config(text, str(path))


def load_manifest(path: str | Path) -> list[tuple[Path, Path]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot read manifest {path}: {exc}") from exc
    base = path.parent
    pairs: list[tuple[Path, Path]] = []
    firsts: set[Path] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise FormatError(f"{path}:{lineno}: expected two tab-separated paths")
        a, b = (base / f.strip() for f in fields)
        for p in (a, b):
            if not p.is_file():
                raise DataIOError(f"{path}:{lineno}: file not found: {p}")
        if a in firsts:
            raise FormatError(f"{path}:{lineno}: duplicate entry {a}")
        firsts.add(a)
        pairs.append((a, b))
    return pairs
