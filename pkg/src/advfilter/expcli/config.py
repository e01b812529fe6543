"""Experiment configuration: a UTF-8 ``key=value`` file with dotted sections.

Top-level keys configure the protocol (``scenario``, ``repeats``, ...). The
sections ``synthetic``, ``train``, ``evasion``, ``backdoor``, ``spatial`` and
``cnn`` map onto the corresponding library dataclasses, e.g.
``evasion.alpha0=100`` or ``synthetic.noise_std=0.3``.
"""
from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from advfilter.attacks import BackdoorConfig, EvasionConfig
from advfilter.eegdata import SyntheticSpec
from advfilter.errors import ConfigError
from advfilter.victims import CnnArch, ModelSpec, TrainConfig
from advfilter.victims.cnn import PRESETS

ALPHA_GRID = (0.1, 1.0, 10.0, 50.0, 100.0, 200.0, 500.0, 1000.0, 10000.0)
RATIO_GRID = tuple(round(0.01 * i, 2) for i in range(1, 11))
MODEL_TOKENS = ("csp", "xdawn") + tuple(f"cnn-{p}" for p in PRESETS)


@dataclass(frozen=True)
class SpatialOptions:
    n_filters: int = 4
    target_class: int = 1
    head_lr: float = 1e-2


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "runs"
    workers: int = 1
    dataset: str = ""  # ETRC path; empty means generate from ``synthetic``
    scenario: str = "within"
    repeats: int = 10
    train_fraction: float = 0.8
    validation_fraction: float = 0.25
    subjects: str = "all"  # "all", "rotate" (one subject per repeat) or a comma list
    models: tuple[str, ...] = ("csp", "cnn-standard")
    alpha_grid: tuple[float, ...] = ALPHA_GRID
    ratio_grid: tuple[float, ...] = RATIO_GRID
    reference_alpha0: bool = True  # also run an alpha=0 filter for the stealth comparison
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    evasion: EvasionConfig = field(default_factory=EvasionConfig)
    backdoor: BackdoorConfig = field(default_factory=BackdoorConfig)
    spatial: SpatialOptions = field(default_factory=SpatialOptions)
    cnn: CnnArch = field(default_factory=CnnArch)

    def __post_init__(self):
        if self.scenario not in ("within", "cross"):
            raise ConfigError(f"scenario must be 'within' or 'cross', got {self.scenario!r}")
        if self.repeats < 1:
            raise ConfigError("repeats must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for name in ("train_fraction", "validation_fraction"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigError(f"{name} must be in (0, 1), got {v}")
        bad = [m for m in self.models if m not in MODEL_TOKENS]
        if bad or not self.models:
            raise ConfigError(f"unknown model(s) {bad}; choose from {MODEL_TOKENS}")
        if self.subjects not in ("all", "rotate"):
            try:
                [int(s) for s in self.subjects.split(",")]
            except ValueError:
                raise ConfigError(f"subjects must be 'all', 'rotate' or a comma list, got {self.subjects!r}") from None

    def model_spec(self, token: str) -> ModelSpec:
        sp = self.spatial
        if token.startswith("cnn-"):
            return ModelSpec("cnn", arch=replace(self.cnn, preset=token[4:]))
        return ModelSpec(token, n_filters=sp.n_filters, target_class=sp.target_class, head_lr=sp.head_lr)

    def repeat_seed(self, repeat: int) -> int:
        return self.seed + repeat

    # -- flat view ---------------------------------------------------------
    def to_flat(self) -> dict[str, str]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if dataclasses.is_dataclass(v):
                for g in fields(v):
                    if g.name in _SKIP.get(f.name, ()):
                        continue
                    out[f"{f.name}.{g.name}"] = _format(getattr(v, g.name))
            else:
                out[f.name] = _format(v)
        return out

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in sorted(self.to_flat().items()))


# fields that are not user-settable (set per repeat or structural)
_SKIP = {"synthetic": ("templates",), "evasion": ("seed",), "backdoor": ("seed",), "cnn": ("preset",)}


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, (tuple, list)):
        return ",".join(_format(x) for x in v)
    return str(v)


def _coerce(tp, text: str, key: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if type(None) in args and text.strip().lower() in ("none", ""):
            return None
        return _coerce(next(a for a in args if a is not type(None)), text, key)
    if origin is tuple:
        args = typing.get_args(tp)
        items = [s.strip() for s in text.split(",") if s.strip()]
        inner = args[0] if args else str
        return tuple(_coerce(inner, s, key) for s in items)
    try:
        if tp is bool:
            low = text.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if tp in (int, float, str):
            return tp(text.strip()) if tp is not str else text.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {tp.__name__}") from None
    raise ConfigError(f"{key}: unsupported option type")


def _hints(cls) -> dict:
    return typing.get_type_hints(cls)


def apply_overrides(cfg: ExperimentConfig, pairs: dict[str, str]) -> ExperimentConfig:
    """Return ``cfg`` with dotted ``key -> text`` overrides applied."""
    top_hints = _hints(ExperimentConfig)
    top, sections = {}, {}
    for key, text in pairs.items():
        name, _, sub = key.partition(".")
        if name not in top_hints:
            raise ConfigError(f"unknown config key {key!r}")
        section_cls = top_hints[name]
        if dataclasses.is_dataclass(section_cls):
            hints = _hints(section_cls)
            if not sub or sub not in hints or sub in _SKIP.get(name, ()):
                raise ConfigError(f"unknown config key {key!r}")
            sections.setdefault(name, {})[sub] = _coerce(hints[sub], text, key)
        elif sub:
            raise ConfigError(f"unknown config key {key!r}")
        else:
            top[name] = _coerce(top_hints[name], text, key)
    try:
        for name, changes in sections.items():
            top[name] = replace(getattr(cfg, name), **changes)
        return replace(cfg, **top)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        pairs[key.strip()] = value.strip()
    return pairs


def load_config(path=None, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (later wins)."""
    pairs = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
        pairs.update(parse_config_text(text, str(p)))
    pairs.update(overrides or {})
    return apply_overrides(ExperimentConfig(), pairs)
