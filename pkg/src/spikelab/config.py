"""Experiment configuration: a flat ``section.key = value`` text format.

Example::

    # comments start with '#'
    seed = 1
    init.kind = ikun_v2
    train.lr = 0.001
    data.source = synthetic

Every key has a default, so an empty file is a complete configuration.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ConfigError, ParameterError
from .init import INIT_KINDS, InitScheme
from .network import ENCODERS, MODES
from .neuron import NEURON_MODELS, RESET_MODES, SURROGATE_KINDS, NeuronSpec, SurrogateSpec
from .train import TrainConfig


@dataclass(frozen=True)
class DataConfig:
    source: str = "fashion"
    path: str = "data/fashion-mnist"
    train_size: int = 10000
    test_size: int = 2000
    subset_seed: int = 0


@dataclass(frozen=True)
class NetConfig:
    T: int = 4
    encoder: str = "constant_current"


@dataclass(frozen=True)
class InitConfig:
    kind: str = "ikun_v2"
    alpha: float = 2.0
    fixed_std: float = 0.05
    calibrate: bool = False
    calib_size: int = 256


@dataclass(frozen=True)
class HessianConfig:
    enabled: bool = True
    k: int = 50
    probes: int = 100
    max_iters: int = 100
    tol: float = 1e-4
    lanczos_steps: int = 30
    density_probes: int = 1
    batch_size: int = 512
    rel_eps: float = 1e-3
    mode: str = "spiking"


@dataclass(frozen=True)
class VarpropConfig:
    depth: int = 10
    width: int = 128
    batch: int = 256
    T: int = 8


CHOICES = {
    "data.source": ("fashion", "synthetic"),
    "net.encoder": ENCODERS,
    "neuron.model": NEURON_MODELS,
    "neuron.reset_mode": RESET_MODES,
    "surrogate.kind": SURROGATE_KINDS,
    "init.kind": INIT_KINDS,
    "train.optimizer": ("sgd", "adam"),
    "hessian.mode": MODES,
}

# TrainConfig.seed is driven by the top-level seed
_HIDDEN = {"train.seed"}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    net: NetConfig = field(default_factory=NetConfig)
    neuron: NeuronSpec = field(default_factory=NeuronSpec)
    surrogate: SurrogateSpec = field(default_factory=lambda: SurrogateSpec("sigmoid", 4.0))
    init: InitConfig = field(default_factory=InitConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    hessian: HessianConfig = field(default_factory=HessianConfig)
    varprop: VarpropConfig = field(default_factory=VarpropConfig)

    @property
    def scheme(self) -> InitScheme:
        return InitScheme(self.init.kind, self.init.alpha, self.init.fixed_std)

    def with_overrides(self, overrides: dict[str, str]) -> "ExperimentConfig":
        return build_config(overrides, base=self)

    def items(self) -> dict[str, object]:
        """Flat ``{dotted key: value}`` view of every setting."""
        out: dict[str, object] = {"seed": self.seed}
        for sec in _SECTIONS:
            obj = getattr(self, sec)
            for f in fields(obj):
                if f"{sec}.{f.name}" not in _HIDDEN:
                    out[f"{sec}.{f.name}"] = getattr(obj, f.name)
        return out


_SECTIONS = ("data", "net", "neuron", "surrogate", "init", "train", "hessian", "varprop")


def _defaults() -> dict[str, object]:
    return ExperimentConfig().items()


def valid_keys() -> list[str]:
    return list(_defaults())


def _suggest(word: str, options) -> str:
    close = difflib.get_close_matches(word, list(options), n=3, cutoff=0.5)
    return f"; did you mean {' or '.join(repr(c) for c in close)}?" if close else ""


def _coerce(key: str, raw: str, default):
    text = raw.strip()
    if key in CHOICES:
        if text not in CHOICES[key]:
            raise ConfigError(f"{key}: invalid value {text!r}; expected one of {', '.join(CHOICES[key])}"
                              f"{_suggest(text, CHOICES[key])}")
        return text
    if isinstance(default, bool):
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean (true/false), got {text!r}")
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {text!r}") from None
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    return text


def parse_lines(text: str, source: str = "<config>") -> dict[str, str]:
    """Raw ``{key: value}`` pairs from config text; later lines win."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_config(overrides: dict[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    base = base or ExperimentConfig()
    current = base.items()
    defaults = _defaults()
    for key, raw in overrides.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {key!r}{_suggest(key, defaults)}")
        current[key] = _coerce(key, raw, defaults[key])
    if "train.optimizer" in overrides and "train.lr" not in overrides:
        current["train.lr"] = None  # take the new optimizer's default rate
    sections = {}
    try:
        for sec in _SECTIONS:
            vals = {k.split(".", 1)[1]: v for k, v in current.items() if k.startswith(sec + ".")}
            sections[sec] = replace(getattr(base, sec), **vals)
        sections["train"] = replace(sections["train"], seed=current["seed"])
        cfg = ExperimentConfig(seed=current["seed"], **sections)
        cfg.scheme  # validates alpha / fixed_std
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def parse_config(path: str | Path | None = None, overrides: list[str] | None = None) -> ExperimentConfig:
    """Read an optional config file, then apply ``key=value`` overrides in order."""
    pairs: dict[str, str] = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        pairs.update(parse_lines(text, str(path)))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    return build_config(pairs)


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for key, value in cfg.items().items():
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
