"""Flat, versioned run configuration stored as YAML.

Every key is a field of :class:`RunConfig`; unknown keys, a missing or wrong
``version`` and ill-typed values are all :class:`ConfigError`. Dumping and
reloading a config gives back an equal object.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..layers import AGP_BITS, GradMode

CONFIG_VERSION = 1
EXPERIMENTS = ("train", "variance", "regret", "bench")
DATASETS = ("two-moons", "gaussian-blobs", "synthetic-patches")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def _default_bench_sizes():
    return [
        [512, 512, 512],
        [512, 512, 1024],
        [1024, 512, 512],
        [1024, 512, 1024],
        [2048, 512, 512],
        [2048, 512, 1024],
    ]


def _yaml_float(key, v):
    # YAML 1.1 reads "1e-3" (no dot) as a string; accept it as the number it names
    if isinstance(v, str):
        try:
            return float(v)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {v!r}") from None
    return v


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    experiment: str = "train"
    seed: int = 0
    out: str = ""

    # dataset
    dataset: str = "two-moons"
    n_samples: int = 1000
    noise: float = 0.1
    test_fraction: float = 0.3
    dataset_seed: int = 1

    # model: FP first layer, binary layers between hidden sizes, FP head
    hidden: list = field(default_factory=lambda: [32, 32, 32])
    conv: bool = False
    channels: list = field(default_factory=lambda: [8, 8])

    # phase 1: full-precision-gradient QAT on a source task (0 epochs = from scratch)
    pretrain_epochs: int = 30
    pretrain_lr: float = 0.01
    pretrain_rotate: float = 90.0
    pretrain_seed: int = 0

    # phase 2: finetune on the target task under the chosen gradient mode
    mode: str = "agp"
    bits: int = 4
    optimizer: str = "adam"
    lr: float = 0.01
    schedule: str = "constant"
    epochs: int = 20
    batch_size: int = 32
    probe_trials: int = 8

    # variance probe
    variance_snapshots: int = 3
    variance_trials: int = 64

    # regret sweep
    regret_horizon: int = 20000
    regret_dim: int = 20
    regret_sigmas: list = field(default_factory=lambda: [0.1, 0.3, 1.0, 3.0])
    regret_noise: str = "gaussian"
    regret_sgd_lr: float = 0.1
    regret_adam_lr: float = 0.1
    regret_schedule: str = "inv_sqrt"
    regret_lam: float = 0.999

    # benchmark
    bench_sizes: list = field(default_factory=_default_bench_sizes)
    bench_reps: int = 5
    bench_dense_size: int = 1024

    def __post_init__(self):
        self.validate()

    @property
    def grad_mode(self) -> GradMode:
        return GradMode(self.mode)

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            want = {"int": int, "float": (int, float), "str": str, "bool": bool, "list": list}[
                f.type
            ]
            if isinstance(v, bool) and f.type != "bool" or not isinstance(v, want):
                raise ConfigError(f"{f.name}: expected {f.type}, got {v!r}")
        if self.version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {self.version}")
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}")
        if self.dataset not in DATASETS:
            raise ConfigError(f"dataset must be one of {DATASETS}")
        if self.seed < 0 or self.dataset_seed < 0 or self.pretrain_seed < 0:
            raise ConfigError("seeds must be nonnegative")
        if self.dataset == "synthetic-patches" and self.pretrain_rotate:
            raise ConfigError("pretrain_rotate must be 0 for image datasets")
        if self.conv != (self.dataset == "synthetic-patches"):
            raise ConfigError("conv models go with synthetic-patches and MLPs with point data")
        if self.n_samples < 10:
            raise ConfigError("n_samples must be at least 10")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must lie in (0, 1)")
        try:
            mode = GradMode(self.mode)
        except ValueError:
            raise ConfigError(f"mode must be one of {[m.value for m in GradMode]}") from None
        if mode is GradMode.AGP_SCQ and self.bits not in AGP_BITS:
            raise ConfigError(f"agp bits must be one of {AGP_BITS}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError("optimizer must be sgd or adam")
        if self.schedule not in ("constant", "inv_sqrt"):
            raise ConfigError("schedule must be constant or inv_sqrt")
        if self.regret_schedule not in ("constant", "inv_sqrt"):
            raise ConfigError("regret_schedule must be constant or inv_sqrt")
        if self.regret_noise not in ("gaussian", "dither"):
            raise ConfigError("regret_noise must be gaussian or dither")
        if len(self.hidden) < 2 or not all(isinstance(h, int) and h > 0 for h in self.hidden):
            raise ConfigError("hidden needs at least two positive sizes")
        if len(self.channels) < 2 or not all(isinstance(c, int) and c > 0 for c in self.channels):
            raise ConfigError("channels needs at least two positive counts")
        for name in ("epochs", "pretrain_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        for name in ("batch_size", "regret_horizon", "regret_dim", "bench_reps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("probe_trials", "variance_trials"):
            if getattr(self, name) < 2:
                raise ConfigError(f"{name} must be at least 2")
        if self.variance_snapshots < 1:
            raise ConfigError("variance_snapshots must be positive")
        for name in ("lr", "pretrain_lr", "regret_sgd_lr", "regret_adam_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.regret_lam <= 1:
            raise ConfigError("regret_lam must lie in (0, 1]")
        if not self.regret_sigmas or any(
            isinstance(s, bool) or not isinstance(s, (int, float)) or s < 0
            for s in self.regret_sigmas
        ):
            raise ConfigError("regret_sigmas must be nonnegative numbers")
        for s in self.bench_sizes:
            if not (isinstance(s, list) and len(s) == 3 and all(isinstance(v, int) for v in s)):
                raise ConfigError("bench_sizes entries must be [n, k, m] integer triples")
            if min(s) < 64:
                raise ConfigError("bench sizes must be at least 64")
        if self.bench_dense_size and self.bench_dense_size < 64:
            raise ConfigError("bench_dense_size must be 0 or at least 64")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data) -> RunConfig:
        if not isinstance(data, dict):
            raise ConfigError("config must be a mapping of keys to values")
        if "version" not in data:
            raise ConfigError("config must state its version")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(map(str, unknown))}")
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        data = dict(data)
        for k, v in data.items():
            if types[k] == "float":
                data[k] = _yaml_float(k, v)
        if isinstance(data.get("regret_sigmas"), list):
            data["regret_sigmas"] = [_yaml_float("regret_sigmas", v) for v in data["regret_sigmas"]]
        return cls(**data)

    @classmethod
    def from_yaml(cls, text: str) -> RunConfig:
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_yaml(text)

    def save(self, path) -> None:
        Path(path).write_text(self.to_yaml())
