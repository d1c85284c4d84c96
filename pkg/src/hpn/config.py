"""Run configuration: a versioned JSON document with a closed key set."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

CONFIG_VERSION = 1
BACKEND_NAMES = ("oracle", "oracle_sdf", "noisy_oracle", "retrieval", "external")


@dataclass
class RunConfig:
    """Every knob of a reconstruction / evaluation run.

    ``backends`` maps a patch size (as a string) or ``"default"`` to a backend
    name; ``banks`` maps a patch size to an HPNK file; ``external`` maps a
    patch size to a peer command line.
    """

    version: int = CONFIG_VERSION
    scene: str | None = None
    scenes_dir: str | None = None
    seed: int = 0
    image_size: int = 256
    grid_res: int = 64
    levels: list = field(default_factory=lambda: [256, 64, 32])
    strides: dict = field(default_factory=dict)
    backends: dict = field(default_factory=lambda: {"default": "oracle"})
    banks: dict = field(default_factory=dict)
    bank_scenes: str | None = None
    bank_stride: dict = field(default_factory=dict)
    bank_fraction: float = 1.0
    bank_seed: int = 0
    external: dict = field(default_factory=dict)
    logit: float = 10.0
    flip_p: float = 0.1
    noise_seed: int = 0
    tau: float = 0.5
    tau_sdf: float = -0.02
    beta: float = 0.05
    eps: float | None = None
    d_thresh: float = 0.01
    n_samples: int = 10_000
    iou_samples: int = 100_000
    eval_seed: int = 0
    output_dir: str = "out"
    deterministic: bool = True
    workers: int | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {self.version}")
        if not self.levels:
            raise ValueError("levels must not be empty")
        self.levels = [int(n) for n in self.levels]
        for n in self.levels:
            if not 1 <= n <= self.image_size:
                raise ValueError(f"level {n} outside [1, image_size={self.image_size}]")
        if sum(n == self.image_size for n in self.levels) > 1:
            raise ValueError("at most one level may cover the whole image")
        for n in self.levels:
            name = self.backend_for(n)
            if name not in BACKEND_NAMES:
                raise ValueError(f"unknown backend {name!r} for level {n}")
            if name == "external" and str(n) not in self.external:
                raise ValueError(f"level {n} uses an external backend but has no command")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.grid_res < 2:
            raise ValueError("grid_res must be >= 2")
        if not 0.0 < self.bank_fraction <= 1.0:
            raise ValueError("bank_fraction must lie in (0, 1]")

    def backend_for(self, n: int) -> str:
        return self.backends.get(str(n), self.backends.get("default", "oracle"))

    def stride_for(self, n: int) -> int | None:
        s = self.strides.get(str(n))
        return None if s is None else int(s)

    def visibility_eps(self) -> float:
        return self.eps if self.eps is not None else 2.0 / self.grid_res

    def worker_count(self) -> int:
        return self.workers if self.workers else (os.cpu_count() or 1)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def with_overrides(self, **kw) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in kw.items() if v is not None})
        return RunConfig.from_dict(d)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def load_config(path) -> RunConfig:
    return RunConfig.from_dict(json.loads(Path(path).read_text()))
