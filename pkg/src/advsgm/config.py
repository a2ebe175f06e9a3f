"""Training configuration shared by the trainer, the adversarial module and
the baselines."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields

from advsgm.numerics import ClipBounds

ALGORITHMS = ("advsgm", "sgm", "dp-sgm", "dp-asgm")
NOISE_PLACEMENTS = ("sample", "row")


class ConfigError(ValueError):
    """Configuration that cannot run on the given graph."""


@dataclass(frozen=True)
class TrainConfig:
    algo: str = "advsgm"
    B: int = 128
    k: int = 5
    r: int = 128
    C: float = 1.0
    sigma: float = 5.0
    sigma_g: float = 1.0
    eta_d: float = 0.1
    eta_g: float = 0.1
    n_epoch: int = 50
    n_D: int = 15
    n_G: int = 5
    target_eps: float | None = 6.0
    target_delta: float = 1e-5
    a: float = 1e-5
    b: float = 120.0
    seed: int = 0
    # where the discriminator's Gaussian noise enters (see adversarial module)
    noise_placement: str = "row"
    fixed_lambda: float = 1.0
    plain_sigmoid: bool = False
    project_rows: bool = False
    alpha_max: int = 64

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"unknown algo {self.algo!r}; choose from {ALGORITHMS}")
        if self.noise_placement not in NOISE_PLACEMENTS:
            raise ConfigError(f"noise_placement must be one of {NOISE_PLACEMENTS}")
        for name in ("B", "k", "r", "n_epoch", "n_D"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.n_G < 0:
            raise ConfigError("n_G must be non-negative")
        for name in ("C", "eta_d", "eta_g"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.sigma < 0 or self.sigma_g < 0:
            raise ConfigError("noise scales must be non-negative")
        if self.target_eps is not None and not self.target_eps > 0:
            raise ConfigError("target_eps must be positive")
        if not 0 < self.target_delta < 1:
            raise ConfigError("target_delta must lie in (0, 1)")
        if self.algo == "dp-asgm" and self.fixed_lambda < 0:
            raise ConfigError("fixed_lambda must be non-negative")
        if self.alpha_max < 2:
            raise ConfigError("alpha_max must be >= 2")
        try:
            ClipBounds(self.a, self.b)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def bounds(self) -> ClipBounds | None:
        if self.algo == "sgm" and self.plain_sigmoid:
            return None
        return ClipBounds(self.a, self.b)

    @property
    def private(self) -> bool:
        """False for runs with no mechanism: SGM, or sigma = 0."""
        return self.algo != "sgm" and self.sigma > 0

    @property
    def alpha_grid(self) -> tuple[int, ...]:
        return tuple(range(2, self.alpha_max + 1))

    def check_graph(self, num_nodes: int, num_edges: int) -> None:
        if self.B > num_edges:
            raise ConfigError(f"B = {self.B} exceeds the {num_edges} training edges")
        if self.B * self.k > num_nodes:
            raise ConfigError(f"B*k = {self.B * self.k} exceeds |V| = {num_nodes}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()
