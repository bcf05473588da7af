from __future__ import annotations

from dataclasses import asdict, dataclass

from ..manifold import check_curvature

ARCHITECTURES = ("gcn", "sage", "gat")
GEOMETRIES = ("euclidean", "hyperbolic")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    arch: str
    geometry: str
    in_dim: int
    layers: int = 2
    hidden_dim: int = 256
    heads: int = 8
    dropout: float = 0.1
    curvature: float | None = None
    classes: int = 7
    klein_mode: str = "unweighted"
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        if self.geometry not in GEOMETRIES:
            raise ConfigError(f"geometry must be one of {GEOMETRIES}, got {self.geometry!r}")
        if self.layers < 1:
            raise ConfigError("layers must be >= 1")
        if self.in_dim < 1 or self.hidden_dim < 1 or self.classes < 1:
            raise ConfigError("dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.arch == "gat" and (self.heads < 1 or self.hidden_dim % self.heads):
            raise ConfigError(f"hidden_dim {self.hidden_dim} not divisible by heads {self.heads}")
        if self.geometry == "hyperbolic":
            if self.curvature is None:
                raise ConfigError("hyperbolic models need a curvature")
            object.__setattr__(self, "curvature", check_curvature(self.curvature))
        elif self.curvature is not None:
            raise ConfigError("curvature is only meaningful for hyperbolic models")
        if self.klein_mode not in ("unweighted", "lorentz_weighted"):
            raise ConfigError(f"unknown klein_mode {self.klein_mode!r}")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.heads

    @property
    def name(self) -> str:
        prefix = "h" if self.geometry == "hyperbolic" else ""
        return f"{prefix}{self.arch}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)
