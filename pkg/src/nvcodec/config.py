"""Training and codec configuration with a small key=value file format."""

from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import DataError
from .intra import TOTAL_STRIDE


@dataclass
class TrainConfig:
    lambda1: float = 10.0
    lambda2: float = 1.0
    tv_weight: float = 0.1
    lr: float = 1e-4
    # the joint stage moves every parameter group at once and diverges at
    # the pretrain rate; 0 means "use lr"
    lr_joint: float = 0.0
    lr_halving_epochs: int = 30
    unroll: int = 5
    crop: int = 192
    batch: int = 1
    epochs: int = 1
    steps_intra: int = 100
    steps_flow: int = 50
    # residual-codec warmup on uncompressed pairs before the joint stage
    steps_warmup: int = 0
    steps_joint: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.unroll < 2:
            raise DataError(f"unroll length must be at least 2, got {self.unroll}")
        if self.crop % TOTAL_STRIDE:
            raise DataError(
                f"crop {self.crop} not divisible by the model stride {TOTAL_STRIDE}"
            )
        if self.lr <= 0:
            raise DataError("learning rate must be positive")
        if self.lr_joint < 0:
            raise DataError("joint learning rate must not be negative")

    def lr_at_epoch(self, epoch: int, base: float = 0.0) -> float:
        rate = base if base > 0 else self.lr
        return rate * 0.5 ** (epoch // self.lr_halving_epochs)


@dataclass
class CodecConfig:
    gop: int = 8
    structure: str = "IPPP"
    checkpoint: str = ""

    def __post_init__(self):
        if self.gop < 1:
            raise DataError(f"GOP length must be at least 1, got {self.gop}")
        if self.structure != "IPPP":
            raise DataError(f"unsupported structure {self.structure!r}")


_CONFIG_TYPES = {
    "train": TrainConfig,
    "codec": CodecConfig,
}


def parse_config_file(path: str, kind: str = "train"):
    """Reads ``key = value`` lines; ``#`` starts a comment; blank lines skip."""
    cls = _CONFIG_TYPES[kind]
    field_types = {f.name: f.type for f in fields(cls)}
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key = value, got {raw.rstrip()!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if key not in field_types:
                raise DataError(f"{path}:{lineno}: unknown option {key!r}")
            kind_name = field_types[key]
            try:
                if kind_name == "int":
                    values[key] = int(value)
                elif kind_name == "float":
                    values[key] = float(value)
                else:
                    values[key] = value
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return cls(**values)
