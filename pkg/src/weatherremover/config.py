"""Model hyperparameters and the flat ``key = value`` text format.

The defaults are the calibrated configuration (see ``cost.calibrate``):
base width 48, GFN expansion 2, 3x3 resampling convolutions.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from fractions import Fraction
from typing import Any, Mapping

from .errors import ConfigError

QKV_STYLES = ("pw-dw", "pw", "dw", "dw-pw")


@dataclass(frozen=True)
class ModelConfig:
    base_dim: int = 48
    enc_blocks: tuple[int, int, int] = (4, 6, 6)
    bottleneck_blocks: int = 8
    dec_blocks: tuple[int, int, int] = (6, 6, 4)
    refine_blocks: int = 4
    enc_heads: tuple[int, int, int] = (4, 8, 12)
    bottleneck_heads: int = 16
    dec_heads: tuple[int, int, int] = (12, 8, 4)
    refine_heads: int = 4
    sra_size: int = 7
    gfn_expansion: Fraction = Fraction(2)
    gate_dstage: bool = True
    gate_gfn: bool = True
    decoder_gating: bool = False
    in_channels: int = 3
    resample_kernel: int = 3
    qkv_style: str = "pw-dw"
    use_sra: bool = True
    learn_temperature: bool = True

    def __post_init__(self):
        object.__setattr__(self, "gfn_expansion", Fraction(self.gfn_expansion))
        for name in ("enc_blocks", "dec_blocks", "enc_heads", "dec_heads"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        self.validate()

    # widths: encoder D, 2D, 4D; bottleneck 8D; decoder 4D, 2D, D
    @property
    def enc_widths(self) -> tuple[int, int, int]:
        D = self.base_dim
        return (D, 2 * D, 4 * D)

    @property
    def dec_widths(self) -> tuple[int, int, int]:
        D = self.base_dim
        return (4 * D, 2 * D, D)

    @property
    def latent_width(self) -> int:
        return 8 * self.base_dim

    def hidden(self, width: int) -> int:
        """GFN branch width for a block of the given width."""
        return int(width * self.gfn_expansion)

    def validate(self) -> None:
        if self.base_dim <= 0 or self.base_dim % 2:
            raise ConfigError(f"base_dim must be a positive even integer, got {self.base_dim}")
        if len(self.enc_blocks) != 3 or len(self.dec_blocks) != 3:
            raise ConfigError("enc_blocks and dec_blocks need exactly three entries")
        if len(self.enc_heads) != 3 or len(self.dec_heads) != 3:
            raise ConfigError("enc_heads and dec_heads need exactly three entries")
        counts = (*self.enc_blocks, self.bottleneck_blocks, *self.dec_blocks, self.refine_blocks)
        if min(counts) < 1:
            raise ConfigError("every stage needs at least one block")
        pairs = list(zip(self.enc_heads, self.enc_widths)) + [(self.bottleneck_heads, self.latent_width)]
        pairs += list(zip(self.dec_heads, self.dec_widths)) + [(self.refine_heads, self.base_dim)]
        for heads, width in pairs:
            if heads < 1 or width % heads:
                raise ConfigError(f"{heads} heads do not divide stage width {width}")
        if self.sra_size < 1:
            raise ConfigError("sra_size must be positive")
        if self.gfn_expansion <= 0 or self.hidden(self.base_dim) < 1:
            raise ConfigError(f"gfn_expansion {self.gfn_expansion} gives an empty GFN")
        if self.in_channels != 3:
            raise ConfigError("only 3-channel images are supported")
        if self.resample_kernel not in (1, 3):
            raise ConfigError("resample_kernel must be 1 or 3")
        if self.qkv_style not in QKV_STYLES:
            raise ConfigError(f"qkv_style must be one of {QKV_STYLES}")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def tiny(cls, **changes) -> "ModelConfig":
        """Desk-scale model: width 8, two blocks per stage."""
        base = dict(
            base_dim=8, enc_blocks=(2, 2, 2), bottleneck_blocks=2, dec_blocks=(2, 2, 2),
            refine_blocks=2, enc_heads=(1, 2, 4), bottleneck_heads=8, dec_heads=(4, 2, 1),
            refine_heads=1,
        )
        base.update(changes)
        return cls(**base)

    # ------------------------------------------------------------ text form

    def to_text(self) -> str:
        return format_fields(self)

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        return cls.from_mapping(parse_kv_text(text))

    @classmethod
    def from_mapping(cls, values: Mapping[str, str], base: "ModelConfig | None" = None) -> "ModelConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown model config keys: {', '.join(unknown)}")
        parsed = {k: parse_value(known[k].type, v, k) for k, v in values.items()}
        if base is None:
            return cls(**parsed)
        return dataclasses.replace(base, **parsed)


def parse_value(annotation: Any, raw: str, key: str = "?"):
    raw = raw.strip()
    ann = str(annotation)
    try:
        if ann.startswith("tuple"):
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
        if ann == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if ann == "int":
            return int(raw)
        if ann == "float":
            return float(raw)
        if ann == "Fraction":
            return Fraction(raw)
        if ann.startswith("str"):
            return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {raw!r}") from e
    raise ConfigError(f"cannot parse field {key} of type {ann}")


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


def format_fields(obj) -> str:
    """Canonical text: one ``key = value`` line per field, in declaration order."""
    return "".join(f"{f.name} = {format_value(getattr(obj, f.name))}\n" for f in fields(obj))


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment; duplicates are errors."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out
