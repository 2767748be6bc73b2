"""Run configuration: one record echoed verbatim into every artifact.

Config files are plain ``key = value`` text with ``#`` comments; flags
given on the command line override file values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path


@dataclass
class RunConfig:
    seed: int = 0
    height: int = 64
    width: int = 64
    classes: int = 6
    reduce_div: int = 4        # attention branch channel reduction C -> C/reduce_div
    alpha: int = 150           # class-gate ascending ratio
    gh: int = 4                # region grid at 1/8 feature scale; 8x8 features
    gw: int = 4                # degenerate to single-pixel regions under an 8x8 grid
    lam_ce: float = 1.0
    lam_cls: float = 0.5
    lam_aux: float = 0.4
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    power: float = 0.9
    iterations: int = 2000
    batch: int = 4
    zero_attention: bool = False

    def to_text(self) -> str:
        lines = [f"{f.name} = {getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        cfg = cls()
        known = {f.name: f.type for f in fields(cls)}
        for key, value in parse_key_values(text).items():
            if key in known:
                setattr(cfg, key, _convert(getattr(cfg, key), value))
        return cfg


def parse_key_values(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line or "=" not in line:
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def read_config_file(path: str | Path) -> dict[str, str]:
    return parse_key_values(Path(path).read_text())


def _convert(current, value: str):
    if isinstance(current, bool):
        return value.lower() in ("1", "true", "yes", "on")
    return type(current)(value)
