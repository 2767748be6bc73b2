"""Region geometry for region-wise attention and pooling."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import PartitionError


@dataclass(frozen=True)
class PartitionSpec:
    """A G_h x G_w grid of regions, each P_h x P_w pixels.

    Valid for a feature map of extent (G_h*P_h) x (G_w*P_w); anything
    else is a hard error rather than implicit padding, so permutation
    inverses and complexity accounting stay exact.
    """
    g_h: int
    g_w: int
    p_h: int
    p_w: int

    def __post_init__(self):
        for name, v in (("g_h", self.g_h), ("g_w", self.g_w),
                        ("p_h", self.p_h), ("p_w", self.p_w)):
            if v < 1:
                raise PartitionError(f"{name} must be >= 1, got {v}")

    @property
    def regions(self) -> int:
        return self.g_h * self.g_w

    @property
    def positions(self) -> int:
        return self.p_h * self.p_w

    def validate(self, h: int, w: int) -> None:
        if self.g_h * self.p_h != h or self.g_w * self.p_w != w:
            raise PartitionError(
                f"partition {self.g_h}x{self.g_w} of {self.p_h}x{self.p_w} regions "
                f"does not tile a {h}x{w} plane")

    @classmethod
    def from_grid(cls, g_h: int, g_w: int, h: int, w: int) -> "PartitionSpec":
        """Derive pixel extents from a grid count and a feature size."""
        if g_h < 1 or g_w < 1 or h % g_h or w % g_w:
            raise PartitionError(f"grid {g_h}x{g_w} does not divide plane {h}x{w}")
        return cls(g_h, g_w, h // g_h, w // g_w)
