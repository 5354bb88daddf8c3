from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..polcore import CHANNEL_ANGLES, FilterAngle

# Mosaic conventions, keyed by the code stored in file headers. Each entry is
# the 2x2 tile indexed [y % 2][x % 2], given as channel indices into
# CHANNEL_ANGLES (0 -> 0deg, 1 -> 45deg, 2 -> 90deg, 3 -> 135deg).
MOSAICS = {
    0: ((0, 1), (3, 2)),  # [0, 45; 135, 90]
    1: ((2, 3), (1, 0)),  # [90, 135; 45, 0]
}


@dataclass(frozen=True)
class SensorGeometry:
    width: int = 346
    height: int = 260
    mosaic_code: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.width % 2 or self.height % 2:
            raise ConfigError(f"sensor size must be positive and even, got {self.width}x{self.height}")
        if self.width > 0xFFFF or self.height > 0xFFFF:
            raise ConfigError("sensor dimensions must fit in 16 bits")
        if self.mosaic_code not in MOSAICS:
            raise ConfigError(f"unknown mosaic code {self.mosaic_code}")

    @property
    def macro_width(self) -> int:
        return self.width // 2

    @property
    def macro_height(self) -> int:
        return self.height // 2

    @property
    def tile(self) -> np.ndarray:
        return np.array(MOSAICS[self.mosaic_code], dtype=np.int64)

    def channel(self, x, y):
        """Channel index (0..3) of the subpixel(s) at column x, row y."""
        return self.tile[np.asarray(y) % 2, np.asarray(x) % 2]

    def filter_angle(self, x: int, y: int) -> FilterAngle:
        return CHANNEL_ANGLES[int(self.channel(x, y))]

    def angle_map(self) -> np.ndarray:
        """Filter angle in radians for every subpixel, shape (height, width)."""
        yy, xx = np.mgrid[0 : self.height, 0 : self.width]
        angles = np.array([a.value for a in CHANNEL_ANGLES])
        return angles[self.channel(xx, yy)]

    def channel_offsets(self) -> np.ndarray:
        """(dx, dy) of each channel inside a macropixel, shape (4, 2)."""
        out = np.zeros((4, 2), dtype=np.int64)
        for dy in range(2):
            for dx in range(2):
                out[self.tile[dy, dx]] = (dx, dy)
        return out

    def center(self) -> tuple[float, float]:
        return (self.width - 1) / 2.0, (self.height - 1) / 2.0

    def centered_roi(self, size: int = 12) -> tuple[int, int, int, int]:
        """Even-aligned square ROI ``(x0, y0, x1, y1)`` (exclusive end) at the centre."""
        if size % 2 or size <= 0:
            raise ConfigError("ROI size must be a positive even number")
        x0 = (self.width // 2 - size // 2) & ~1
        y0 = (self.height // 2 - size // 2) & ~1
        roi = (x0, y0, x0 + size, y0 + size)
        self.check_region(roi)
        return roi

    def check_region(self, region) -> None:
        x0, y0, x1, y1 = region
        if not (0 <= x0 < x1 <= self.width and 0 <= y0 < y1 <= self.height):
            raise ConfigError(f"region {region} outside sensor {self.width}x{self.height}")
        if x0 % 2 or y0 % 2 or x1 % 2 or y1 % 2:
            raise ConfigError(f"region {region} must be macropixel aligned")
