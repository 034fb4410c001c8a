from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class Viewpoint:
    """Camera position; the optical axis always points straight down."""

    x: float
    y: float
    z: float

    def as_list(self) -> list[float]:
        return [self.x, self.y, self.z]


@dataclass(frozen=True)
class VelocityCommand:
    vx: float
    vy: float
    vz: float

    @property
    def norm(self) -> float:
        return math.sqrt(self.vx * self.vx + self.vy * self.vy + self.vz * self.vz)

    @property
    def horizontal(self) -> float:
        return math.hypot(self.vx, self.vy)


def angular_distance(a: float, b: float) -> float:
    """Distance between two grasp angles under pi-periodicity, in [0, pi/2]."""
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)
