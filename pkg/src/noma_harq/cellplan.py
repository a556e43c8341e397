"""Dynamic cell planning for uncoordinated power selection.

The cell is split into n_hat equal-area annuli and n_hat equal-angle
sectors (n_hat^2 segments of area pi*R^2/n_hat^2 each).  Every segment
is assigned one of the n_hat power splitting ratios through a cyclic
Latin square, so the ratios in each annulus and in each sector sum to 1.
Rotating the assignment one step per slot cycles every segment through
all ratios, equalizing average transmit power across the cell.

Ring i covers distances (r_{i-1}, r_i] (outer boundary inclusive);
sector s covers angles [2*pi*s/n_hat, 2*pi*(s+1)/n_hat).
"""

import json
import math
from bisect import bisect_left
from dataclasses import dataclass, replace
from typing import Sequence, Tuple

import numpy as np

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class UserPosition:
    """Polar position relative to the base station at the origin."""

    distance: float
    angle: float

    def __post_init__(self):
        if not (self.distance > 0.0 and math.isfinite(self.distance)):
            raise ValueError(f"distance must be positive, got {self.distance!r}")
        if not math.isfinite(self.angle):
            raise ValueError(f"angle must be finite, got {self.angle!r}")
        object.__setattr__(self, "angle", self.angle % TWO_PI)


def ring_radii(n_hat: int, r_outer: float) -> Tuple[float, ...]:
    """Radii r_i = sqrt(i/n_hat) * r_outer for i = 1..n_hat.

    Every annulus then has the same area pi*r_outer^2/n_hat.
    """
    if not (isinstance(n_hat, (int, np.integer)) and n_hat >= 1):
        raise ValueError(f"n_hat must be a positive integer, got {n_hat!r}")
    if not (r_outer > 0.0 and math.isfinite(r_outer)):
        raise ValueError(f"r_outer must be positive, got {r_outer!r}")
    return tuple(math.sqrt(i / n_hat) * r_outer for i in range(1, n_hat + 1))


@dataclass(frozen=True)
class CellPlan:
    """Equal-area segmentation with a rotating cyclic ratio assignment.

    alphas holds the ratio values sorted ascending; segment (ring, sector)
    uses ratio index (ring + sector + rotation) mod n_hat.  Immutable:
    advancing the rotation produces a new plan.
    """

    n_hat: int
    r_outer: float
    alphas: Tuple[float, ...]
    rotation: int = 0

    def __post_init__(self):
        if len(self.alphas) != self.n_hat:
            raise ValueError(
                f"{self.n_hat} segments per ring need {self.n_hat} ratios, "
                f"got {len(self.alphas)}"
            )
        if any(not (a > 0.0) for a in self.alphas):
            raise ValueError("ratios must be positive")

    @property
    def ring_boundaries(self) -> Tuple[float, ...]:
        return ring_radii(self.n_hat, self.r_outer)

    def ratio_index(self, ring: int, sector: int) -> int:
        if not (0 <= ring < self.n_hat and 0 <= sector < self.n_hat):
            raise ValueError(f"segment ({ring}, {sector}) out of range")
        return (ring + sector + self.rotation) % self.n_hat

    def ratio(self, ring: int, sector: int) -> float:
        return self.alphas[self.ratio_index(ring, sector)]

    @property
    def assignment(self) -> np.ndarray:
        """n_hat x n_hat grid of ratio indices, rows = rings."""
        grid = np.add.outer(np.arange(self.n_hat), np.arange(self.n_hat))
        return (grid + self.rotation) % self.n_hat

    def rotated(self, steps: int = 1) -> "CellPlan":
        """Plan with the ratio assignment advanced by the given slots."""
        return replace(self, rotation=self.rotation + steps)

    def to_dict(self) -> dict:
        return {
            "n_hat": self.n_hat,
            "r_outer": self.r_outer,
            "ring_radii": list(self.ring_boundaries),
            "assignment": self.assignment.tolist(),
            "rotation": self.rotation,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def build_plan(
    n_hat: int, r_outer: float, alphas: Sequence[float], rotation: int = 0
) -> CellPlan:
    """Construct the plan for n_hat estimated users; ratios are sorted
    ascending before the cyclic assignment so the mapping is reproducible."""
    ratios = tuple(sorted(float(a) for a in alphas))
    if len(ratios) != n_hat:
        raise ValueError(f"expected {n_hat} ratios, got {len(ratios)}")
    ring_radii(n_hat, r_outer)  # validates n_hat and r_outer
    return CellPlan(n_hat=n_hat, r_outer=r_outer, alphas=ratios, rotation=rotation)


def locate_segment(pos: UserPosition, plan: CellPlan) -> Tuple[int, int, float]:
    """Map a position to (ring, sector, current ratio of that segment)."""
    if pos.distance > plan.r_outer:
        raise ValueError(
            f"position at {pos.distance} m lies outside the {plan.r_outer} m cell"
        )
    ring = bisect_left(plan.ring_boundaries, pos.distance)
    sector = min(int(pos.angle * plan.n_hat / TWO_PI), plan.n_hat - 1)
    return ring, sector, plan.ratio(ring, sector)
