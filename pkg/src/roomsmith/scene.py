"""Core scene domain types: floor plans, placed objects, mesh inventories.

Pure value types with no I/O.  The coordinate convention is origin at the
floor plan's top-left corner, x rightward, y downward, all lengths in
meters.  Object locations denote footprint centers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .errors import ValidationError

CATEGORY_PATTERN = re.compile(r"^[a-z0-9_]+$")


def normalize_orientation(deg: float) -> float:
    """Reduce an angle in degrees into [0, 360)."""
    if not math.isfinite(deg):
        raise ValidationError(f"orientation must be finite, got {deg!r}")
    result = deg % 360.0
    # Float rounding of e.g. -1e-16 % 360 can land exactly on 360.
    if result >= 360.0:
        result = 0.0
    return result


@dataclass(frozen=True, slots=True)
class FloorPlan:
    """Rectangular floor, ``width`` along x and ``depth`` along y (meters)."""

    width: float
    depth: float

    def __post_init__(self):
        if not (math.isfinite(self.width) and self.width > 0):
            raise ValidationError(f"floor width must be > 0, got {self.width!r}")
        if not (math.isfinite(self.depth) and self.depth > 0):
            raise ValidationError(f"floor depth must be > 0, got {self.depth!r}")


@dataclass(frozen=True, slots=True)
class Rect:
    """Axis-aligned rectangle, corners (x0, y0) top-left / (x1, y1) bottom-right."""

    x0: float
    y0: float
    x1: float
    y1: float

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def intersection_area(self, other: "Rect") -> float:
        dx = min(self.x1, other.x1) - max(self.x0, other.x0)
        dy = min(self.y1, other.y1) - max(self.y0, other.y0)
        if dx <= 0 or dy <= 0:
            return 0.0
        return dx * dy


@dataclass(frozen=True, slots=True)
class SceneObject:
    """One placed object.

    ``size`` is (length, width, height): length spans x and width spans y at
    orientation 0.  ``location`` is the footprint center.  ``orientation`` is
    normalized into [0, 360) on construction.
    """

    category: str
    index: int
    size: tuple[float, float, float]
    location: tuple[float, float]
    orientation: float = 0.0
    mesh: str | None = None

    def __post_init__(self):
        if not CATEGORY_PATTERN.match(self.category):
            raise ValidationError(
                f"category must match [a-z0-9_]+, got {self.category!r}")
        if self.index < 0:
            raise ValidationError(f"index must be >= 0, got {self.index}")
        if len(self.size) != 3 or any(
                not math.isfinite(s) or s <= 0 for s in self.size):
            raise ValidationError(
                f"size components must be finite and > 0, got {self.size!r}")
        if len(self.location) != 2 or any(
                not math.isfinite(c) for c in self.location):
            raise ValidationError(
                f"location must be two finite coordinates, got {self.location!r}")
        object.__setattr__(self, "orientation",
                           normalize_orientation(self.orientation))

    @property
    def selector(self) -> str:
        return f"{self.category}-{self.index}"


def footprint(obj: SceneObject) -> Rect:
    """Axis-aligned bound of the object's rotated length x width extent."""
    length, width, _ = obj.size
    theta = math.radians(obj.orientation)
    half_x = (length * abs(math.cos(theta)) + width * abs(math.sin(theta))) / 2.0
    half_y = (length * abs(math.sin(theta)) + width * abs(math.cos(theta))) / 2.0
    cx, cy = obj.location
    return Rect(cx - half_x, cy - half_y, cx + half_x, cy + half_y)


@dataclass(frozen=True, slots=True)
class Scene:
    """A floor plan plus its placed objects, in placement order."""

    floor: FloorPlan
    objects: tuple[SceneObject, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        seen: set[tuple[str, int]] = set()
        for obj in self.objects:
            key = (obj.category, obj.index)
            if key in seen:
                raise ValidationError(
                    f"duplicate object {obj.selector} in scene")
            seen.add(key)

    def find(self, category: str, index: int) -> SceneObject | None:
        for obj in self.objects:
            if obj.category == category and obj.index == index:
                return obj
        return None


@dataclass(frozen=True, slots=True)
class MeshAsset:
    """A retrievable textured-mesh record."""

    id: str
    category: str
    image: str
    embedding: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.id:
            raise ValidationError("asset id must be non-empty")
        if not CATEGORY_PATTERN.match(self.category):
            raise ValidationError(
                f"asset category must match [a-z0-9_]+, got {self.category!r}")
        if self.embedding is not None:
            object.__setattr__(self, "embedding", tuple(float(v) for v in self.embedding))


@dataclass
class Inventory:
    """The searchable collection of mesh assets."""

    assets: list[MeshAsset] = field(default_factory=list)
    embedding_dim: int | None = None

    def __post_init__(self):
        seen: set[str] = set()
        for asset in self.assets:
            if asset.id in seen:
                raise ValidationError(f"duplicate asset id {asset.id!r}")
            seen.add(asset.id)
            if asset.embedding is not None:
                if self.embedding_dim is None:
                    self.embedding_dim = len(asset.embedding)
                elif len(asset.embedding) != self.embedding_dim:
                    raise ValidationError(
                        f"asset {asset.id!r} embedding has dimension "
                        f"{len(asset.embedding)}, inventory declares {self.embedding_dim}")
        if self.embedding_dim is not None and self.embedding_dim <= 0:
            raise ValidationError("embedding_dim must be positive")

    def __len__(self) -> int:
        return len(self.assets)

    def __iter__(self):
        return iter(self.assets)

    def get(self, asset_id: str) -> MeshAsset | None:
        for asset in self.assets:
            if asset.id == asset_id:
                return asset
        return None

    def by_category(self, category: str) -> list[MeshAsset]:
        return [a for a in self.assets if a.category == category]

    @property
    def ids(self) -> list[str]:
        return [a.id for a in self.assets]
