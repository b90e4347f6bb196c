"""Rectangular study domains, time-sliced event sets, and CSV ingestion.

Coordinates are plain planar floats.  Any CRS conversion (e.g. longitude /
latitude to easting / northing) is the user's preprocessing step; this module
only maps rectangles onto rectangles affinely.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

DEFAULT_SCHEMA = {"t": "t", "x": "x", "y": "y"}


@dataclass(frozen=True)
class Domain:
    """Axis-aligned closed rectangle [x_min, x_max] x [y_min, y_max]."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValidationError(
                f"degenerate domain [{self.x_min}, {self.x_max}] x "
                f"[{self.y_min}, {self.y_max}]"
            )

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def contains(self, points) -> np.ndarray:
        """Boolean mask; boundary points count as inside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return (
            (pts[:, 0] >= self.x_min)
            & (pts[:, 0] <= self.x_max)
            & (pts[:, 1] >= self.y_min)
            & (pts[:, 1] <= self.y_max)
        )

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        pts = rng.uniform(size=(n, 2))
        pts[:, 0] = self.x_min + pts[:, 0] * self.width
        pts[:, 1] = self.y_min + pts[:, 1] * self.height
        return pts


@dataclass
class EventSet:
    """Point pattern split into T time slices; points[t] is an (n_t, 2) array."""

    points: list = field(default_factory=list)

    def __post_init__(self):
        self.points = [np.asarray(p, dtype=float).reshape(-1, 2) for p in self.points]
        if not self.points:
            raise ValidationError("EventSet needs at least one time slice")

    @property
    def T(self) -> int:
        return len(self.points)

    @property
    def n(self) -> list:
        return [len(p) for p in self.points]

    def validate_inside(self, domain: Domain) -> None:
        for t, pts in enumerate(self.points):
            if len(pts) and not domain.contains(pts).all():
                bad = int(np.flatnonzero(~domain.contains(pts))[0])
                raise ValidationError(
                    f"slice {t + 1}: point {tuple(pts[bad])} outside domain"
                )

    @classmethod
    def empty(cls, T: int) -> "EventSet":
        return cls([np.empty((0, 2)) for _ in range(T)])


def load_events(path, schema=None, T: int = 1) -> EventSet:
    """Read a `t,x,y` CSV into an EventSet with T slices.

    Extra columns are ignored; row order is preserved within each slice.
    Malformed rows and out-of-range t raise ValidationError with the
    offending line number.
    """
    schema = dict(DEFAULT_SCHEMA, **(schema or {}))
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    slices = [[] for _ in range(T)]
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return EventSet.empty(T)
        for col in schema.values():
            if col not in reader.fieldnames:
                raise ValidationError(f"{path}: missing column {col!r}")
        for row in reader:
            line = reader.line_num
            try:
                t = int(row[schema["t"]])
                x = float(row[schema["x"]])
                y = float(row[schema["y"]])
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"{path}: line {line}: malformed row ({exc})")
            if not 1 <= t <= T:
                raise ValidationError(
                    f"{path}: line {line}: t={t} outside 1..{T}"
                )
            slices[t - 1].append((x, y))
    return EventSet([np.array(s, dtype=float).reshape(-1, 2) for s in slices])


def save_events(events: EventSet, path) -> None:
    """Write `t,x,y` CSV at 15 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "y"])
        for t, pts in enumerate(events.points, start=1):
            for x, y in pts:
                writer.writerow([t, f"{x:.15g}", f"{y:.15g}"])


def project_events(raw: EventSet, src: Domain, dst: Domain) -> EventSet:
    """Affine rectangle-to-rectangle map of every point in `raw`."""
    raw.validate_inside(src)
    sx = dst.width / src.width
    sy = dst.height / src.height
    out = []
    for pts in raw.points:
        mapped = np.empty_like(pts)
        if len(pts):
            mapped[:, 0] = dst.x_min + (pts[:, 0] - src.x_min) * sx
            mapped[:, 1] = dst.y_min + (pts[:, 1] - src.y_min) * sy
        out.append(mapped)
    return EventSet(out)
