"""Lane-level road geometry.

Lanes are 2-D centerline polylines indexed by arc length.  The map also
carries stop lines (a point on a lane, optionally tied to a traffic
light) and junction polygons.  Distances used by rule signals are
measured along the lane, not straight-line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class MapConfigError(ValueError):
    """The map cannot support a signal the rules need."""


def _as_points(pts) -> np.ndarray:
    arr = np.asarray(pts, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise MapConfigError("a centerline needs at least two (x, y) points")
    return arr


class Lane:
    """Polyline centerline with arc-length lookup."""

    def __init__(self, lane_id: str, ordinal: int, centerline, width: float = 3.5):
        self.id = lane_id
        self.ordinal = int(ordinal)
        self.centerline = _as_points(centerline)
        self.width = float(width)
        seg = np.diff(self.centerline, axis=0)
        self._seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(self._seg_len <= 0):
            raise MapConfigError(f"lane {lane_id!r} has a zero-length segment")
        self._cum = np.concatenate([[0.0], np.cumsum(self._seg_len)])
        self._dirs = seg / self._seg_len[:, None]

    @property
    def length(self) -> float:
        return float(self._cum[-1])

    def point_at(self, s: float, lateral: float = 0.0):
        """Position at arc length ``s`` offset ``lateral`` to the left."""
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self._cum, s, side="right")) - 1
        i = min(max(i, 0), len(self._seg_len) - 1)
        base = self.centerline[i] + self._dirs[i] * (s - self._cum[i])
        normal = np.array([-self._dirs[i][1], self._dirs[i][0]])
        p = base + normal * lateral
        return float(p[0]), float(p[1])

    def points_at(self, s, lateral: float = 0.0) -> np.ndarray:
        """Vectorized point_at for an array of arc lengths."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        i = np.clip(np.searchsorted(self._cum, s, side="right") - 1,
                    0, len(self._seg_len) - 1)
        base = self.centerline[i] + self._dirs[i] * (s - self._cum[i])[:, None]
        normal = np.column_stack([-self._dirs[i, 1], self._dirs[i, 0]])
        return base + normal * lateral

    def heading_at(self, s: float) -> float:
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self._cum, s, side="right")) - 1
        i = min(max(i, 0), len(self._seg_len) - 1)
        d = self._dirs[i]
        return math.atan2(d[1], d[0])

    def project(self, point) -> tuple[float, float]:
        """(arc length, signed lateral offset) of the closest centerline point."""
        p = np.asarray(point, dtype=float)
        a = self.centerline[:-1]
        d = self._dirs
        t = np.einsum("ij,ij->i", p - a, d)
        t = np.clip(t, 0.0, self._seg_len)
        foot = a + d * t[:, None]
        delta = p - foot
        dist2 = np.einsum("ij,ij->i", delta, delta)
        i = int(np.argmin(dist2))
        normal = np.array([-d[i][1], d[i][0]])
        lateral = float(np.dot(p - foot[i], normal))
        return float(self._cum[i] + t[i]), lateral

    def project_many(self, points):
        """Vectorized project: (s array, signed lateral array) for (n, 2) points."""
        p = np.asarray(points, dtype=float)
        a = self.centerline[:-1]
        d = self._dirs
        diff = p[:, None, :] - a[None, :, :]
        t = np.einsum("nmj,mj->nm", diff, d)
        t = np.clip(t, 0.0, self._seg_len)
        foot = a[None, :, :] + t[..., None] * d[None, :, :]
        delta = p[:, None, :] - foot
        dist2 = np.einsum("nmj,nmj->nm", delta, delta)
        best = np.argmin(dist2, axis=1)
        rows = np.arange(len(p))
        db = d[best]
        dbest = delta[rows, best]
        s = self._cum[best] + t[rows, best]
        lat = db[:, 0] * dbest[:, 1] - db[:, 1] * dbest[:, 0]
        return s, lat

    def distance_to(self, point) -> float:
        s, lat = self.project(point)
        return abs(lat)


@dataclass(frozen=True)
class StopLine:
    id: str
    lane_id: str
    s: float  # arc length along the lane
    light_id: str | None = None


@dataclass(frozen=True)
class Junction:
    id: str
    polygon: tuple[tuple[float, float], ...]

    def contains(self, point) -> bool:
        x, y = float(point[0]), float(point[1])
        inside = False
        pts = self.polygon
        j = len(pts) - 1
        for i in range(len(pts)):
            xi, yi = pts[i]
            xj, yj = pts[j]
            if (yi > y) != (yj > y):
                x_cross = xi + (y - yi) * (xj - xi) / (yj - yi)
                if x < x_cross:
                    inside = not inside
            j = i
        return inside


class RoadMap:
    def __init__(self, lanes, stoplines=(), junctions=()):
        self.lanes: list[Lane] = list(lanes)
        if not self.lanes:
            raise MapConfigError("a map needs at least one lane")
        ids = [ln.id for ln in self.lanes]
        if len(set(ids)) != len(ids):
            raise MapConfigError("duplicate lane id")
        self.stoplines: list[StopLine] = list(stoplines)
        self.junctions: list[Junction] = list(junctions)
        self._by_id = {ln.id: ln for ln in self.lanes}
        self._entry_cache: dict[tuple[str, str], float | None] = {}

    def lane(self, lane_id: str) -> Lane:
        try:
            return self._by_id[lane_id]
        except KeyError:
            raise MapConfigError(f"unknown lane {lane_id!r}") from None

    def lane_by_ordinal(self, ordinal: int) -> Lane:
        for ln in self.lanes:
            if ln.ordinal == ordinal:
                return ln
        raise MapConfigError(f"no lane with ordinal {ordinal}")

    def locate(self, point) -> tuple[Lane, float, float]:
        """Nearest lane plus (arc length, lateral offset) on it."""
        best = None
        for ln in self.lanes:
            s, lat = ln.project(point)
            if best is None or abs(lat) < abs(best[2]):
                best = (ln, s, lat)
        return best

    def locate_many(self, points):
        """Vectorized locate: (lane list, s array, lateral array) per point."""
        p = np.asarray(points, dtype=float)
        per_lane = [ln.project_many(p) for ln in self.lanes]
        lats = np.stack([lat for _, lat in per_lane])
        pick = np.argmin(np.abs(lats), axis=0)
        rows = np.arange(len(p))
        s = np.stack([s for s, _ in per_lane])[pick, rows]
        lat = lats[pick, rows]
        lanes = [self.lanes[i] for i in pick]
        return lanes, s, lat

    def junction_entry_s(self, junction: Junction, lane: Lane) -> float | None:
        """Arc length where the lane first enters the junction polygon."""
        key = (junction.id, lane.id)
        if key in self._entry_cache:
            return self._entry_cache[key]
        step = 0.25
        grid = np.arange(0.0, lane.length + step, step)
        entry = None
        prev_inside = junction.contains(lane.point_at(0.0))
        prev_s = 0.0
        if prev_inside:
            entry = 0.0
        else:
            for s in grid[1:]:
                inside = junction.contains(lane.point_at(float(s)))
                if inside and not prev_inside:
                    lo, hi = prev_s, float(s)
                    for _ in range(24):  # bisect the crossing
                        mid = 0.5 * (lo + hi)
                        if junction.contains(lane.point_at(mid)):
                            hi = mid
                        else:
                            lo = mid
                    entry = hi
                    break
                prev_inside, prev_s = inside, float(s)
        self._entry_cache[key] = entry
        return entry

    # --- anchors for distance signals -------------------------------------

    def next_stopline(self, lane: Lane, s_from: float) -> StopLine | None:
        best = None
        for sl in self.stoplines:
            if sl.lane_id != lane.id or sl.s < s_from - 1e-6:
                continue
            if best is None or sl.s < best.s:
                best = sl
        return best

    def next_junction_entry(self, lane: Lane, s_from: float):
        """(junction, entry arc length) of the nearest junction ahead."""
        best = None
        for jn in self.junctions:
            entry = self.junction_entry_s(jn, lane)
            if entry is None or entry < s_from - 1e-6:
                continue
            if best is None or entry < best[1]:
                best = (jn, entry)
        return best

    def artifact_s(self, name: str, lane: Lane, s_from: float) -> float:
        """Arc length of the named map artifact ahead of ``s_from``.

        ``stopline`` / ``junction`` pick the nearest one; any other name
        must match a stop line or junction id exactly.
        """
        if name == "stopline":
            sl = self.next_stopline(lane, s_from)
            if sl is None:
                raise MapConfigError(f"no stop line ahead on lane {lane.id!r}")
            return sl.s
        if name == "junction":
            hit = self.next_junction_entry(lane, s_from)
            if hit is None:
                raise MapConfigError(f"no junction ahead on lane {lane.id!r}")
            return hit[1]
        for sl in self.stoplines:
            if sl.id == name:
                if sl.lane_id != lane.id:
                    raise MapConfigError(f"stop line {name!r} is not on lane {lane.id!r}")
                return sl.s
        for jn in self.junctions:
            if jn.id == name:
                entry = self.junction_entry_s(jn, lane)
                if entry is None:
                    raise MapConfigError(f"lane {lane.id!r} never reaches junction {name!r}")
                return entry
        raise MapConfigError(f"unknown map artifact {name!r}")

    # --- serialization -----------------------------------------------------

    def to_json(self) -> dict:
        return {
            "lanes": [
                {
                    "id": ln.id,
                    "ordinal": ln.ordinal,
                    "centerline": [[float(x), float(y)] for x, y in ln.centerline],
                    "width": ln.width,
                }
                for ln in self.lanes
            ],
            "stoplines": [
                {"id": sl.id, "lane": sl.lane_id, "s": sl.s, "light": sl.light_id}
                for sl in self.stoplines
            ],
            "junctions": [
                {"id": jn.id, "polygon": [list(p) for p in jn.polygon]}
                for jn in self.junctions
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "RoadMap":
        lanes = [
            Lane(d["id"], d.get("ordinal", i), d["centerline"], d.get("width", 3.5))
            for i, d in enumerate(data["lanes"])
        ]
        stoplines = [
            StopLine(d["id"], d["lane"], float(d["s"]), d.get("light"))
            for d in data.get("stoplines", [])
        ]
        junctions = [
            Junction(d["id"], tuple((float(x), float(y)) for x, y in d["polygon"]))
            for d in data.get("junctions", [])
        ]
        return cls(lanes, stoplines, junctions)


def straight_lane(lane_id: str, ordinal: int, x: float, y0: float, y1: float,
                  width: float = 3.5) -> Lane:
    """Convenience: a straight north-bound lane at fixed ``x``."""
    return Lane(lane_id, ordinal, [(x, y0), (x, y1)], width)
