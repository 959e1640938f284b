"""Exact distance and intersection queries against axis-aligned obstacle sets.

Obstacles are axis-aligned boxes, vertical capped cylinders, and spheres.
All signed distances are exact (negative inside the shape). The module keeps
a compiled array view of an obstacle list so point and segment queries
vectorize over obstacles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Signed distance returned for queries against an empty obstacle set.
EMPTY_CLEARANCE = math.inf


def box_signed_distance(p, center, half_extents) -> float:
    q = np.abs(np.asarray(p, dtype=float) - center) - half_extents
    outside = float(np.linalg.norm(np.maximum(q, 0.0)))
    inside = float(min(q.max(), 0.0))
    return outside + inside


def cylinder_signed_distance(p, center, radius, half_height) -> float:
    dxy = math.hypot(p[0] - center[0], p[1] - center[1]) - radius
    dz = abs(p[2] - center[2]) - half_height
    outside = math.hypot(max(dxy, 0.0), max(dz, 0.0))
    inside = min(max(dxy, dz), 0.0)
    return outside + inside


def sphere_signed_distance(p, center, radius) -> float:
    return float(np.linalg.norm(np.asarray(p, dtype=float) - center)) - radius


def _ray_slab(p0: float, d: float, lo: float, hi: float) -> tuple[float, float]:
    """Entry/exit parameters of a 1-D ray against an interval."""
    if d == 0.0:
        if lo <= p0 <= hi:
            return -math.inf, math.inf
        return math.inf, -math.inf
    t0 = (lo - p0) / d
    t1 = (hi - p0) / d
    return (t0, t1) if t0 <= t1 else (t1, t0)


def segment_box_entry(s, e, center, half_extents) -> float | None:
    """First parameter t in [0,1] where segment s->e enters the box, else None."""
    d = e - s
    t_in, t_out = 0.0, 1.0
    for k in range(3):
        lo, hi = _ray_slab(s[k], d[k], center[k] - half_extents[k], center[k] + half_extents[k])
        t_in = max(t_in, lo)
        t_out = min(t_out, hi)
        if t_in > t_out:
            return None
    return t_in


def segment_sphere_entry(s, e, center, radius) -> float | None:
    d = e - s
    f = s - center
    a = float(d @ d)
    if a == 0.0:
        return 0.0 if float(f @ f) <= radius * radius else None
    b = 2.0 * float(f @ d)
    c = float(f @ f) - radius * radius
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    t0 = (-b - sq) / (2.0 * a)
    t1 = (-b + sq) / (2.0 * a)
    if t1 < 0.0 or t0 > 1.0:
        return None
    return max(t0, 0.0)


def segment_cylinder_entry(s, e, center, radius, half_height) -> float | None:
    """Entry of segment into a vertical capped cylinder (exact)."""
    d = e - s
    # Entry into the infinite slab |z - cz| <= hh and the infinite tube.
    z_in, z_out = _ray_slab(s[2], d[2], center[2] - half_height, center[2] + half_height)
    fx, fy = s[0] - center[0], s[1] - center[1]
    a = d[0] * d[0] + d[1] * d[1]
    if a == 0.0:
        if fx * fx + fy * fy <= radius * radius:
            r_in, r_out = -math.inf, math.inf
        else:
            return None
    else:
        b = 2.0 * (fx * d[0] + fy * d[1])
        c = fx * fx + fy * fy - radius * radius
        disc = b * b - 4.0 * a * c
        if disc < 0.0:
            return None
        sq = math.sqrt(disc)
        r_in = (-b - sq) / (2.0 * a)
        r_out = (-b + sq) / (2.0 * a)
    t_in = max(z_in, r_in, 0.0)
    t_out = min(z_out, r_out, 1.0)
    if t_in > t_out:
        return None
    return t_in


@dataclass
class ObstacleField:
    """Array view of an obstacle list for vectorized queries.

    Boxes: centers (B,3), half extents (B,3). Cylinders: centers (C,3),
    radii (C,), half heights (C,). Spheres: centers (S,3), radii (S,).
    """

    box_centers: np.ndarray
    box_half: np.ndarray
    cyl_centers: np.ndarray
    cyl_radius: np.ndarray
    cyl_half_height: np.ndarray
    sph_centers: np.ndarray
    sph_radius: np.ndarray

    @property
    def empty(self) -> bool:
        return (
            self.box_centers.shape[0] == 0
            and self.cyl_centers.shape[0] == 0
            and self.sph_centers.shape[0] == 0
        )

    def signed_distance(self, p) -> float:
        """Exact signed distance to the nearest obstacle surface (inf if none)."""
        p = np.asarray(p, dtype=float)
        best = EMPTY_CLEARANCE
        if self.box_centers.shape[0]:
            q = np.abs(p - self.box_centers) - self.box_half
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
            inside = np.minimum(q.max(axis=1), 0.0)
            best = min(best, float((outside + inside).min()))
        if self.cyl_centers.shape[0]:
            dxy = np.hypot(p[0] - self.cyl_centers[:, 0], p[1] - self.cyl_centers[:, 1]) - self.cyl_radius
            dz = np.abs(p[2] - self.cyl_centers[:, 2]) - self.cyl_half_height
            outside = np.hypot(np.maximum(dxy, 0.0), np.maximum(dz, 0.0))
            inside = np.minimum(np.maximum(dxy, dz), 0.0)
            best = min(best, float((outside + inside).min()))
        if self.sph_centers.shape[0]:
            d = np.linalg.norm(p - self.sph_centers, axis=1) - self.sph_radius
            best = min(best, float(d.min()))
        return best

    def signed_distance_many(self, points: np.ndarray) -> np.ndarray:
        """Signed distance for each row of an (N, 3) point array."""
        points = np.asarray(points, dtype=float)
        best = np.full(points.shape[0], EMPTY_CLEARANCE)
        if self.box_centers.shape[0]:
            q = np.abs(points[:, None, :] - self.box_centers[None]) - self.box_half[None]
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=2)
            inside = np.minimum(q.max(axis=2), 0.0)
            best = np.minimum(best, (outside + inside).min(axis=1))
        if self.cyl_centers.shape[0]:
            dxy = (
                np.hypot(
                    points[:, None, 0] - self.cyl_centers[None, :, 0],
                    points[:, None, 1] - self.cyl_centers[None, :, 1],
                )
                - self.cyl_radius[None]
            )
            dz = np.abs(points[:, None, 2] - self.cyl_centers[None, :, 2]) - self.cyl_half_height[None]
            outside = np.hypot(np.maximum(dxy, 0.0), np.maximum(dz, 0.0))
            inside = np.minimum(np.maximum(dxy, dz), 0.0)
            best = np.minimum(best, (outside + inside).min(axis=1))
        if self.sph_centers.shape[0]:
            d = np.linalg.norm(points[:, None, :] - self.sph_centers[None], axis=2) - self.sph_radius[None]
            best = np.minimum(best, d.min(axis=1))
        return best

    def segment_entry(self, s, e) -> float | None:
        """Earliest t in [0,1] where segment s->e penetrates any obstacle."""
        s = np.asarray(s, dtype=float)
        e = np.asarray(e, dtype=float)
        d = e - s
        best = math.inf
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.box_centers.shape[0]:
                lo = self.box_centers - self.box_half
                hi = self.box_centers + self.box_half
                t0 = (lo - s) / d
                t1 = (hi - s) / d
                # Degenerate axes: inside the slab forever or never.
                inside = (lo <= s) & (s <= hi)
                zero = d == 0.0
                t_lo = np.where(zero, np.where(inside, -math.inf, math.inf), np.minimum(t0, t1))
                t_hi = np.where(zero, np.where(inside, math.inf, -math.inf), np.maximum(t0, t1))
                t_in = np.maximum(t_lo.max(axis=1), 0.0)
                t_out = np.minimum(t_hi.min(axis=1), 1.0)
                hits = t_in <= t_out
                if hits.any():
                    best = min(best, float(t_in[hits].min()))
            if self.cyl_centers.shape[0]:
                t_in, t_out = self._cylinder_window(s, d)
                hits = t_in <= t_out
                if hits.any():
                    best = min(best, float(t_in[hits].min()))
            if self.sph_centers.shape[0]:
                f = s - self.sph_centers
                a = float(d @ d)
                c = (f * f).sum(axis=1) - self.sph_radius**2
                if a == 0.0:
                    if (c <= 0.0).any():
                        best = min(best, 0.0)
                else:
                    b = 2.0 * (f @ d)
                    disc = b * b - 4.0 * a * c
                    ok = disc >= 0.0
                    if ok.any():
                        sq = np.sqrt(disc[ok])
                        t0 = (-b[ok] - sq) / (2.0 * a)
                        t1 = (-b[ok] + sq) / (2.0 * a)
                        hit = (t1 >= 0.0) & (t0 <= 1.0)
                        if hit.any():
                            best = min(best, float(np.maximum(t0[hit], 0.0).min()))
        return None if best is math.inf else best

    def _cylinder_window(self, s, d):
        """Per-cylinder [t_in, t_out] window of segment s + t*d, clamped to [0,1]."""
        z_lo = self.cyl_centers[:, 2] - self.cyl_half_height
        z_hi = self.cyl_centers[:, 2] + self.cyl_half_height
        if d[2] == 0.0:
            in_z = (z_lo <= s[2]) & (s[2] <= z_hi)
            tz_lo = np.where(in_z, -math.inf, math.inf)
            tz_hi = np.where(in_z, math.inf, -math.inf)
        else:
            t0 = (z_lo - s[2]) / d[2]
            t1 = (z_hi - s[2]) / d[2]
            tz_lo = np.minimum(t0, t1)
            tz_hi = np.maximum(t0, t1)
        fx = s[0] - self.cyl_centers[:, 0]
        fy = s[1] - self.cyl_centers[:, 1]
        a = d[0] * d[0] + d[1] * d[1]
        if a == 0.0:
            in_r = fx * fx + fy * fy <= self.cyl_radius**2
            tr_lo = np.where(in_r, -math.inf, math.inf)
            tr_hi = np.where(in_r, math.inf, -math.inf)
        else:
            b = 2.0 * (fx * d[0] + fy * d[1])
            c = fx * fx + fy * fy - self.cyl_radius**2
            disc = b * b - 4.0 * a * c
            sq = np.sqrt(np.maximum(disc, 0.0))
            tr_lo = np.where(disc >= 0.0, (-b - sq) / (2.0 * a), math.inf)
            tr_hi = np.where(disc >= 0.0, (-b + sq) / (2.0 * a), -math.inf)
        t_in = np.maximum(np.maximum(tz_lo, tr_lo), 0.0)
        t_out = np.minimum(np.minimum(tz_hi, tr_hi), 1.0)
        return t_in, t_out

    def footprint_covered(self, xy: np.ndarray) -> np.ndarray:
        """Boolean mask: which ground-plane points lie under any obstacle footprint."""
        covered = np.zeros(xy.shape[0], dtype=bool)
        x, y = xy[:, 0], xy[:, 1]
        for i in range(self.box_centers.shape[0]):
            cx, cy = self.box_centers[i, 0], self.box_centers[i, 1]
            hx, hy = self.box_half[i, 0], self.box_half[i, 1]
            covered |= (np.abs(x - cx) <= hx) & (np.abs(y - cy) <= hy)
        for i in range(self.cyl_centers.shape[0]):
            cx, cy = self.cyl_centers[i, 0], self.cyl_centers[i, 1]
            covered |= (x - cx) ** 2 + (y - cy) ** 2 <= self.cyl_radius[i] ** 2
        for i in range(self.sph_centers.shape[0]):
            cx, cy = self.sph_centers[i, 0], self.sph_centers[i, 1]
            covered |= (x - cx) ** 2 + (y - cy) ** 2 <= self.sph_radius[i] ** 2
        return covered


def compile_field(obstacles) -> ObstacleField:
    """Build an ObstacleField from an iterable of scenario obstacles."""
    from .scenario import ShapeKind  # local import to avoid a cycle

    boxes_c, boxes_h = [], []
    cyls_c, cyls_r, cyls_hh = [], [], []
    sphs_c, sphs_r = [], []
    for ob in obstacles:
        if ob.shape is ShapeKind.BOX:
            boxes_c.append(ob.center)
            boxes_h.append(ob.half_extents)
        elif ob.shape is ShapeKind.CYLINDER:
            cyls_c.append(ob.center)
            cyls_r.append(ob.radius)
            cyls_hh.append(ob.height / 2.0)
        else:
            sphs_c.append(ob.center)
            sphs_r.append(ob.radius)
    return ObstacleField(
        box_centers=np.array(boxes_c, dtype=float).reshape(-1, 3),
        box_half=np.array(boxes_h, dtype=float).reshape(-1, 3),
        cyl_centers=np.array(cyls_c, dtype=float).reshape(-1, 3),
        cyl_radius=np.array(cyls_r, dtype=float),
        cyl_half_height=np.array(cyls_hh, dtype=float),
        sph_centers=np.array(sphs_c, dtype=float).reshape(-1, 3),
        sph_radius=np.array(sphs_r, dtype=float),
    )
