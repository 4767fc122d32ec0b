"""Planar and projective geometry for ego-frame 3D boxes.

Conventions, fixed package-wide:

- ego frame: x forward, y left, z up, meters; the ego reference point is
  the origin of every evaluated frame
- camera frame: z along the optical axis, x right, y down; projection
  coordinates (a, b) inherit the right/down orientation
- yaw: rotation about +z in radians, normalized to [-pi, pi]
- BEV: orthographic projection onto z = 0, keeping the ego x/y axes
- footprint corners are counter-clockwise starting at the front-left
  corner. In the box local frame (x along length, y along width) that is
  (+l/2, +w/2), (-l/2, +w/2), (-l/2, -w/2), (+l/2, -w/2). The 8 corners
  of a box are the four bottom corners (z = -h/2) in that order followed
  by the four top corners (z = +h/2).

All predicates use the absolute tolerance GEOM_TOL; polygons whose area
falls below AREA_TOL are treated as empty.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDepth, OriginInsidePolygon

GEOM_TOL = 1e-9
AREA_TOL = 1e-12
DEPTH_EPS = 1e-6
DIST_EPS = 1e-6

# (length-sign, width-sign) pairs, CCW from the front-left corner.
CORNER_SIGNS = ((1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0))

# Canonical forward camera: camera x = -ego y (right), camera y = -ego z
# (down), camera z = +ego x (optical axis along the ego heading).
FRONT_CAMERA_ROTATION = (
    (0.0, -1.0, 0.0),
    (0.0, 0.0, -1.0),
    (1.0, 0.0, 0.0),
)


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D bounding box in the ego frame.

    ``size`` is (width, length, height); length runs along the box local
    x (heading) axis, width along local y. Yaw is normalized to [-pi, pi]
    on construction.
    """

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float
    label: str = ""
    score: float | None = None

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        size = tuple(float(v) for v in self.size)
        if len(center) != 3 or len(size) != 3:
            raise ValueError("center and size must have 3 components")
        if not all(math.isfinite(v) for v in (*center, *size, self.yaw)):
            raise ValueError("box parameters must be finite")
        if min(size) <= 0.0:
            raise ValueError(f"box size must be positive, got {size}")
        if self.score is not None and not 0.0 <= float(self.score) <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")
        yaw = float(self.yaw)
        if not -math.pi <= yaw <= math.pi:  # keep in-range values bitwise stable
            yaw = math.atan2(math.sin(yaw), math.cos(yaw))
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", yaw)
        if self.score is not None:
            object.__setattr__(self, "score", float(self.score))

    @property
    def width(self) -> float:
        return self.size[0]

    @property
    def length(self) -> float:
        return self.size[1]

    @property
    def height(self) -> float:
        return self.size[2]


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera: focal length plus a rigid ego->camera transform.

    ``rotation`` / ``translation`` map ego-frame points into the camera
    frame (camera z forward). Optional field-of-view half-angles bound the
    visible cone for ego-view filtering; when absent the forward
    hemisphere (half-angle pi/2) is assumed.
    """

    focal: float
    rotation: tuple = FRONT_CAMERA_ROTATION
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)
    hfov_half: float | None = None
    vfov_half: float | None = None

    def __post_init__(self):
        if not (math.isfinite(self.focal) and self.focal > 0.0):
            raise ValueError(f"focal length must be positive, got {self.focal}")
        rot = tuple(tuple(float(v) for v in row) for row in self.rotation)
        r = np.array(rot, dtype=float)
        if r.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-6 or np.linalg.det(r) < 0.0:
            raise ValueError("rotation must be a proper orthonormal matrix")
        trans = tuple(float(v) for v in self.translation)
        if len(trans) != 3 or not all(math.isfinite(v) for v in trans):
            raise ValueError("translation must be a finite 3-vector")
        for name in ("hfov_half", "vfov_half"):
            v = getattr(self, name)
            if v is not None and not 0.0 < float(v) <= math.pi:
                raise ValueError(f"{name} must lie in (0, pi], got {v}")
        object.__setattr__(self, "focal", float(self.focal))
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    def rotation_matrix(self) -> np.ndarray:
        return np.array(self.rotation, dtype=float)

    def translation_vector(self) -> np.ndarray:
        return np.array(self.translation, dtype=float)

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map ego-frame points (N, 3) into the camera frame."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation_matrix().T + self.translation_vector()

    @staticmethod
    def front_facing(focal: float = 1.0, hfov_half: float | None = None,
                     vfov_half: float | None = None) -> "CameraModel":
        """Camera at the ego origin looking along +x."""
        return CameraModel(focal=focal, rotation=FRONT_CAMERA_ROTATION,
                           translation=(0.0, 0.0, 0.0),
                           hfov_half=hfov_half, vfov_half=vfov_half)


@dataclass(frozen=True, eq=False)
class BEVPoly:
    """Convex BEV polygon; counter-clockwise corners, shape (m, 2)."""

    corners: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.corners, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 3:
            raise ValueError("polygon needs at least 3 corners of shape (m, 2)")
        if not np.all(np.isfinite(pts)):
            raise ValueError("polygon corners must be finite")
        if signed_area(pts) <= AREA_TOL:
            raise ValueError("polygon must have positive CCW area")
        m = pts.shape[0]
        for i in range(m):
            e1 = pts[(i + 1) % m] - pts[i]
            e2 = pts[(i + 2) % m] - pts[(i + 1) % m]
            if e1[0] * e2[1] - e1[1] * e2[0] < -GEOM_TOL:
                raise ValueError("polygon must be convex and counter-clockwise")
        pts.setflags(write=False)
        object.__setattr__(self, "corners", pts)


@dataclass(frozen=True)
class PVRect:
    """Axis-aligned rectangle on the camera projection plane."""

    a_min: float
    b_min: float
    a_max: float
    b_max: float

    def __post_init__(self):
        if self.a_min > self.a_max or self.b_min > self.b_max:
            raise ValueError("rectangle bounds must satisfy min <= max")

    @property
    def area(self) -> float:
        return (self.a_max - self.a_min) * (self.b_max - self.b_min)


def rotation2d(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


def signed_area(points: np.ndarray) -> float:
    """Shoelace signed area; positive for counter-clockwise rings."""
    total = 0.0
    m = len(points)
    for i in range(m):
        x1, y1 = points[i]
        x2, y2 = points[(i + 1) % m]
        total += x1 * y2 - x2 * y1
    return 0.5 * total


def project_pv(point, focal: float) -> tuple[float, float]:
    """Pinhole projection of a camera-frame point onto the (a, b) plane.

    Raises NonPositiveDepth when the point sits behind or on the
    projection plane (depth <= DEPTH_EPS).
    """
    x, y, z = (float(v) for v in point)
    if z <= DEPTH_EPS:
        raise NonPositiveDepth(f"depth {z} <= {DEPTH_EPS}")
    return (focal * x / z, focal * y / z)


def footprint_corners(cx: float, cy: float, w: float, l: float,
                      yaw: float) -> np.ndarray:
    """CCW footprint corners (4, 2) of an oriented rectangle."""
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = 0.5 * l, 0.5 * w
    out = np.empty((4, 2))
    for k, (sl, sw) in enumerate(CORNER_SIGNS):
        lx, wy = sl * hl, sw * hw
        out[k, 0] = cx + c * lx - s * wy
        out[k, 1] = cy + s * lx + c * wy
    return out


def box_corners(box: Box3D) -> np.ndarray:
    """All 8 corners (8, 3) in the documented ordering (bottom 4, top 4)."""
    cx, cy, cz = box.center
    foot = footprint_corners(cx, cy, box.width, box.length, box.yaw)
    hh = 0.5 * box.height
    out = np.empty((8, 3))
    out[:4, :2] = foot
    out[4:, :2] = foot
    out[:4, 2] = cz - hh
    out[4:, 2] = cz + hh
    return out


def bev_polygon(box: Box3D) -> BEVPoly:
    """Orthographic footprint of a box on the ground plane."""
    cx, cy, _ = box.center
    return BEVPoly(footprint_corners(cx, cy, box.width, box.length, box.yaw))


def clip_convex(points: list, clip: np.ndarray, jacs: list | None = None):
    """Sutherland-Hodgman clip of a CCW polygon against a CCW convex one.

    ``points`` is a list of (2,) arrays. When ``jacs`` is given (a list of
    (2, n) arrays, one per point), derivative information is propagated
    through emitted vertices; clip-polygon corners are treated as fixed.

    Returns (points, jacs, tags, min_line_dist, deduped) where ``tags``
    records each output vertex's provenance — ("S", i) for a surviving
    subject vertex, ("X", e, tag1, tag2) for the crossing of subject chain
    segment (tag1, tag2) with clip edge e — ``min_line_dist`` is the
    smallest distance of any processed vertex to any clip line (proximity
    to a clipping-topology change), and ``deduped`` tells whether
    coincident vertices were merged.
    """
    tags: list = [("S", i) for i in range(len(points))]
    min_line_dist = math.inf
    m = len(clip)
    track = jacs is not None
    for e in range(m):
        if not points:
            break
        a = clip[e]
        b = clip[(e + 1) % m]
        ex, ey = b[0] - a[0], b[1] - a[1]
        elen = math.hypot(ex, ey)
        n = len(points)
        dists = []
        for p in points:
            d = ex * (p[1] - a[1]) - ey * (p[0] - a[0])
            dists.append(d)
            if elen > 0.0:
                min_line_dist = min(min_line_dist, abs(d) / elen)
        new_pts: list = []
        new_jacs: list = []
        new_tags: list = []
        # walk edges (prev -> cur) emitting cur, so an unclipped ring keeps
        # its vertex order (and its bitwise shoelace accumulation)
        for cur in range(n):
            prev = (cur - 1) % n
            d1, d2 = dists[prev], dists[cur]
            in1, in2 = d1 >= 0.0, d2 >= 0.0
            if in2:
                if not in1:
                    _emit_crossing(points, jacs, tags, prev, cur, d1, d2,
                                   (-ey, ex), e, track,
                                   new_pts, new_jacs, new_tags)
                new_pts.append(points[cur])
                if track:
                    new_jacs.append(jacs[cur])
                new_tags.append(tags[cur])
            elif in1:
                _emit_crossing(points, jacs, tags, prev, cur, d1, d2,
                               (-ey, ex), e, track,
                               new_pts, new_jacs, new_tags)
        points, tags = new_pts, new_tags
        if track:
            jacs = new_jacs
    points, jacs, tags, deduped = _dedup_ring(points, jacs if track else None, tags)
    return points, jacs, tags, min_line_dist, deduped


def _emit_crossing(points, jacs, tags, i, j, d1, d2, normal, edge_idx, track,
                   new_pts, new_jacs, new_tags):
    v1, v2 = points[i], points[j]
    t = d1 / (d1 - d2)
    x = v1 + t * (v2 - v1)
    new_pts.append(x)
    if track:
        j1, j2 = jacs[i], jacs[j]
        dd1 = normal[0] * j1[0] + normal[1] * j1[1]
        dd2 = normal[0] * j2[0] + normal[1] * j2[1]
        dt = (-d2 * dd1 + d1 * dd2) / (d1 - d2) ** 2
        jx = j1 + t * (j2 - j1) + np.outer(v2 - v1, dt)
        new_jacs.append(jx)
    new_tags.append(("X", edge_idx, tags[i], tags[j]))


def _dedup_ring(points, jacs, tags, tol: float = GEOM_TOL):
    """Merge consecutive vertices closer than tol (wraparound included)."""
    if not points:
        return points, jacs, tags, False
    keep = []
    for i, p in enumerate(points):
        if keep and math.hypot(*(p - points[keep[-1]])) <= tol:
            continue
        keep.append(i)
    while len(keep) > 1 and math.hypot(*(points[keep[-1]] - points[keep[0]])) <= tol:
        keep.pop()
    deduped = len(keep) != len(points)
    points = [points[i] for i in keep]
    tags = [tags[i] for i in keep]
    if jacs is not None:
        jacs = [jacs[i] for i in keep]
    return points, jacs, tags, deduped


def convex_intersection(p: BEVPoly, q: BEVPoly) -> BEVPoly | None:
    """Intersection of two convex polygons; None when (near-)empty."""
    pts = [p.corners[i].copy() for i in range(len(p.corners))]
    pts, _, _, _, _ = clip_convex(pts, q.corners)
    if len(pts) < 3:
        return None
    arr = np.array(pts)
    if signed_area(arr) <= AREA_TOL:
        return None
    return BEVPoly(arr)


def polygon_area(p: BEVPoly) -> float:
    return abs(signed_area(p.corners))


def polygon_centroid(p: BEVPoly) -> np.ndarray:
    """Area centroid of a convex polygon."""
    pts = p.corners
    m = len(pts)
    acc_x = acc_y = acc_a = 0.0
    for i in range(m):
        x1, y1 = pts[i]
        x2, y2 = pts[(i + 1) % m]
        c = x1 * y2 - x2 * y1
        acc_x += (x1 + x2) * c
        acc_y += (y1 + y2) * c
        acc_a += c
    return np.array([acc_x / (3.0 * acc_a), acc_y / (3.0 * acc_a)])


def point_in_convex(p: BEVPoly, point) -> bool:
    """True when the point lies inside or on the boundary (tolerance GEOM_TOL)."""
    x, y = float(point[0]), float(point[1])
    pts = p.corners
    m = len(pts)
    for i in range(m):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % m]
        ex, ey = bx - ax, by - ay
        if ex * (y - ay) - ey * (x - ax) < -GEOM_TOL * math.hypot(ex, ey):
            return False
    return True


def closest_point(p: BEVPoly, origin=(0.0, 0.0)) -> np.ndarray:
    """Boundary point of minimal distance to origin; origin itself when inside."""
    o = np.array([float(origin[0]), float(origin[1])])
    if point_in_convex(p, o):
        return o
    pts = p.corners
    m = len(pts)
    best = None
    best_d2 = math.inf
    for i in range(m):
        a = pts[i]
        b = pts[(i + 1) % m]
        e = b - a
        ee = e[0] * e[0] + e[1] * e[1]
        t = 0.0 if ee == 0.0 else ((o - a) @ e) / ee
        t = min(1.0, max(0.0, t))
        cand = a + t * e
        d2 = (cand[0] - o[0]) ** 2 + (cand[1] - o[1]) ** 2
        if d2 < best_d2:
            best_d2 = d2
            best = cand
    return best


def visible_extreme_corners(p: BEVPoly, origin=(0.0, 0.0)):
    """Corners of extreme bearing as seen from the origin.

    Returns (left, right): the vertices of maximal and minimal bearing
    within the polygon's angular span, measured CCW-positive relative to
    the direction toward the polygon centroid. Ties are broken by smaller
    distance to the origin. Raises OriginInsidePolygon when the origin is
    not strictly outside.
    """
    o = np.array([float(origin[0]), float(origin[1])])
    if point_in_convex(p, o):
        raise OriginInsidePolygon("extreme corners undefined from inside")
    ref = polygon_centroid(p) - o
    pts = p.corners
    best_l = best_r = -1
    ang_l, ang_r = -math.inf, math.inf
    d2_l = d2_r = math.inf
    for i in range(len(pts)):
        v = pts[i] - o
        ang = math.atan2(ref[0] * v[1] - ref[1] * v[0], ref[0] * v[0] + ref[1] * v[1])
        d2 = v[0] * v[0] + v[1] * v[1]
        if ang > ang_l or (ang == ang_l and d2 < d2_l):
            best_l, ang_l, d2_l = i, ang, d2
        if ang < ang_r or (ang == ang_r and d2 < d2_r):
            best_r, ang_r, d2_r = i, ang, d2
    return pts[best_l].copy(), pts[best_r].copy()


def _on_segment(a, b, p, tol: float) -> bool:
    """Collinearity assumed; bounding-box membership with tolerance."""
    return (min(a[0], b[0]) - tol <= p[0] <= max(a[0], b[0]) + tol
            and min(a[1], b[1]) - tol <= p[1] <= max(a[1], b[1]) + tol)


def segments_intersect(s1, s2, tol: float = GEOM_TOL) -> bool:
    """Crossing test for two segments, shared endpoints excluded.

    True when the segments meet at a point that is not an endpoint of
    both: proper interior crossings and T-contacts (an endpoint of one
    strictly inside the other) count; mere endpoint-to-endpoint contact
    and collinear grazing overlap do not. Segments shorter than tol never
    intersect anything.
    """
    p1 = np.array([float(s1[0][0]), float(s1[0][1])])
    p2 = np.array([float(s1[1][0]), float(s1[1][1])])
    q1 = np.array([float(s2[0][0]), float(s2[0][1])])
    q2 = np.array([float(s2[1][0]), float(s2[1][1])])
    lp = math.hypot(*(p2 - p1))
    lq = math.hypot(*(q2 - q1))
    if lp <= tol or lq <= tol:
        return False

    def orient(a, b, c, scale):
        v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        return 0.0 if abs(v) <= tol * scale else v

    o1 = orient(p1, p2, q1, lp)
    o2 = orient(p1, p2, q2, lp)
    o3 = orient(q1, q2, p1, lq)
    o4 = orient(q1, q2, p2, lq)
    if o1 * o2 < 0.0 and o3 * o4 < 0.0:
        return True
    if o1 == 0.0 and o2 == 0.0 and o3 == 0.0 and o4 == 0.0:
        return False
    touches = ((q1, o1, p1, p2), (q2, o2, p1, p2), (p1, o3, q1, q2), (p2, o4, q1, q2))
    for pt, o, a, b in touches:
        if o == 0.0 and _on_segment(a, b, pt, tol):
            shared = (math.hypot(*(pt - a)) <= tol or math.hypot(*(pt - b)) <= tol)
            if not shared:
                return True
    return False
