"""Safety coverage scoring (USC) for one prediction/ground-truth pair.

A matched pair is judged from two complementary views:

- perspective view (PV): the prediction should cover the ground truth in
  the ego camera image. Quantified by IoGT (intersection over the
  ground-truth area, saturating at 1 under full enclosure) and gated by
  the enclosure predicate pv_ok.
- bird's-eye view (BEV): the prediction should not sit farther from the
  ego vehicle than the ground truth. Quantified by ADR (geometric mean of
  distance ratios over the closest point and the two ego-visible extreme
  corners, each capped at 1) and gated by bev_ok, which requires the
  closest-point ordering plus non-crossing sight-line segments.

The pair score is usc = iogt * adr in [0, 1]; the qualitative predicate
is usc_ok = pv_ok and bev_ok.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, DegenerateDistance, EmptyGroundTruth
from .geometry import (
    DEPTH_EPS,
    DIST_EPS,
    BEVPoly,
    Box3D,
    CameraModel,
    PVRect,
    bev_polygon,
    box_corners,
    closest_point,
    segments_intersect,
    visible_extreme_corners,
)


@dataclass(frozen=True)
class USCResult:
    """Per-pair safety coverage scores and predicates."""

    iogt: float
    adr: float
    usc: float
    pv_ok: bool
    bev_ok: bool
    usc_ok: bool


def pv_rect(box: Box3D, cam: CameraModel) -> PVRect:
    """Axis-aligned projection-plane bounds over the visible box corners.

    Corners at camera-frame depth <= DEPTH_EPS are ignored; when every
    corner is behind the projection plane, BehindCamera is raised and the
    pair must be excluded from PV scoring.
    """
    pts = cam.to_camera(box_corners(box))
    vis = pts[:, 2] > DEPTH_EPS
    if not vis.any():
        raise BehindCamera("all box corners behind the projection plane")
    pts = pts[vis]
    a = cam.focal * pts[:, 0] / pts[:, 2]
    b = cam.focal * pts[:, 1] / pts[:, 2]
    return PVRect(float(a.min()), float(b.min()), float(a.max()), float(b.max()))


def pv_encloses(p: PVRect, g: PVRect) -> bool:
    """Enclosure predicate: g fits inside p (non-strict)."""
    return (p.a_min <= g.a_min and p.b_min <= g.b_min
            and g.a_max <= p.a_max and g.b_max <= p.b_max)


def rect_intersection_area(p: PVRect, g: PVRect) -> float:
    w = min(p.a_max, g.a_max) - max(p.a_min, g.a_min)
    h = min(p.b_max, g.b_max) - max(p.b_min, g.b_min)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iogt(p: PVRect, g: PVRect) -> float:
    """Intersection over ground-truth area; 1 exactly iff p encloses g."""
    ga = g.area
    if ga <= 0.0:
        raise EmptyGroundTruth("ground-truth PV rectangle has zero area")
    return rect_intersection_area(p, g) / ga


def _representatives(poly: BEVPoly, origin):
    """(closest point, left extreme corner, right extreme corner)."""
    left, right = visible_extreme_corners(poly, origin)
    return closest_point(poly, origin), left, right


def bev_predicate(p: BEVPoly, g: BEVPoly, origin=(0.0, 0.0)) -> bool:
    """Closest-point ordering plus non-crossing sight-line segments.

    The four segments run from each footprint's closest point to its two
    extreme corners; the crossing test covers all six unordered pairs.
    """
    pc, pl, pr = _representatives(p, origin)
    gc, gl, gr = _representatives(g, origin)
    o = np.array([float(origin[0]), float(origin[1])])
    if math.hypot(*(pc - o)) > math.hypot(*(gc - o)):
        return False
    segs = ((pc, pr), (pc, pl), (gc, gr), (gc, gl))
    for i in range(4):
        for j in range(i + 1, 4):
            if segments_intersect(segs[i], segs[j]):
                return False
    return True


def adr(p: BEVPoly, g: BEVPoly, origin=(0.0, 0.0), eps_dist: float = DIST_EPS) -> float:
    """Geometric mean of capped ground-truth/prediction distance ratios.

    Each of the three representative-point pairs contributes
    min(1, |v_g| / |v_p|); the result lies in (0, 1] and saturates at 1
    exactly when no prediction point is farther than its ground-truth
    counterpart.
    """
    o = np.array([float(origin[0]), float(origin[1])])
    p_pts = _representatives(p, origin)
    g_pts = _representatives(g, origin)
    prod = 1.0
    for vp, vg in zip(p_pts, g_pts):
        dp = math.hypot(*(vp - o))
        dg = math.hypot(*(vg - o))
        if dp <= eps_dist or dg <= eps_dist:
            raise DegenerateDistance(
                f"representative point within {eps_dist} m of the origin")
        ratio = dg / dp
        prod *= ratio if ratio < 1.0 else 1.0
    return prod ** (1.0 / 3.0)


def usc_pair(p: Box3D, g: Box3D, cam: CameraModel, origin=(0.0, 0.0),
             eps_dist: float = DIST_EPS) -> USCResult:
    """Full safety coverage score for one matched pair.

    Raises BehindCamera, EmptyGroundTruth, OriginInsidePolygon or
    DegenerateDistance when a constituent is undefined; callers doing
    dataset aggregation record such pairs as skipped.
    """
    p_rect = pv_rect(p, cam)
    g_rect = pv_rect(g, cam)
    io = float(iogt(p_rect, g_rect))
    pv_ok = bool(pv_encloses(p_rect, g_rect))
    p_bev = bev_polygon(p)
    g_bev = bev_polygon(g)
    bev_ok = bev_predicate(p_bev, g_bev, origin)
    a = adr(p_bev, g_bev, origin, eps_dist)
    return USCResult(iogt=io, adr=a, usc=io * a,
                     pv_ok=pv_ok, bev_ok=bev_ok, usc_ok=pv_ok and bev_ok)
