"""Ego-centric IoU: value, loss form, and analytic gradients.

EC-IoU reweights the ground-truth region by proximity to the ego origin:
a point (x, y) inside G carries weight

    w(x, y) = [rho(G center) / rho(x, y)] ** alpha,   alpha >= 0,

with rho the Euclidean distance to the origin. The weighted area of a
convex region is approximated as its exact area times the geometric mean
of its vertex weights, and

    ec_iou = weighted_area(P & G) / (weighted_area(G) + area(P) - area(P & G)).

At alpha = 0 every weight is exactly 1 and the value reduces to plain
IoU. The geometric-mean approximation can push the raw value slightly
above 1 for ego-near intersections; by default the output is clamped to
[0, 1] (clamp_output=False exposes the raw value).

Gradients are taken with respect to the prediction footprint parameters
(cx, cy, w, l, yaw) by differentiating through the polygon clipping and
the vertex weighting. Non-overlapping pairs sit on a loss plateau and
return zero gradients; configurations at a clipping-topology change
return a one-sided subgradient flagged "boundary"; a clamped value
returns zero gradients flagged "clamped".
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDistance, EmptyGroundTruth
from .geometry import (
    AREA_TOL,
    DIST_EPS,
    GEOM_TOL,
    BEVPoly,
    Box3D,
    bev_polygon,
    clip_convex,
    convex_intersection,
    footprint_corners,
    point_in_convex,
    polygon_area,
    polygon_centroid,
    signed_area,
)

GRAD_SMOOTH = "smooth"
GRAD_NON_OVERLAPPING = "non_overlapping"
GRAD_BOUNDARY = "boundary"
GRAD_CLAMPED = "clamped"

# Intersection areas at or below this are treated as a loss plateau.
OVERLAP_MIN_AREA = 1e-9


@dataclass(frozen=True)
class ECIoUParams:
    """Weighting exponent and numerical guards."""

    alpha: float = 2.0
    eps_dist: float = DIST_EPS
    clamp_output: bool = True

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha >= 0.0):
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.eps_dist <= 0.0:
            raise ValueError("eps_dist must be positive")


@dataclass(frozen=True)
class ECIoUGrad:
    """d(ec_iou)/d(cx, cy, w, l, yaw) of the prediction footprint."""

    d_cx: float
    d_cy: float
    d_w: float
    d_l: float
    d_yaw: float
    flag: str = GRAD_SMOOTH

    def as_array(self) -> np.ndarray:
        return np.array([self.d_cx, self.d_cy, self.d_w, self.d_l, self.d_yaw])


def weight(point, g: BEVPoly, origin=(0.0, 0.0),
           params: ECIoUParams = ECIoUParams()) -> float:
    """Ego-centric weight of a point relative to the ground-truth center."""
    ox, oy = float(origin[0]), float(origin[1])
    gc = polygon_centroid(g)
    rho_c = math.hypot(gc[0] - ox, gc[1] - oy)
    rho_p = math.hypot(float(point[0]) - ox, float(point[1]) - oy)
    if rho_c <= params.eps_dist or rho_p <= params.eps_dist:
        raise DegenerateDistance("point or footprint center at the origin")
    return (rho_c / rho_p) ** params.alpha


def _vertex_weight_gm(pts, ox: float, oy: float, g_center_dist: float,
                      params: ECIoUParams) -> float:
    """Geometric mean of vertex weights (product form, root at the end)."""
    prod = 1.0
    for p in pts:
        rho = math.hypot(p[0] - ox, p[1] - oy)
        if rho <= params.eps_dist:
            raise DegenerateDistance("polygon vertex at the origin")
        prod *= (g_center_dist / rho) ** params.alpha
    return prod ** (1.0 / len(pts))


def weighted_area(d: BEVPoly, g_center_dist: float, origin=(0.0, 0.0),
                  params: ECIoUParams = ECIoUParams()) -> float:
    """Area of d times the geometric mean of its vertex weights."""
    ox, oy = float(origin[0]), float(origin[1])
    gm = _vertex_weight_gm(d.corners, ox, oy, g_center_dist, params)
    return polygon_area(d) * gm


def _check_gt(g: BEVPoly, origin, params: ECIoUParams) -> float:
    """Validate the ground truth and return its center distance."""
    if polygon_area(g) <= AREA_TOL:
        raise EmptyGroundTruth("ground-truth footprint has zero area")
    if point_in_convex(g, origin):
        raise DegenerateDistance("ego origin inside the ground-truth footprint")
    gc = polygon_centroid(g)
    dist = math.hypot(gc[0] - float(origin[0]), gc[1] - float(origin[1]))
    if dist <= params.eps_dist:
        raise DegenerateDistance("ground-truth center at the origin")
    return dist


def ec_iou(p: BEVPoly, g: BEVPoly, origin=(0.0, 0.0),
           params: ECIoUParams = ECIoUParams()) -> float:
    """Ego-centric IoU of two convex BEV footprints."""
    g_dist = _check_gt(g, origin, params)
    inter = convex_intersection(p, g)
    if inter is None:
        return 0.0
    wa_inter = weighted_area(inter, g_dist, origin, params)
    wa_g = weighted_area(g, g_dist, origin, params)
    denom = wa_g + (polygon_area(p) - polygon_area(inter))
    value = wa_inter / denom
    if params.clamp_output:
        value = min(1.0, max(0.0, value))
    return value


def ec_iou_loss(p: Box3D, g: Box3D, origin=(0.0, 0.0),
                params: ECIoUParams = ECIoUParams()) -> float:
    """Unit-complement loss: 1 - ec_iou of the two box footprints."""
    return 1.0 - ec_iou(bev_polygon(p), bev_polygon(g), origin, params)


def _corner_jacobians(cx, cy, w, l, yaw):
    """Footprint corners plus d(corner)/d(cx, cy, w, l, yaw)."""
    from .geometry import CORNER_SIGNS

    pts = footprint_corners(cx, cy, w, l, yaw)
    c, s = math.cos(yaw), math.sin(yaw)
    points = []
    jacs = []
    for k, (sl, sw) in enumerate(CORNER_SIGNS):
        lx, wy = sl * 0.5 * l, sw * 0.5 * w
        jac = np.array([
            [1.0, 0.0, -s * sw * 0.5, c * sl * 0.5, -s * lx - c * wy],
            [0.0, 1.0, c * sw * 0.5, s * sl * 0.5, c * lx - s * wy],
        ])
        points.append(pts[k].copy())
        jacs.append(jac)
    return points, jacs


def _shoelace_grad(pts, jacs):
    """Signed area of the ring plus its parameter gradient."""
    m = len(pts)
    area = 0.5 * sum(pts[i][0] * pts[(i + 1) % m][1] - pts[(i + 1) % m][0] * pts[i][1]
                     for i in range(m))
    grad = np.zeros(jacs[0].shape[1])
    for i in range(m):
        prev = pts[(i - 1) % m]
        nxt = pts[(i + 1) % m]
        gx = 0.5 * (nxt[1] - prev[1])
        gy = 0.5 * (prev[0] - nxt[0])
        grad += gx * jacs[i][0] + gy * jacs[i][1]
    return area, grad


def _footprint_value_grad(p5, g5, origin, params: ECIoUParams):
    """(value, grad(5,), flag, tags) for footprint parameter rows.

    The forward value matches ec_iou on the same footprints; the gradient
    differentiates the value actually returned (a clamped value is a
    plateau with zero gradient).
    """
    ox, oy = float(origin[0]), float(origin[1])
    g_poly = BEVPoly(footprint_corners(*g5))
    g_dist = _check_gt(g_poly, (ox, oy), params)

    pts, jacs = _corner_jacobians(*p5)
    pts, jacs, tags, min_dist, deduped = clip_convex(pts, g_poly.corners, jacs)
    zero = np.zeros(5)
    if len(pts) < 3:
        return 0.0, zero, GRAD_NON_OVERLAPPING, tuple(tags)
    area_inter, d_area_inter = _shoelace_grad(pts, jacs)
    if area_inter <= AREA_TOL:
        return 0.0, zero, GRAD_NON_OVERLAPPING, tuple(tags)

    gm = _vertex_weight_gm(pts, ox, oy, g_dist, params)
    wa_inter = area_inter * gm
    wa_g = weighted_area(g_poly, g_dist, (ox, oy), params)
    area_p = p5[2] * p5[3]
    denom = wa_g + (area_p - area_inter)
    value = wa_inter / denom

    if area_inter <= OVERLAP_MIN_AREA:
        out = min(1.0, value) if params.clamp_output else value
        return out, zero, GRAD_NON_OVERLAPPING, tuple(tags)
    if params.clamp_output and value >= 1.0:
        return 1.0, zero, GRAD_CLAMPED, tuple(tags)

    # d log(gm) = -(alpha / m) * sum_i (v_i - o) . J_i / rho_i^2
    m = len(pts)
    s = np.zeros(5)
    for i in range(m):
        vx, vy = pts[i][0] - ox, pts[i][1] - oy
        rho2 = vx * vx + vy * vy
        s += (vx * jacs[i][0] + vy * jacs[i][1]) / rho2
    d_gm = gm * (-params.alpha / m) * s
    d_wa_inter = gm * d_area_inter + area_inter * d_gm
    d_area_p = np.array([0.0, 0.0, p5[3], p5[2], 0.0])
    d_denom = d_area_p - d_area_inter
    grad = (d_wa_inter * denom - wa_inter * d_denom) / (denom * denom)

    flag = GRAD_SMOOTH
    if deduped or min_dist < GEOM_TOL:
        flag = GRAD_BOUNDARY
    return value, grad, flag, tuple(tags)


def _box_footprint5(box: Box3D):
    return (box.center[0], box.center[1], box.width, box.length, box.yaw)


def ec_iou_grad(p: Box3D, g: Box3D, origin=(0.0, 0.0),
                params: ECIoUParams = ECIoUParams()) -> ECIoUGrad:
    """Gradient of ec_iou with respect to the prediction footprint."""
    _, grad, flag, _ = _footprint_value_grad(
        _box_footprint5(p), _box_footprint5(g), origin, params)
    return ECIoUGrad(*grad, flag=flag)


def footprint_overlap_tags(p: Box3D, g: Box3D, origin=(0.0, 0.0),
                           params: ECIoUParams = ECIoUParams()) -> tuple:
    """Provenance tags of the clipped overlap vertices.

    Diagnostic: two configurations with equal tags share a clipping
    topology, so ec_iou is smooth along any path between them that keeps
    the tags constant.
    """
    _, _, _, tags = _footprint_value_grad(
        _box_footprint5(p), _box_footprint5(g), origin, params)
    return tags
