"""Batched pair-scoring kernels (numba) mirroring the scalar modules.

The evaluation layer scores thousands of matched pairs per run; these
kernels compute IoGT/ADR/USC, BEV IoU, EC-IoU and the translation error
for N pairs in one call. They follow the scalar implementations in
geometry/usc/eciou operation for operation so that outputs agree within
1e-9; the parity is pinned by tests.

Per-pair status bits record which scores are undefined:

    PV_SKIP     perspective-view terms unavailable (box fully behind the
                camera, or a degenerate ground-truth rectangle)
    BEV_SKIP    ADR/bev_ok unavailable (origin inside a footprint, or a
                representative point too close to the origin)
    ECIOU_SKIP  EC-IoU unavailable (origin inside or too close to the
                ground-truth footprint)

Scores masked by a status bit are set to NaN; IoU and the translation
error are always defined.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .geometry import AREA_TOL, DEPTH_EPS, GEOM_TOL
from .geometry import Box3D, CameraModel

PV_SKIP = 1
BEV_SKIP = 2
ECIOU_SKIP = 4

_SL = (1.0, -1.0, -1.0, 1.0)
_SW = (1.0, 1.0, -1.0, -1.0)


@njit(cache=True)
def _footprint(out, cx, cy, w, l, yaw):
    c = math.cos(yaw)
    s = math.sin(yaw)
    hl = 0.5 * l
    hw = 0.5 * w
    for k in range(4):
        lx = _SL[k] * hl
        wy = _SW[k] * hw
        out[k, 0] = cx + c * lx - s * wy
        out[k, 1] = cy + s * lx + c * wy


@njit(cache=True)
def _signed_area(pts, m):
    total = 0.0
    for i in range(m):
        j = (i + 1) % m
        total += pts[i, 0] * pts[j, 1] - pts[j, 0] * pts[i, 1]
    return 0.5 * total


@njit(cache=True)
def _centroid(pts, m):
    ax = 0.0
    ay = 0.0
    aa = 0.0
    for i in range(m):
        j = (i + 1) % m
        c = pts[i, 0] * pts[j, 1] - pts[j, 0] * pts[i, 1]
        ax += (pts[i, 0] + pts[j, 0]) * c
        ay += (pts[i, 1] + pts[j, 1]) * c
        aa += c
    return ax / (3.0 * aa), ay / (3.0 * aa)


@njit(cache=True)
def _point_in(pts, m, x, y):
    for i in range(m):
        j = (i + 1) % m
        ex = pts[j, 0] - pts[i, 0]
        ey = pts[j, 1] - pts[i, 1]
        if ex * (y - pts[i, 1]) - ey * (x - pts[i, 0]) < -GEOM_TOL * math.hypot(ex, ey):
            return False
    return True


@njit(cache=True)
def _clip4(subject, clip, out):
    """Sutherland-Hodgman clip of one convex quad by another; returns m."""
    buf_a = np.empty((16, 2))
    buf_b = np.empty((16, 2))
    d = np.empty(16)
    n = 4
    for k in range(4):
        buf_a[k, 0] = subject[k, 0]
        buf_a[k, 1] = subject[k, 1]
    for e in range(4):
        if n == 0:
            break
        ax = clip[e, 0]
        ay = clip[e, 1]
        bx = clip[(e + 1) % 4, 0]
        by = clip[(e + 1) % 4, 1]
        ex = bx - ax
        ey = by - ay
        for i in range(n):
            d[i] = ex * (buf_a[i, 1] - ay) - ey * (buf_a[i, 0] - ax)
        cnt = 0
        for cur in range(n):
            prev = (cur - 1) % n
            d1 = d[prev]
            d2 = d[cur]
            in1 = d1 >= 0.0
            in2 = d2 >= 0.0
            if in2:
                if not in1:
                    t = d1 / (d1 - d2)
                    buf_b[cnt, 0] = buf_a[prev, 0] + t * (buf_a[cur, 0] - buf_a[prev, 0])
                    buf_b[cnt, 1] = buf_a[prev, 1] + t * (buf_a[cur, 1] - buf_a[prev, 1])
                    cnt += 1
                buf_b[cnt, 0] = buf_a[cur, 0]
                buf_b[cnt, 1] = buf_a[cur, 1]
                cnt += 1
            elif in1:
                t = d1 / (d1 - d2)
                buf_b[cnt, 0] = buf_a[prev, 0] + t * (buf_a[cur, 0] - buf_a[prev, 0])
                buf_b[cnt, 1] = buf_a[prev, 1] + t * (buf_a[cur, 1] - buf_a[prev, 1])
                cnt += 1
        n = cnt
        for i in range(n):
            buf_a[i, 0] = buf_b[i, 0]
            buf_a[i, 1] = buf_b[i, 1]
    # dedup consecutive vertices (wraparound included)
    m = 0
    for i in range(n):
        if m > 0 and math.hypot(buf_a[i, 0] - out[m - 1, 0],
                                buf_a[i, 1] - out[m - 1, 1]) <= GEOM_TOL:
            continue
        out[m, 0] = buf_a[i, 0]
        out[m, 1] = buf_a[i, 1]
        m += 1
    while m > 1 and math.hypot(out[m - 1, 0] - out[0, 0],
                               out[m - 1, 1] - out[0, 1]) <= GEOM_TOL:
        m -= 1
    return m


@njit(cache=True)
def _closest(pts, m, ox, oy):
    best_d2 = math.inf
    bx = 0.0
    by = 0.0
    for i in range(m):
        j = (i + 1) % m
        ax = pts[i, 0]
        ay = pts[i, 1]
        ex = pts[j, 0] - ax
        ey = pts[j, 1] - ay
        ee = ex * ex + ey * ey
        t = 0.0
        if ee > 0.0:
            t = ((ox - ax) * ex + (oy - ay) * ey) / ee
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        cx = ax + t * ex
        cy = ay + t * ey
        d2 = (cx - ox) ** 2 + (cy - oy) ** 2
        if d2 < best_d2:
            best_d2 = d2
            bx = cx
            by = cy
    return bx, by


@njit(cache=True)
def _extremes(pts, m, ox, oy):
    refx, refy = _centroid(pts, m)
    refx -= ox
    refy -= oy
    li = -1
    ri = -1
    ang_l = -math.inf
    ang_r = math.inf
    d2_l = math.inf
    d2_r = math.inf
    for i in range(m):
        vx = pts[i, 0] - ox
        vy = pts[i, 1] - oy
        ang = math.atan2(refx * vy - refy * vx, refx * vx + refy * vy)
        d2 = vx * vx + vy * vy
        if ang > ang_l or (ang == ang_l and d2 < d2_l):
            li, ang_l, d2_l = i, ang, d2
        if ang < ang_r or (ang == ang_r and d2 < d2_r):
            ri, ang_r, d2_r = i, ang, d2
    return li, ri


@njit(cache=True)
def _seg_cross(p1x, p1y, p2x, p2y, q1x, q1y, q2x, q2y):
    lp = math.hypot(p2x - p1x, p2y - p1y)
    lq = math.hypot(q2x - q1x, q2y - q1y)
    if lp <= GEOM_TOL or lq <= GEOM_TOL:
        return False
    o1 = (p2x - p1x) * (q1y - p1y) - (p2y - p1y) * (q1x - p1x)
    if abs(o1) <= GEOM_TOL * lp:
        o1 = 0.0
    o2 = (p2x - p1x) * (q2y - p1y) - (p2y - p1y) * (q2x - p1x)
    if abs(o2) <= GEOM_TOL * lp:
        o2 = 0.0
    o3 = (q2x - q1x) * (p1y - q1y) - (q2y - q1y) * (p1x - q1x)
    if abs(o3) <= GEOM_TOL * lq:
        o3 = 0.0
    o4 = (q2x - q1x) * (p2y - q1y) - (q2y - q1y) * (p2x - q1x)
    if abs(o4) <= GEOM_TOL * lq:
        o4 = 0.0
    if o1 * o2 < 0.0 and o3 * o4 < 0.0:
        return True
    if o1 == 0.0 and o2 == 0.0 and o3 == 0.0 and o4 == 0.0:
        return False
    for k in range(4):
        if k == 0:
            px, py, o, ax, ay, bx, by = q1x, q1y, o1, p1x, p1y, p2x, p2y
        elif k == 1:
            px, py, o, ax, ay, bx, by = q2x, q2y, o2, p1x, p1y, p2x, p2y
        elif k == 2:
            px, py, o, ax, ay, bx, by = p1x, p1y, o3, q1x, q1y, q2x, q2y
        else:
            px, py, o, ax, ay, bx, by = p2x, p2y, o4, q1x, q1y, q2x, q2y
        if o == 0.0:
            if (min(ax, bx) - GEOM_TOL <= px <= max(ax, bx) + GEOM_TOL
                    and min(ay, by) - GEOM_TOL <= py <= max(ay, by) + GEOM_TOL):
                if (math.hypot(px - ax, py - ay) > GEOM_TOL
                        and math.hypot(px - bx, py - by) > GEOM_TOL):
                    return True
    return False


@njit(cache=True)
def _pv_bounds(box, cam_r, cam_t, focal):
    """(found, a_min, b_min, a_max, b_max) over visible projected corners."""
    cx, cy, cz = box[0], box[1], box[2]
    w, l, h = box[3], box[4], box[5]
    foot = np.empty((4, 2))
    _footprint(foot, cx, cy, w, l, box[6])
    a_min = math.inf
    b_min = math.inf
    a_max = -math.inf
    b_max = -math.inf
    found = False
    for k in range(8):
        fx = foot[k % 4, 0]
        fy = foot[k % 4, 1]
        fz = cz - 0.5 * h if k < 4 else cz + 0.5 * h
        qx = cam_r[0, 0] * fx + cam_r[0, 1] * fy + cam_r[0, 2] * fz + cam_t[0]
        qy = cam_r[1, 0] * fx + cam_r[1, 1] * fy + cam_r[1, 2] * fz + cam_t[1]
        qz = cam_r[2, 0] * fx + cam_r[2, 1] * fy + cam_r[2, 2] * fz + cam_t[2]
        if qz <= DEPTH_EPS:
            continue
        a = focal * qx / qz
        b = focal * qy / qz
        found = True
        if a < a_min:
            a_min = a
        if a > a_max:
            a_max = a
        if b < b_min:
            b_min = b
        if b > b_max:
            b_max = b
    return found, a_min, b_min, a_max, b_max


@njit(cache=True)
def _gm_weights(pts, m, ox, oy, g_dist, alpha, eps_dist):
    """Geometric mean of vertex weights; -1 on a degenerate distance."""
    prod = 1.0
    for i in range(m):
        rho = math.hypot(pts[i, 0] - ox, pts[i, 1] - oy)
        if rho <= eps_dist:
            return -1.0
        prod *= (g_dist / rho) ** alpha
    return prod ** (1.0 / m)


@njit(cache=True)
def _pair_scores(pred, gt, cam_r, cam_t, focal, ox, oy, alpha, eps_dist,
                 clamp_out, iogt_o, adr_o, usc_o, iou_o, eciou_o, te_o,
                 pv_ok_o, bev_ok_o, status_o):
    n = pred.shape[0]
    p4 = np.empty((4, 2))
    g4 = np.empty((4, 2))
    inter = np.empty((16, 2))
    for i in range(n):
        status = 0
        pb = pred[i]
        gb = gt[i]

        # perspective view: enclosure predicate and IoGT
        iogt_v = np.nan
        pv_ok = 0
        okp, pa0, pb0, pa1, pb1 = _pv_bounds(pb, cam_r, cam_t, focal)
        okg, ga0, gb0, ga1, gb1 = _pv_bounds(gb, cam_r, cam_t, focal)
        if not okp or not okg:
            status |= PV_SKIP
        else:
            ga = (ga1 - ga0) * (gb1 - gb0)
            if ga <= 0.0:
                status |= PV_SKIP
            else:
                iw = min(pa1, ga1) - max(pa0, ga0)
                ih = min(pb1, gb1) - max(pb0, gb0)
                inter_a = iw * ih if (iw > 0.0 and ih > 0.0) else 0.0
                iogt_v = inter_a / ga
                if pa0 <= ga0 and pb0 <= gb0 and ga1 <= pa1 and gb1 <= pb1:
                    pv_ok = 1

        # BEV footprints
        _footprint(p4, pb[0], pb[1], pb[3], pb[4], pb[6])
        _footprint(g4, gb[0], gb[1], gb[3], gb[4], gb[6])
        te_o[i] = math.hypot(pb[0] - gb[0], pb[1] - gb[1])

        area_p = abs(_signed_area(p4, 4))
        area_g = abs(_signed_area(g4, 4))
        m = _clip4(p4, g4, inter)
        area_i = 0.0
        if m >= 3:
            area_i = _signed_area(inter, m)
            if area_i <= AREA_TOL:
                area_i = 0.0
                m = 0
        else:
            m = 0
        iou_o[i] = area_i / (area_p + area_g - area_i)

        # BEV safety terms
        adr_v = np.nan
        bev_ok = 0
        if _point_in(p4, 4, ox, oy) or _point_in(g4, 4, ox, oy):
            status |= BEV_SKIP
        else:
            pcx, pcy = _closest(p4, 4, ox, oy)
            gcx, gcy = _closest(g4, 4, ox, oy)
            pli, pri = _extremes(p4, 4, ox, oy)
            gli, gri = _extremes(g4, 4, ox, oy)
            dpc = math.hypot(pcx - ox, pcy - oy)
            dgc = math.hypot(gcx - ox, gcy - oy)
            dpl = math.hypot(p4[pli, 0] - ox, p4[pli, 1] - oy)
            dgl = math.hypot(g4[gli, 0] - ox, g4[gli, 1] - oy)
            dpr = math.hypot(p4[pri, 0] - ox, p4[pri, 1] - oy)
            dgr = math.hypot(g4[gri, 0] - ox, g4[gri, 1] - oy)
            if (dpc <= eps_dist or dgc <= eps_dist or dpl <= eps_dist
                    or dgl <= eps_dist or dpr <= eps_dist or dgr <= eps_dist):
                status |= BEV_SKIP
            else:
                prod = 1.0
                r = dgc / dpc
                prod *= r if r < 1.0 else 1.0
                r = dgl / dpl
                prod *= r if r < 1.0 else 1.0
                r = dgr / dpr
                prod *= r if r < 1.0 else 1.0
                adr_v = prod ** (1.0 / 3.0)
                if dpc <= dgc:
                    crossed = False
                    sx = (pcx, pcx, gcx, gcx)
                    sy = (pcy, pcy, gcy, gcy)
                    tx = (p4[pri, 0], p4[pli, 0], g4[gri, 0], g4[gli, 0])
                    ty = (p4[pri, 1], p4[pli, 1], g4[gri, 1], g4[gli, 1])
                    for u in range(4):
                        for v in range(u + 1, 4):
                            if _seg_cross(sx[u], sy[u], tx[u], ty[u],
                                          sx[v], sy[v], tx[v], ty[v]):
                                crossed = True
                    if not crossed:
                        bev_ok = 1

        # ego-centric IoU
        eciou_v = np.nan
        if area_g <= AREA_TOL or _point_in(g4, 4, ox, oy):
            status |= ECIOU_SKIP
        else:
            gcenx, gceny = _centroid(g4, 4)
            g_dist = math.hypot(gcenx - ox, gceny - oy)
            if g_dist <= eps_dist:
                status |= ECIOU_SKIP
            else:
                if m < 3:
                    eciou_v = 0.0
                else:
                    gm_i = _gm_weights(inter, m, ox, oy, g_dist, alpha, eps_dist)
                    gm_g = _gm_weights(g4, 4, ox, oy, g_dist, alpha, eps_dist)
                    if gm_i < 0.0 or gm_g < 0.0:
                        status |= ECIOU_SKIP
                    else:
                        wa_i = area_i * gm_i
                        wa_g = area_g * gm_g
                        v = wa_i / (wa_g + (area_p - area_i))
                        if clamp_out:
                            v = min(1.0, max(0.0, v))
                        eciou_v = v

        iogt_o[i] = iogt_v
        adr_o[i] = adr_v
        usc_o[i] = iogt_v * adr_v if status & (PV_SKIP | BEV_SKIP) == 0 else np.nan
        eciou_o[i] = eciou_v
        pv_ok_o[i] = pv_ok
        bev_ok_o[i] = bev_ok
        status_o[i] = status


def boxes_to_array(boxes) -> np.ndarray:
    """Stack Box3D instances into an (N, 7) cx,cy,cz,w,l,h,yaw array."""
    out = np.empty((len(boxes), 7))
    for i, b in enumerate(boxes):
        out[i, 0:3] = b.center
        out[i, 3:6] = b.size
        out[i, 6] = b.yaw
    return out


def score_pairs(pred, gt, cam: CameraModel, origin=(0.0, 0.0),
                alpha: float = 2.0, eps_dist: float = 1e-6,
                clamp_output: bool = True) -> dict:
    """Score N prediction/ground-truth pairs in one kernel call.

    ``pred`` and ``gt`` are sequences of Box3D or (N, 7) arrays. Returns a
    dict of positionally aligned arrays: iogt, adr, usc, iou, eciou, te,
    pv_ok, bev_ok, status.
    """
    pred_arr = pred if isinstance(pred, np.ndarray) else boxes_to_array(pred)
    gt_arr = gt if isinstance(gt, np.ndarray) else boxes_to_array(gt)
    if pred_arr.shape != gt_arr.shape or pred_arr.ndim != 2 or pred_arr.shape[1] != 7:
        raise ValueError("pred and gt must be matching (N, 7) arrays")
    n = pred_arr.shape[0]
    out = {
        "iogt": np.empty(n), "adr": np.empty(n), "usc": np.empty(n),
        "iou": np.empty(n), "eciou": np.empty(n), "te": np.empty(n),
        "pv_ok": np.empty(n, dtype=np.uint8),
        "bev_ok": np.empty(n, dtype=np.uint8),
        "status": np.empty(n, dtype=np.uint8),
    }
    _pair_scores(np.ascontiguousarray(pred_arr, dtype=np.float64),
                 np.ascontiguousarray(gt_arr, dtype=np.float64),
                 cam.rotation_matrix(), cam.translation_vector(),
                 float(cam.focal), float(origin[0]), float(origin[1]),
                 float(alpha), float(eps_dist), bool(clamp_output),
                 out["iogt"], out["adr"], out["usc"], out["iou"],
                 out["eciou"], out["te"], out["pv_ok"], out["bev_ok"],
                 out["status"])
    return out
