"""USC scoring: PV enclosure/IoGT, BEV predicate/ADR, composition."""
import itertools
import math

import numpy as np
import pytest
from shapely.geometry import Point

from egoeval import (
    BehindCamera,
    BEVPoly,
    Box3D,
    CameraModel,
    EmptyGroundTruth,
    PVRect,
    adr,
    bev_polygon,
    bev_predicate,
    convex_intersection,
    iogt,
    polygon_area,
    pv_rect,
    usc_pair,
)
from egoeval.usc import pv_encloses
from oracles import brute_extreme_corners, shapely_poly
from util import random_pair

CAM = CameraModel.front_facing(1.0)


def rect(x0, x1, y0, y1):
    return PVRect(x0, y0, x1, y1)


class TestPVRect:
    def test_unit_cube_on_axis(self):
        box = Box3D(center=(10, 0, 0), size=(1, 1, 1), yaw=0.0)
        r = pv_rect(box, CAM)
        lim = 0.5 / 9.5  # near-face corners dominate the projected bounds
        assert (r.a_min, r.a_max) == pytest.approx((-lim, lim))
        assert (r.b_min, r.b_max) == pytest.approx((-lim, lim))

    def test_fully_behind_camera(self):
        box = Box3D(center=(-10, 0, 0), size=(1, 1, 1), yaw=0.0)
        with pytest.raises(BehindCamera):
            pv_rect(box, CAM)

    def test_perspective_shrinkage(self):
        near = Box3D(center=(10, 0, 0), size=(2, 2, 2), yaw=0.3)
        far = Box3D(center=(25, 0, 0), size=(2, 2, 2), yaw=0.3)
        rn, rf = pv_rect(near, CAM), pv_rect(far, CAM)
        assert rf.a_max - rf.a_min < rn.a_max - rn.a_min
        assert rf.b_max - rf.b_min < rn.b_max - rn.b_min

    def test_straddling_box_uses_visible_corners(self):
        box = Box3D(center=(0.4, 0, 0), size=(1, 2, 1), yaw=0.0)
        r = pv_rect(box, CAM)  # rear corners behind the plane are dropped
        assert math.isfinite(r.a_min) and math.isfinite(r.a_max)


class TestIoGT:
    def test_enclosure_saturates(self):
        assert iogt(rect(-2, 2, -2, 2), rect(-1, 1, -1, 1)) == 1.0

    def test_half_cover(self):
        assert iogt(rect(-1, 0, -1, 1), rect(-1, 1, -1, 1)) == pytest.approx(0.5)

    def test_disjoint(self):
        assert iogt(rect(5, 6, 5, 6), rect(-1, 1, -1, 1)) == 0.0

    def test_empty_ground_truth(self):
        with pytest.raises(EmptyGroundTruth):
            iogt(rect(-1, 1, -1, 1), rect(0, 0, 0, 0))

    def test_saturation_iff_enclosure(self):
        rng = np.random.default_rng(3)
        hits = 0
        for _ in range(5000):
            p = rect(*np.sort(rng.uniform(-2, 2, 2)), *np.sort(rng.uniform(-2, 2, 2)))
            g = rect(*np.sort(rng.uniform(-1.5, 1.5, 2)), *np.sort(rng.uniform(-1.5, 1.5, 2)))
            if g.area == 0.0:
                continue
            saturated = iogt(p, g) == 1.0
            assert saturated == pv_encloses(p, g)
            hits += saturated
        assert 0 < hits < 5000


class TestBEVPredicate:
    def test_identical(self):
        g = bev_polygon(Box3D(center=(12, 1, 0), size=(2, 4.5, 1), yaw=0.4))
        assert bev_predicate(g, g) is True

    def test_farther_prediction_fails_closest_constraint(self):
        g = bev_polygon(Box3D(center=(12, 0, 0), size=(2, 4, 1), yaw=0.0))
        p = bev_polygon(Box3D(center=(14, 0, 0), size=(2, 4, 1), yaw=0.0))
        assert bev_predicate(p, g) is False

    def test_covering_nearer_prediction_passes(self):
        g = bev_polygon(Box3D(center=(20, 0, 0), size=(2.5, 6, 1), yaw=0.0))
        blue = bev_polygon(Box3D(center=(19, 0, 0), size=(2.5, 6, 1), yaw=0.0))
        red = bev_polygon(Box3D(center=(21, 0, 0), size=(2.5, 6, 1), yaw=0.0))
        assert bev_predicate(blue, g) is True
        assert bev_predicate(red, g) is False


class TestADR:
    def test_identical(self):
        g = bev_polygon(Box3D(center=(9, -2, 0), size=(1.5, 3, 1), yaw=-0.7))
        assert adr(g, g) == 1.0

    def test_uniform_scale_by_1_25(self):
        g = bev_polygon(Box3D(center=(10, 4, 0), size=(2, 4, 1), yaw=0.5))
        p = BEVPoly(g.corners * 1.25)  # every representative distance x1.25
        assert adr(p, g) == pytest.approx(0.8, rel=1e-12)

    def test_nearer_prediction_saturates(self):
        g = bev_polygon(Box3D(center=(15, 0, 0), size=(2, 4, 1), yaw=0.0))
        p = BEVPoly(g.corners * 0.9)
        assert adr(p, g) == 1.0

    def test_radial_retreat_never_increases_adr(self):
        rng = np.random.default_rng(8)
        for _ in range(100):
            _, g = random_pair(rng)
            gb = bev_polygon(g)
            u = np.array(g.center[:2])
            u = u / np.hypot(*u)
            prev = 1.0
            for step in np.linspace(0.0, 5.0, 11):
                moved = Box3D(center=(g.center[0] + u[0] * step,
                                      g.center[1] + u[1] * step, g.center[2]),
                              size=g.size, yaw=g.yaw)
                val = adr(bev_polygon(moved), gb)
                assert val <= prev + 1e-12
                prev = val


def naive_usc(p: Box3D, g: Box3D, cam: CameraModel):
    """Straightforward reimplementation: loops, shapely, brute bearings."""
    r = np.array(cam.rotation)
    t = np.array(cam.translation)

    def naive_rect(box):
        cx, cy, cz = box.center
        w, l, h = box.size
        cs, sn = math.cos(box.yaw), math.sin(box.yaw)
        pts = []
        for sx, sy, sz in itertools.product((1, -1), repeat=3):
            local = np.array([sx * l / 2, sy * w / 2, sz * h / 2])
            world = np.array([cx + cs * local[0] - sn * local[1],
                              cy + sn * local[0] + cs * local[1],
                              cz + local[2]])
            q = r @ world + t
            if q[2] > 1e-6:
                pts.append((cam.focal * q[0] / q[2], cam.focal * q[1] / q[2]))
        a = [p_[0] for p_ in pts]
        b = [p_[1] for p_ in pts]
        return min(a), max(a), min(b), max(b)

    pa0, pa1, pb0, pb1 = naive_rect(p)
    ga0, ga1, gb0, gb1 = naive_rect(g)
    iw = max(0.0, min(pa1, ga1) - max(pa0, ga0))
    ih = max(0.0, min(pb1, gb1) - max(pb0, gb0))
    io = iw * ih / ((ga1 - ga0) * (gb1 - gb0))

    def reps(box):
        poly = shapely_poly(bev_polygon(box).corners)
        d_close = Point(0, 0).distance(poly)
        left, right = brute_extreme_corners(bev_polygon(box).corners, (0, 0))
        return d_close, math.hypot(*left), math.hypot(*right)

    pd = reps(p)
    gd = reps(g)
    prod = 1.0
    for dp, dg in zip(pd, gd):
        prod *= min(1.0, dg / dp)
    return io, prod ** (1.0 / 3.0)


class TestUSCPair:
    def test_identical_pair_is_perfect(self):
        g = Box3D(center=(14, 2, 1), size=(2, 4.4, 2), yaw=0.3, label="car")
        res = usc_pair(g, g, CAM)
        assert (res.iogt, res.adr, res.usc) == (1.0, 1.0, 1.0)
        assert res.pv_ok and res.bev_ok and res.usc_ok

    def test_usc_is_product_of_independent_factors(self):
        rng = np.random.default_rng(21)
        checked = 0
        while checked < 300:
            p, g = random_pair(rng)
            try:
                res = usc_pair(p, g, CAM)
            except Exception:
                continue
            io, a = naive_usc(p, g, CAM)
            assert res.iogt == pytest.approx(io, abs=1e-9)
            assert res.adr == pytest.approx(a, abs=1e-9)
            assert res.usc == pytest.approx(io * a, abs=1e-9)
            assert 0.0 <= res.usc <= 1.0
            checked += 1

    def test_rotation_invariance(self):
        rng = np.random.default_rng(33)
        for _ in range(60):
            p, g = random_pair(rng)
            phi = rng.uniform(-np.pi, np.pi)
            res = usc_pair(p, g, CAM)
            c, s = np.cos(phi), np.sin(phi)
            rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])

            def rot(b):
                center = rz @ np.array(b.center)
                return Box3D(center=tuple(center), size=b.size, yaw=b.yaw + phi,
                             label=b.label)

            cam2 = CameraModel(focal=CAM.focal,
                               rotation=tuple(map(tuple, np.array(CAM.rotation) @ rz.T)),
                               translation=CAM.translation)
            res2 = usc_pair(rot(p), rot(g), cam2)
            assert res2.usc == pytest.approx(res.usc, abs=1e-9)
            assert res2.iogt == pytest.approx(res.iogt, abs=1e-9)
            assert res2.adr == pytest.approx(res.adr, abs=1e-9)

    def test_asymmetric_consequences_mirror_fig1(self):
        # mirrored +-1 m longitudinal offsets: identical IoU, different USC
        g = Box3D(center=(20, 0, 1.25), size=(2.5, 6, 2.5), yaw=0.0, label="truck")
        blue = Box3D(center=(19, 0, 1.25), size=(2.5, 6, 2.5), yaw=0.0)
        red = Box3D(center=(21, 0, 1.25), size=(2.5, 6, 2.5), yaw=0.0)

        def iou(a, b):
            pa, pb = bev_polygon(a), bev_polygon(b)
            inter = convex_intersection(pa, pb)
            ia = polygon_area(inter) if inter else 0.0
            return ia / (polygon_area(pa) + polygon_area(pb) - ia)

        assert iou(blue, g) == pytest.approx(iou(red, g), rel=1e-12)
        res_blue = usc_pair(blue, g, CAM)
        res_red = usc_pair(red, g, CAM)
        assert res_blue.usc > res_red.usc
        assert res_blue.bev_ok and not res_red.bev_ok
        assert res_blue.adr == 1.0 and res_red.adr < 1.0
