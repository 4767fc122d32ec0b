"""Batch kernel parity with the scalar reference path."""
import numpy as np
import pytest

from egoeval import (
    CameraModel,
    EgoEvalError,
    bev_polygon,
    convex_intersection,
    ec_iou,
    polygon_area,
    usc_pair,
)
from egoeval.eciou import ECIoUParams
from egoeval.kernels import BEV_SKIP, ECIOU_SKIP, PV_SKIP, score_pairs
from util import random_pair

CAM = CameraModel.front_facing(1.0)


def scalar_reference(p, g, alpha):
    out = {}
    try:
        r = usc_pair(p, g, CAM)
        out.update(iogt=r.iogt, adr=r.adr, usc=r.usc, pv_ok=r.pv_ok,
                   bev_ok=r.bev_ok, usc_valid=True)
    except EgoEvalError:
        out["usc_valid"] = False
    pb, gb = bev_polygon(p), bev_polygon(g)
    inter = convex_intersection(pb, gb)
    ia = polygon_area(inter) if inter is not None else 0.0
    out["iou"] = ia / (polygon_area(pb) + polygon_area(gb) - ia)
    out["te"] = np.hypot(p.center[0] - g.center[0], p.center[1] - g.center[1])
    try:
        out["eciou"] = ec_iou(pb, gb, params=ECIoUParams(alpha=alpha))
        out["eciou_valid"] = True
    except EgoEvalError:
        out["eciou_valid"] = False
    return out


@pytest.mark.parametrize("seed,n,front", [(101, 800, True), (103, 800, False)])
def test_kernel_matches_scalar_path(seed, n, front):
    rng = np.random.default_rng(seed)
    pairs = [random_pair(rng, bearing=1.0 if front else np.pi) for _ in range(n)]
    res = score_pairs([p for p, _ in pairs], [g for _, g in pairs], CAM, alpha=2.0)
    for i, (p, g) in enumerate(pairs):
        ref = scalar_reference(p, g, 2.0)
        status = int(res["status"][i])
        assert ref["usc_valid"] == (status & (PV_SKIP | BEV_SKIP) == 0)
        assert ref["eciou_valid"] == (status & ECIOU_SKIP == 0)
        assert res["iou"][i] == pytest.approx(ref["iou"], abs=1e-9)
        assert res["te"][i] == pytest.approx(ref["te"], abs=1e-12)
        if ref["usc_valid"]:
            assert res["iogt"][i] == pytest.approx(ref["iogt"], abs=1e-9)
            assert res["adr"][i] == pytest.approx(ref["adr"], abs=1e-9)
            assert res["usc"][i] == pytest.approx(ref["usc"], abs=1e-9)
            assert bool(res["pv_ok"][i]) == ref["pv_ok"]
            assert bool(res["bev_ok"][i]) == ref["bev_ok"]
        if ref["eciou_valid"]:
            assert res["eciou"][i] == pytest.approx(ref["eciou"], abs=1e-9)


def test_identity_pairs_score_perfect(rng=np.random.default_rng(7)):
    gts = [random_pair(rng)[1] for _ in range(200)]
    res = score_pairs(gts, gts, CAM, alpha=2.0)
    ok = res["status"] == 0
    assert ok.all()
    assert np.all(res["usc"][ok] == 1.0)
    assert np.all(res["iou"][ok] == 1.0)
    assert np.all(res["eciou"][ok] == 1.0)
    assert np.all(res["pv_ok"][ok] == 1)
    assert np.all(res["bev_ok"][ok] == 1)


def test_behind_camera_flagged():
    p, g = random_pair(np.random.default_rng(5))
    behind_p = type(p)(center=(-20, 0, 1), size=p.size, yaw=p.yaw)
    behind_g = type(g)(center=(-20.5, 0.2, 1), size=g.size, yaw=g.yaw)
    res = score_pairs([behind_p], [behind_g], CAM)
    assert res["status"][0] & PV_SKIP
    assert np.isnan(res["usc"][0])
    assert np.isfinite(res["iou"][0])
