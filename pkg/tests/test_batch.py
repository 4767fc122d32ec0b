"""Batched EC-IoU kernel and its stdio wire protocol."""
import io
import json
import struct

import numpy as np
import pytest

from egoeval import BatchValidationError, Box3D, eciou_batch
from egoeval.batch import (
    FLAG_EMPTY,
    FLAG_OK,
    KIND_BATCH,
    KIND_ERROR,
    KIND_PROBE,
    MAGIC,
    _HEADER,
    serve,
    version_info,
)
from egoeval.eciou import ECIoUParams, ec_iou_grad, _footprint_value_grad
from egoeval import bev_polygon, ec_iou
from util import random_pair


def random_rows(rng, n):
    pred = np.empty((n, 5))
    gt = np.empty((n, 5))
    for i in range(n):
        p, g = random_pair(rng)
        pred[i] = (p.center[0], p.center[1], p.size[0], p.size[1], p.yaw)
        gt[i] = (g.center[0], g.center[1], g.size[0], g.size[1], g.yaw)
    return pred, gt


class TestBatchKernel:
    def test_identity_row(self):
        gt = np.array([[10.0, 0.0, 2.0, 4.0, 0.3]])
        values, grads, flags = eciou_batch(gt, gt, alpha=2.0)
        assert values[0] == 1.0
        g = ec_iou_grad(Box3D((10, 0, 0), (2, 4, 1), 0.3),
                        Box3D((10, 0, 0), (2, 4, 1), 0.3))
        assert np.array_equal(grads[0], g.as_array())

    def test_loop_parity(self):
        rng = np.random.default_rng(83)
        pred, gt = random_rows(rng, 500)
        values, grads, flags = eciou_batch(pred, gt, alpha=2.0)
        params = ECIoUParams(alpha=2.0)
        for i in range(len(pred)):
            v, g, _, _ = _footprint_value_grad(tuple(pred[i]), tuple(gt[i]),
                                               (0.0, 0.0), params)
            assert abs(values[i] - v) <= 1e-9
            assert np.abs(grads[i] - g).max() <= 1e-9

    def test_alpha_zero_equals_plain_iou(self):
        rng = np.random.default_rng(89)
        pred, gt = random_rows(rng, 300)
        values, _, _ = eciou_batch(pred, gt, alpha=0.0)
        for i in range(len(pred)):
            p = Box3D((pred[i, 0], pred[i, 1], 0), (pred[i, 2], pred[i, 3], 1),
                      pred[i, 4])
            g = Box3D((gt[i, 0], gt[i, 1], 0), (gt[i, 2], gt[i, 3], 1), gt[i, 4])
            assert values[i] == pytest.approx(
                ec_iou(bev_polygon(p), bev_polygon(g),
                       params=ECIoUParams(alpha=0.0)), abs=1e-12)

    def test_empty_rows_flagged_zeros(self):
        pred = np.array([[50.0, 50.0, 2.0, 4.0, 0.0]])
        gt = np.array([[10.0, 0.0, 2.0, 4.0, 0.0]])
        values, grads, flags = eciou_batch(pred, gt)
        assert values[0] == 0.0
        assert np.all(grads[0] == 0.0)
        assert flags[0] == FLAG_EMPTY

    def test_validation_names_offending_row(self):
        pred = np.array([[10.0, 0, 2, 4, 0], [10.0, 0, -2, 4, 0]])
        gt = np.array([[10.0, 0, 2, 4, 0], [10.0, 0, 2, 4, 0]])
        with pytest.raises(BatchValidationError) as err:
            eciou_batch(pred, gt)
        assert err.value.row == 1

    def test_per_row_origins(self):
        pred = np.array([[10.0, 0, 2, 4, 0], [10.0, 0, 2, 4, 0]])
        gt = pred.copy()
        origins = np.array([[0.0, 0.0], [3.0, -1.0]])
        values, _, _ = eciou_batch(pred, gt, origins)
        assert np.all(values == 1.0)

    def test_no_hidden_state(self):
        rng = np.random.default_rng(97)
        pred, gt = random_rows(rng, 64)
        a = eciou_batch(pred, gt)
        b = eciou_batch(pred, gt)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        assert np.array_equal(a[2], b[2])


def _frame(kind, body):
    return _HEADER.pack(MAGIC, kind, len(body)) + body


def _read_frames(buf):
    out = []
    view = io.BytesIO(buf)
    while True:
        header = view.read(_HEADER.size)
        if not header:
            return out
        magic, kind, ln = _HEADER.unpack(header)
        assert magic == MAGIC
        out.append((kind, view.read(ln)))


class TestProtocol:
    def test_probe(self):
        stdout = io.BytesIO()
        serve(io.BytesIO(_frame(KIND_PROBE, b"")), stdout)
        frames = _read_frames(stdout.getvalue())
        assert frames[0][0] == KIND_PROBE
        assert json.loads(frames[0][1]) == version_info()

    def test_batch_round_trip(self):
        rng = np.random.default_rng(101)
        pred, gt = random_rows(rng, 20)
        body = (struct.pack("<II", 20, 0) + struct.pack("<d", 2.0)
                + np.zeros(2).tobytes() + pred.tobytes() + gt.tobytes())
        stdout = io.BytesIO()
        serve(io.BytesIO(_frame(KIND_BATCH, body)), stdout)
        (kind, payload), = _read_frames(stdout.getvalue())
        assert kind == KIND_BATCH
        (n,) = struct.unpack_from("<I", payload, 0)
        assert n == 20
        values = np.frombuffer(payload, "<f8", 20, 4)
        grads = np.frombuffer(payload, "<f8", 100, 4 + 160).reshape(20, 5)
        flags = np.frombuffer(payload, "u1", 20, 4 + 160 + 800)
        ref_v, ref_g, ref_f = eciou_batch(pred, gt, alpha=2.0)
        assert np.array_equal(values, ref_v)
        assert np.array_equal(grads, ref_g)
        assert np.array_equal(flags, ref_f)

    def test_bad_request_returns_error_frame(self):
        body = struct.pack("<II", 5, 0)  # truncated
        stdout = io.BytesIO()
        serve(io.BytesIO(_frame(KIND_BATCH, body)), stdout)
        (kind, payload), = _read_frames(stdout.getvalue())
        assert kind == KIND_ERROR
        assert "message" in json.loads(payload)

    def test_multiple_requests_one_stream(self):
        rng = np.random.default_rng(103)
        pred, gt = random_rows(rng, 3)
        body = (struct.pack("<II", 3, 0) + struct.pack("<d", 0.0)
                + np.zeros(2).tobytes() + pred.tobytes() + gt.tobytes())
        stream = _frame(KIND_PROBE, b"") + _frame(KIND_BATCH, body)
        stdout = io.BytesIO()
        serve(io.BytesIO(stream), stdout)
        frames = _read_frames(stdout.getvalue())
        assert [k for k, _ in frames] == [KIND_PROBE, KIND_BATCH]
