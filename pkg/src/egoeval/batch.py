"""Batched EC-IoU value/gradient kernel and its wire protocol.

``eciou_batch`` is the training-loop entry point: N footprint pairs in,
N values and N x 5 gradients out, positionally aligned and numerically
identical to N single-pair core calls. The binding returns EC-IoU as a
similarity; a consumer training with the unit-complement loss uses
loss = 1 - value and negates the gradient.

Rows whose footprints do not overlap return value 0 and a zero gradient
with flag EMPTY instead of raising; flags also mark boundary subgradients
and clamped plateaus.

The same kernel is served to out-of-process consumers over a framed
little-endian binary protocol on stdio (``egoeval-batch --serve``):

    frame    := magic u32 ("ECB1" = 0x31424345) kind u32 body_len u64 body
    kind 1   -> version probe; response body is a UTF-8 JSON object
                {"name", "version", "protocol"}
    kind 2   -> batch request; body is
                n u32, origin_mode u32 (0 = one origin, 1 = per row),
                alpha f64, origin f64[2 or 2n], pred f64[5n], gt f64[5n]
                (row-major, each row cx, cy, w, l, yaw);
                response body is n u32, values f64[n], grads f64[5n],
                flags u8[n]
    kind 14  -> error response (UTF-8 JSON {"row", "message"})

Responses reuse the request kind. All arrays are row-major float64.
"""
from __future__ import annotations

import argparse
import json
import struct
import sys

import numpy as np

from . import __version__
from .eciou import (
    GRAD_BOUNDARY,
    GRAD_CLAMPED,
    GRAD_NON_OVERLAPPING,
    ECIoUParams,
    _footprint_value_grad,
)
from .errors import BatchValidationError

MAGIC = 0x31424345  # b"ECB1" little-endian
KIND_PROBE = 1
KIND_BATCH = 2
KIND_ERROR = 14
PROTOCOL_VERSION = 1

FLAG_OK = 0
FLAG_EMPTY = 1
FLAG_BOUNDARY = 2
FLAG_CLAMPED = 3

_FLAG_OF = {GRAD_NON_OVERLAPPING: FLAG_EMPTY, GRAD_BOUNDARY: FLAG_BOUNDARY,
            GRAD_CLAMPED: FLAG_CLAMPED}


def eciou_batch(pred, gt, origin=(0.0, 0.0), alpha: float = 2.0,
                eps_dist: float = 1e-6, clamp_output: bool = True):
    """EC-IoU values and gradients for N footprint pairs.

    ``pred`` and ``gt`` are (N, 5) arrays of (cx, cy, w, l, yaw);
    ``origin`` is a 2-vector or an (N, 2) array. Returns (values (N,),
    grads (N, 5), flags (N,) uint8). Raises BatchValidationError naming
    the first offending row.
    """
    pred = np.ascontiguousarray(pred, dtype=np.float64)
    gt = np.ascontiguousarray(gt, dtype=np.float64)
    if pred.ndim != 2 or pred.shape[1] != 5 or pred.shape != gt.shape:
        raise BatchValidationError(-1, "pred and gt must be matching (N, 5) arrays")
    n = pred.shape[0]
    origin = np.ascontiguousarray(origin, dtype=np.float64)
    if origin.shape == (2,):
        origins = np.broadcast_to(origin, (n, 2))
    elif origin.shape == (n, 2):
        origins = origin
    else:
        raise BatchValidationError(-1, "origin must be a 2-vector or an (N, 2) array")
    for row in range(n):
        for arr, name in ((pred, "pred"), (gt, "gt")):
            if not np.all(np.isfinite(arr[row])):
                raise BatchValidationError(row, f"{name} has non-finite entries")
            if arr[row, 2] <= 0.0 or arr[row, 3] <= 0.0:
                raise BatchValidationError(row, f"{name} w and l must be positive")
        if not np.all(np.isfinite(origins[row])):
            raise BatchValidationError(row, "origin has non-finite entries")

    params = ECIoUParams(alpha=alpha, eps_dist=eps_dist, clamp_output=clamp_output)
    values = np.empty(n)
    grads = np.empty((n, 5))
    flags = np.zeros(n, dtype=np.uint8)
    for row in range(n):
        try:
            value, grad, flag, _ = _footprint_value_grad(
                tuple(pred[row]), tuple(gt[row]), tuple(origins[row]), params)
        except Exception as exc:  # degenerate ground truth and similar
            raise BatchValidationError(row, str(exc)) from exc
        values[row] = value
        grads[row] = grad
        flags[row] = _FLAG_OF.get(flag, FLAG_OK)
    return values, grads, flags


def version_info() -> dict:
    return {"name": "egoeval", "version": __version__, "protocol": PROTOCOL_VERSION}


# ---------------------------------------------------------------------------
# framed stdio serving
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<IIQ")


def _read_exact(stream, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


def _write_frame(stream, kind: int, body: bytes) -> None:
    stream.write(_HEADER.pack(MAGIC, kind, len(body)))
    stream.write(body)
    stream.flush()


def _handle_batch(body: bytes) -> bytes:
    if len(body) < 16:
        raise BatchValidationError(-1, "truncated batch header")
    n, origin_mode = struct.unpack_from("<II", body, 0)
    (alpha,) = struct.unpack_from("<d", body, 8)
    offset = 16
    n_origin = 2 if origin_mode == 0 else 2 * n
    need = offset + 8 * (n_origin + 10 * n)
    if len(body) != need:
        raise BatchValidationError(-1, f"body length {len(body)} != expected {need}")
    origin = np.frombuffer(body, dtype="<f8", count=n_origin, offset=offset)
    offset += 8 * n_origin
    pred = np.frombuffer(body, dtype="<f8", count=5 * n, offset=offset).reshape(n, 5)
    offset += 40 * n
    gt = np.frombuffer(body, dtype="<f8", count=5 * n, offset=offset).reshape(n, 5)
    if origin_mode != 0:
        origin = origin.reshape(n, 2)
    values, grads, flags = eciou_batch(pred, gt, origin, alpha)
    return (struct.pack("<I", n) + values.astype("<f8").tobytes()
            + grads.astype("<f8").tobytes() + flags.tobytes())


def serve(stdin=None, stdout=None) -> int:
    """Serve framed requests until EOF; one response per request."""
    stdin = stdin if stdin is not None else sys.stdin.buffer
    stdout = stdout if stdout is not None else sys.stdout.buffer
    while True:
        header = _read_exact(stdin, _HEADER.size)
        if header is None:
            return 0
        magic, kind, body_len = _HEADER.unpack(header)
        if magic != MAGIC:
            _write_frame(stdout, KIND_ERROR, json.dumps(
                {"row": -1, "message": "bad magic"}).encode())
            return 1
        body = _read_exact(stdin, body_len) if body_len else b""
        if body is None:
            return 1
        if kind == KIND_PROBE:
            _write_frame(stdout, KIND_PROBE,
                         json.dumps(version_info(), sort_keys=True).encode())
        elif kind == KIND_BATCH:
            try:
                _write_frame(stdout, KIND_BATCH, _handle_batch(body))
            except BatchValidationError as exc:
                _write_frame(stdout, KIND_ERROR, json.dumps(
                    {"row": exc.row, "message": str(exc)}).encode())
        else:
            _write_frame(stdout, KIND_ERROR, json.dumps(
                {"row": -1, "message": f"unknown kind {kind}"}).encode())


def _run_json(stdin, stdout) -> int:
    """One-shot JSON request (debugging aid): reads a request object from
    stdin and writes the response object to stdout."""
    req = json.load(stdin)
    values, grads, flags = eciou_batch(
        np.array(req["pred"], dtype=float), np.array(req["gt"], dtype=float),
        np.array(req.get("origin", (0.0, 0.0)), dtype=float),
        float(req.get("alpha", 2.0)))
    json.dump({"values": values.tolist(), "grads": grads.tolist(),
               "flags": flags.tolist()}, stdout)
    stdout.write("\n")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="egoeval-batch",
        description="Batched EC-IoU value/gradient kernel over stdio.")
    mode = parser.add_mutually_exclusive_group(required=True)
    mode.add_argument("--probe", action="store_true",
                      help="print the version object as JSON and exit")
    mode.add_argument("--serve", action="store_true",
                      help="serve framed binary requests on stdio until EOF")
    mode.add_argument("--json", action="store_true",
                      help="answer a single JSON request from stdin")
    args = parser.parse_args(argv)
    if args.probe:
        json.dump(version_info(), sys.stdout, sort_keys=True)
        sys.stdout.write("\n")
        return 0
    if args.json:
        return _run_json(sys.stdin, sys.stdout)
    return serve()


if __name__ == "__main__":
    sys.exit(main())
