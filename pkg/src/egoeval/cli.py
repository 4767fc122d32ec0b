"""Command-line interface: eval, pair, impact, compare, schema.

Exit codes: 0 ok, 2 data error, 3 configuration error, 4 internal
invariant violation. Every error path writes a machine-parsable JSON
object to stderr.
"""
from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from .dataset import SCHEMA_REFERENCE, load_dataset
from .eciou import ECIoUParams, ec_iou
from .errors import ConfigError, EgoEvalError, SchemaError
from .evaluation import MatchConfig, evaluate_frames
from .geometry import Box3D, CameraModel, bev_polygon, convex_intersection, polygon_area
from .impact import ImpactParams, impact_pipeline, sensitivity_sweep, vision_zero_threshold
from .usc import usc_pair

_AFFINITY_FLAG = {"dist": "center_distance", "iou": "iou_bev", "eciou": "ec_iou"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _parse_floats(text: str, n: int, name: str) -> tuple:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != n:
        raise ConfigError(f"{name} needs {n} comma-separated numbers")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def _parse_sweep(text: str) -> np.ndarray:
    try:
        start, stop, step = (float(p) for p in text.split(":"))
    except ValueError as exc:
        raise ConfigError(f"--sweep expects START:STOP:STEP, got {text!r}") from exc
    if step <= 0 or stop < start:
        raise ConfigError("--sweep needs step > 0 and stop >= start")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def _emit(text: str, out_path) -> None:
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _to_json(doc) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _report_csv(doc: dict) -> str:
    lines = ["section,label,metric,value"]
    for key in sorted(doc["aggregates"]):
        lines.append(f"aggregate,,{key},{doc['aggregates'][key]}")
    for label in sorted(doc["per_class"]):
        for key in sorted(doc["per_class"][label]):
            lines.append(f"per_class,{label},{key},{doc['per_class'][label][key]}")
    for key in sorted(doc["counts"]):
        lines.append(f"count,,{key},{doc['counts'][key]}")
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def _report_markdown(doc: dict) -> str:
    out = ["# Evaluation report", "", "## Aggregates", "",
           "| metric | value |", "|---|---|"]
    for key in sorted(doc["aggregates"]):
        out.append(f"| {key} | {_fmt(doc['aggregates'][key])} |")
    out += ["", "## Per class", ""]
    cols = ["ap", "ausc", "aiou", "aeciou", "ate", "tp", "fp", "fn", "gt"]
    out.append("| class | " + " | ".join(cols) + " |")
    out.append("|" + "---|" * (len(cols) + 1))
    for label in sorted(doc["per_class"]):
        row = doc["per_class"][label]
        out.append(f"| {label} | " + " | ".join(_fmt(row[c]) for c in cols) + " |")
    out += ["", "## Counts", "", "| count | value |", "|---|---|"]
    for key in sorted(doc["counts"]):
        out.append(f"| {key} | {doc['counts'][key]} |")
    return "\n".join(out) + "\n"


def _render(doc: dict, fmt: str, kind: str) -> str:
    if fmt == "json":
        return _to_json(doc)
    if kind == "report":
        return _report_csv(doc) if fmt == "csv" else _report_markdown(doc)
    if kind == "table":
        rows = doc["rows"]
        cols = doc["columns"]
        if fmt == "csv":
            lines = [",".join(cols)]
            lines += [",".join(_fmt(r[c]) if isinstance(r[c], float) else str(r[c])
                               for c in cols) for r in rows]
            return "\n".join(lines) + "\n"
        out = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
        out += ["| " + " | ".join(_fmt(r[c]) for c in cols) + " |" for r in rows]
        return "\n".join(out) + "\n"
    raise ConfigError(f"cannot render {kind} as {fmt}")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_eval(args) -> int:
    cfg = _load_config_file(args.config)
    affinity = _AFFINITY_FLAG.get(args.affinity, args.affinity) if args.affinity \
        else cfg.get("affinity", "center_distance")
    kwargs = {
        "affinity": affinity,
        "view": args.view or cfg.get("view", "roadside"),
        "alpha": args.alpha if args.alpha is not None else cfg.get("alpha", 2.0),
    }
    for key in ("thresholds", "distance_thresholds", "score_floor", "tp_distance",
                "interp_101", "min_recall", "min_precision", "worst_case_on_empty",
                "eps_dist", "clamp_output"):
        if key in cfg:
            kwargs[key] = tuple(cfg[key]) if key == "distance_thresholds" else cfg[key]
    config = MatchConfig(**kwargs)
    workers = args.workers if args.workers is not None else int(cfg.get("workers", 1))
    if workers < 1:
        raise ConfigError("--workers must be >= 1")
    ds = load_dataset(args.dataset)
    report = evaluate_frames(ds.frames, config, ds.class_map, workers=workers)
    _emit(_render(report.to_dict(), args.format, "report"), args.out)
    return 0


def _parse_box(text: str, label: str, score: float | None, name: str) -> Box3D:
    vals = _parse_floats(text, 7, name)
    try:
        return Box3D(center=vals[0:3], size=vals[3:6], yaw=vals[6],
                     label=label, score=score)
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def _pair_diag(pred: Box3D, gt: Box3D, cam: CameraModel, origin, alphas,
               clamp: bool) -> dict:
    diag: dict = {}
    try:
        res = usc_pair(pred, gt, cam, origin)
        diag.update({"iogt": res.iogt, "adr": res.adr, "usc": res.usc,
                     "pv_ok": res.pv_ok, "bev_ok": res.bev_ok,
                     "usc_ok": res.usc_ok})
    except EgoEvalError as exc:
        diag["usc_error"] = f"{type(exc).__name__}: {exc}"
    pb, gb = bev_polygon(pred), bev_polygon(gt)
    inter = convex_intersection(pb, gb)
    inter_area = polygon_area(inter) if inter is not None else 0.0
    diag["iou"] = inter_area / (polygon_area(pb) + polygon_area(gb) - inter_area)
    diag["te"] = math.hypot(pred.center[0] - gt.center[0],
                            pred.center[1] - gt.center[1])
    diag["ec_iou"] = {}
    for a in alphas:
        try:
            diag["ec_iou"][str(a)] = ec_iou(pb, gb, origin,
                                            ECIoUParams(alpha=a, clamp_output=clamp))
        except EgoEvalError as exc:
            diag["ec_iou"][str(a)] = f"{type(exc).__name__}: {exc}"
    return diag


def _cmd_pair(args) -> int:
    pred = _parse_box(args.pred, args.label, None, "--pred")
    gt = _parse_box(args.gt, args.label, None, "--gt")
    cam = CameraModel.front_facing(args.focal)
    origin = _parse_floats(args.origin, 2, "--origin")
    alphas = [float(a) for a in args.alpha.split(",")] if args.alpha else [0.0, 2.0, 4.0]
    if args.sweep:
        offsets = _parse_sweep(args.sweep)
        gx, gy = gt.center[0] - origin[0], gt.center[1] - origin[1]
        norm = math.hypot(gx, gy)
        if norm <= 0:
            raise ConfigError("--sweep needs the ground truth away from the origin")
        ux, uy = gx / norm, gy / norm
        cols = ["offset", "iou"] + [f"eciou_a{a:g}" for a in alphas]
        lines = [",".join(cols)]
        gb = bev_polygon(gt)
        for off in offsets:
            moved = Box3D(center=(pred.center[0] + ux * off, pred.center[1] + uy * off,
                                  pred.center[2]), size=pred.size, yaw=pred.yaw,
                          label=pred.label)
            pb = bev_polygon(moved)
            inter = convex_intersection(pb, gb)
            ia = polygon_area(inter) if inter is not None else 0.0
            iou = ia / (polygon_area(pb) + polygon_area(gb) - ia)
            vals = [f"{off:.6f}", f"{iou:.9f}"]
            for a in alphas:
                v = ec_iou(pb, gb, origin, ECIoUParams(alpha=a, clamp_output=not args.raw))
                vals.append(f"{v:.9f}")
            lines.append(",".join(vals))
        _emit("\n".join(lines) + "\n", args.out)
        return 0
    diag = _pair_diag(pred, gt, cam, origin, alphas, clamp=not args.raw)
    _emit(_to_json(diag), args.out)
    return 0


def _impact_row(res) -> dict:
    return {"stage1": res.stage1, "stage2": res.stage2, "stage3": res.stage3,
            "beta": res.beta, "delta_col": res.delta_col,
            "further_reduction": res.further_reduction}


def _cmd_impact(args) -> int:
    cfg = _load_config_file(args.config)
    try:
        params = ImpactParams(
            rate_per_million=args.rate if args.rate is not None else cfg.get("rate_per_million", 1.5),
            daily_volume=args.volume if args.volume is not None else cfg.get("daily_volume", 20000.0),
            av_reduction=args.av_reduction if args.av_reduction is not None else cfg.get("av_reduction", 0.5),
            rho=args.rho if args.rho is not None else cfg.get("rho", -0.8),
            sigma_ecmap=args.sigma if args.sigma is not None else cfg.get("sigma_ecmap", 5.0),
            delta_ecmap=args.delta_ecmap if args.delta_ecmap is not None else cfg.get("delta_ecmap", 7.5),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.vision_zero:
        mu = vision_zero_threshold(params.rho, params.sigma_ecmap, params.delta_ecmap)
        stage1 = params.rate_per_million * params.daily_volume * 365.0 / 1e6
        doc = {"residual_collisions": mu,
               "required_av_reduction": 1.0 - mu / stage1 if stage1 > 0 else None}
        _emit(_to_json(doc) if args.format == "json" else _render(
            {"columns": ["metric", "value"],
             "rows": [{"metric": k, "value": v} for k, v in doc.items()]},
            args.format, "table"), args.out)
        return 0
    if args.sweep:
        grid = _parse_sweep(args.sweep)
        if grid.min() < 0.0 or grid.max() > 1.0:
            raise ConfigError("--sweep grid must lie in [0, 1]")
        rows = []
        for r, res in zip(grid, sensitivity_sweep(params, grid)):
            rows.append({"av_reduction": float(r), **_impact_row(res)})
        cols = ["av_reduction", "stage1", "stage2", "stage3", "beta",
                "delta_col", "further_reduction"]
        doc = {"columns": cols, "rows": rows}
        _emit(_to_json(rows) if args.format == "json" else _render(doc, args.format, "table"),
              args.out)
        return 0
    res = impact_pipeline(params)
    doc = _impact_row(res)
    if args.format == "json":
        _emit(_to_json(doc), args.out)
    else:
        table = {"columns": ["metric", "value"],
                 "rows": [{"metric": k, "value": v} for k, v in doc.items()]}
        _emit(_render(table, args.format, "table"), args.out)
    return 0


def _cmd_compare(args) -> int:
    def load(path):
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaError(f"cannot read report {path}: {exc}") from exc

    a, b = load(args.report_a), load(args.report_b)
    rows = []
    for key in sorted(set(a.get("aggregates", {})) | set(b.get("aggregates", {}))):
        va = a.get("aggregates", {}).get(key)
        vb = b.get("aggregates", {}).get(key)
        delta = vb - va if isinstance(va, (int, float)) and isinstance(vb, (int, float)) else None
        rows.append({"metric": key, "a": va, "b": vb, "delta": delta})
    doc = {"columns": ["metric", "a", "b", "delta"], "rows": rows}
    _emit(_to_json(rows) if args.format == "json" else _render(doc, args.format, "table"),
          args.out)
    return 0


def _cmd_schema(args) -> int:
    sys.stdout.write(SCHEMA_REFERENCE)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="egoeval",
                     description="Safety-oriented evaluation of 3D object detection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", help="evaluate a dataset file")
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--view", choices=("ego", "roadside"), default=None)
    p_eval.add_argument("--affinity", choices=tuple(_AFFINITY_FLAG), default=None)
    p_eval.add_argument("--alpha", type=float, default=None)
    p_eval.add_argument("--format", choices=("json", "csv", "markdown"), default="json")
    p_eval.add_argument("--out", default=None)
    p_eval.add_argument("--workers", type=int, default=None)
    p_eval.set_defaults(func=_cmd_eval)

    p_pair = sub.add_parser("pair", help="diagnose one prediction/ground-truth pair")
    p_pair.add_argument("--pred", required=True, metavar="CX,CY,CZ,W,L,H,YAW")
    p_pair.add_argument("--gt", required=True, metavar="CX,CY,CZ,W,L,H,YAW")
    p_pair.add_argument("--label", default="object")
    p_pair.add_argument("--focal", type=float, default=1.0)
    p_pair.add_argument("--origin", default="0,0")
    p_pair.add_argument("--alpha", default=None, help="comma list, default 0,2,4")
    p_pair.add_argument("--raw", action="store_true", help="disable EC-IoU clamping")
    p_pair.add_argument("--sweep", default=None, metavar="START:STOP:STEP",
                        help="emit a CSV curve sliding the prediction radially")
    p_pair.add_argument("--format", choices=("json",), default="json")
    p_pair.add_argument("--out", default=None)
    p_pair.set_defaults(func=_cmd_pair)

    p_imp = sub.add_parser("impact", help="intersection safety-impact model")
    p_imp.add_argument("--config", default=None)
    p_imp.add_argument("--rate", type=float, default=None,
                       help="collisions per million entering vehicles")
    p_imp.add_argument("--volume", type=float, default=None, help="vehicles/day")
    p_imp.add_argument("--av-reduction", type=float, default=None, dest="av_reduction")
    p_imp.add_argument("--rho", type=float, default=None)
    p_imp.add_argument("--sigma", type=float, default=None,
                       help="EC-mAP standard deviation (percentage points)")
    p_imp.add_argument("--delta-ecmap", type=float, default=None, dest="delta_ecmap",
                       help="EC-mAP improvement (percentage points)")
    p_imp.add_argument("--sweep", default=None, metavar="START:STOP:STEP",
                       help="AV-reduction sensitivity grid")
    p_imp.add_argument("--vision-zero", action="store_true", dest="vision_zero")
    p_imp.add_argument("--format", choices=("json", "csv", "markdown"), default="json")
    p_imp.add_argument("--out", default=None)
    p_imp.set_defaults(func=_cmd_impact)

    p_cmp = sub.add_parser("compare", help="per-metric deltas of two reports")
    p_cmp.add_argument("report_a")
    p_cmp.add_argument("report_b")
    p_cmp.add_argument("--format", choices=("json", "csv", "markdown"), default="json")
    p_cmp.add_argument("--out", default=None)
    p_cmp.set_defaults(func=_cmd_compare)

    p_schema = sub.add_parser("schema", help="print the dataset schema reference")
    p_schema.set_defaults(func=_cmd_schema)
    return parser


def _error_obj(exc: BaseException) -> str:
    return json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}},
                      sort_keys=True) + "\n"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SchemaError as exc:
        sys.stderr.write(_error_obj(exc))
        return 2
    except ConfigError as exc:
        sys.stderr.write(_error_obj(exc))
        return 3
    except EgoEvalError as exc:
        sys.stderr.write(_error_obj(exc))
        return 4
    except Exception as exc:  # noqa: BLE001 - map unexpected failures to exit 4
        sys.stderr.write(_error_obj(exc))
        return 4


if __name__ == "__main__":
    sys.exit(main())
