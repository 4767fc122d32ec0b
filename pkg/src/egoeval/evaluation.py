"""Matching, average precision, TP-error statistics, and metric composition.

The evaluation runs as a deterministic map-reduce: matching decomposes by
frame (a detection only competes for ground truths in its own frame), so
the map phase matches and scores each frame independently — optionally in
a process pool — and the reduce phase merges fragments in frame order.
Two runs over the same input produce byte-identical reports at any worker
count.

Protocols computed per run:

- the primary protocol uses the configured affinity and view and feeds
  mAP/NDS; center-distance affinity averages AP over the configured
  distance thresholds
- a TP protocol (tp_distance bound for center distance, class thresholds
  otherwise) defines the matched pairs scored for AUSC/AIoU/AEC-IoU/ATE
- the roadside/ego/ego-centric trio: RV-mAP (unfiltered view, BEV IoU),
  EV-mAP (ego view, BEV IoU), EC-mAP (ego view, EC-IoU affinity)

Classes without any ground truth under a protocol are excluded from that
protocol's mean instead of scoring zero.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, MissingCamera
from .geometry import Box3D, CameraModel
from .kernels import BEV_SKIP, ECIOU_SKIP, PV_SKIP, boxes_to_array, score_pairs

VISIBILITIES = ("full", "partial", "occluded", "out_of_fov")
FAMILIES = ("car-like", "bicycle-like", "pedestrian", "ignore")
AFFINITIES = ("center_distance", "iou_bev", "ec_iou")
VIEWS = ("roadside", "ego")

DEFAULT_THRESHOLDS = {"car-like": 0.7, "bicycle-like": 0.5, "pedestrian": 0.3}
DEFAULT_DISTANCE_THRESHOLDS = (0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class GroundTruth:
    box: Box3D
    visibility: str = "full"

    def __post_init__(self):
        if self.visibility not in VISIBILITIES:
            raise ValueError(f"unknown visibility {self.visibility!r}")


@dataclass(frozen=True)
class FrameAnnotations:
    frame_id: str
    camera: CameraModel
    ground_truths: tuple[GroundTruth, ...] = ()
    detections: tuple[Box3D, ...] = ()

    def __post_init__(self):
        for i, det in enumerate(self.detections):
            if det.score is None:
                raise ValueError(f"detection {i} of frame {self.frame_id} has no score")


@dataclass(frozen=True)
class MatchConfig:
    affinity: str = "center_distance"
    thresholds: dict = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    distance_thresholds: tuple = DEFAULT_DISTANCE_THRESHOLDS
    alpha: float = 2.0
    view: str = "roadside"
    score_floor: float = 0.05
    tp_distance: float = 2.0
    interp_101: bool = False
    min_recall: float = 0.0
    min_precision: float = 0.0
    worst_case_on_empty: bool = True
    eps_dist: float = 1e-6
    clamp_output: bool = True

    def __post_init__(self):
        if self.affinity not in AFFINITIES:
            raise ConfigError(f"affinity must be one of {AFFINITIES}, got {self.affinity!r}")
        if self.view not in VIEWS:
            raise ConfigError(f"view must be one of {VIEWS}, got {self.view!r}")
        if not self.distance_thresholds or min(self.distance_thresholds) <= 0:
            raise ConfigError("distance thresholds must be positive")
        for fam, tau in self.thresholds.items():
            if fam not in FAMILIES:
                raise ConfigError(f"unknown threshold family {fam!r}")
            if not 0.0 < tau <= 1.0:
                raise ConfigError(f"overlap threshold for {fam} must lie in (0, 1], got {tau}")
        if not (math.isfinite(self.alpha) and self.alpha >= 0.0):
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not 0.0 <= self.score_floor < 1.0:
            raise ConfigError("score_floor must lie in [0, 1)")
        if self.tp_distance <= 0.0:
            raise ConfigError("tp_distance must be positive")
        if not 0.0 <= self.min_recall < 1.0 or not 0.0 <= self.min_precision < 1.0:
            raise ConfigError("min_recall/min_precision must lie in [0, 1)")


@dataclass
class ClassMatches:
    """Dataset-level match outcome for one class under one protocol."""

    tp: list = field(default_factory=list)   # (frame_id, det_idx, gt_idx, score, affinity)
    fp: list = field(default_factory=list)   # (frame_id, det_idx, score)
    fn: int = 0
    gt_count: int = 0


@dataclass
class MatchSet:
    classes: dict = field(default_factory=dict)       # label -> ClassMatches
    skipped: list = field(default_factory=list)       # (frame_id, label, det_idx, gt_idx, reason)


def family_of(label: str, class_map: dict) -> str:
    return class_map[label]


def _bearing_ok(box: Box3D, cam: CameraModel) -> bool:
    q = cam.to_camera(np.array([box.center]))[0]
    hfov = cam.hfov_half if cam.hfov_half is not None else math.pi / 2.0
    if abs(math.atan2(q[0], q[2])) > hfov:
        return False
    if cam.vfov_half is not None and abs(math.atan2(q[1], q[2])) > cam.vfov_half:
        return False
    return True


def ego_view_filter(frame: FrameAnnotations) -> FrameAnnotations:
    """Restrict a frame to objects relevant to the ego camera.

    Ground truths outside the camera field of view, marked occluded or
    out_of_fov are removed; detections outside the field of view are
    removed symmetrically so out-of-scope outputs are not penalized.
    """
    if frame.camera is None:
        raise MissingCamera(f"frame {frame.frame_id} has no camera model")
    gts = tuple(g for g in frame.ground_truths
                if g.visibility not in ("occluded", "out_of_fov")
                and _bearing_ok(g.box, frame.camera))
    dets = tuple(d for d in frame.detections if _bearing_ok(d, frame.camera))
    return FrameAnnotations(frame.frame_id, frame.camera, gts, dets)


def prepare_frame(frame: FrameAnnotations, config: MatchConfig,
                  class_map: dict, view: str) -> FrameAnnotations:
    """Apply ignore-class removal, the score floor, and view filtering."""
    gts = tuple(g for g in frame.ground_truths
                if family_of(g.box.label, class_map) != "ignore")
    dets = tuple(d for d in frame.detections
                 if family_of(d.label, class_map) != "ignore"
                 and d.score >= config.score_floor)
    out = FrameAnnotations(frame.frame_id, frame.camera, gts, dets)
    if view == "ego":
        out = ego_view_filter(out)
    return out


# ---------------------------------------------------------------------------
# per-frame matching
# ---------------------------------------------------------------------------

_PROTO_TRIO = (("rv", "roadside", "iou_bev"), ("ev", "ego", "iou_bev"),
               ("ec", "ego", "ec_iou"))


class _ClassPairData:
    """Cross-product affinity data for one frame and class."""

    __slots__ = ("det_order", "det_scores", "n_gt", "neg_dist", "iou", "eciou",
                 "scores_full", "eciou_valid")

    def __init__(self, dets, det_indices, gts, camera, config):
        order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, det_indices[i]))
        self.det_order = [det_indices[i] for i in order]
        self.det_scores = [dets[i].score for i in order]
        self.n_gt = len(gts)
        if dets and gts:
            d_arr = boxes_to_array([dets[i] for i in order])
            g_arr = boxes_to_array([g.box for g in gts])
            nd, ng = len(dets), len(gts)
            pred = np.repeat(d_arr, ng, axis=0)
            gtc = np.tile(g_arr, (nd, 1))
            res = score_pairs(pred, gtc, camera, (0.0, 0.0), config.alpha,
                              config.eps_dist, config.clamp_output)
            self.neg_dist = -res["te"].reshape(nd, ng)
            self.iou = res["iou"].reshape(nd, ng)
            self.eciou = res["eciou"].reshape(nd, ng)
            self.eciou_valid = (res["status"].reshape(nd, ng) & ECIOU_SKIP) == 0
            self.scores_full = res
        else:
            self.neg_dist = self.iou = self.eciou = None
            self.eciou_valid = None
            self.scores_full = None

    def affinity(self, kind: str):
        if kind == "center_distance":
            return self.neg_dist, None
        if kind == "iou_bev":
            return self.iou, None
        return self.eciou, self.eciou_valid


def _greedy(pair: _ClassPairData, affinity_kind: str, tau_affinity: float):
    """One class, one frame: returns (tps, fps, fn, skipped_pairs).

    tps are (det_idx, gt_idx, score, affinity) in claim order; fps are
    (det_idx, score). Detections are processed in descending score order;
    each takes the best-affinity unclaimed ground truth, ties broken by
    the smaller ground-truth index; the claim stands only if the affinity
    reaches the threshold.
    """
    tps, fps, skipped = [], [], []
    if pair.n_gt == 0 or not pair.det_order:
        return ([], [(di, s) for di, s in zip(pair.det_order, pair.det_scores)],
                pair.n_gt, skipped)
    aff, valid = pair.affinity(affinity_kind)
    claimed = [False] * pair.n_gt
    for row, (di, score) in enumerate(zip(pair.det_order, pair.det_scores)):
        best_g, best_a = -1, -math.inf
        for gi in range(pair.n_gt):
            if claimed[gi]:
                continue
            if valid is not None and not valid[row, gi]:
                skipped.append((di, gi, "ec_iou affinity undefined"))
                continue
            a = aff[row, gi]
            if a > best_a:
                best_a, best_g = a, gi
        if best_g >= 0 and best_a >= tau_affinity:
            claimed[best_g] = True
            tps.append((di, best_g, score, best_a))
        else:
            fps.append((di, score))
    fn = sum(1 for c in claimed if not c)
    return tps, fps, fn, skipped


def _tau_affinity(affinity_kind: str, label: str, config: MatchConfig,
                  class_map: dict, threshold_override: float | None) -> float:
    if affinity_kind == "center_distance":
        bound = threshold_override if threshold_override is not None else config.tp_distance
        return -bound
    if threshold_override is not None:
        return threshold_override
    return config.thresholds[family_of(label, class_map)]


@dataclass
class _FrameFragment:
    frame_id: str
    matches: dict        # proto key -> label -> (tps, fps, fn, gt_count)
    skipped_matching: list
    stats: dict          # label -> accumulated tp-statistic sums
    counts: dict


def _score_tp_stats(pair: _ClassPairData, tps) -> dict:
    """Partial sums of the USC / IoU / EC-IoU / TE statistics over TPs."""
    out = {"usc_sum": 0.0, "usc_n": 0, "iou_sum": 0.0, "iou_n": 0,
           "eciou_sum": 0.0, "eciou_n": 0, "te_sum": 0.0, "te_n": 0,
           "skip_usc": 0, "skip_eciou": 0}
    if not tps:
        return out
    res = pair.scores_full
    ng = pair.n_gt
    row_of = {di: r for r, di in enumerate(pair.det_order)}
    for di, gi, _score, _aff in tps:
        k = row_of[di] * ng + gi
        status = int(res["status"][k])
        out["iou_sum"] += float(res["iou"][k])
        out["iou_n"] += 1
        out["te_sum"] += float(res["te"][k])
        out["te_n"] += 1
        if status & (PV_SKIP | BEV_SKIP):
            out["skip_usc"] += 1
        else:
            out["usc_sum"] += float(res["usc"][k])
            out["usc_n"] += 1
        if status & ECIOU_SKIP:
            out["skip_eciou"] += 1
        else:
            out["eciou_sum"] += float(res["eciou"][k])
            out["eciou_n"] += 1
    return out


def _labels_of(frame: FrameAnnotations) -> list[str]:
    labels = {g.box.label for g in frame.ground_truths}
    labels.update(d.label for d in frame.detections)
    return sorted(labels)


def _frame_fragments(frame: FrameAnnotations, config: MatchConfig,
                     class_map: dict) -> _FrameFragment:
    prepared = {"roadside": prepare_frame(frame, config, class_map, "roadside")}
    prepared["ego"] = ego_view_filter(prepared["roadside"])

    pair_cache: dict = {}

    def pairs_for(view: str, label: str) -> _ClassPairData:
        key = (view, label)
        if key not in pair_cache:
            fr = prepared[view]
            dets, idxs = [], []
            for i, d in enumerate(fr.detections):
                if d.label == label:
                    dets.append(d)
                    idxs.append(i)
            gts = [g for g in fr.ground_truths if g.box.label == label]
            pair_cache[key] = (_ClassPairData(dets, idxs, gts, fr.camera, config), gts)
        return pair_cache[key]

    matches: dict = {}
    skipped_matching: list = []
    stats: dict = {}

    protocols = []
    if config.affinity == "center_distance":
        for ti, tau in enumerate(config.distance_thresholds):
            protocols.append((("primary", ti), config.view, "center_distance", tau))
        protocols.append((("tp",), config.view, "center_distance", config.tp_distance))
    else:
        protocols.append((("primary", 0), config.view, config.affinity, None))
        protocols.append((("tp",), config.view, config.affinity, None))
    for key, view, kind in _PROTO_TRIO:
        protocols.append(((key,), view, kind, None))

    for key, view, kind, override in protocols:
        per_label = {}
        for label in _labels_of(prepared[view]):
            pair, gts = pairs_for(view, label)
            tau = _tau_affinity(kind, label, config, class_map, override)
            tps, fps, fn, skipped = _greedy(pair, kind, tau)
            per_label[label] = (tps, fps, fn, len(gts))
            for di, gi, reason in skipped:
                skipped_matching.append((frame.frame_id, label, di, gi, reason))
        matches[key] = per_label

    for label, (tps, fps, fn, gt_count) in matches[("tp",)].items():
        pair, _ = pairs_for(config.view, label)
        stats[label] = _score_tp_stats(pair, tps)

    counts = {
        "frames": 1,
        "gt": len(prepared["roadside"].ground_truths),
        "detections": len(prepared["roadside"].detections),
    }
    return _FrameFragment(frame.frame_id, matches, skipped_matching, stats, counts)


def _task(args):
    return _frame_fragments(*args)


# ---------------------------------------------------------------------------
# dataset-level reduction
# ---------------------------------------------------------------------------

def greedy_match(frames, config: MatchConfig, class_map: dict,
                 threshold_override: float | None = None,
                 affinity: str | None = None, view: str | None = None) -> MatchSet:
    """Dataset-level greedy matching under one protocol."""
    kind = affinity or config.affinity
    use_view = view or config.view
    out = MatchSet()
    for frame in frames:
        fr = prepare_frame(frame, config, class_map, use_view)
        for label in _labels_of(fr):
            dets, idxs = [], []
            for i, d in enumerate(fr.detections):
                if d.label == label:
                    dets.append(d)
                    idxs.append(i)
            gts = [g for g in fr.ground_truths if g.box.label == label]
            pair = _ClassPairData(dets, idxs, gts, fr.camera, config)
            tau = _tau_affinity(kind, label, config, class_map, threshold_override)
            tps, fps, fn, skipped = _greedy(pair, kind, tau)
            cm = out.classes.setdefault(label, ClassMatches())
            cm.tp.extend((frame.frame_id, di, gi, s, a) for di, gi, s, a in tps)
            cm.fp.extend((frame.frame_id, di, s) for di, s in fps)
            cm.fn += fn
            cm.gt_count += len(gts)
            for di, gi, reason in skipped:
                out.skipped.append((frame.frame_id, label, di, gi, reason))
    return out


def _pr_curve(cm: ClassMatches):
    """Score-ranked precision/recall operating points."""
    records = ([(s, fid, di, 1) for fid, di, gi, s, a in cm.tp]
               + [(s, fid, di, 0) for fid, di, s in cm.fp])
    records.sort(key=lambda r: (-r[0], r[1], r[2]))
    tp_cum = 0
    recalls, precisions = [], []
    for k, (_s, _f, _d, is_tp) in enumerate(records, start=1):
        tp_cum += is_tp
        recalls.append(tp_cum / cm.gt_count)
        precisions.append(tp_cum / k)
    return recalls, precisions


def _ap_envelope(recalls, precisions) -> float:
    """Area under the precision envelope (all-points interpolation)."""
    if not recalls:
        return 0.0
    env = list(precisions)
    for i in range(len(env) - 2, -1, -1):
        env[i] = max(env[i], env[i + 1])
    ap = 0.0
    prev_r = 0.0
    for r, p in zip(recalls, env):
        if r > prev_r:
            ap += (r - prev_r) * p
            prev_r = r
    return ap


def _ap_101(recalls, precisions, min_recall: float, min_precision: float) -> float:
    """101-point sampled AP with optional recall/precision clipping."""
    env = list(precisions)
    for i in range(len(env) - 2, -1, -1):
        env[i] = max(env[i], env[i + 1])
    total = 0.0
    count = 0
    j = 0
    for r in np.linspace(0.0, 1.0, 101):
        if r < min_recall - 1e-12:
            continue
        while j < len(recalls) and recalls[j] < r - 1e-12:
            j += 1
        p = env[j] if j < len(env) else 0.0
        total += max(0.0, p - min_precision)
        count += 1
    if count == 0:
        return 0.0
    return total / count / (1.0 - min_precision)


def average_precision(class_matches, config: MatchConfig) -> float | None:
    """AP for one class; averages over multiple matchsets (distance
    thresholds) and returns None when the class has no ground truth."""
    if isinstance(class_matches, ClassMatches):
        class_matches = [class_matches]
    aps = []
    for cm in class_matches:
        if cm.gt_count == 0:
            continue
        recalls, precisions = _pr_curve(cm)
        if config.interp_101:
            aps.append(_ap_101(recalls, precisions, config.min_recall,
                               config.min_precision))
        else:
            aps.append(_ap_envelope(recalls, precisions))
    if not aps:
        return None
    return sum(aps) / len(aps)


def compose_nds(map_value: float, tp_errors: dict, weights: dict | None = None) -> float:
    """Weighted blend of mAP with clipped unit-complement error terms."""
    if weights is None:
        weights = {"map": 5.0}
    w_map = weights.get("map", 5.0)
    num = w_map * map_value
    den = w_map
    for name in sorted(tp_errors):
        w = weights.get(name, 1.0)
        num += w * (1.0 - min(1.0, tp_errors[name]))
        den += w
    return num / den


def compose_nds_usc(nds: float, mausc: float) -> float:
    """Arithmetic mean of NDS and mAUSC (both in [0, 1])."""
    if not (0.0 <= nds <= 1.0 and 0.0 <= mausc <= 1.0):
        raise ValueError("nds and mausc must lie in [0, 1]")
    return 0.5 * (nds + mausc)


def _merge_fragments(fragments, config: MatchConfig):
    """Combine per-frame fragments (in frame order) into dataset matchsets."""
    proto_sets: dict = {}
    stats: dict = {}
    skipped_matching = 0
    counts = {"frames": 0, "gt": 0, "detections": 0}
    for frag in fragments:
        skipped_matching += len(frag.skipped_matching)
        for k in counts:
            counts[k] += frag.counts[k]
        for key, per_label in frag.matches.items():
            dst = proto_sets.setdefault(key, {})
            for label, (tps, fps, fn, gt_count) in per_label.items():
                cm = dst.setdefault(label, ClassMatches())
                cm.tp.extend((frag.frame_id, di, gi, s, a) for di, gi, s, a in tps)
                cm.fp.extend((frag.frame_id, di, s) for di, s in fps)
                cm.fn += fn
                cm.gt_count += gt_count
        for label, part in frag.stats.items():
            agg = stats.setdefault(label, dict.fromkeys(part, 0))
            for k, v in part.items():
                agg[k] += v
    counts["skipped_matching"] = skipped_matching
    return proto_sets, stats, counts


def _mean_or_none(values) -> float | None:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    return sum(vals) / len(vals)


def _protocol_map(proto_sets, keys, config) -> tuple[float | None, dict]:
    """(mean AP, per-class AP) over the matchsets selected by keys."""
    labels = sorted({lb for k in keys for lb in proto_sets.get(k, {})})
    per_class = {}
    for lb in labels:
        sets = [proto_sets[k][lb] for k in keys if lb in proto_sets.get(k, {})]
        per_class[lb] = average_precision(sets, config)
    return _mean_or_none(per_class.values()), per_class


@dataclass
class MetricReport:
    per_class: dict
    aggregates: dict
    counts: dict
    config: dict

    def to_dict(self) -> dict:
        return {"per_class": self.per_class, "aggregates": self.aggregates,
                "counts": self.counts, "config": self.config}


def evaluate_frames(frames, config: MatchConfig, class_map: dict,
                    workers: int = 1) -> MetricReport:
    """Full evaluation over a frame sequence."""
    tasks = [(f, config, class_map) for f in frames]
    if workers <= 1:
        fragments = [_task(t) for t in tasks]
    else:
        chunk = max(1, len(tasks) // (workers * 4))
        with ProcessPoolExecutor(max_workers=workers) as ex:
            fragments = list(ex.map(_task, tasks, chunksize=chunk))

    proto_sets, stats, counts = _merge_fragments(fragments, config)

    if config.affinity == "center_distance":
        primary_keys = [("primary", i) for i in range(len(config.distance_thresholds))]
    else:
        primary_keys = [("primary", 0)]
    map_value, ap_per_class = _protocol_map(proto_sets, primary_keys, config)
    rv_map, _ = _protocol_map(proto_sets, [("rv",)], config)
    ev_map, _ = _protocol_map(proto_sets, [("ev",)], config)
    ec_map_value, _ = _protocol_map(proto_sets, [("ec",)], config)

    tp_sets = proto_sets.get(("tp",), {})
    labels = sorted(tp_sets)
    per_class = {}
    tp_total = fp_total = fn_total = 0
    skipped_usc = skipped_eciou = 0
    for lb in labels:
        cm = tp_sets[lb]
        if cm.gt_count == 0:
            continue
        st = stats.get(lb, {})
        skipped_usc += st.get("skip_usc", 0)
        skipped_eciou += st.get("skip_eciou", 0)

        def mean_stat(sum_key, n_key, worst):
            n = st.get(n_key, 0)
            if n == 0:
                return worst if config.worst_case_on_empty else None
            return st[sum_key] / n

        per_class[lb] = {
            "ap": ap_per_class.get(lb),
            "ausc": mean_stat("usc_sum", "usc_n", 0.0),
            "aiou": mean_stat("iou_sum", "iou_n", 0.0),
            "aeciou": mean_stat("eciou_sum", "eciou_n", 0.0),
            "ate": mean_stat("te_sum", "te_n", 1.0),
            "tp": len(cm.tp),
            "fp": len(cm.fp),
            "fn": cm.fn,
            "gt": cm.gt_count,
        }
        tp_total += len(cm.tp)
        fp_total += len(cm.fp)
        fn_total += cm.fn

    mausc = _mean_or_none(c["ausc"] for c in per_class.values())
    maiou = _mean_or_none(c["aiou"] for c in per_class.values())
    maeciou = _mean_or_none(c["aeciou"] for c in per_class.values())
    mate = _mean_or_none(c["ate"] for c in per_class.values())

    nds = None
    nds_usc = None
    if map_value is not None and mate is not None:
        nds = compose_nds(map_value, {"trans_err": mate})
        if mausc is not None:
            nds_usc = compose_nds_usc(nds, mausc)

    aggregates = {
        "map": map_value, "mausc": mausc, "maiou": maiou,
        "maeciou": maeciou, "mate": mate, "nds": nds, "nds_usc": nds_usc,
        "ec_map": ec_map_value, "ev_map": ev_map, "rv_map": rv_map,
    }
    counts.update({"tp": tp_total, "fp": fp_total, "fn": fn_total,
                   "skipped_usc": skipped_usc, "skipped_eciou": skipped_eciou})
    config_echo = {
        "affinity": config.affinity, "view": config.view, "alpha": config.alpha,
        "thresholds": dict(sorted(config.thresholds.items())),
        "distance_thresholds": list(config.distance_thresholds),
        "score_floor": config.score_floor, "tp_distance": config.tp_distance,
        "interp_101": config.interp_101, "min_recall": config.min_recall,
        "min_precision": config.min_precision,
        "worst_case_on_empty": config.worst_case_on_empty,
    }
    return MetricReport(per_class=per_class, aggregates=aggregates,
                        counts=counts, config=config_echo)


def ec_map(frames, config: MatchConfig, class_map: dict) -> float | None:
    """Mean AP under EC-IoU matching in the ego view."""
    ms = greedy_match(frames, config, class_map, affinity="ec_iou", view="ego")
    per_class = {lb: average_precision(cm, config)
                 for lb, cm in sorted(ms.classes.items())}
    return _mean_or_none(per_class.values())
