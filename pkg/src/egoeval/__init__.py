"""Safety-oriented evaluation of 3D object detection.

Computes the USC safety coverage score and the ego-centric EC-IoU over
oriented boxes, composes them into NDS-USC and EC-mAP under ego-centric
matching protocols, runs the intersection safety-impact model, and
exposes a batched EC-IoU value/gradient kernel for training loops.
"""

__version__ = "0.1.0"

from .errors import (
    BatchValidationError,
    BehindCamera,
    ConfigError,
    DegenerateDistance,
    EgoEvalError,
    EmptyGroundTruth,
    MissingCamera,
    NonPositiveDepth,
    OriginInsidePolygon,
    SchemaError,
    UnmappedLabel,
)
from .geometry import (
    BEVPoly,
    Box3D,
    CameraModel,
    PVRect,
    bev_polygon,
    box_corners,
    closest_point,
    convex_intersection,
    polygon_area,
    polygon_centroid,
    project_pv,
    segments_intersect,
    visible_extreme_corners,
)
from .usc import USCResult, adr, bev_predicate, iogt, pv_rect, usc_pair
from .eciou import (
    ECIoUGrad,
    ECIoUParams,
    ec_iou,
    ec_iou_grad,
    ec_iou_loss,
    weight,
    weighted_area,
)
from .evaluation import (
    FrameAnnotations,
    GroundTruth,
    MatchConfig,
    MatchSet,
    MetricReport,
    average_precision,
    compose_nds,
    compose_nds_usc,
    ec_map,
    ego_view_filter,
    evaluate_frames,
    greedy_match,
)
from .impact import (
    ImpactParams,
    ImpactResult,
    annual_collisions,
    apply_av_reduction,
    delta_collisions,
    impact_pipeline,
    sensitivity_sweep,
    slope_beta,
    vision_zero_threshold,
)
from .dataset import DatasetFile, load_dataset, parse_dataset, save_dataset
from .batch import eciou_batch
