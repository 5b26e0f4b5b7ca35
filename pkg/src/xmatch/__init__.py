"""Cross-modality image-matching toolkit.

Synthesizes supervised match data from single images (sampled homographies,
modality substitution) and posed multi-view scenes (depth-consistency-gated
correspondences), repairs fragmented video matches into tracks, fits robust
two-view models, and scores predictions with the standard registration and
pose metrics.
"""

__version__ = "0.1.0"

from .evaluation import (
    EmptySetError,
    ErrorSample,
    LandmarkSet,
    ManifestInvalidError,
    MetricReport,
    aggregate_rtre,
    auc,
    corner_warp_error,
    emit_report,
    rtre,
    run_protocol,
    success_rate,
)
from .fitting import (
    BSplineField,
    CheiralityAmbiguousError,
    DegenerateConfigurationError,
    DivergedError,
    FitError,
    FitResult,
    InsufficientDataError,
    NoModelError,
    RansacConfig,
    evaluate_bspline,
    fit_bspline_sgd,
    ransac,
    recover_pose,
    sampson_distances,
    solve_affine_lsq,
    solve_epipolar_8pt,
    solve_homography_dlt,
)
from .geometry import (
    CameraIntrinsics,
    Correspondence,
    DepthMap,
    GeometryError,
    PlanarTransform,
    PosedView,
    RelativePoseEstimate,
    RigidPose,
    correspondence_errors,
    filter_grid_correspondences,
    lift_and_project,
    overlap_ratio,
    relative_pose,
    relative_pose_error,
    sample_depth_bilinear,
)
from .synthesis import (
    DegenerateTransformError,
    EvalWarpPreset,
    HomographySampleRanges,
    MAP_PRESET,
    MEDICAL_PRESET,
    ModalityGenerator,
    NoOverlapError,
    SynthesisError,
    SynthesizedPair,
    TRAIN_HOMOGRAPHY_RANGES,
    apply_modality,
    make_depth_pair,
    make_warp_pair,
    sample_eval_transform,
    sample_homography,
    warp_image,
)
from .tracks import (
    AnchoredEdge,
    EndpointObservation,
    ExternalRefinerProtocolError,
    InsufficientMatchesError,
    Track,
    TrackError,
    TrackObservation,
    TrainingPairRecord,
    anchor_claims,
    build_tracks,
    geometric_verify,
    nms_merge,
    plan_pair_schedule,
    read_track_file,
    refine_tracks,
    sample_matches,
    select_training_pairs,
    write_track_file,
)

__all__ = [name for name in dir() if not name.startswith("_")]
