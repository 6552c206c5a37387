"""Automated time-lapse tile microscopy: acquisition, stitching, flattening,
and drift stabilization, with a deterministic virtual microscope for
development and verification."""

from .errors import (
    CapabilityError,
    ConfigError,
    FitDegenerateError,
    GroupNotFoundError,
    ParameterError,
    TiffFormatError,
    TravelLimitError,
    WorkflowError,
)
from .imaging import Channel, Image, TileAddress, Translation, adjust_contrast, quantize, warp_translate
from .tiffio import load_tiff, read_tiff, read_tiff_dimensions, save_tiff, write_tiff
from .scene import DriftSpec, SceneConfig, SpecimenScene
from .microscope import (
    MicroscopeState,
    ObjectiveSpec,
    SimulatorConfig,
    VirtualMicroscope,
    default_turret,
)
from .planner import (
    ROI,
    AcquisitionParams,
    FocusPlane,
    OverviewRegion,
    StitchMode,
    TilePlan,
    TravelMode,
    compute_tile_grid,
    fit_focus_plane,
    interpolate_z,
    plan_route,
    schedule,
    z_stack_offsets,
)
from .flatfield import FlatField, apply_flattening, create_flattening, load_flatfield, save_flatfield
from .stitcher import (
    PairOffset,
    Panorama,
    blend,
    place_no_overlap,
    register_grid,
    register_pair,
    seam_metric,
    solve_global_positions,
    stitch,
)
from .features import (
    FrameFeatures,
    Keypoint,
    describe_keypoints,
    detect_keypoints,
    extract_features,
    match_descriptors,
)
from .stabilizer import (
    CorrelatedGroup,
    CorrelationMatrix,
    FrameDrift,
    TileDriftStore,
    average_group_drift,
    build_correlation_matrix,
    compute_tile_drift_store,
    consensus_translation,
    cumulative_correction,
    estimate_tile_drift,
    find_correlated_group,
    run_stabilization,
    stabilize_sequence,
)
from .engine import AcquisitionEngine, AcquisitionRecord, ControlFlags
from .config import RunConfig, load_config, parse_config

__version__ = "1.0.0"

__all__ = [name for name in dir() if not name.startswith("_")]
