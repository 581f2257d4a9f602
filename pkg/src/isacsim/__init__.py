"""Wideband sub-THz integrated sensing and communication simulation toolkit."""

from .arrays import (
    SPEED_OF_LIGHT,
    ArrayGeometry,
    BeamspaceDictionary,
    Direction,
    beamspace_dictionary,
    dirichlet,
    steering_derivatives,
    steering_vector,
    steering_vectors,
)
from .channels import (
    BeamspaceProfile,
    CommChannel,
    PathSpec,
    SubcarrierGrid,
    TargetResponse,
    TargetSpec,
    UserChannelSpec,
    beamspace_channels,
    channel_specs_from_scene,
    comm_channel,
    cs_correlation,
    downlink_rx,
    echo_rx,
    peak_similarity,
    target_response,
)
from .errors import ConfigurationError, InfeasibleTimingError, TtdRangeExceeded
from .metrics import (
    FisherInfo,
    FrameTiming,
    LossSample,
    NoiseConfig,
    crb,
    fisher_information,
    isac_efficiency,
    isac_loss,
    spectral_efficiency,
)
from .precoder import (
    FactorizeResult,
    HybridPrecoder,
    SquintTrajectory,
    array_gain,
    beam_pattern,
    equivalent_channels,
    hybrid_factorize,
    squint_trajectory_config,
    subcarrier_pointing,
    transmit,
    ttd_phase_matrix,
)
from .scene import (
    AngularRange,
    BoundingBox,
    CameraModel,
    Detection,
    Entity,
    Scene,
    detect_candidates,
    load_scene,
    pixel_to_world,
    positioning_spectrum,
    save_scene,
    world_to_pixel,
    world_to_polar,
)
from .tracking import (
    HorizontalSearch,
    TrackingPlan,
    TrackingResult,
    VerticalSearch,
    gain_vs_distance,
    horizontal_search,
    partition_grids,
    sa_cp_bt,
    squint_thresholds,
    vertical_search,
)

__version__ = "0.1.0"
