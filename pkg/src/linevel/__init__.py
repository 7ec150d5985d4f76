"""Event-camera linear velocity estimation from line clusters and an IMU.

Closed-form RANSAC bootstrapping from event-line incidence constraints,
plus a sliding-window optimizer fusing event reprojection, preintegrated
inertial deltas and line-consistency regularization.  A deterministic
synthetic simulator and experiment harness round out the toolkit.
"""

from .celc import (Event, EventCluster, LineObservation, celc_row,
                   line_from_two_events, solve_velocity, transfer_line)
from .errors import LinevelError
from .geometry import (CameraIntrinsics, OrthonormalLine, PluckerLine,
                       line_project, orthonormal_to_plucker,
                       orthonormal_update, plucker_to_orthonormal,
                       plucker_transform, so3_exp)
from .inertial import (BodyState, ImuNoise, ImuSample, Preintegration,
                       imu_residual, preintegrate)
from .line_solver import (MeasurementLine, compensate_event,
                          line_inlier_error, resolve_velocity_sign,
                          solve_line_minimal)
from .robust import BootstrapResult, RansacParams, inner_ransac, outer_ransac
from .backend import (WindowConfig, WindowState, initialize_scale,
                      optimize_window, relative_pose_in_slice, slide_window,
                      triangulate_line)
from .simulator import (MotionSpec, NoiseSpec, SampleRates, SceneSpec,
                        generate_events, generate_trajectory_dataset,
                        sample_scene)
from .harness import (ExperimentConfig, metric_epsilon, metric_phi,
                      metric_theta, run_experiment, run_pipeline)

__version__ = "0.1.0"

__all__ = [
    "BodyState", "BootstrapResult", "CameraIntrinsics", "Event",
    "EventCluster", "ExperimentConfig", "ImuNoise", "ImuSample",
    "LineObservation", "LinevelError", "MeasurementLine", "MotionSpec",
    "NoiseSpec", "OrthonormalLine", "PluckerLine", "Preintegration",
    "RansacParams", "SampleRates", "SceneSpec", "WindowConfig",
    "WindowState", "celc_row", "compensate_event", "generate_events",
    "generate_trajectory_dataset", "imu_residual", "initialize_scale",
    "inner_ransac", "line_from_two_events", "line_inlier_error",
    "line_project", "metric_epsilon", "metric_phi", "metric_theta",
    "optimize_window", "orthonormal_to_plucker", "orthonormal_update",
    "outer_ransac", "plucker_to_orthonormal", "plucker_transform",
    "preintegrate", "relative_pose_in_slice", "resolve_velocity_sign",
    "run_experiment", "run_pipeline", "sample_scene", "slide_window",
    "so3_exp", "solve_line_minimal", "solve_velocity", "transfer_line",
    "triangulate_line",
]
