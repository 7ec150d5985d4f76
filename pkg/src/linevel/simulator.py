"""Synthetic event/IMU data generation for solver and pipeline evaluation.

Two protocols are provided.  The constant-velocity protocol samples line
segments in a cube, draws angular and linear velocities, and emits event
clusters whose pixels sweep along the cluster's image-line trajectory;
noise-free data exactly satisfies the event-line velocity constraint, so
solver exactness can be tested against a true fixed point.  The
trajectory protocol flies a smooth analytic sinusoid, emits 200 Hz
inertial readings with white noise and random-walk biases, and projects
events with the true pose at each timestamp for back-end evaluation.

The image-line trajectory of a cluster is the constraint-transfer line of
its boundary observations; it coincides with the true line reprojection
at both interval boundaries and is held anchored during the boundary
sub-intervals used for line hypothesis sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .celc import Event, EventCluster, transfer_line
from .errors import InvisibleLine
from .geometry import (CameraIntrinsics, DAVIS346, PluckerLine,
                       plucker_transform, quat_from_matrix, rot_y, rot_z,
                       so3_exp, so3_exp_batch)
from .inertial import ImuNoise, ImuSample


@dataclass(frozen=True)
class SceneSpec:
    """Line-segment sampling volume."""

    n_lines: int = 5
    cube_min: tuple = (-2.0, -2.0, 3.0)
    cube_max: tuple = (2.0, 2.0, 6.0)
    segment_length: tuple = (2.0, 2.0)


@dataclass(frozen=True)
class MotionSpec:
    """Camera kinematics for either simulation protocol."""

    mode: str = "constant_velocity"
    omega_range: tuple = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    v_range: tuple = ((1.0, 1.0, 1.0), (1.5, 1.5, 1.5))
    t_start: float = 0.0
    t_end: float = 0.5
    # trajectory mode parameters
    duration: float = 2.0
    v_lin: tuple = (0.4, 0.3, 0.15)
    accel_amp: tuple = (0.6, 0.5, 0.3)
    accel_freq: float = 0.5
    yaw_amp: float = 0.25
    yaw_freq: float = 0.5
    pitch_amp: float = 0.12
    pitch_freq: float = 0.4


@dataclass(frozen=True)
class NoiseSpec:
    """Measurement corruption levels."""

    event_sigma_px: float = 1.0
    outlier_ratio: float = 0.1
    omega_sigma: float = 0.0     # optional noise on the gyro input
    imu: ImuNoise = field(default_factory=ImuNoise)
    rng_seed: int = 0

    def clean(self) -> "NoiseSpec":
        return NoiseSpec(0.0, 0.0, 0.0, self.imu.zero(), self.rng_seed)


@dataclass(frozen=True)
class SampleRates:
    imu_hz: float = 200.0
    events_per_line_hz: float = 2000.0


@dataclass(frozen=True)
class LineSegment:
    p0: np.ndarray
    p1: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float))

    def line(self) -> PluckerLine:
        return PluckerLine.through_point(self.p0, self.p1 - self.p0)

    def point(self, u: float) -> np.ndarray:
        return (1.0 - u) * self.p0 + u * self.p1


@dataclass
class Scene:
    spec: SceneSpec
    segments: list[LineSegment]


def sample_segment(spec: SceneSpec, rng: np.random.Generator) -> LineSegment:
    lo = np.asarray(spec.cube_min)
    hi = np.asarray(spec.cube_max)
    center = rng.uniform(lo, hi)
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    length = rng.uniform(*spec.segment_length)
    return LineSegment(p0=center - 0.5 * length * d, p1=center + 0.5 * length * d)


def sample_scene(spec: SceneSpec, rng: np.random.Generator) -> Scene:
    """Uniform line segments in the cube (deterministic under the rng)."""
    return Scene(spec=spec, segments=[sample_segment(spec, rng)
                                      for _ in range(spec.n_lines)])


# ---------------------------------------------------------------------------
# constant-velocity protocol
# ---------------------------------------------------------------------------

def pose_at(omega: np.ndarray, v: np.ndarray, t: float, t_ref: float
            ) -> tuple[np.ndarray, np.ndarray]:
    """Reference-from-camera pose (R, c) of the frame at time t.

    x_ref = R x_t + c with R = exp([omega] (t - t_ref)) and camera center
    c = v (t - t_ref) moving linearly in the reference frame.
    """
    dt = t - t_ref
    return so3_exp(np.asarray(omega) * dt), np.asarray(v) * dt


def line_in_frame_at(line: PluckerLine, omega: np.ndarray, v: np.ndarray,
                     t: float, t_ref: float) -> PluckerLine:
    """Reference-frame line expressed in the camera frame at time t."""
    R, c = pose_at(omega, v, t, t_ref)
    return plucker_transform(line, R.T, -R.T @ c)


def project_point_at(P: np.ndarray, omega: np.ndarray, v: np.ndarray,
                     t: float, t_ref: float, K: CameraIntrinsics) -> np.ndarray:
    """Pixel of a reference-frame point seen from the camera at time t."""
    R, c = pose_at(omega, v, t, t_ref)
    X = R.T @ (np.asarray(P) - c)
    return K.bearing_to_pixel(X)


@dataclass
class ConstantVelocityDataset:
    """Event clusters plus the ground truth that generated them."""

    clusters: list[EventCluster]
    K: CameraIntrinsics
    t_s: float
    t_e: float
    omega: np.ndarray
    v: np.ndarray
    lines: list[PluckerLine]          # in the frame at t_s
    l_start: list[np.ndarray]         # unit boundary observations
    l_end: list[np.ndarray]
    dwell: float
    omega_measured: np.ndarray | None = None

    def line_at(self, j: int, t: float) -> np.ndarray:
        """Normalized-plane image line of cluster j at time t."""
        t_eff = min(max(t, self.t_s + self.dwell), self.t_e - self.dwell)
        if t_eff <= self.t_s + self.dwell:
            t_eff = self.t_s
        elif t_eff >= self.t_e - self.dwell:
            t_eff = self.t_e
        lam = transfer_line(self.l_start[j], self.l_end[j], self.omega,
                            self.v, t_eff, self.t_s, self.t_e)
        return lam / np.linalg.norm(lam)

    def pixel_line_at(self, j: int, t: float) -> np.ndarray:
        l_px = self.K.K_inv.T @ self.line_at(j, t)
        return l_px / np.hypot(l_px[0], l_px[1])


def _segment_visible(seg: LineSegment, omega, v, t_s, t_e, K: CameraIntrinsics,
                     margin: float = 5.0) -> bool:
    for t in (t_s, 0.5 * (t_s + t_e), t_e):
        R, c = pose_at(omega, v, t, t_s)
        for P in (seg.p0, seg.p1, seg.point(0.5)):
            X = R.T @ (P - c)
            if X[2] < 0.5:
                return False
            px = K.bearing_to_pixel(X)
            if not (margin <= px[0] < K.width - margin
                    and margin <= px[1] < K.height - margin):
                return False
    return True


def _boundary_lines(line: PluckerLine, omega, v, t_s, t_e
                    ) -> tuple[np.ndarray, np.ndarray]:
    m_s = line.m / np.linalg.norm(line.m)
    le_line = line_in_frame_at(line, omega, v, t_e, t_s)
    m_e = le_line.m / np.linalg.norm(le_line.m)
    return m_s, m_e


def generate_events(scene: Scene, motion: MotionSpec, noise: NoiseSpec,
                    n_events_per_line: int, K: CameraIntrinsics,
                    rng: np.random.Generator, dwell_frac: float = 0.1,
                    retry_budget: int = 200) -> ConstantVelocityDataset:
    """Constant-velocity event clusters over [t_start, t_end].

    Each event receives a uniform timestamp, a pixel on the cluster's
    image-line trajectory at that time, Gaussian pixel noise, and is
    replaced by a uniform in-image outlier with the configured ratio.
    Invisible segments are resampled from the scene volume.
    """
    t_s, t_e = motion.t_start, motion.t_end
    omega = rng.uniform(*motion.omega_range)
    v = rng.uniform(*motion.v_range)
    dwell = dwell_frac * (t_e - t_s)

    clusters: list[EventCluster] = []
    lines: list[PluckerLine] = []
    l_starts: list[np.ndarray] = []
    l_ends: list[np.ndarray] = []

    for j in range(len(scene.segments)):
        seg = scene.segments[j]
        tries = 0
        while True:
            if _segment_visible(seg, omega, v, t_s, t_e, K):
                line = seg.line()
                l_s, l_e = _boundary_lines(line, omega, v, t_s, t_e)
                probes = [transfer_line(l_s, l_e, omega, v, t, t_s, t_e)
                          for t in np.linspace(t_s, t_e, 5)]
                if min(np.hypot(p[0], p[1]) / np.linalg.norm(p) + 1e-300
                       for p in probes) > 1e-4:
                    break
            tries += 1
            if tries > retry_budget:
                raise InvisibleLine(f"segment {j} never visible after "
                                    f"{retry_budget} resamples")
            seg = sample_segment(scene.spec, rng)
        scene.segments[j] = seg

        times = np.sort(rng.uniform(t_s, t_e, n_events_per_line))
        t_line = np.clip(times, t_s + dwell, t_e - dwell)
        t_line = np.where(times <= t_s + dwell, t_s, t_line)
        t_line = np.where(times >= t_e - dwell, t_e, t_line)
        # image line at each event time (vectorized transfer); the
        # end-anchored rotation is the start-anchored one composed with a
        # constant rotation (common axis)
        R_si = so3_exp_batch(np.outer(t_line - t_s, omega))
        l_e_s = so3_exp(omega * (t_s - t_e)).T @ l_e
        lam = ((t_line - t_e) * (l_e @ v))[:, None] \
            * np.einsum("nij,i->nj", R_si, l_s) \
            - ((t_line - t_s) * (l_s @ v))[:, None] \
            * np.einsum("nij,i->nj", R_si, l_e_s)
        l_px = lam @ K.K_inv
        # spatial extent: segment endpoints at the event time, snapped
        # onto the line
        R_t = so3_exp_batch(np.outer(times - t_s, omega))
        c_t = np.outer(times - t_s, v)
        ends = np.empty((2, n_events_per_line, 2))
        for ei, P in enumerate((seg.p0, seg.p1)):
            X = np.einsum("nji,nj->ni", R_t, P[None, :] - c_t)
            ends[ei, :, 0] = K.fx * X[:, 0] / X[:, 2] + K.cx
            ends[ei, :, 1] = K.fy * X[:, 1] / X[:, 2] + K.cy
        n2 = l_px[:, 0] ** 2 + l_px[:, 1] ** 2
        for ei in range(2):
            r = (ends[ei, :, 0] * l_px[:, 0] + ends[ei, :, 1] * l_px[:, 1]
                 + l_px[:, 2]) / n2
            ends[ei] -= r[:, None] * l_px[:, :2]
        u = rng.uniform(size=n_events_per_line)[:, None]
        px = (1.0 - u) * ends[0] + u * ends[1]
        if noise.event_sigma_px > 0:
            px = px + rng.normal(0.0, noise.event_sigma_px,
                                 (n_events_per_line, 2))
        is_outlier = np.zeros(n_events_per_line, dtype=bool)
        if noise.outlier_ratio > 0:
            n_out = int(round(noise.outlier_ratio * n_events_per_line))
            idx = rng.choice(n_events_per_line, size=n_out, replace=False)
            is_outlier[idx] = True
            px[idx, 0] = rng.uniform(0, K.width, n_out)
            px[idx, 1] = rng.uniform(0, K.height, n_out)
        events = [Event(x=float(px[i, 0]), y=float(px[i, 1]), t=float(times[i]))
                  for i in range(n_events_per_line)]
        clusters.append(EventCluster(id=j, events=events, t_s=t_s, t_e=t_e))
        lines.append(line)
        l_starts.append(l_s)
        l_ends.append(l_e)

    omega_meas = omega.copy()
    if noise.omega_sigma > 0:
        omega_meas = omega + rng.normal(0.0, noise.omega_sigma, 3)
    return ConstantVelocityDataset(
        clusters=clusters, K=K, t_s=t_s, t_e=t_e, omega=omega, v=v,
        lines=lines, l_start=l_starts, l_end=l_ends, dwell=dwell,
        omega_measured=omega_meas)


def generate_anchored_events(line: PluckerLine, segment: LineSegment | None,
                             omega: np.ndarray, v: np.ndarray,
                             times: np.ndarray, t_s: float,
                             K: CameraIntrinsics,
                             rng: np.random.Generator) -> list[Event]:
    """Events exactly on the line's reprojection under the rigid pose model.

    This is the generative model assumed by the minimal 4-event solver:
    every measurement line meets the 3D line exactly.
    """
    events = []
    for t in np.asarray(times, dtype=float):
        if segment is not None:
            P = segment.point(rng.uniform())
        else:
            P = line.closest_point() + rng.uniform(-1.0, 1.0) * line.d
        px = project_point_at(P, omega, v, t, t_s, K)
        events.append(Event(x=float(px[0]), y=float(px[1]), t=float(t)))
    return events


# ---------------------------------------------------------------------------
# trajectory protocol
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryDataset:
    """Smooth-trajectory events, inertial stream and ground truth."""

    clusters: list[EventCluster]
    imu: list[ImuSample]
    K: CameraIntrinsics
    motion: MotionSpec
    noise: NoiseSpec
    lines: list[PluckerLine]          # world frame
    segments: list[LineSegment]
    gt_times: np.ndarray
    gt_v_w: np.ndarray                # (N, 3)
    gt_q: np.ndarray                  # (N, 4)
    gt_b_a: np.ndarray
    gt_b_g: np.ndarray

    def position(self, t):
        return _traj_position(self.motion, t)

    def velocity(self, t):
        return _traj_velocity(self.motion, t)

    def rotation(self, t):
        return _traj_rotation(self.motion, t)

    def body_rate(self, t):
        return _traj_body_rate(self.motion, t)

    def gt_state_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Analytic (v_w, q) at time t."""
        return self.velocity(t), quat_from_matrix(self.rotation(t))

    def bias_at(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        i = int(np.searchsorted(self.gt_times, t, side="right")) - 1
        i = min(max(i, 0), len(self.gt_times) - 1)
        return self.gt_b_a[i], self.gt_b_g[i]


def _traj_position(m: MotionSpec, t):
    t = np.asarray(t, dtype=float)
    w = 2 * math.pi * m.accel_freq
    amp = np.asarray(m.accel_amp)
    return (np.asarray(m.v_lin) * t[..., None]
            + amp * np.sin(w * t)[..., None])


def _traj_velocity(m: MotionSpec, t):
    t = np.asarray(t, dtype=float)
    w = 2 * math.pi * m.accel_freq
    amp = np.asarray(m.accel_amp)
    return np.asarray(m.v_lin) + amp * w * np.cos(w * t)[..., None]


def _traj_accel(m: MotionSpec, t):
    t = np.asarray(t, dtype=float)
    w = 2 * math.pi * m.accel_freq
    amp = np.asarray(m.accel_amp)
    return -amp * w * w * np.sin(w * t)[..., None]


def _traj_angles(m: MotionSpec, t):
    wy = 2 * math.pi * m.yaw_freq
    wp = 2 * math.pi * m.pitch_freq
    psi = m.yaw_amp * np.sin(wy * t)
    th = m.pitch_amp * np.sin(wp * t)
    dpsi = m.yaw_amp * wy * np.cos(wy * t)
    dth = m.pitch_amp * wp * np.cos(wp * t)
    return psi, th, dpsi, dth


def _traj_rotation(m: MotionSpec, t: float) -> np.ndarray:
    psi, th, _, _ = _traj_angles(m, t)
    return rot_z(psi) @ rot_y(th)


def _traj_body_rate(m: MotionSpec, t: float) -> np.ndarray:
    psi, th, dpsi, dth = _traj_angles(m, t)
    return dpsi * (rot_y(th).T @ np.array([0.0, 0.0, 1.0])) \
        + dth * np.array([0.0, 1.0, 0.0])


def _project(X: np.ndarray, K: CameraIntrinsics) -> np.ndarray | None:
    px = K.bearing_to_pixel(X / X[2])
    if not K.contains(px[0], px[1]):
        return None
    return px


def generate_trajectory_dataset(scene: Scene, motion: MotionSpec,
                                noise: NoiseSpec, rates: SampleRates,
                                rng: np.random.Generator,
                                K: CameraIntrinsics = DAVIS346,
                                init_b_a: np.ndarray | None = None,
                                init_b_g: np.ndarray | None = None
                                ) -> TrajectoryDataset:
    """Sinusoidal 6-DoF flight with line-triggered events and noisy IMU."""
    g_w = np.array([0.0, 0.0, noise.imu.g])
    duration = motion.duration
    n_imu = int(round(duration * rates.imu_hz)) + 1
    times = np.arange(n_imu) / rates.imu_hz

    b_a = np.zeros(3) if init_b_a is None else np.asarray(init_b_a, float)
    b_g = np.zeros(3) if init_b_g is None else np.asarray(init_b_g, float)
    imu: list[ImuSample] = []
    bas = np.zeros((n_imu, 3))
    bgs = np.zeros((n_imu, 3))
    dt = 1.0 / rates.imu_hz
    for i, t in enumerate(times):
        bas[i] = b_a
        bgs[i] = b_g
        R = _traj_rotation(motion, t)
        a_body = R.T @ (_traj_accel(motion, t) + g_w)
        w_body = _traj_body_rate(motion, t)
        a_meas = a_body + b_a
        w_meas = w_body + b_g
        if noise.imu.sigma_a > 0:
            a_meas = a_meas + rng.normal(0, noise.imu.sigma_a / math.sqrt(dt), 3)
        if noise.imu.sigma_w > 0:
            w_meas = w_meas + rng.normal(0, noise.imu.sigma_w / math.sqrt(dt), 3)
        imu.append(ImuSample(t=float(t), w=w_meas, a=a_meas))
        if noise.imu.sigma_ba > 0:
            b_a = b_a + rng.normal(0, noise.imu.sigma_ba * math.sqrt(dt), 3)
        if noise.imu.sigma_bw > 0:
            b_g = b_g + rng.normal(0, noise.imu.sigma_bw * math.sqrt(dt), 3)

    gt_v = _traj_velocity(motion, times)
    gt_q = np.stack([quat_from_matrix(_traj_rotation(motion, t)) for t in times])

    clusters = []
    lines = []
    for j, seg in enumerate(scene.segments):
        n_ev = int(round(rates.events_per_line_hz * duration))
        ev_times = np.sort(rng.uniform(0.0, duration, n_ev))
        events = []
        for t in ev_times:
            P = seg.point(rng.uniform())
            R = _traj_rotation(motion, t)
            X = R.T @ (P - _traj_position(motion, t))
            if X[2] < 0.3:
                continue
            px = _project(X, K)
            if px is None:
                continue
            if noise.event_sigma_px > 0:
                px = px + rng.normal(0, noise.event_sigma_px, 2)
            events.append(Event(x=float(px[0]), y=float(px[1]), t=float(t)))
        if noise.outlier_ratio > 0 and events:
            n_out = int(round(noise.outlier_ratio * len(events)))
            idx = rng.choice(len(events), size=n_out, replace=False)
            for i in idx:
                events[i] = Event(x=float(rng.uniform(0, K.width)),
                                  y=float(rng.uniform(0, K.height)),
                                  t=events[i].t)
        clusters.append(EventCluster(id=j, events=events, t_s=0.0, t_e=duration))
        lines.append(seg.line())

    return TrajectoryDataset(
        clusters=clusters, imu=imu, K=K, motion=motion, noise=noise,
        lines=lines, segments=list(scene.segments), gt_times=times,
        gt_v_w=gt_v, gt_q=gt_q, gt_b_a=bas, gt_b_g=bgs)
