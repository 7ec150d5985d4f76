"""Metrics, dataset files, experiment runners and the estimation pipeline.

File formats (text, UTF-8, header row):
  events.csv       t_s,x_px,y_px,polarity,cluster_id
  imu.csv          t_s,wx,wy,wz,ax,ay,az
  groundtruth.csv  t_s,vx,vy,vz,qw,qx,qy,qz,bax,bay,baz,bgx,bgy,bgz
  calib.json       {fx,fy,cx,cy,width,height}
  velocity.csv     t_s,vx,vy,vz,vbx,vby,vbz   (world and body frame)

Experiment configs are single JSON documents mirroring ExperimentConfig
field names.  Re-running an experiment with the same config and seed
produces byte-identical trial CSVs up to the runtime column.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import backend as be
from .celc import Event, EventCluster
from .errors import UndefinedAngle, UndefinedRelative
from .geometry import (CameraIntrinsics, DAVIS346, PluckerLine,
                       plucker_to_orthonormal, quat_multiply, quat_normalize,
                       quat_to_matrix)
from .inertial import ImuNoise, ImuSample, mean_gyro, preintegrate
from .robust import RansacParams, outer_ransac
from .simulator import (MotionSpec, NoiseSpec, SampleRates, SceneSpec,
                        generate_events, generate_trajectory_dataset,
                        line_in_frame_at, pose_at, sample_scene)

FLOAT_FMT = "%.17g"


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def metric_epsilon(v_gt: np.ndarray, v_est: np.ndarray,
                   rescale_direction_only: bool = False) -> float:
    """Euclidean velocity error |v_gt - v_est|.

    With rescale_direction_only the estimate is scaled to the ground
    truth magnitude first (up-to-scale estimators).
    """
    v_gt = np.asarray(v_gt, dtype=float)
    v_est = np.asarray(v_est, dtype=float)
    if rescale_direction_only:
        n = np.linalg.norm(v_est)
        if n > 0:
            v_est = v_est * (np.linalg.norm(v_gt) / n)
    return float(np.linalg.norm(v_gt - v_est))


def metric_theta(v_gt: np.ndarray, v_est: np.ndarray) -> float:
    """Direction error arccos(v_gt . v_est / |v_gt||v_est|), clamped."""
    v_gt = np.asarray(v_gt, dtype=float)
    v_est = np.asarray(v_est, dtype=float)
    ng, ne = np.linalg.norm(v_gt), np.linalg.norm(v_est)
    if ng == 0 or ne == 0:
        raise UndefinedAngle("zero-length velocity")
    return float(np.arccos(np.clip(v_gt @ v_est / (ng * ne), -1.0, 1.0)))


def metric_phi(v_gt: np.ndarray, v_est: np.ndarray) -> float:
    """Relative error |v_gt - v_est| / |v_gt|."""
    v_gt = np.asarray(v_gt, dtype=float)
    ng = np.linalg.norm(v_gt)
    if ng == 0:
        raise UndefinedRelative("zero ground-truth velocity")
    return float(np.linalg.norm(v_gt - np.asarray(v_est, dtype=float)) / ng)


def aggregate(values: np.ndarray) -> dict:
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return {"mean": None, "median": None, "std": None, "max": None, "n": 0}
    return {"mean": float(np.mean(values)), "median": float(np.median(values)),
            "std": float(np.std(values)), "max": float(np.max(values)),
            "n": int(values.size)}


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

def write_events_csv(path, clusters: list[EventCluster]):
    rows = []
    for c in clusters:
        for e in c.events:
            rows.append((e.t, e.x, e.y, e.polarity, c.id))
    rows.sort(key=lambda r: (r[0], r[4]))
    with open(path, "w", encoding="utf-8") as f:
        f.write("t_s,x_px,y_px,polarity,cluster_id\n")
        for t, x, y, p, cid in rows:
            f.write(f"{t:.17g},{x:.17g},{y:.17g},{int(p)},{int(cid)}\n")


def read_events_csv(path) -> list[EventCluster]:
    by_cluster: dict[int, list[Event]] = {}
    with open(path, encoding="utf-8") as f:
        header = f.readline()
        assert header.strip().startswith("t_s"), "unexpected events header"
        for line in f:
            t, x, y, p, cid = line.strip().split(",")
            by_cluster.setdefault(int(cid), []).append(
                Event(x=float(x), y=float(y), t=float(t), polarity=int(p)))
    clusters = []
    for cid in sorted(by_cluster):
        evs = by_cluster[cid]
        ts = [e.t for e in evs]
        clusters.append(EventCluster(id=cid, events=evs,
                                     t_s=min(ts), t_e=max(ts)))
    return clusters


def write_imu_csv(path, samples: list[ImuSample]):
    with open(path, "w", encoding="utf-8") as f:
        f.write("t_s,wx,wy,wz,ax,ay,az\n")
        for s in samples:
            f.write(f"{s.t:.17g},{s.w[0]:.17g},{s.w[1]:.17g},{s.w[2]:.17g},"
                    f"{s.a[0]:.17g},{s.a[1]:.17g},{s.a[2]:.17g}\n")


def read_imu_csv(path) -> list[ImuSample]:
    out = []
    with open(path, encoding="utf-8") as f:
        f.readline()
        for line in f:
            vals = [float(v) for v in line.strip().split(",")]
            out.append(ImuSample(t=vals[0], w=np.array(vals[1:4]),
                                 a=np.array(vals[4:7])))
    return out


def write_groundtruth_csv(path, times, v_w, q, b_a, b_g):
    with open(path, "w", encoding="utf-8") as f:
        f.write("t_s,vx,vy,vz,qw,qx,qy,qz,bax,bay,baz,bgx,bgy,bgz\n")
        for i, t in enumerate(times):
            row = [t, *v_w[i], *q[i], *b_a[i], *b_g[i]]
            f.write(",".join(FLOAT_FMT % v for v in row) + "\n")


def read_groundtruth_csv(path) -> dict:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {"t": data[:, 0], "v_w": data[:, 1:4], "q": data[:, 4:8],
            "b_a": data[:, 8:11], "b_g": data[:, 11:14]}


def write_calib_json(path, K: CameraIntrinsics):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(K.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def read_calib_json(path) -> CameraIntrinsics:
    with open(path, encoding="utf-8") as f:
        return CameraIntrinsics.from_dict(json.load(f))


def write_velocity_csv(path, times, v_world, v_body):
    with open(path, "w", encoding="utf-8") as f:
        f.write("t_s,vx,vy,vz,vbx,vby,vbz\n")
        for i, t in enumerate(times):
            row = [t, *v_world[i], *v_body[i]]
            f.write(",".join(FLOAT_FMT % v for v in row) + "\n")


def read_velocity_csv(path) -> dict:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {"t": data[:, 0], "v_w": data[:, 1:4], "v_b": data[:, 4:7]}


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------

EXPERIMENT_KINDS = ("sweep_noise", "sweep_omega_noise", "sweep_speed",
                    "sweep_interval", "sweep_lines", "sweep_outliers",
                    "sweep_events", "bootstrap_eval", "pipeline_eval")


@dataclass
class ExperimentConfig:
    kind: str = "bootstrap_eval"
    trials: int = 100
    grid: list = field(default_factory=lambda: [0])
    base_seed: int = 1
    n_events_per_line: int = 200
    scene: SceneSpec = field(default_factory=SceneSpec)
    motion: MotionSpec = field(default_factory=MotionSpec)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    ransac: RansacParams = field(default_factory=RansacParams)
    window: be.WindowConfig = field(default_factory=be.WindowConfig)
    rates: SampleRates = field(default_factory=SampleRates)
    intrinsics: CameraIntrinsics = DAVIS346

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        def build(tp, val):
            if val is None:
                return tp()
            kwargs = dict(val)
            if tp is NoiseSpec and "imu" in kwargs:
                kwargs["imu"] = ImuNoise(**kwargs["imu"])
            if tp is be.WindowConfig and "imu_noise" in kwargs:
                kwargs["imu_noise"] = ImuNoise(**kwargs["imu_noise"])
            for k in ("cube_min", "cube_max", "segment_length", "omega_range",
                      "v_range", "v_lin", "accel_amp"):
                if k in kwargs and isinstance(kwargs[k], list):
                    kwargs[k] = _to_tuple(kwargs[k])
            return tp(**kwargs)

        cfg = cls()
        simple = {k: d[k] for k in
                  ("kind", "trials", "grid", "base_seed", "n_events_per_line")
                  if k in d}
        cfg = dataclasses.replace(cfg, **simple)
        if "scene" in d:
            cfg.scene = build(SceneSpec, d["scene"])
        if "motion" in d:
            cfg.motion = build(MotionSpec, d["motion"])
        if "noise" in d:
            cfg.noise = build(NoiseSpec, d["noise"])
        if "ransac" in d:
            cfg.ransac = build(RansacParams, d["ransac"])
        if "window" in d:
            cfg.window = build(be.WindowConfig, d["window"])
        if "rates" in d:
            cfg.rates = build(SampleRates, d["rates"])
        if "intrinsics" in d:
            cfg.intrinsics = CameraIntrinsics.from_dict(d["intrinsics"])
        return cfg


def _to_tuple(x):
    if isinstance(x, list):
        return tuple(_to_tuple(v) for v in x)
    return x


def load_experiment_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        return ExperimentConfig.from_dict(json.load(f))


# ---------------------------------------------------------------------------
# bootstrap trials
# ---------------------------------------------------------------------------

def _config_at_point(cfg: ExperimentConfig, point) -> ExperimentConfig:
    """Sweep-specific overrides for one grid point."""
    kind = cfg.kind
    out = dataclasses.replace(cfg)
    if kind == "sweep_noise":
        out.noise = dataclasses.replace(cfg.noise, event_sigma_px=float(point))
    elif kind == "sweep_omega_noise":
        out.noise = dataclasses.replace(cfg.noise, omega_sigma=float(point))
    elif kind == "sweep_speed":
        i = float(point)
        lo, hi = 0.5 + 0.5 * i, 1.0 + 0.5 * i
        out.motion = dataclasses.replace(
            cfg.motion, v_range=((lo,) * 3, (hi,) * 3))
    elif kind == "sweep_interval":
        out.motion = dataclasses.replace(cfg.motion, t_end=float(point))
    elif kind == "sweep_lines":
        out.scene = dataclasses.replace(cfg.scene, n_lines=int(point))
    elif kind == "sweep_outliers":
        out.noise = dataclasses.replace(cfg.noise, outlier_ratio=float(point))
    elif kind == "sweep_events":
        out.ransac = dataclasses.replace(
            cfg.ransac, max_events_per_cluster=int(point))
        out.n_events_per_line = max(cfg.n_events_per_line, int(point))
    return out


def run_bootstrap_trial(cfg: ExperimentConfig, seed: int) -> dict:
    """One constant-velocity scene -> outer RANSAC -> error metrics."""
    rng = np.random.default_rng(seed)
    scene = sample_scene(cfg.scene, rng)
    data = generate_events(scene, cfg.motion, cfg.noise,
                           cfg.n_events_per_line, cfg.intrinsics, rng,
                           dwell_frac=cfg.ransac.dt_frac)
    t0 = time.perf_counter()
    res = outer_ransac(data.clusters, data.omega_measured, cfg.ransac,
                       cfg.intrinsics, rng)
    runtime = time.perf_counter() - t0
    theta = metric_theta(data.v, res.v)
    eps = metric_epsilon(data.v, res.v, rescale_direction_only=True)
    return {"theta": theta, "epsilon": eps,
            "phi": eps / float(np.linalg.norm(data.v)),
            "p_mean": res.p_mean, "iterations": res.iterations,
            "converged": res.converged, "runtime_s": runtime}


# ---------------------------------------------------------------------------
# sliding-window pipeline
# ---------------------------------------------------------------------------

@dataclass
class PipelineResult:
    times: np.ndarray
    v_world: np.ndarray
    v_body: np.ndarray
    q: np.ndarray
    reports: list


def _slice_events(clusters: list[EventCluster], t0: float, t1: float,
                  max_per_cluster: int | None = None
                  ) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    out = {}
    for c in clusters:
        px, ts = [], []
        for e in c.events:
            if t0 <= e.t < t1:
                px.append((e.x, e.y))
                ts.append(e.t)
        if len(ts) >= 2:
            px = np.asarray(px)
            ts = np.asarray(ts)
            if max_per_cluster and len(ts) > max_per_cluster:
                idx = np.linspace(0, len(ts) - 1, max_per_cluster).astype(int)
                px, ts = px[idx], ts[idx]
            out[c.id] = (px, ts)
    return out


def _window_clusters(clusters: list[EventCluster], t0: float, t1: float
                     ) -> list[EventCluster]:
    """Clusters restricted to [t0, t1], keeping only full-span ones."""
    out = []
    margin = 0.15 * (t1 - t0)
    for c in clusters:
        evs = [e for e in c.events if t0 <= e.t <= t1]
        if len(evs) < 10:
            continue
        ts = [e.t for e in evs]
        if min(ts) > t0 + margin or max(ts) < t1 - margin:
            continue
        out.append(EventCluster(id=c.id, events=evs, t_s=t0, t_e=t1))
    return out


def _solve_slice_velocity(window: be.WindowState, k: int,
                          K: CameraIntrinsics, config: be.WindowConfig,
                          iters: int = 8) -> np.ndarray:
    """Per-slice velocity from event residuals with lines held fixed."""
    state = window.states[k]
    v = state.v_w.copy()
    groups = [a for a in window.assoc if a.slice_idx == k]
    if not groups:
        return v
    R_k = state.R()
    omega_k = window.slice_omega(k)
    for _ in range(iters):
        H = np.zeros((3, 3))
        g = np.zeros(3)
        for a in groups:
            d, m = be.decode_line(window.lines[a.line_idx].ortho)
            dts = a.times - window.t_centers[k]
            from .geometry import skew, so3_exp_batch
            R_t = so3_exp_batch(np.outer(-dts, omega_k))
            v_body = R_k.T @ v
            u = m[None, :] - np.outer(dts, np.cross(v_body, d))
            m_t = np.einsum("nij,nj->ni", R_t, u)
            e = np.column_stack([(a.pixels[:, 0] - K.cx) / K.fx,
                                 (a.pixels[:, 1] - K.cy) / K.fy,
                                 np.ones(len(a.pixels))])
            rho2 = m_t[:, 0] ** 2 + m_t[:, 1] ** 2
            rho = np.sqrt(rho2)
            r = np.sum(e * m_t, axis=1) / rho
            g_mt = e / rho[:, None]
            g_mt[:, 0] -= r * m_t[:, 0] / rho2
            g_mt[:, 1] -= r * m_t[:, 1] / rho2
            A_v = np.einsum("nij,jk->nik", R_t, skew(d)) * dts[:, None, None]
            J = np.einsum("ni,nik->nk", g_mt, A_v) @ R_k.T
            # huber on the event rows
            s = r * r
            w = np.where(s <= config.huber_delta ** 2, 1.0,
                         config.huber_delta / np.sqrt(s))
            H += (J * w[:, None]).T @ J
            g += (J * w[:, None]).T @ r
        try:
            dv = np.linalg.solve(H + 1e-12 * np.eye(3), -g)
        except np.linalg.LinAlgError:
            break
        v = v + dv
        if np.linalg.norm(dv) < 1e-12:
            break
    return v


def bootstrap_window(clusters: list[EventCluster], imu: list[ImuSample],
                     K: CameraIntrinsics, config: be.WindowConfig,
                     params: RansacParams, t0: float = 0.0,
                     rng: np.random.Generator | None = None
                     ) -> tuple[be.WindowState, list, dict]:
    """First-window initialization: gravity, bootstrap, scale.

    Returns the initialized window, its preintegrations and a report of
    the bootstrap quantities.
    """
    n = config.n_slices
    dT = config.dT
    t1 = t0 + config.tau
    t_centers = t0 + (np.arange(n) + 0.5) * dT

    # world frame: roll/pitch from the accelerometer mean, yaw = 0
    acc = [s for s in imu if t0 <= s.t <= t1]
    a_mean = np.mean([s.a for s in acc], axis=0)
    q1 = be.gravity_aligned_orientation(a_mean)

    # orientations by gyro integration between slice centers (zero bias)
    preints = [preintegrate(imu, t_centers[k], t_centers[k + 1],
                            np.zeros(3), np.zeros(3), config.imu_noise)
               for k in range(n - 1)]
    qs = [q1]
    for k in range(n - 1):
        qs.append(quat_normalize(quat_multiply(qs[-1], preints[k].gamma)))

    # velocity direction bootstrap over the whole window
    win_clusters = _window_clusters(clusters, t0, t1)
    omega_mean = mean_gyro(imu, t0, t1)
    boot = outer_ransac(win_clusters, omega_mean, params, K, rng)

    # window structure: one line copy per (cluster, slice)
    states = [be.BodyState(v_w=quat_to_matrix(qs[k]) @ boot.v,
                           q=qs[k], b_a=np.zeros(3), b_g=np.zeros(3))
              for k in range(n)]
    gyro_mean = np.vstack([
        _safe_mean_gyro(imu, t_centers[k] - dT / 2, t_centers[k] + dT / 2)
        for k in range(n)])

    lines, assoc, pairs = [], [], []
    copy_idx: dict[tuple[int, int], int] = {}
    for j, c in enumerate(win_clusters):
        L = boot.lines[j]
        if L is None:
            continue
        for k in range(n):
            # line copy expressed in the slice-k frame under the
            # bootstrap's constant-velocity model (reference at t0)
            Lk = line_in_frame_at(L, omega_mean, boot.v, t_centers[k], t0)
            try:
                ortho = plucker_to_orthonormal(Lk.normalized())
            except Exception:
                continue
            lines.append(be.LineCopy(cluster_id=c.id, slice_idx=k, ortho=ortho))
            copy_idx[(c.id, k)] = len(lines) - 1
    for k in range(n):
        lo, hi = t_centers[k] - dT / 2, t_centers[k] + dT / 2
        for j, c in enumerate(win_clusters):
            if (c.id, k) not in copy_idx:
                continue
            ev = _slice_events([c], lo, hi)
            if c.id not in ev:
                continue
            px, ts = ev[c.id]
            assoc.append(be.Association(line_idx=copy_idx[(c.id, k)],
                                        slice_idx=k, pixels=px, times=ts))
    for (cid, k), idx in copy_idx.items():
        if (cid, k + 1) in copy_idx:
            pairs.append((idx, copy_idx[(cid, k + 1)]))

    window = be.WindowState(t_centers=t_centers, dT=dT, states=states,
                            lines=lines, assoc=assoc, cons_pairs=pairs,
                            gyro_mean=gyro_mean,
                            imu=[s for s in imu if t0 - dT <= s.t <= t1 + dT])

    # per-slice velocities from the event term, then metric scale
    for k in range(n):
        v_k = _solve_slice_velocity(window, k, K, config)
        window.states[k] = be.BodyState(v_w=v_k, q=window.states[k].q,
                                        b_a=window.states[k].b_a,
                                        b_g=window.states[k].b_g)
    preints = [preintegrate(window.imu, t_centers[k], t_centers[k + 1],
                            np.zeros(3), np.zeros(3), config.imu_noise)
               for k in range(n - 1)]
    scale = be.initialize_scale(window, preints, g=config.imu_noise.g)
    window = be.scale_window(window, scale)
    report = {"v_dir": boot.v.tolist(), "p_mean": boot.p_mean,
              "iterations": boot.iterations, "scale": scale,
              "converged": boot.converged}
    return window, preints, report


def _safe_mean_gyro(imu, t0, t1):
    try:
        return mean_gyro(imu, t0, t1)
    except Exception:
        return np.zeros(3)


def run_pipeline(clusters: list[EventCluster], imu: list[ImuSample],
                 K: CameraIntrinsics, config: be.WindowConfig,
                 params: RansacParams, duration: float | None = None,
                 rng: np.random.Generator | None = None,
                 slide_max_iters: int = 6) -> PipelineResult:
    """Bootstrap, optimize the first window, then slide to the end."""
    t_end = duration if duration is not None else max(
        max(e.t for c in clusters for e in c.events),
        imu[-1].t)
    window, preints, _ = bootstrap_window(clusters, imu, K, config, params,
                                          t0=0.0, rng=rng)
    window, preints, rep = be.optimize_window(window, preints, K, config)
    reports = [rep]
    times = [window.t_centers[-1]]
    v_world = [window.states[-1].v_w.copy()]
    v_body = [window.body_velocity(window.n_slices - 1)]
    qs = [window.states[-1].q.copy()]

    slide_cfg = dataclasses.replace(config, max_iters=slide_max_iters)
    t_next = window.t_centers[-1] + window.dT
    while t_next + window.dT / 2 <= t_end + 1e-9:
        lo, hi = t_next - window.dT / 2, t_next + window.dT / 2
        new_events = _slice_events(clusters, lo, hi)
        new_imu = [s for s in imu if lo - 2 * window.dT <= s.t <= hi + window.dT]
        window, preints = be.slide_window(window, preints, new_events,
                                          new_imu, slide_cfg, K)
        window, preints, rep = be.optimize_window(window, preints, K,
                                                  slide_cfg)
        reports.append(rep)
        times.append(window.t_centers[-1])
        v_world.append(window.states[-1].v_w.copy())
        v_body.append(window.body_velocity(window.n_slices - 1))
        qs.append(window.states[-1].q.copy())
        t_next += window.dT

    return PipelineResult(times=np.array(times), v_world=np.array(v_world),
                          v_body=np.array(v_body), q=np.array(qs),
                          reports=reports)


def run_pipeline_trial(cfg: ExperimentConfig, seed: int) -> dict:
    """Trajectory dataset -> full pipeline -> body-frame velocity errors."""
    rng = np.random.default_rng(seed)
    scene = sample_scene(cfg.scene, rng)
    data = generate_trajectory_dataset(scene, cfg.motion, cfg.noise,
                                       cfg.rates, rng, K=cfg.intrinsics)
    t0 = time.perf_counter()
    result = run_pipeline(data.clusters, data.imu, cfg.intrinsics,
                          cfg.window, cfg.ransac, duration=cfg.motion.duration,
                          rng=rng)
    runtime = time.perf_counter() - t0
    eps = []
    for i, t in enumerate(result.times):
        v_gt_w, _ = data.gt_state_at(t)
        v_gt_body = data.rotation(t).T @ v_gt_w
        eps.append(metric_epsilon(v_gt_body, result.v_body[i]))
    eps = np.asarray(eps)
    return {"epsilon_mean": float(np.mean(eps)),
            "epsilon_median": float(np.median(eps)),
            "epsilon": eps, "runtime_s": runtime,
            "times": result.times}


# ---------------------------------------------------------------------------
# experiment runner
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    per_trial: list[dict]
    aggregates: dict


TRIAL_COLUMNS = ("point", "trial", "seed", "theta_rad", "epsilon_mps",
                 "phi", "p_mean", "iterations", "converged", "runtime_s")


def run_experiment(cfg: ExperimentConfig, out_dir) -> MetricsReport:
    """Execute all grid points and trials; write CSV/JSON results.

    Trial seeds are base_seed XOR trial index, shared across grid points
    so sweep comparisons are paired.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_trial = []
    series_rows = []
    agg: dict = {"kind": cfg.kind, "points": {}}

    if cfg.kind == "pipeline_eval":
        rows = []
        for trial in range(cfg.trials):
            seed = cfg.base_seed ^ trial
            r = run_pipeline_trial(cfg, seed)
            rows.append(r)
            per_trial.append({"point": 0, "trial": trial, "seed": seed,
                              "theta_rad": float("nan"),
                              "epsilon_mps": r["epsilon_mean"],
                              "phi": float("nan"), "p_mean": float("nan"),
                              "iterations": len(r["epsilon"]),
                              "converged": True,
                              "runtime_s": r["runtime_s"]})
        agg["points"]["0"] = {
            "epsilon": aggregate([r["epsilon_mean"] for r in rows])}
    else:
        for pi, point in enumerate(cfg.grid):
            pcfg = _config_at_point(cfg, point)
            thetas, epss, phis = [], [], []
            for trial in range(cfg.trials):
                seed = cfg.base_seed ^ trial
                r = run_bootstrap_trial(pcfg, seed)
                per_trial.append({"point": point, "trial": trial,
                                  "seed": seed, "theta_rad": r["theta"],
                                  "epsilon_mps": r["epsilon"],
                                  "phi": r["phi"], "p_mean": r["p_mean"],
                                  "iterations": r["iterations"],
                                  "converged": r["converged"],
                                  "runtime_s": r["runtime_s"]})
                thetas.append(r["theta"])
                epss.append(r["epsilon"])
                phis.append(r["phi"])
            agg["points"][str(point)] = {
                "theta": aggregate(thetas), "epsilon": aggregate(epss),
                "phi": aggregate(phis)}
            series_rows.append((point, float(np.median(thetas)),
                                float(np.mean(thetas)),
                                float(np.median(epss)), float(np.mean(epss))))

    with open(out / "trials.csv", "w", encoding="utf-8") as f:
        f.write(",".join(TRIAL_COLUMNS) + "\n")
        for row in per_trial:
            vals = []
            for c in TRIAL_COLUMNS:
                v = row[c]
                if isinstance(v, bool):
                    vals.append(str(int(v)))
                elif isinstance(v, float):
                    vals.append(FLOAT_FMT % v)
                else:
                    vals.append(str(v))
            f.write(",".join(vals) + "\n")
    if series_rows:
        with open(out / "series.csv", "w", encoding="utf-8") as f:
            f.write("point,median_theta,mean_theta,median_epsilon,"
                    "mean_epsilon\n")
            for row in series_rows:
                f.write(",".join(FLOAT_FMT % v for v in row) + "\n")
    with open(out / "aggregates.json", "w", encoding="utf-8") as f:
        json.dump(agg, f, indent=2, sort_keys=True)
        f.write("\n")
    return MetricsReport(per_trial=per_trial, aggregates=agg)
