"""Sliding-window velocity estimator over body states and local 3D lines.

The window covers tau seconds split into n slices; each slice carries a
body state (world velocity, orientation, IMU biases) and every cluster
observed in a slice contributes a local line copy anchored to that
slice's frame.  The cost couples three residual families: event-to-line
reprojection on the normalized plane (Huber-robustified), preintegrated
inertial deltas between adjacent slices, and consistency between
duplicate line representations in adjacent slices.  Minimization is a
damped Gauss-Newton loop with on-manifold updates (quaternion boxplus
for orientations, 4-parameter orthonormal updates for lines).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (DegenerateProjection, TriangulationDegenerate,
                     UnobservableScale)
from .geometry import (CameraIntrinsics, OrthonormalLine, PluckerLine,
                       orthonormal_to_plucker, orthonormal_update,
                       plucker_to_orthonormal, plucker_transform,
                       quat_from_rotvec, quat_multiply, quat_normalize,
                       skew, so3_exp_batch, so3_right_jacobian)
from .inertial import (BodyState, ImuNoise, ImuSample, Preintegration,
                       imu_residual, imu_residual_jacobians, preintegrate,
                       propagate_state, residual_sqrt_information)


@dataclass(frozen=True)
class WindowConfig:
    """Window geometry, residual weights and optimizer settings."""

    tau: float = 0.1
    n_slices: int = 10
    huber_delta: float = 0.006        # normalized-plane units, ~1.5 px at f=250
    w_event: float = 1.0
    w_cons_dir: float = 100.0
    w_cons_mom: float = 10.0
    use_consistency: bool = True
    max_iters: int = 25
    grad_tol: float = 1e-10
    step_tol: float = 1e-12
    rel_cost_tol: float = 1e-10
    fixed_imu_weights: bool = False
    imu_noise: ImuNoise = field(default_factory=ImuNoise)
    reintegrate_bias_tol: float = 1e-3

    @property
    def dT(self) -> float:
        return self.tau / self.n_slices


@dataclass
class LineCopy:
    """One local line representation, bound to a slice frame."""

    cluster_id: int
    slice_idx: int
    ortho: OrthonormalLine


@dataclass
class Association:
    """All events of one cluster inside one slice (one line copy)."""

    line_idx: int
    slice_idx: int
    pixels: np.ndarray       # (N, 2)
    times: np.ndarray        # (N,)


@dataclass
class WindowState:
    """States, line copies and measurement bookkeeping for one window."""

    t_centers: np.ndarray
    dT: float
    states: list[BodyState]
    lines: list[LineCopy]
    assoc: list[Association]
    cons_pairs: list[tuple[int, int]]      # (earlier copy, later copy)
    gyro_mean: np.ndarray                  # (n, 3) raw per-slice means
    imu: list[ImuSample] = field(default_factory=list)

    @property
    def n_slices(self) -> int:
        return len(self.states)

    def slice_omega(self, k: int) -> np.ndarray:
        """Bias-corrected body rate of slice k."""
        return self.gyro_mean[k] - self.states[k].b_g

    def body_velocity(self, k: int) -> np.ndarray:
        return self.states[k].R().T @ self.states[k].v_w


@dataclass
class OptimizeReport:
    iterations: int
    cost_initial: float
    cost_final: float
    cost_event: float
    cost_imu: float
    cost_consistency: float
    status: str = "converged"


# ---------------------------------------------------------------------------
# kinematics and residuals
# ---------------------------------------------------------------------------

def relative_pose_in_slice(state: BodyState, omega_k: np.ndarray, t: float,
                           t_k: float) -> tuple[np.ndarray, np.ndarray]:
    """Pose of the body at time t expressed in the slice-center frame.

    Constant-velocity model: R = exp([omega_k] (t - t_k)) and
    translation v_k (t - t_k) with v_k the body-frame velocity.
    """
    dt = t - t_k
    R = so3_exp_batch((omega_k * dt)[None])[0]
    v_k = state.R().T @ state.v_w
    return R, v_k * dt


def interslice_transform(x_a: BodyState, x_b: BodyState, dT: float
                         ) -> tuple[np.ndarray, np.ndarray]:
    """(R, t) mapping frame b (later) into frame a (earlier).

    Rotation from the orientation states; translation from the trapezoid
    of the two world velocities (exact for piecewise-constant world
    velocity).
    """
    R_a = x_a.R()
    R_rel = R_a.T @ x_b.R()
    t_rel = R_a.T @ (0.5 * dT * (x_a.v_w + x_b.v_w))
    return R_rel, t_rel


def decode_line(o: OrthonormalLine) -> tuple[np.ndarray, np.ndarray]:
    """Unit-direction Pluecker vectors (d, m) of an orthonormal line."""
    s = 1.0 if o.w2 >= 0 else -1.0
    d = s * o.U[:, 1]
    m = (o.w1 / o.w2) * o.U[:, 0]
    return d, m


def decode_line_jacobians(o: OrthonormalLine) -> tuple[np.ndarray, np.ndarray]:
    """d(d)/dp and d(m)/dp (3x4 each) for the 4-parameter line update."""
    s = 1.0 if o.w2 >= 0 else -1.0
    e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.array([0.0, 1.0, 0.0])
    Jd = np.zeros((3, 4))
    Jm = np.zeros((3, 4))
    Jd[:, :3] = -s * o.U @ skew(e2)
    Jm[:, :3] = -(o.w1 / o.w2) * o.U @ skew(e1)
    Jm[:, 3] = -o.U[:, 0] / (o.w2 * o.w2)
    return Jd, Jm


def event_residuals_group(window: WindowState, a: Association,
                          K: CameraIntrinsics) -> np.ndarray:
    """Normalized-plane event-to-line distances for one association group."""
    k = a.slice_idx
    state = window.states[k]
    omega_k = window.slice_omega(k)
    v_k = state.R().T @ state.v_w
    d, m = decode_line(window.lines[a.line_idx].ortho)
    dts = a.times - window.t_centers[k]
    # line moment in the instantaneous frame: Exp(-dt w) (m - dt v x d)
    R_t = so3_exp_batch(np.outer(-dts, omega_k))
    u = m[None, :] - np.outer(dts, np.cross(v_k, d))
    m_t = np.einsum("nij,nj->ni", R_t, u)
    e = np.column_stack([(a.pixels[:, 0] - K.cx) / K.fx,
                         (a.pixels[:, 1] - K.cy) / K.fy,
                         np.ones(len(a.pixels))])
    rho = np.hypot(m_t[:, 0], m_t[:, 1])
    if np.any(rho < 1e-12):
        raise DegenerateProjection("projected line has no finite direction")
    return np.sum(e * m_t, axis=1) / rho


def consistency_residual(window: WindowState, pair: tuple[int, int],
                         config: WindowConfig) -> np.ndarray:
    """[w_dir * angle(d, d_pred); w_mom * (m - m_pred)] for one line pair."""
    ia, ib = pair
    ca, cb = window.lines[ia], window.lines[ib]
    x_a = window.states[ca.slice_idx]
    x_b = window.states[cb.slice_idx]
    R_rel, t_rel = interslice_transform(x_a, x_b, window.dT)
    d_a, m_a = decode_line(ca.ortho)
    d_b, m_b = decode_line(cb.ortho)
    d_t = R_rel @ d_b
    m_t = R_rel @ m_b + np.cross(t_rel, d_t)
    cosang = np.clip(d_a @ d_t / np.linalg.norm(d_t), -1.0, 1.0)
    ang = np.arccos(cosang)
    return np.concatenate([[config.w_cons_dir * ang],
                           config.w_cons_mom * (m_a - m_t)])


def triangulate_line(pi_s: np.ndarray, pi_e: np.ndarray,
                     tol: float = 1e-9) -> PluckerLine:
    """Line meeting two planes, via the dual Pluecker matrix.

    L* = pi_s pi_e^T - pi_e pi_s^T = [[d]x  m; -m^T 0].
    """
    pi_s = np.asarray(pi_s, dtype=float)
    pi_e = np.asarray(pi_e, dtype=float)
    Lstar = np.outer(pi_s, pi_e) - np.outer(pi_e, pi_s)
    d = np.array([Lstar[2, 1], Lstar[0, 2], Lstar[1, 0]])
    m = Lstar[:3, 3]
    nd = np.linalg.norm(d)
    scale = max(np.linalg.norm(pi_s[:3]) * np.linalg.norm(pi_e[:3]), 1e-300)
    if nd < tol * scale:
        raise TriangulationDegenerate("observation planes are parallel")
    return PluckerLine(d=d / nd, m=m / nd)


def observation_plane(l_norm: np.ndarray, R: np.ndarray, t: np.ndarray
                      ) -> np.ndarray:
    """Back-projected plane of a normalized-plane line, in a common frame.

    The viewing plane through the camera center with normal l (camera
    frame) is pulled into the common frame by the camera-from-common
    pose (R, t): x_cam = R x + t.
    """
    n_cam = np.asarray(l_norm, dtype=float)
    n = R.T @ n_cam
    dist = -n_cam @ t
    return np.concatenate([n, [dist]])


# ---------------------------------------------------------------------------
# normal equations
# ---------------------------------------------------------------------------

def _param_layout(window: WindowState) -> tuple[int, int]:
    return 12 * window.n_slices, 4 * len(window.lines)


def _huber_weight(s: float, delta: float) -> tuple[float, float]:
    """(cost, IRLS weight) of the Huber loss at squared residual s."""
    if s <= delta * delta:
        return s, 1.0
    r = np.sqrt(s)
    return 2.0 * delta * r - delta * delta, delta / r


class _NormalEquations:
    def __init__(self, dim: int):
        self.H = np.zeros((dim, dim))
        self.g = np.zeros(dim)
        self.cost = 0.0

    def add_block(self, J_blocks: dict[int, np.ndarray], r: np.ndarray,
                  weight: float = 1.0):
        """Accumulate rows given as {column_offset: jacobian block}."""
        keys = sorted(J_blocks)
        for i, ki in enumerate(keys):
            Ji = J_blocks[ki]
            self.g[ki:ki + Ji.shape[1]] += weight * (Ji.T @ r)
            for kj in keys[i:]:
                Jj = J_blocks[kj]
                blk = weight * (Ji.T @ Jj)
                self.H[ki:ki + Ji.shape[1], kj:kj + Jj.shape[1]] += blk
                if kj != ki:
                    self.H[kj:kj + Jj.shape[1], ki:ki + Ji.shape[1]] += blk.T


def _accumulate_events(window: WindowState, K: CameraIntrinsics,
                       config: WindowConfig, ne: _NormalEquations | None
                       ) -> float:
    """Event-term cost; fills normal equations when ne is given."""
    total = 0.0
    w = config.w_event
    for a in window.assoc:
        k = a.slice_idx
        state = window.states[k]
        R_k = state.R()
        omega_k = window.slice_omega(k)
        v_k = R_k.T @ state.v_w
        o = window.lines[a.line_idx].ortho
        d, m = decode_line(o)
        dts = a.times - window.t_centers[k]
        R_t = so3_exp_batch(np.outer(-dts, omega_k))
        u = m[None, :] - np.outer(dts, np.cross(v_k, d))
        m_t = np.einsum("nij,nj->ni", R_t, u)
        e = np.column_stack([(a.pixels[:, 0] - K.cx) / K.fx,
                             (a.pixels[:, 1] - K.cy) / K.fy,
                             np.ones(len(a.pixels))])
        rho2 = m_t[:, 0] ** 2 + m_t[:, 1] ** 2
        rho = np.sqrt(rho2)
        r = np.sum(e * m_t, axis=1) / rho
        rw = w * r
        s = rw * rw
        costs = np.empty_like(s)
        weights = np.empty_like(s)
        d2 = config.huber_delta * config.huber_delta
        small = s <= d2
        costs[small] = s[small]
        weights[small] = 1.0
        rt = np.sqrt(s[~small])
        costs[~small] = 2.0 * config.huber_delta * rt - d2
        weights[~small] = config.huber_delta / rt
        total += float(np.sum(costs))
        if ne is None:
            continue

        # d r / d m_t
        g_mt = e / rho[:, None]
        g_mt[:, 0] -= r * m_t[:, 0] / rho2
        g_mt[:, 1] -= r * m_t[:, 1] / rho2
        # m_t = R_t u; columns of the chain
        dmt_dm = R_t                                     # (n,3,3)
        # du/dd = -dt [v]x ; du/dv_k = +dt [d]x
        Jd_l, Jm_l = decode_line_jacobians(o)
        sk_v = skew(v_k)
        sk_d = skew(d)
        # line params: dm_t/dp = R_t (Jm - dt [v]x Jd)
        A_line = np.einsum("nij,njk->nik",
                           dmt_dm,
                           Jm_l[None] - dts[:, None, None] * (sk_v @ Jd_l)[None])
        # v_k: dm_t/dv_k = R_t (dt [d]x)
        A_vk = np.einsum("nij,jk->nik", dmt_dm, sk_d) * dts[:, None, None]
        # omega_k: dm_t/dw = dt R_t [u]x Jr(-dt w)
        phis = np.outer(-dts, omega_k)
        A_w = np.empty((len(dts), 3, 3))
        for i in range(len(dts)):
            A_w[i] = dts[i] * (R_t[i] @ skew(u[i]) @ so3_right_jacobian(phis[i]))
        # chain to state params
        # v_k = R_k^T v_w : dv_k/dv_w = R_k^T ; dv_k/dth = [v_k]x
        dvk_dvw = R_k.T
        dvk_dth = skew(v_k)
        # omega_k = mean_gyro - b_g : dw/dbg = -I
        rows_r = np.sqrt(weights) * rw
        sw = np.sqrt(weights) * w
        J_line = np.einsum("ni,nik->nk", g_mt, A_line) * sw[:, None]
        J_vk = np.einsum("ni,nik->nk", g_mt, A_vk)
        J_vw = (J_vk @ dvk_dvw) * sw[:, None]
        J_th = (J_vk @ dvk_dth) * sw[:, None]
        J_bg = -(np.einsum("ni,nik->nk", g_mt, A_w)) * sw[:, None]

        off_s = 12 * k
        off_l = 12 * window.n_slices + 4 * a.line_idx
        blocks = {
            off_s + 0: J_vw,
            off_s + 3: J_th,
            off_s + 9: J_bg,
            off_l: J_line,
        }
        ne.add_block(blocks, rows_r)
    return total


def _angle_grad(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """angle(a, b) and its gradients w.r.t. a and b."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    ah, bh = a / na, b / nb
    c = np.clip(ah @ bh, -1.0, 1.0)
    ang = np.arccos(c)
    s = np.sqrt(max(1.0 - c * c, 0.0))
    if s < 1e-9:
        return ang, np.zeros(3), np.zeros(3)
    ga = -(bh - c * ah) / (s * na)
    gb = -(ah - c * bh) / (s * nb)
    return ang, ga, gb


def _accumulate_consistency(window: WindowState, config: WindowConfig,
                            ne: _NormalEquations | None) -> float:
    total = 0.0
    if not config.use_consistency or (config.w_cons_dir == 0
                                      and config.w_cons_mom == 0):
        return 0.0
    n_state = 12 * window.n_slices
    for pair in window.cons_pairs:
        ia, ib = pair
        ca, cb = window.lines[ia], window.lines[ib]
        ka, kb = ca.slice_idx, cb.slice_idx
        x_a, x_b = window.states[ka], window.states[kb]
        R_a = x_a.R()
        R_rel, t_rel = interslice_transform(x_a, x_b, window.dT)
        d_a, m_a = decode_line(ca.ortho)
        d_b, m_b = decode_line(cb.ortho)
        d_t = R_rel @ d_b
        Rm_b = R_rel @ m_b
        m_t = Rm_b + np.cross(t_rel, d_t)
        ang, g_da, g_dt = _angle_grad(d_a, d_t)
        r = np.concatenate([[config.w_cons_dir * ang],
                            config.w_cons_mom * (m_a - m_t)])
        total += float(r @ r)
        if ne is None:
            continue

        Jd_a, Jm_a = decode_line_jacobians(ca.ortho)
        Jd_b, Jm_b_l = decode_line_jacobians(cb.ortho)
        wd, wm = config.w_cons_dir, config.w_cons_mom

        # line A
        JA = np.zeros((4, 4))
        JA[0] = wd * (g_da @ Jd_a)
        JA[1:] = wm * Jm_a
        # line B
        dmt_ddb = skew(t_rel) @ R_rel
        JB = np.zeros((4, 4))
        JB[0] = wd * (g_dt @ (R_rel @ Jd_b))
        JB[1:] = -wm * (R_rel @ Jm_b_l + dmt_ddb @ Jd_b)

        # state a: whole transform rotates by Exp(-th); plus t_rel on v_a
        J_tha = np.zeros((4, 3))
        J_tha[0] = wd * (g_dt @ skew(d_t))
        J_tha[1:] = -wm * skew(m_t)
        dtrel_dva = 0.5 * window.dT * R_a.T
        J_va = np.zeros((4, 3))
        dmt_dtrel = -skew(d_t)
        J_va[1:] = -wm * (dmt_dtrel @ dtrel_dva)
        J_vb = J_va.copy()

        # state b: R_rel -> R_rel Exp(th)
        J_thb = np.zeros((4, 3))
        J_thb[0] = wd * (g_dt @ (-R_rel @ skew(d_b)))
        J_thb[1:] = -wm * (-R_rel @ skew(m_b) - skew(t_rel) @ R_rel @ skew(d_b))

        blocks = {
            12 * ka + 0: J_va, 12 * ka + 3: J_tha,
            12 * kb + 0: J_vb, 12 * kb + 3: J_thb,
            n_state + 4 * ia: JA, n_state + 4 * ib: JB,
        }
        ne.add_block(blocks, r)
    return total


def _accumulate_imu(window: WindowState, preints: list[Preintegration],
                    config: WindowConfig, ne: _NormalEquations | None) -> float:
    total = 0.0
    for k, pre in enumerate(preints):
        x_k, x_k1 = window.states[k], window.states[k + 1]
        W = residual_sqrt_information(pre, config.imu_noise,
                                      fixed=config.fixed_imu_weights)
        r = W @ imu_residual(x_k, x_k1, pre, g=config.imu_noise.g)
        total += float(r @ r)
        if ne is None:
            continue
        J = imu_residual_jacobians(x_k, x_k1, pre, g=config.imu_noise.g)
        o_k, o_k1 = 12 * k, 12 * (k + 1)
        blocks = {
            o_k + 0: W @ J["v_k"], o_k + 3: W @ J["th_k"],
            o_k + 6: W @ J["ba_k"], o_k + 9: W @ J["bg_k"],
            o_k1 + 0: W @ J["v_k1"], o_k1 + 3: W @ J["th_k1"],
            o_k1 + 6: W @ J["ba_k1"], o_k1 + 9: W @ J["bg_k1"],
        }
        ne.add_block(blocks, r)
    return total


def window_cost(window: WindowState, preints: list[Preintegration],
                K: CameraIntrinsics, config: WindowConfig
                ) -> tuple[float, float, float]:
    """(event, imu, consistency) cost terms at the current state."""
    ce = _accumulate_events(window, K, config, None)
    ci = _accumulate_imu(window, preints, config, None)
    cc = _accumulate_consistency(window, config, None)
    return ce, ci, cc


def _apply_step(window: WindowState, dx: np.ndarray) -> WindowState:
    n = window.n_slices
    states = []
    for k in range(n):
        s = window.states[k]
        o = 12 * k
        q = quat_normalize(quat_multiply(s.q, quat_from_rotvec(dx[o + 3:o + 6])))
        states.append(BodyState(v_w=s.v_w + dx[o:o + 3], q=q,
                                b_a=s.b_a + dx[o + 6:o + 9],
                                b_g=s.b_g + dx[o + 9:o + 12]))
    lines = []
    for i, c in enumerate(window.lines):
        o = 12 * n + 4 * i
        lines.append(LineCopy(cluster_id=c.cluster_id, slice_idx=c.slice_idx,
                              ortho=orthonormal_update(c.ortho, dx[o:o + 4])))
    return WindowState(t_centers=window.t_centers, dT=window.dT,
                       states=states, lines=lines, assoc=window.assoc,
                       cons_pairs=window.cons_pairs,
                       gyro_mean=window.gyro_mean, imu=window.imu)


def _refresh_preints(window: WindowState, preints: list[Preintegration],
                     config: WindowConfig) -> list[Preintegration]:
    """Re-integrate any segment whose linearization bias drifted too far."""
    out = []
    for k, pre in enumerate(preints):
        b_a, b_g = window.states[k].b_a, window.states[k].b_g
        if pre.needs_reintegration(b_a, b_g, config.reintegrate_bias_tol) \
                and window.imu:
            out.append(preintegrate(window.imu, pre.t0, pre.t1, b_a, b_g,
                                    config.imu_noise))
        else:
            out.append(pre)
    return out


def optimize_window(window: WindowState, preints: list[Preintegration],
                    K: CameraIntrinsics, config: WindowConfig
                    ) -> tuple[WindowState, list[Preintegration], OptimizeReport]:
    """Damped Gauss-Newton minimization of the window cost."""
    dim = sum(_param_layout(window))
    ce, ci, cc = window_cost(window, preints, K, config)
    cost = ce + ci + cc
    cost_initial = cost
    lam = 1e-6
    status = "converged"
    it = 0
    for it in range(1, config.max_iters + 1):
        ne = _NormalEquations(dim)
        _accumulate_events(window, K, config, ne)
        _accumulate_imu(window, preints, config, ne)
        _accumulate_consistency(window, config, ne)
        if np.max(np.abs(ne.g)) < config.grad_tol:
            break
        accepted = False
        step = 0.0
        improved = 0.0
        for _ in range(12):
            H = ne.H + lam * np.diag(np.maximum(np.diag(ne.H), 1e-12))
            try:
                dx = np.linalg.solve(H, -ne.g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            if not np.all(np.isfinite(dx)):
                lam *= 10.0
                continue
            trial = _apply_step(window, dx)
            trial_pre = _refresh_preints(trial, preints, config)
            ce, ci, cc = window_cost(trial, trial_pre, K, config)
            new_cost = ce + ci + cc
            if new_cost <= cost:
                window = trial
                preints = trial_pre
                improved = cost - new_cost
                step = float(np.linalg.norm(dx))
                cost = new_cost
                lam = max(lam / 3.0, 1e-12)
                accepted = True
                break
            lam *= 4.0
        if not accepted:
            status = "stalled"
            break
        if step < config.step_tol or \
                improved < config.rel_cost_tol * max(cost, 1e-30):
            break
    ce, ci, cc = window_cost(window, preints, K, config)
    report = OptimizeReport(iterations=it, cost_initial=cost_initial,
                            cost_final=ce + ci + cc, cost_event=ce,
                            cost_imu=ci, cost_consistency=cc, status=status)
    return window, preints, report


# ---------------------------------------------------------------------------
# scale, gravity, sliding
# ---------------------------------------------------------------------------

def initialize_scale(window: WindowState, preints: list[Preintegration],
                     g: float = 9.81, min_excitation: float = 1e-6) -> float:
    """Closed-form scale aligning state velocity deltas with the IMU.

    Solves min_s sum_k | s x_k - y_k |^2 with
    x_k = R_k^T (v_{k+1} - v_k) and y_k = beta_k - R_k^T g_w dT.
    """
    g_w = np.array([0.0, 0.0, g])
    num = 0.0
    den = 0.0
    for k, pre in enumerate(preints):
        x_k = window.states[k]
        beta, _ = pre.corrected(x_k.b_a, x_k.b_g)
        R_T = x_k.R().T
        x = R_T @ (window.states[k + 1].v_w - x_k.v_w)
        y = beta - R_T @ (g_w * pre.dT)
        num += x @ y
        den += x @ x
    if den < min_excitation:
        raise UnobservableScale(f"velocity-delta excitation {den:.2e}")
    s = num / den
    if s <= 0:
        raise UnobservableScale(f"non-positive scale {s:.3e}")
    return float(s)


def scale_window(window: WindowState, s: float) -> WindowState:
    """Scale velocities and line moments by a common metric factor."""
    states = [BodyState(v_w=st.v_w * s, q=st.q, b_a=st.b_a, b_g=st.b_g)
              for st in window.states]
    lines = []
    for c in window.lines:
        d, m = decode_line(c.ortho)
        lines.append(LineCopy(
            cluster_id=c.cluster_id, slice_idx=c.slice_idx,
            ortho=plucker_to_orthonormal(PluckerLine(d=d, m=m * s))))
    return WindowState(t_centers=window.t_centers, dT=window.dT,
                       states=states, lines=lines, assoc=window.assoc,
                       cons_pairs=window.cons_pairs,
                       gyro_mean=window.gyro_mean, imu=window.imu)


def gravity_aligned_orientation(accel_mean: np.ndarray) -> np.ndarray:
    """Roll/pitch from the accelerometer direction, yaw fixed to zero.

    Returns the body-to-world quaternion mapping the measured specific
    force onto +z.
    """
    a = np.asarray(accel_mean, dtype=float)
    a = a / np.linalg.norm(a)
    z = np.array([0.0, 0.0, 1.0])
    axis = np.cross(a, z)
    s = np.linalg.norm(axis)
    c = float(a @ z)
    if s < 1e-12:
        return quat_from_rotvec(np.zeros(3) if c > 0 else np.array([np.pi, 0, 0]))
    axis = axis / s
    return quat_from_rotvec(axis * np.arctan2(s, c))


def slide_window(window: WindowState, preints: list[Preintegration],
                 new_events: dict[int, tuple[np.ndarray, np.ndarray]],
                 new_imu: list[ImuSample], config: WindowConfig,
                 K: CameraIntrinsics) -> tuple[WindowState, list[Preintegration]]:
    """Drop the oldest slice and append one slice of new data.

    The appended state is the inertial propagation of the last optimized
    state; continuing clusters inherit their previous line copy through
    the inter-slice transform, new clusters are triangulated from two
    boundary observations when possible.
    """
    dT = window.dT
    t_new = window.t_centers[-1] + dT
    imu = [s for s in window.imu if s.t >= window.t_centers[0] + dT / 2 - 1e-9]
    imu.extend(s for s in new_imu if not imu or s.t > imu[-1].t)

    pre_new = preintegrate(imu, window.t_centers[-1], t_new,
                           window.states[-1].b_a, window.states[-1].b_g,
                           config.imu_noise)
    x_new = propagate_state(window.states[-1], pre_new, g=config.imu_noise.g)

    keep = [i for i, c in enumerate(window.lines) if c.slice_idx >= 1]
    remap = {old: new for new, old in enumerate(keep)}
    lines = [LineCopy(cluster_id=window.lines[i].cluster_id,
                      slice_idx=window.lines[i].slice_idx - 1,
                      ortho=window.lines[i].ortho) for i in keep]
    assoc = [Association(line_idx=remap[a.line_idx],
                         slice_idx=a.slice_idx - 1,
                         pixels=a.pixels, times=a.times)
             for a in window.assoc if a.slice_idx >= 1]
    cons_pairs = [(remap[a], remap[b]) for a, b in window.cons_pairs
                  if a in remap and b in remap]

    states = window.states[1:] + [x_new]
    t_centers = np.append(window.t_centers[1:], t_new)
    n = len(states)

    gyro_mean = np.vstack([window.gyro_mean[1:],
                           _mean_gyro_or_zero(imu, t_new - dT / 2, t_new + dT / 2)])

    last_copy_by_cluster = {}
    for i, c in enumerate(lines):
        if c.slice_idx == n - 2:
            last_copy_by_cluster[c.cluster_id] = i

    for cid, (pixels, times) in sorted(new_events.items()):
        if len(pixels) < 2:
            continue
        if cid in last_copy_by_cluster:
            prev_idx = last_copy_by_cluster[cid]
            x_prev = states[n - 2]
            R_rel, t_rel = interslice_transform(x_prev, x_new, dT)
            d, m = decode_line(lines[prev_idx].ortho)
            moved = plucker_transform(PluckerLine(d=d, m=m),
                                      R_rel.T, -R_rel.T @ t_rel)
            try:
                ortho = plucker_to_orthonormal(moved.normalized())
            except Exception:
                continue
            lines.append(LineCopy(cluster_id=cid, slice_idx=n - 1, ortho=ortho))
            li = len(lines) - 1
            assoc.append(Association(line_idx=li, slice_idx=n - 1,
                                     pixels=np.asarray(pixels, dtype=float),
                                     times=np.asarray(times, dtype=float)))
            cons_pairs.append((prev_idx, li))

    new_preints = list(preints[1:]) + [pre_new]
    return WindowState(t_centers=t_centers, dT=dT, states=states,
                       lines=lines, assoc=assoc, cons_pairs=cons_pairs,
                       gyro_mean=gyro_mean, imu=imu), new_preints


def _mean_gyro_or_zero(imu: list[ImuSample], t0: float, t1: float) -> np.ndarray:
    from .inertial import mean_gyro
    try:
        return mean_gyro(imu, t0, t1)
    except Exception:
        return np.zeros(3)
