"""IMU measurement model, midpoint preintegration and the inertial residual.

Raw measurements follow  a_hat = a + b_a + R_w^t g_w + n_a  and
w_hat = w + b_g + n_w, with white noise n and random-walk biases.  Samples
between two slice centers are integrated once into a velocity delta beta
and an orientation delta gamma, so the optimizer never re-integrates
inside its iterations.  First-order bias Jacobians keep the residual a
smooth function of the bias states; the caller re-preintegrates whenever
the linearization bias drifts too far.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NoImuData
from .geometry import (quat_conjugate, quat_from_rotvec, quat_identity,
                       quat_left_matrix, quat_multiply, quat_normalize,
                       quat_to_matrix, skew, so3_right_jacobian)

GRAVITY = 9.81
REINTEGRATE_BIAS_TOL = 1e-3


@dataclass(frozen=True)
class ImuSample:
    """One gyroscope + accelerometer reading."""

    t: float
    w: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))


@dataclass(frozen=True)
class ImuNoise:
    """Continuous-time noise densities and gravity magnitude."""

    sigma_a: float = 0.01      # accelerometer white noise, m/s^2/sqrt(Hz)
    sigma_w: float = 0.001     # gyroscope white noise, rad/s/sqrt(Hz)
    sigma_ba: float = 1e-4     # accel bias random walk, m/s^3/sqrt(Hz)
    sigma_bw: float = 1e-5     # gyro bias random walk, rad/s^2/sqrt(Hz)
    g: float = GRAVITY

    def zero(self) -> "ImuNoise":
        return ImuNoise(0.0, 0.0, 0.0, 0.0, self.g)


@dataclass(frozen=True)
class BodyState:
    """Per-slice state: world velocity, orientation, IMU biases."""

    v_w: np.ndarray
    q: np.ndarray           # body-to-world, (w, x, y, z)
    b_a: np.ndarray
    b_g: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v_w", np.asarray(self.v_w, dtype=float))
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "b_a", np.asarray(self.b_a, dtype=float))
        object.__setattr__(self, "b_g", np.asarray(self.b_g, dtype=float))

    @classmethod
    def identity(cls) -> "BodyState":
        return cls(np.zeros(3), quat_identity(), np.zeros(3), np.zeros(3))

    def R(self) -> np.ndarray:
        """Body-to-world rotation matrix."""
        return quat_to_matrix(self.q)


@dataclass
class Preintegration:
    """Integrated inertial deltas between two slice centers."""

    beta: np.ndarray                  # velocity delta in the start frame
    gamma: np.ndarray                 # orientation delta quaternion
    dT: float
    b_a: np.ndarray                   # linearization biases
    b_g: np.ndarray
    P: np.ndarray                     # 6x6 covariance of (d_beta, d_theta)
    J_beta_ba: np.ndarray
    J_beta_bg: np.ndarray
    J_gamma_bg: np.ndarray
    t0: float = 0.0
    t1: float = 0.0

    def corrected(self, b_a: np.ndarray, b_g: np.ndarray
                  ) -> tuple[np.ndarray, np.ndarray]:
        """First-order (beta, gamma) at biases away from the linearization."""
        dba = np.asarray(b_a, dtype=float) - self.b_a
        dbg = np.asarray(b_g, dtype=float) - self.b_g
        beta = self.beta + self.J_beta_ba @ dba + self.J_beta_bg @ dbg
        gamma = quat_multiply(self.gamma,
                              quat_from_rotvec(self.J_gamma_bg @ dbg))
        return beta, quat_normalize(gamma)

    def needs_reintegration(self, b_a: np.ndarray, b_g: np.ndarray,
                            tol: float = REINTEGRATE_BIAS_TOL) -> bool:
        return (np.linalg.norm(b_a - self.b_a) > tol
                or np.linalg.norm(b_g - self.b_g) > tol)


def _interp_sample(s0: ImuSample, s1: ImuSample, t: float) -> ImuSample:
    u = 0.0 if s1.t == s0.t else (t - s0.t) / (s1.t - s0.t)
    return ImuSample(t=t, w=(1 - u) * s0.w + u * s1.w,
                     a=(1 - u) * s0.a + u * s1.a)


def slice_samples(samples: list[ImuSample], t0: float, t1: float) -> list[ImuSample]:
    """Samples covering [t0, t1], with boundary values interpolated."""
    inside = [s for s in samples if t0 < s.t < t1]
    before = [s for s in samples if s.t <= t0]
    after = [s for s in samples if s.t >= t1]
    if not before or not after:
        raise NoImuData(f"IMU stream does not cover [{t0}, {t1}]")
    prev_s = before[-1]
    next_after = after[0]
    first = _interp_sample(prev_s, inside[0] if inside else next_after, t0)
    last = _interp_sample(inside[-1] if inside else prev_s, next_after, t1)
    return [first, *inside, last]


def preintegrate(samples: list[ImuSample], t0: float, t1: float,
                 b_a: np.ndarray, b_g: np.ndarray,
                 noise: ImuNoise | None = None) -> Preintegration:
    """Midpoint preintegration of the samples covering [t0, t1]."""
    if t1 <= t0:
        raise NoImuData("empty integration interval")
    noise = noise or ImuNoise()
    b_a = np.asarray(b_a, dtype=float)
    b_g = np.asarray(b_g, dtype=float)
    seq = slice_samples(samples, t0, t1)

    beta = np.zeros(3)
    gamma = quat_identity()
    P = np.zeros((6, 6))
    J_bb = np.zeros((3, 3))   # d beta / d b_a
    J_bg = np.zeros((3, 3))   # d beta / d b_g
    J_gg = np.zeros((3, 3))   # d gamma / d b_g (rotation-vector sense)

    R_i = np.eye(3)
    for s0, s1 in zip(seq[:-1], seq[1:]):
        dt = s1.t - s0.t
        if dt <= 0:
            continue
        w_m = 0.5 * (s0.w + s1.w) - b_g
        phi = w_m * dt
        dq = quat_from_rotvec(phi)
        R_dq = quat_to_matrix(dq)
        Jr = so3_right_jacobian(phi)
        gamma_next = quat_normalize(quat_multiply(gamma, dq))
        R_i1 = quat_to_matrix(gamma_next)

        u0 = s0.a - b_a
        u1 = s1.a - b_a
        a0 = R_i @ u0
        a1 = R_i1 @ u1
        beta = beta + 0.5 * (a0 + a1) * dt

        # exact chain rule for the bias Jacobians at the linearization point
        J_gg_next = R_dq.T @ J_gg - Jr * dt
        J_bb = J_bb - 0.5 * (R_i + R_i1) * dt
        J_bg = J_bg - 0.5 * dt * (R_i @ skew(u0) @ J_gg
                                  + R_i1 @ skew(u1) @ J_gg_next)

        # first-order covariance propagation for (d_beta, d_theta)
        A = np.eye(6)
        A[:3, 3:] = -0.5 * dt * (R_i @ skew(u0) + R_i1 @ skew(u1) @ R_dq.T)
        A[3:, 3:] = R_dq.T
        P = A @ P @ A.T
        P[:3, :3] += (noise.sigma_a ** 2) * dt * np.eye(3)
        P[3:, 3:] += (noise.sigma_w ** 2) * dt * (Jr @ Jr.T)

        gamma = gamma_next
        R_i = R_i1
        J_gg = J_gg_next

    return Preintegration(beta=beta, gamma=gamma, dT=t1 - t0,
                          b_a=b_a.copy(), b_g=b_g.copy(), P=P,
                          J_beta_ba=J_bb, J_beta_bg=J_bg, J_gamma_bg=J_gg,
                          t0=t0, t1=t1)


def imu_residual(x_k: BodyState, x_k1: BodyState, pre: Preintegration,
                 g: float = GRAVITY) -> np.ndarray:
    """12-vector [d_beta, d_theta, d_b_a, d_b_g] between adjacent states."""
    g_w = np.array([0.0, 0.0, g])
    beta_hat, gamma_hat = pre.corrected(x_k.b_a, x_k.b_g)
    R_wk = x_k.R().T
    d_beta = R_wk @ (x_k1.v_w + g_w * pre.dT - x_k.v_w) - beta_hat
    q_err = quat_multiply(quat_multiply(quat_conjugate(x_k.q), x_k1.q),
                          quat_conjugate(gamma_hat))
    d_theta = 2.0 * np.sign(q_err[0] if q_err[0] != 0 else 1.0) * q_err[1:]
    return np.concatenate([d_beta, d_theta,
                           x_k1.b_a - x_k.b_a, x_k1.b_g - x_k.b_g])


def imu_residual_jacobians(x_k: BodyState, x_k1: BodyState,
                           pre: Preintegration, g: float = GRAVITY) -> dict:
    """Analytic Jacobians of imu_residual.

    Keys: v_k, v_k1, th_k, th_k1, ba_k, ba_k1, bg_k, bg_k1, each mapping a
    12-row block to the 3-dimensional local parameterization (quaternions
    perturb as q * Exp(d_theta)).
    """
    g_w = np.array([0.0, 0.0, g])
    R_k = x_k.R()
    u = x_k1.v_w + g_w * pre.dT - x_k.v_w
    _, gamma_hat = pre.corrected(x_k.b_a, x_k.b_g)

    J = {k: np.zeros((12, 3)) for k in
         ("v_k", "v_k1", "th_k", "th_k1", "ba_k", "ba_k1", "bg_k", "bg_k1")}
    J["v_k"][:3] = -R_k.T
    J["v_k1"][:3] = R_k.T
    J["th_k"][:3] = skew(R_k.T @ u)
    J["ba_k"][:3] = -pre.J_beta_ba
    J["bg_k"][:3] = -pre.J_beta_bg

    # orientation rows: e = 2 vec(q_k^-1 q_k1 gamma^-1); quaternion products
    # are linear maps, so the chain rule is exact.
    sign = np.sign(quat_multiply(quat_multiply(quat_conjugate(x_k.q), x_k1.q),
                                 quat_conjugate(gamma_hat))[0]) or 1.0

    def vec_rows(M4x4: np.ndarray) -> np.ndarray:
        return 2.0 * sign * M4x4[1:, :]

    Lqk_inv = quat_left_matrix(quat_conjugate(x_k.q))
    C = np.diag([1.0, -1.0, -1.0, -1.0])

    # d e / d theta_k1  (q_k1 <- q_k1 * Exp(th))
    M = Lqk_inv @ _right_mult_matrix(quat_conjugate(gamma_hat))
    dq_dth = 0.5 * quat_left_matrix(x_k1.q)[:, 1:]
    J["th_k1"][3:6] = vec_rows(M @ dq_dth)

    # d e / d theta_k via conj(q_k)
    M = _right_mult_matrix(quat_multiply(x_k1.q, quat_conjugate(gamma_hat)))
    dqk_dth = 0.5 * quat_left_matrix(x_k.q)[:, 1:]
    J["th_k"][3:6] = vec_rows(M @ C @ dqk_dth)

    # d e / d b_gk via gamma(b) = gamma_lin * Exp(J_gg db)
    M = Lqk_inv @ quat_left_matrix(x_k1.q) @ C
    dgamma_db = quat_left_matrix(pre.gamma)[:, 1:] @ (0.5 * pre.J_gamma_bg)
    J["bg_k"][3:6] = vec_rows(M @ dgamma_db)

    J["ba_k"][6:9] = -np.eye(3)
    J["ba_k1"][6:9] = np.eye(3)
    J["bg_k"][9:12] = -np.eye(3)
    J["bg_k1"][9:12] = np.eye(3)
    return J


def _right_mult_matrix(q: np.ndarray) -> np.ndarray:
    from .geometry import quat_right_matrix
    return quat_right_matrix(q)


def residual_sqrt_information(pre: Preintegration, noise: ImuNoise,
                              fixed: bool = False) -> np.ndarray:
    """12x12 whitening weight for the inertial residual.

    Propagated mode inverts the integrated (beta, theta) covariance;
    fixed mode (or degenerate covariance) falls back to diagonal weights.
    """
    W = np.zeros((12, 12))
    dT = pre.dT
    sba = max(noise.sigma_ba, 1e-8) * np.sqrt(dT)
    sbw = max(noise.sigma_bw, 1e-8) * np.sqrt(dT)
    if not fixed and pre.P[0, 0] > 0 and np.linalg.cond(pre.P) < 1e12:
        L = np.linalg.cholesky(np.linalg.inv(pre.P))
        W[:6, :6] = L.T
    else:
        sb = max(noise.sigma_a, 1e-6) * np.sqrt(dT)
        st = max(noise.sigma_w, 1e-7) * np.sqrt(dT)
        W[:3, :3] = np.eye(3) / sb
        W[3:6, 3:6] = np.eye(3) / st
    W[6:9, 6:9] = np.eye(3) / sba
    W[9:12, 9:12] = np.eye(3) / sbw
    return W


def propagate_state(x: BodyState, pre: Preintegration,
                    g: float = GRAVITY) -> BodyState:
    """First-order inertial prediction of the next slice state."""
    g_w = np.array([0.0, 0.0, g])
    beta_hat, gamma_hat = pre.corrected(x.b_a, x.b_g)
    v_next = x.R() @ beta_hat + x.v_w - g_w * pre.dT
    q_next = quat_normalize(quat_multiply(x.q, gamma_hat))
    return BodyState(v_w=v_next, q=q_next, b_a=x.b_a.copy(), b_g=x.b_g.copy())


def mean_gyro(samples: list[ImuSample], t0: float, t1: float) -> np.ndarray:
    """Time-averaged raw gyro reading over [t0, t1] (trapezoid rule)."""
    seq = slice_samples(samples, t0, t1)
    total = np.zeros(3)
    for s0, s1 in zip(seq[:-1], seq[1:]):
        total += 0.5 * (s0.w + s1.w) * (s1.t - s0.t)
    return total / (t1 - t0)
