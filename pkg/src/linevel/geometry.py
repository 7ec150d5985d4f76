"""Rotation, quaternion and 3D-line primitives.

Lines are kept in two interchangeable forms: Pluecker coordinates
(direction + moment, convenient for rigid transforms and projection) and
the orthonormal pair (U, W) in SO(3) x SO(2) used for minimal 4-parameter
updates inside the optimizer.  All functions are pure and operate on
float64 numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLine, LineAtInfinity

SMALL_ANGLE = 1e-8


def skew(a: np.ndarray) -> np.ndarray:
    """3x3 skew-symmetric matrix such that skew(a) @ b == cross(a, b)."""
    return np.array([
        [0.0, -a[2], a[1]],
        [a[2], 0.0, -a[0]],
        [-a[1], a[0], 0.0],
    ])


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product of 3-vectors (faster than np.cross for single pairs)."""
    return np.array([a[1] * b[2] - a[2] * b[1],
                     a[2] * b[0] - a[0] * b[2],
                     a[0] * b[1] - a[1] * b[0]])


def cross3_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cross product for (N, 3) arrays (broadcasts like np.cross)."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    out[:, 0] = a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1]
    out[:, 1] = a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2]
    out[:, 2] = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    return out


def so3_exp(phi: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map; second-order series below SMALL_ANGLE."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def so3_exp_batch(phis: np.ndarray) -> np.ndarray:
    """Vectorized so3_exp for an (N, 3) array of rotation vectors."""
    phis = np.asarray(phis, dtype=float)
    n = phis.shape[0]
    theta = np.linalg.norm(phis, axis=1)
    K = np.zeros((n, 3, 3))
    K[:, 0, 1] = -phis[:, 2]
    K[:, 0, 2] = phis[:, 1]
    K[:, 1, 0] = phis[:, 2]
    K[:, 1, 2] = -phis[:, 0]
    K[:, 2, 0] = -phis[:, 1]
    K[:, 2, 1] = phis[:, 0]
    KK = K @ K
    small = theta < SMALL_ANGLE
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0, np.sin(theta) / np.where(small, 1.0, theta))
        b = np.where(small, 0.5, (1.0 - np.cos(theta)) / np.where(small, 1.0, theta**2))
    return np.eye(3) + a[:, None, None] * K + b[:, None, None] * KK


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R; inverse of so3_exp for angles in [0, pi)."""
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < SMALL_ANGLE:
        return 0.5 * w
    if theta > np.pi - 1e-6:
        # near pi the off-diagonal form degenerates; use the symmetric part
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        k = int(np.argmax(axis))
        axis = A[:, k] / max(axis[k], 1e-12)
        axis /= np.linalg.norm(axis)
        if np.dot(axis, w) < 0:
            axis = -axis
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * w


def so3_right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Right Jacobian of SO(3): d exp(phi + d) = exp(phi) exp(Jr d)."""
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + (K @ K) / 6.0
    t2 = theta * theta
    return (
        np.eye(3)
        - (1.0 - np.cos(theta)) / t2 * K
        + (theta - np.sin(theta)) / (t2 * theta) * (K @ K)
    )


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


# ---------------------------------------------------------------------------
# quaternions, (w, x, y, z) with unit norm, body-to-world convention
# ---------------------------------------------------------------------------

def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return np.asarray(q, dtype=float) / np.linalg.norm(q)


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_left_matrix(q: np.ndarray) -> np.ndarray:
    """4x4 matrix L with quat_multiply(q, p) == L @ p."""
    w, x, y, z = q
    return np.array([
        [w, -x, -y, -z],
        [x, w, -z, y],
        [y, z, w, -x],
        [z, -y, x, w],
    ])


def quat_right_matrix(q: np.ndarray) -> np.ndarray:
    """4x4 matrix R with quat_multiply(p, q) == R @ p."""
    w, x, y, z = q
    return np.array([
        [w, -x, -y, -z],
        [x, w, z, -y],
        [y, -z, w, x],
        [z, y, -x, w],
    ])


def quat_from_rotvec(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    if theta < SMALL_ANGLE:
        q = np.concatenate(([1.0 - theta * theta / 8.0], 0.5 * phi))
        return quat_normalize(q)
    axis = phi / theta
    return np.concatenate(([np.cos(theta / 2.0)], np.sin(theta / 2.0) * axis))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion of a rotation matrix (Shepperd's method)."""
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_to_matrix(q) @ np.asarray(v, dtype=float)


# ---------------------------------------------------------------------------
# lines
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PluckerLine:
    """3D line as direction d and moment m about the frame origin.

    m = p x d for any point p on the line; m.d = 0.  The ratio |m|/|d| is
    the orthogonal distance between the origin and the line.  Instances
    are treated as immutable values.
    """

    d: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float))
        object.__setattr__(self, "m", np.asarray(self.m, dtype=float))

    @classmethod
    def through_point(cls, p: np.ndarray, d: np.ndarray) -> "PluckerLine":
        """Unit-direction line through point p."""
        d = np.asarray(d, dtype=float)
        d = d / np.linalg.norm(d)
        return cls(d=d, m=np.cross(np.asarray(p, dtype=float), d))

    def normalized(self) -> "PluckerLine":
        """Scale so that |d| = 1."""
        n = np.linalg.norm(self.d)
        if n == 0.0:
            raise DegenerateLine("zero direction")
        return PluckerLine(d=self.d / n, m=self.m / n)

    def closest_point(self) -> np.ndarray:
        """Point on the line closest to the origin (requires |d| = 1)."""
        return np.cross(self.d, self.m) / float(self.d @ self.d)

    def origin_distance(self) -> float:
        return float(np.linalg.norm(self.m) / np.linalg.norm(self.d))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.d, self.m])


@dataclass(frozen=True)
class OrthonormalLine:
    """Minimal line parameterization: U in SO(3), W in SO(2).

    Column convention: U = [m/|m|, d/|d|, (m x d)/|m x d|] and
    W = [[w1, -w2], [w2, w1]] with (w1, w2) the normalized (|m|, |d|).
    """

    U: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "U", np.asarray(self.U, dtype=float))
        object.__setattr__(self, "W", np.asarray(self.W, dtype=float))

    @property
    def w1(self) -> float:
        return float(self.W[0, 0])

    @property
    def w2(self) -> float:
        return float(self.W[1, 0])


def plucker_transform(line: PluckerLine, R: np.ndarray, t: np.ndarray) -> PluckerLine:
    """Map a line from frame i to frame j, where x_j = R x_i + t."""
    t = np.asarray(t, dtype=float)
    d_j = R @ line.d
    m_j = R @ line.m + np.cross(t, d_j)
    return PluckerLine(d=d_j, m=m_j)


def plucker_to_orthonormal(line: PluckerLine) -> OrthonormalLine:
    """QR-style factorization of [m d] into (U, W).

    Construction keeps w1, w2 >= 0, which pins the roundtrip sign
    convention.
    """
    nm = np.linalg.norm(line.m)
    nd = np.linalg.norm(line.d)
    if nm < 1e-15:
        raise DegenerateLine("line passes through the origin (m = 0)")
    if nd < 1e-15:
        raise DegenerateLine("zero direction")
    u1 = line.m / nm
    u2 = line.d / nd
    u3 = np.cross(line.m, line.d)
    u3 /= np.linalg.norm(u3)
    U = np.column_stack([u1, u2, u3])
    s = np.hypot(nm, nd)
    w1, w2 = nm / s, nd / s
    W = np.array([[w1, -w2], [w2, w1]])
    return OrthonormalLine(U=U, W=W)


def orthonormal_to_plucker(o: OrthonormalLine) -> PluckerLine:
    """Back to Pluecker coordinates, renormalized to |d| = 1."""
    w1, w2 = o.w1, o.w2
    if abs(w2) < 1e-12:
        raise LineAtInfinity("w2 = 0")
    d = w2 * o.U[:, 1]
    m = w1 * o.U[:, 0]
    s = np.linalg.norm(d)
    return PluckerLine(d=d / s, m=m / s)


def orthonormal_update(o: OrthonormalLine, p: np.ndarray) -> OrthonormalLine:
    """Right-multiply U by Rx(p0) Ry(p1) Rz(p2) and W by the p3 rotation."""
    p = np.asarray(p, dtype=float)
    U = o.U @ rot_x(p[0]) @ rot_y(p[1]) @ rot_z(p[2])
    c, s = np.cos(p[3]), np.sin(p[3])
    W = o.W @ np.array([[c, -s], [s, c]])
    return OrthonormalLine(U=U, W=W)


def line_project(line: PluckerLine) -> np.ndarray:
    """Image of the line on the normalized plane: the moment vector."""
    if np.linalg.norm(line.m) < 1e-15:
        raise DegenerateLine("line passes through the origin (m = 0)")
    return line.m.copy()


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics (zero skew)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 346
    height: int = 260

    @property
    def K(self) -> np.ndarray:
        return np.array([
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array([
            [1.0 / self.fx, 0.0, -self.cx / self.fx],
            [0.0, 1.0 / self.fy, -self.cy / self.fy],
            [0.0, 0.0, 1.0],
        ])

    def pixel_to_bearing(self, x: float, y: float) -> np.ndarray:
        """Normalized image coordinates (z = 1) of a pixel."""
        return np.array([(x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0])

    def bearing_to_pixel(self, f: np.ndarray) -> np.ndarray:
        z = f[2]
        return np.array([self.fx * f[0] / z + self.cx, self.fy * f[1] / z + self.cy])

    def contains(self, x: float, y: float) -> bool:
        return 0.0 <= x < self.width and 0.0 <= y < self.height

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(fx=float(d["fx"]), fy=float(d["fy"]), cx=float(d["cx"]),
                   cy=float(d["cy"]), width=int(d["width"]), height=int(d["height"]))


DAVIS346 = CameraIntrinsics(fx=250.0, fy=250.0, cx=173.0, cy=130.0, width=346, height=260)
