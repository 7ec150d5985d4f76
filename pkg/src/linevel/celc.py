"""Continuous event-line constraint: rows linear in the camera velocity.

Each observed line cluster contributes incidence rows that couple one
event, the cluster's line observations at the slice boundaries, and the
(known) angular velocity.  Stacking rows from at least two clusters pins
the translational velocity direction up to sign.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePair, DegenerateSystem
from .geometry import CameraIntrinsics, so3_exp

RANK_RATIO_TOL = 1e-8


@dataclass(frozen=True)
class Event:
    """One asynchronous brightness-change measurement."""

    x: float
    y: float
    t: float
    polarity: int = 1


@dataclass
class EventCluster:
    """Events attributed to one moving line observation over [t_s, t_e]."""

    id: int
    events: list[Event]
    t_s: float
    t_e: float

    def __post_init__(self):
        self.events = sorted(self.events, key=lambda e: e.t)

    def __len__(self) -> int:
        return len(self.events)

    def times(self) -> np.ndarray:
        return np.array([e.t for e in self.events])

    def pixels(self) -> np.ndarray:
        return np.array([[e.x, e.y] for e in self.events])


@dataclass(frozen=True)
class LineObservation:
    """Normalized-plane line coefficients l, with l . [x, y, 1] = 0."""

    l: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "l", np.asarray(self.l, dtype=float))


def line_from_two_events(e_a: Event, e_b: Event, K: CameraIntrinsics,
                         min_px_dist: float = 3.0) -> LineObservation:
    """Line observation through two event pixels, on the normalized plane.

    l = K^T (h_a x h_b) with h the homogeneous pixel coordinates; the
    events must be at least min_px_dist pixels apart.
    """
    if np.hypot(e_a.x - e_b.x, e_a.y - e_b.y) < min_px_dist:
        raise DegeneratePair(
            f"events {min_px_dist} px apart required, "
            f"got {np.hypot(e_a.x - e_b.x, e_a.y - e_b.y):.2f}")
    h_a = np.array([e_a.x, e_a.y, 1.0])
    h_b = np.array([e_b.x, e_b.y, 1.0])
    return LineObservation(l=K.K.T @ np.cross(h_a, h_b))


def fit_line_tls(pixels: np.ndarray, K: CameraIntrinsics) -> LineObservation:
    """Total-least-squares line through >= 2 pixels, on the normalized plane.

    Minimizes orthogonal pixel distance; exact when the points are
    collinear.  Used for boundary-line estimates from several events.
    """
    pts = np.asarray(pixels, dtype=float)
    c = pts.mean(axis=0)
    _, _, Vt = np.linalg.svd(pts - c, full_matrices=False)
    n = Vt[-1]  # normal of the pixel line
    l_px = np.array([n[0], n[1], -(n @ c)])
    return LineObservation(l=K.K.T @ l_px)


def celc_matrix(l_s: np.ndarray, l_e: np.ndarray, omega: np.ndarray,
                t: float, t_s: float, t_e: float) -> np.ndarray:
    """3x3 constraint matrix B with f^T B v = 0 for an event bearing f."""
    R_si = so3_exp(np.asarray(omega, dtype=float) * (t - t_s))
    R_ei = so3_exp(np.asarray(omega, dtype=float) * (t - t_e))
    # row k: (t - t_e) (l_s . r_k^si) l_e - (t - t_s) (l_e . r_k^ei) l_s
    a = (t - t_e) * (R_si.T @ l_s)
    b = (t - t_s) * (R_ei.T @ l_e)
    return np.outer(a, l_e) - np.outer(b, l_s)


def celc_row(event: Event, l_s: LineObservation, l_e: LineObservation,
             omega: np.ndarray, t_s: float, t_e: float,
             K: CameraIntrinsics) -> np.ndarray:
    """Velocity constraint row B^T f for one event."""
    B = celc_matrix(l_s.l, l_e.l, omega, event.t, t_s, t_e)
    f = K.pixel_to_bearing(event.x, event.y)
    return B.T @ f


def transfer_line(l_s: np.ndarray, l_e: np.ndarray, omega: np.ndarray,
                  v: np.ndarray, t: float, t_s: float, t_e: float) -> np.ndarray:
    """Normalized-plane line swept by the cluster at time t, B(t) v.

    Events consistent with the constraint at velocity v lie on this line;
    it coincides with l_s at t_s and l_e at t_e.
    """
    B = celc_matrix(l_s, l_e, omega, t, t_s, t_e)
    return B @ np.asarray(v, dtype=float)


def solve_velocity(rows: np.ndarray) -> np.ndarray:
    """Unit velocity direction from stacked constraint rows.

    Rows are normalized before stacking to balance event-timing
    magnitudes; the result is the right-singular vector of the smallest
    singular value.  Sign is left to the caller.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[0] < 2:
        raise DegenerateSystem("need at least 2 constraint rows")
    norms = np.linalg.norm(rows, axis=1)
    good = norms > 1e-300
    if good.sum() < 2:
        raise DegenerateSystem("fewer than 2 non-zero rows")
    A = rows[good] / norms[good, None]
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    if s[1] < RANK_RATIO_TOL * s[0]:
        raise DegenerateSystem(
            f"rank < 2 (singular values {s}); sample a second cluster")
    v = Vt[2]
    return v / np.linalg.norm(v)
