"""Closed-form 4-event minimal solver for a 3D line under known kinematics.

Each event, rotation-compensated into the reference frame at the slice
start, defines a measurement line through the hypothesized camera center
at its timestamp.  Four such lines generically admit exactly two common
transversals; one of them is the wanted 3D line, and a structurally
spurious pair (the motion line itself, m = 0, d = +-v) always solves the
algebra and must be excluded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .celc import Event
from .errors import (NoRealSolution, OnlySpuriousSolutions, RankDefect,
                     UndefinedNormal)
from .geometry import (CameraIntrinsics, PluckerLine, cross3, cross3_rows,
                       so3_exp, so3_exp_batch)

SPURIOUS_TOL = 1e-6
RANK_TOL = 1e-6


@dataclass(frozen=True)
class MeasurementLine:
    """Pluecker line of one event ray in the reference frame.

    direction: rotation-compensated bearing f_w = R_si f
    moment:    t_si x f_w about the reference origin, t_si = v (t - t_s)
    """

    direction: np.ndarray
    moment: np.ndarray

    def as_row(self) -> np.ndarray:
        """Incidence row c with c . [m, d] = 0 for a crossing line (d, m)."""
        return np.concatenate([self.direction, self.moment])


def compensate_event(event: Event, omega: np.ndarray, v: np.ndarray,
                     t_s: float, K: CameraIntrinsics) -> MeasurementLine:
    """Measurement line of an event under hypothesized (omega, v)."""
    f = K.pixel_to_bearing(event.x, event.y)
    R_si = so3_exp(np.asarray(omega, dtype=float) * (event.t - t_s))
    f_w = R_si @ f
    t_si = np.asarray(v, dtype=float) * (event.t - t_s)
    return MeasurementLine(direction=f_w, moment=cross3(t_si, f_w))


def compensated_bearings(pixels: np.ndarray, times: np.ndarray,
                         omega: np.ndarray, t_s: float,
                         K: CameraIntrinsics) -> np.ndarray:
    """Rotation-compensated bearings f_w for all events, (N, 3).

    Independent of the velocity hypothesis, so callers can cache them
    across inner-RANSAC iterations.
    """
    f = np.column_stack([(pixels[:, 0] - K.cx) / K.fx,
                         (pixels[:, 1] - K.cy) / K.fy,
                         np.ones(len(pixels))])
    R = so3_exp_batch(np.outer(times - t_s, np.asarray(omega, dtype=float)))
    return np.einsum("nij,nj->ni", R, f)


def measurement_rows(f_w: np.ndarray, times: np.ndarray, v: np.ndarray,
                     t_s: float) -> np.ndarray:
    """(N, 6) incidence rows [f_w, t_si x f_w] for a velocity hypothesis."""
    t_si = np.outer(times - t_s, np.asarray(v, dtype=float))
    return np.hstack([f_w, cross3_rows(t_si, f_w)])


def _quadratic_roots(qa: float, qb: float, qc: float) -> list[float]:
    """Real roots of qa g^2 + qb g + qc, stable for small qa."""
    if abs(qa) < 1e-14 * max(abs(qb), abs(qc), 1.0):
        if abs(qb) < 1e-300:
            return []
        return [-qc / qb]
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0:
        # tolerate tiny negative discriminants from roundoff
        if disc > -1e-10 * max(qb * qb, abs(4.0 * qa * qc)):
            disc = 0.0
        else:
            return []
    sq = np.sqrt(disc)
    # numerically stable split
    q = -0.5 * (qb + np.copysign(sq, qb)) if qb != 0 else 0.5 * sq
    if q == 0:
        return [0.0]
    return [q / qa, qc / q]


def _candidate_pairs(v5: np.ndarray, v6: np.ndarray) -> list[tuple[float, float]]:
    """Solve the two side constraints on x = l5 v5 + l6 v6.

    With x = [m, d]:   d.d = 1   and   m.d = 0.
    Sylvester elimination of l5 leaves a biquadratic in l6; substituting
    g = l6^2 gives a closed-form quadratic.
    """
    m5, d5 = v5[:3], v5[3:]
    m6, d6 = v6[:3], v6[3:]
    a1, b1, c1 = d5 @ d5, 2.0 * (d5 @ d6), d6 @ d6
    a2 = m5 @ d5
    b2 = m5 @ d6 + m6 @ d5
    c2 = m6 @ d6
    # resultant of  P = a1 x^2 + (b1 y) x + (c1 y^2 - 1)
    #          and  Q = a2 x^2 + (b2 y) x + (c2 y^2)      in x:
    # Res = (p2 q0 - p0 q2)^2 - (p2 q1 - p1 q2)(p1 q0 - p0 q1)
    #     = (A g + a2)^2 - Bq (Cq g + b2) g      with g = y^2
    A = a1 * c2 - a2 * c1
    Bq = a1 * b2 - a2 * b1
    Cq = b1 * c2 - b2 * c1
    qa = A * A - Bq * Cq
    qb = 2.0 * A * a2 - Bq * b2
    qc = a2 * a2
    gammas = [g for g in _quadratic_roots(qa, qb, qc) if g >= 0.0]
    if not gammas:
        raise NoRealSolution("no real root for the unit-direction constraint")
    pairs = []
    for g in gammas:
        for l6 in (np.sqrt(g), -np.sqrt(g)):
            # eliminating the quadratic terms: Bq x y + A g + a2 = 0
            den = Bq * l6
            if abs(den) > 1e-12 * max(abs(A * g + a2), 1.0):
                l5 = -(A * g + a2) / den
            else:
                # both quadratics degenerate in the eliminated variable;
                # fall back to the orthogonality constraint directly
                rr = np.roots([a2, b2 * l6, c2 * g])
                rr = rr[np.abs(rr.imag) < 1e-9].real
                if rr.size == 0:
                    continue
                l5 = float(rr[np.argmin(np.abs(a1 * rr**2 + b1 * l6 * rr
                                               + c1 * g - 1.0))])
            pairs.append((float(l5), float(l6)))
    if not pairs:
        raise NoRealSolution("no consistent root pair")
    return pairs


def solve_line_from_rows(C: np.ndarray, v: np.ndarray) -> PluckerLine:
    """Core solver on a stacked (4, 6) incidence matrix."""
    v = np.asarray(v, dtype=float)
    nv = np.sqrt(v @ v)
    if nv < 1e-12:
        raise RankDefect("zero velocity: every measurement line passes "
                         "through the reference origin")
    _, s, Vt = np.linalg.svd(C)
    if s[3] < RANK_TOL * s[2]:
        raise RankDefect(f"null space dimension > 2 (singular values {s})")
    v5, v6 = Vt[4], Vt[5]
    best = None
    best_unit_gap = np.inf
    for l5, l6 in _candidate_pairs(v5, v6):
        x = l5 * v5 + l6 * v6
        d, m = x[3:], x[:3]
        c = cross3(d, v)
        if np.sqrt(c @ c) / nv <= SPURIOUS_TOL:
            continue
        gap = abs(d @ d - 1.0)
        if gap < best_unit_gap:
            best_unit_gap = gap
            best = (d, m)
    if best is None:
        raise OnlySpuriousSolutions(
            "all candidates coincide with the motion line")
    # the survivors are one antipodal pair (or numerically near
    # duplicates); canonicalize to a positive leading direction component
    d, m = best
    for comp in d:
        if abs(comp) > 1e-12:
            if comp < 0:
                d, m = -d, -m
            break
    n = np.sqrt(d @ d)
    return PluckerLine(d=d / n, m=m / n)


def solve_line_minimal(events: list[Event], omega: np.ndarray, v: np.ndarray,
                       t_s: float, K: CameraIntrinsics) -> PluckerLine:
    """Recover the 3D line crossed by four event measurement lines.

    Returns the non-spurious candidate, canonicalized so the first
    non-zero component of d is positive.
    """
    if len(events) != 4:
        raise ValueError("minimal solver needs exactly 4 events")
    pixels = np.array([[e.x, e.y] for e in events])
    times = np.array([e.t for e in events])
    f_w = compensated_bearings(pixels, times, omega, t_s, K)
    C = measurement_rows(f_w, times, v, t_s)
    return solve_line_from_rows(C, v)


def line_inlier_error(line: PluckerLine, event: Event, omega: np.ndarray,
                      v: np.ndarray, t_s: float, K: CameraIntrinsics) -> float:
    """Angular consistency error in [0, 2] of one event with a line.

    Zero when the event ray meets the line in front of the camera; 2 when
    the geometry is mirrored through the camera center (behind-camera
    reconstruction).
    """
    ml = compensate_event(event, omega, v, t_s, K)
    n1 = cross3(ml.direction, line.d)
    nn1 = np.linalg.norm(n1)
    if nn1 < 1e-12:
        raise UndefinedNormal("bearing parallel to the line direction")
    # line moment about the camera center at the event time
    t_si = np.asarray(v, dtype=float) * (event.t - t_s)
    n2 = line.m - cross3(t_si, line.d)
    nn2 = np.linalg.norm(n2)
    if nn2 < 1e-12:
        raise UndefinedNormal("line passes through the camera center")
    return float(1.0 - (n1 / nn1) @ (n2 / nn2))


def line_inlier_errors_cached(line: PluckerLine, f_w: np.ndarray,
                              times: np.ndarray, v: np.ndarray,
                              t_s: float) -> np.ndarray:
    """Vectorized inlier metric from cached compensated bearings.

    Degenerate events (bearing parallel to d, or ray through the line)
    score the maximum error 2 instead of raising.
    """
    n1 = cross3_rows(f_w, line.d[None, :])
    t_si = np.outer(times - t_s, np.asarray(v, dtype=float))
    n2 = line.m[None, :] - cross3_rows(t_si, line.d[None, :])
    nn1 = np.sqrt(np.sum(n1 * n1, axis=1))
    nn2 = np.sqrt(np.sum(n2 * n2, axis=1))
    bad = (nn1 < 1e-12) | (nn2 < 1e-12)
    nn1[bad] = 1.0
    nn2[bad] = 1.0
    eps = 1.0 - np.sum(n1 * n2, axis=1) / (nn1 * nn2)
    # undefined normals count as maximally inconsistent for either
    # orientation (1.0 is the worst score under the symmetric consensus)
    eps[bad] = 1.0
    return eps


def line_inlier_errors(line: PluckerLine, pixels: np.ndarray,
                       times: np.ndarray, omega: np.ndarray, v: np.ndarray,
                       t_s: float, K: CameraIntrinsics) -> np.ndarray:
    """Vectorized line_inlier_error over events given as pixel/time arrays."""
    f_w = compensated_bearings(pixels, times, omega, t_s, K)
    return line_inlier_errors_cached(line, f_w, times, v, t_s)


def resolve_velocity_sign(lines: list[PluckerLine], v: np.ndarray,
                          z_min: float = 0.5) -> np.ndarray:
    """Orient v so the reconstructed lines lie in front of the camera.

    A wrongly signed hypothesis mirrors every reconstruction through the
    camera center, which flips the line moments; the majority vote is on
    the z-coordinate of each line's closest point to the origin.  Lines
    reconstructed within z_min of the image plane (near-degenerate,
    direction almost parallel to v) abstain; ties keep the current sign.
    """
    v = np.asarray(v, dtype=float)
    behind = 0
    front = 0
    for line in lines:
        z = line.closest_point()[2]
        if z < -z_min:
            behind += 1
        elif z > z_min:
            front += 1
    return -v if behind > front else v


def flip_line(line: PluckerLine) -> PluckerLine:
    """Mirror a line through the origin (moment sign flip)."""
    return PluckerLine(d=line.d, m=-line.m)
