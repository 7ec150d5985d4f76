"""Nested two-layer RANSAC velocity bootstrap.

The outer layer hypothesizes a unit velocity from two clusters (five
events each: two boundary pairs form the line observations, the center
event forms one constraint row).  The inner layer robustly regresses one
3D line per cluster with the 4-event minimal solver under the
hypothesized kinematics.  Convergence is declared when the mean
per-cluster reprojection inlier ratio exceeds a threshold; the velocity
sign is resolved afterwards from the reconstructed line moments, and an
optional final refit re-solves the velocity over all inlier events.

Inner consensus uses the orientation-symmetric score min(eps, 2 - eps):
the hypothesis sign is arbitrary until resolved, and a mirrored
reconstruction scores eps ~ 2 on every true inlier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .celc import (Event, EventCluster, celc_row, fit_line_tls,
                   line_from_two_events, solve_velocity)
from .errors import (DegeneratePair, DegenerateSystem, InsufficientSpread,
                     LinevelError, TooFewClusters)
from .geometry import CameraIntrinsics, PluckerLine, so3_exp_batch
from .line_solver import (compensated_bearings, flip_line,
                          line_inlier_errors_cached, measurement_rows,
                          resolve_velocity_sign, solve_line_from_rows)


@dataclass(frozen=True)
class RansacParams:
    max_outer_iters: int = 200
    max_inner_iters: int = 100
    p_thres: float = 0.8              # mean reprojection inlier ratio
    inlier_eps: float = 5e-3          # angular metric threshold (calibrated)
    reproj_inlier_px: float = 2.0     # pixel event-to-line threshold
    dt_frac: float = 0.1              # boundary sub-interval fraction
    min_px_dist: float = 3.0
    max_events_per_cluster: int = 300
    rng_seed: int = 0
    refine: bool = True               # all-inlier velocity refit
    inner_early_exit_p: float = 0.95
    sample_budget: int = 30


@dataclass
class BootstrapResult:
    v: np.ndarray
    lines: list[PluckerLine | None]
    p_j: np.ndarray
    p_mean: float
    iterations: int
    converged: bool
    inner_p: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def flags(self) -> list[str]:
        out = [] if self.converged else ["NotConverged"]
        out += [f"NoModel[{i}]" for i, L in enumerate(self.lines) if L is None]
        return out


def _window_masks(times: np.ndarray, t_s: float, t_e: float, dt_frac: float):
    dt = dt_frac * (t_e - t_s)
    lead = times <= t_s + dt
    trail = times >= t_e - dt
    span = t_e - t_s
    mid = (times >= t_s + span / 3.0) & (times <= t_s + 2.0 * span / 3.0)
    return lead, mid, trail


def sample_constraint_events(cluster: EventCluster, params: RansacParams,
                             rng: np.random.Generator) -> list[Event]:
    """Five events: two leading, one center, two trailing.

    The boundary pairs must be spaced by at least min_px_dist pixels so
    the implied line observations are well conditioned.
    """
    times = cluster.times()
    lead, mid, trail = _window_masks(times, cluster.t_s, cluster.t_e,
                                     params.dt_frac)
    idx_lead = np.flatnonzero(lead)
    idx_mid = np.flatnonzero(mid)
    idx_trail = np.flatnonzero(trail)
    if len(idx_lead) < 2 or len(idx_trail) < 2 or len(idx_mid) < 1:
        raise InsufficientSpread(
            f"cluster {cluster.id}: windows hold "
            f"{len(idx_lead)}/{len(idx_mid)}/{len(idx_trail)} events")

    def pick_pair(idx: np.ndarray) -> tuple[Event, Event]:
        for _ in range(params.sample_budget):
            i, j = rng.choice(idx, size=2, replace=False)
            a, b = cluster.events[i], cluster.events[j]
            if np.hypot(a.x - b.x, a.y - b.y) >= params.min_px_dist:
                return a, b
        raise InsufficientSpread(
            f"cluster {cluster.id}: no {params.min_px_dist} px pair found")

    e1, e2 = pick_pair(idx_lead)
    e4, e5 = pick_pair(idx_trail)
    e3 = cluster.events[int(rng.choice(idx_mid))]
    return [e1, e2, e3, e4, e5]


def _subsample(cluster: EventCluster, params: RansacParams,
               rng: np.random.Generator) -> EventCluster:
    if len(cluster) <= params.max_events_per_cluster:
        return cluster
    idx = np.sort(rng.choice(len(cluster), size=params.max_events_per_cluster,
                             replace=False))
    return EventCluster(id=cluster.id,
                        events=[cluster.events[i] for i in idx],
                        t_s=cluster.t_s, t_e=cluster.t_e)


def inner_ransac(cluster: EventCluster, omega: np.ndarray, v: np.ndarray,
                 params: RansacParams, rng: np.random.Generator,
                 K: CameraIntrinsics) -> tuple[PluckerLine | None, float]:
    """Best-consensus 3D line of one cluster under hypothesized motion.

    Returns (None, 0.0) when no valid model is found within the
    iteration budget.
    """
    sub = _subsample(cluster, params, rng)
    if len(sub) < 4:
        return None, 0.0
    pixels = sub.pixels()
    times = sub.times()
    f_w = compensated_bearings(pixels, times, omega, sub.t_s, K)
    return _inner_ransac_cached(f_w, times, sub.t_s, v, params, rng)


def _inner_ransac_cached(f_w: np.ndarray, times: np.ndarray, t_s: float,
                         v: np.ndarray, params: RansacParams,
                         rng: np.random.Generator
                         ) -> tuple[PluckerLine | None, float]:
    n = len(times)
    rows = measurement_rows(f_w, times, v, t_s)
    best_line = None
    best_p = 0.0
    for _ in range(params.max_inner_iters):
        idx = rng.choice(n, size=4, replace=False)
        try:
            line = solve_line_from_rows(rows[idx], v)
        except LinevelError:
            continue
        eps = line_inlier_errors_cached(line, f_w, times, v, t_s)
        score = np.minimum(eps, 2.0 - eps)
        p = float(np.mean(score < params.inlier_eps))
        if p > best_p:
            best_p = p
            best_line = line
            if p >= params.inner_early_exit_p:
                break
    return best_line, best_p


@dataclass
class _ClusterCache:
    """Per-cluster quantities independent of the velocity hypothesis."""

    cluster: EventCluster
    pixels: np.ndarray
    times: np.ndarray
    h_px: np.ndarray             # homogeneous pixels (N, 3)
    f_w: np.ndarray              # bearings rotated to the slice start
    f_we: np.ndarray             # bearings rotated to the slice end
    lead: np.ndarray
    mid: np.ndarray
    trail: np.ndarray
    l_s: np.ndarray | None       # TLS boundary observations (unit)
    l_e: np.ndarray | None
    U: np.ndarray | None = None  # (t_eval - t_e) R_si^T l_s
    W: np.ndarray | None = None  # (t_eval - t_s) R_ei^T l_e


def _prepare(cluster: EventCluster, params: RansacParams,
             rng: np.random.Generator, K: CameraIntrinsics) -> _ClusterCache:
    sub = _subsample(cluster, params, rng)
    pixels = sub.pixels()
    times = sub.times()
    t_s, t_e = sub.t_s, sub.t_e
    lead, mid, trail = _window_masks(times, t_s, t_e, params.dt_frac)

    def tls(mask) -> np.ndarray | None:
        pts = pixels[mask]
        if len(pts) < 2 or np.ptp(pts, axis=0).max() < params.min_px_dist:
            return None
        l = fit_line_tls(pts, K).l
        return l / np.linalg.norm(l)

    f_w = compensated_bearings(pixels, times, np.zeros(3), t_s, K)
    cache = _ClusterCache(
        cluster=sub, pixels=pixels, times=times,
        h_px=np.column_stack([pixels, np.ones(len(pixels))]),
        f_w=f_w, f_we=f_w, lead=lead, mid=mid, trail=trail,
        l_s=tls(lead), l_e=tls(trail))
    return cache


def _attach_omega(cache: _ClusterCache, omega: np.ndarray,
                  params: RansacParams, K: CameraIntrinsics):
    """Fill the rotation-dependent cache entries for a fixed gyro input.

    Rotations about a common axis commute, so the slice-end compensation
    is the slice-start one composed with a constant rotation.
    """
    t_s, t_e = cache.cluster.t_s, cache.cluster.t_e
    from .geometry import so3_exp
    R_se = so3_exp(omega * (t_s - t_e))   # exp(w (t-t_e)) = exp(w (t-t_s)) R_se
    f = np.column_stack([(cache.pixels[:, 0] - K.cx) / K.fx,
                         (cache.pixels[:, 1] - K.cy) / K.fy,
                         np.ones(len(cache.pixels))])
    R_si = so3_exp_batch(np.outer(cache.times - t_s, omega))
    cache.f_w = np.einsum("nij,nj->ni", R_si, f)
    cache.f_we = np.einsum("ij,nj->ni", R_se, cache.f_w)
    if cache.l_s is None or cache.l_e is None:
        return
    dt = params.dt_frac * (t_e - t_s)
    t_eval = np.clip(cache.times, t_s + dt, t_e - dt)
    t_eval = np.where(cache.times <= t_s + dt, t_s, t_eval)
    t_eval = np.where(cache.times >= t_e - dt, t_e, t_eval)
    R_si_e = so3_exp_batch(np.outer(t_eval - t_s, omega))
    A = np.einsum("nij,i->nj", R_si_e, cache.l_s)
    B = np.einsum("nij,i->nj", R_si_e, R_se.T @ cache.l_e)
    cache.U = (t_eval - t_e)[:, None] * A
    cache.W = (t_eval - t_s)[:, None] * B


def reprojection_distances(pixels: np.ndarray, times: np.ndarray,
                           l_s: np.ndarray, l_e: np.ndarray,
                           omega: np.ndarray, v: np.ndarray,
                           t_s: float, t_e: float, dt_frac: float,
                           K: CameraIntrinsics) -> np.ndarray:
    """Orthogonal pixel distance of each event to the reprojected line.

    The cluster line is parameterized by its boundary observations; its
    image at time t is the constraint-transfer line, held at the boundary
    observation inside the boundary sub-intervals (where those
    observations are sampled from).
    """
    omega = np.asarray(omega, dtype=float)
    v = np.asarray(v, dtype=float)
    dt = dt_frac * (t_e - t_s)
    t_eval = np.clip(times, t_s + dt, t_e - dt)
    t_eval = np.where(times <= t_s + dt, t_s, t_eval)
    t_eval = np.where(times >= t_e - dt, t_e, t_eval)
    R_si = so3_exp_batch(np.outer(t_eval - t_s, omega))
    R_ei = so3_exp_batch(np.outer(t_eval - t_e, omega))
    U = (t_eval - t_e)[:, None] * np.einsum("nij,i->nj", R_si, l_s)
    W = (t_eval - t_s)[:, None] * np.einsum("nij,i->nj", R_ei, l_e)
    lam = (l_e @ v) * U - (l_s @ v) * W
    h = np.column_stack([pixels, np.ones(len(pixels))])
    return _pixel_line_distances(lam, h, K)


def _pixel_line_distances(lam: np.ndarray, h_px: np.ndarray,
                          K: CameraIntrinsics) -> np.ndarray:
    l_px = lam @ K.K_inv    # rows are K^-T lam
    num = np.abs(np.sum(l_px * h_px, axis=1))
    den = np.hypot(l_px[:, 0], l_px[:, 1])
    den = np.where(den < 1e-12, np.inf, den)
    return num / den


def _cached_distances(c: _ClusterCache, v: np.ndarray,
                      K: CameraIntrinsics) -> np.ndarray:
    lam = (c.l_e @ v) * c.U - (c.l_s @ v) * c.W
    return _pixel_line_distances(lam, c.h_px, K)


def _pixel_ratios(caches: list[_ClusterCache], v: np.ndarray,
                  params: RansacParams, K: CameraIntrinsics) -> np.ndarray:
    p = np.zeros(len(caches))
    for j, c in enumerate(caches):
        if c.U is None:
            continue
        d = _cached_distances(c, v, K)
        p[j] = float(np.mean(d < params.reproj_inlier_px))
    return p


def _refit_velocity(caches: list[_ClusterCache], v: np.ndarray,
                    params: RansacParams, K: CameraIntrinsics
                    ) -> np.ndarray | None:
    """Final velocity from constraint rows of all mid-window inliers.

    Row for an event with bearing f at time t:
      (t - t_e)(l_s . R_si f) l_e - (t - t_s)(l_e . R_ei f) l_s
    with the cached rotated bearings.
    """
    rows = []
    for c in caches:
        if c.U is None:
            continue
        d = _cached_distances(c, v, K)
        ok = (d < params.reproj_inlier_px) & c.mid
        if not np.any(ok):
            continue
        t_s, t_e = c.cluster.t_s, c.cluster.t_e
        a = (c.times[ok] - t_e) * (c.f_w[ok] @ c.l_s)
        b = (c.times[ok] - t_s) * (c.f_we[ok] @ c.l_e)
        rows.append(np.outer(a, c.l_e) - np.outer(b, c.l_s))
    if not rows:
        return None
    rows = np.vstack(rows)
    if len(rows) < 2:
        return None
    try:
        v_new = solve_velocity(rows)
    except DegenerateSystem:
        return None
    if v_new @ v < 0:
        v_new = -v_new
    return v_new


def outer_ransac(clusters: list[EventCluster], omega: np.ndarray,
                 params: RansacParams, K: CameraIntrinsics,
                 rng: np.random.Generator | None = None) -> BootstrapResult:
    """Bootstrap the unit translational velocity from event clusters."""
    if len(clusters) < 2:
        raise TooFewClusters(f"{len(clusters)} cluster(s), need >= 2")
    rng = rng or np.random.default_rng(params.rng_seed)
    omega = np.asarray(omega, dtype=float)
    caches = []
    for c in clusters:
        cache = _prepare(c, params, rng, K)
        _attach_omega(cache, omega, params, K)
        caches.append(cache)

    best = None   # (p_mean, v, lines, p_j, inner_p)
    converged = False
    it = 0
    while it < params.max_outer_iters:
        it += 1
        pick = rng.choice(len(caches), size=2, replace=False)
        rows = []
        try:
            for j in pick:
                e1, e2, e3, e4, e5 = sample_constraint_events(
                    caches[j].cluster, params, rng)
                l_s = line_from_two_events(e1, e2, K, params.min_px_dist)
                l_e = line_from_two_events(e4, e5, K, params.min_px_dist)
                rows.append(celc_row(e3, l_s, l_e, omega,
                                     caches[j].cluster.t_s,
                                     caches[j].cluster.t_e, K))
            v = solve_velocity(np.stack(rows))
        except (InsufficientSpread, DegeneratePair, DegenerateSystem):
            continue

        lines = []
        inner_p = np.zeros(len(caches))
        for j, c in enumerate(caches):
            line, p_in = _inner_ransac_cached(c.f_w, c.times, c.cluster.t_s,
                                              v, params, rng)
            lines.append(line)
            inner_p[j] = p_in
        p_j = _pixel_ratios(caches, v, params, K)
        p_mean = float(np.mean(p_j))
        if best is None or p_mean > best[0]:
            best = (p_mean, v, lines, p_j, inner_p)
        if p_mean >= params.p_thres:
            converged = True
            break

    if best is None:
        raise TooFewClusters("no valid hypothesis produced")
    p_mean, v, lines, p_j, inner_p = best

    valid = [L for L in lines if L is not None]
    v_signed = resolve_velocity_sign(valid, v)
    if v_signed @ v < 0:
        lines = [flip_line(L) if L is not None else None for L in lines]
        v = v_signed

    if params.refine:
        v_ref = _refit_velocity(caches, v, params, K)
        if v_ref is not None:
            v = v_ref
            p_j = _pixel_ratios(caches, v, params, K)
            p_mean = float(np.mean(p_j))

    return BootstrapResult(v=v, lines=lines, p_j=p_j, p_mean=p_mean,
                           iterations=it, converged=converged,
                           inner_p=inner_p)
