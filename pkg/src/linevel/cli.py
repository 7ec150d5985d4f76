"""Command-line entry points: simulate, bootstrap, estimate, sweep, eval."""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

from . import backend as be
from . import harness as hz
from .geometry import quat_from_matrix, quat_to_matrix
from .inertial import mean_gyro
from .robust import outer_ransac
from .simulator import (generate_events, generate_trajectory_dataset,
                        pose_at, sample_scene)


def _load_cfg(args) -> hz.ExperimentConfig:
    if args.config:
        cfg = hz.load_experiment_config(args.config)
    else:
        cfg = hz.ExperimentConfig()
    if args.seed is not None:
        cfg.base_seed = args.seed
    return cfg


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.base_seed)
    scene = sample_scene(cfg.scene, rng)
    hz.write_calib_json(out / "calib.json", cfg.intrinsics)
    if cfg.motion.mode == "trajectory":
        data = generate_trajectory_dataset(scene, cfg.motion, cfg.noise,
                                           cfg.rates, rng, K=cfg.intrinsics)
        hz.write_events_csv(out / "events.csv", data.clusters)
        hz.write_imu_csv(out / "imu.csv", data.imu)
        hz.write_groundtruth_csv(out / "groundtruth.csv", data.gt_times,
                                 data.gt_v_w, data.gt_q, data.gt_b_a,
                                 data.gt_b_g)
    else:
        data = generate_events(scene, cfg.motion, cfg.noise,
                               cfg.n_events_per_line, cfg.intrinsics, rng,
                               dwell_frac=cfg.ransac.dt_frac)
        hz.write_events_csv(out / "events.csv", data.clusters)
        times = np.linspace(data.t_s, data.t_e, 51)
        v_w = np.tile(data.v, (len(times), 1))
        qs = np.stack([quat_from_matrix(pose_at(data.omega, data.v, t,
                                                data.t_s)[0])
                       for t in times])
        zeros = np.zeros((len(times), 3))
        hz.write_groundtruth_csv(out / "groundtruth.csv", times, v_w, qs,
                                 zeros, zeros)
        with open(out / "motion.json", "w", encoding="utf-8") as f:
            json.dump({"omega": data.omega.tolist(), "v": data.v.tolist(),
                       "t_s": data.t_s, "t_e": data.t_e}, f, indent=2,
                      sort_keys=True)
            f.write("\n")
    print(f"dataset written to {out}")
    return 0


def cmd_bootstrap(args) -> int:
    cfg = _load_cfg(args)
    K = hz.read_calib_json(args.calib) if args.calib else cfg.intrinsics
    clusters = hz.read_events_csv(args.events)
    t_s = min(c.t_s for c in clusters)
    t_e = max(c.t_e for c in clusters)
    for c in clusters:
        c.t_s, c.t_e = t_s, t_e
    if args.omega:
        omega = np.array([float(v) for v in args.omega.split(",")])
    elif args.imu:
        omega = mean_gyro(hz.read_imu_csv(args.imu), t_s, t_e)
    else:
        raise SystemExit("bootstrap needs --omega or --imu")
    rng = np.random.default_rng(cfg.base_seed)
    res = outer_ransac(clusters, omega, cfg.ransac, K, rng)
    report = {"v": res.v.tolist(), "p_j": res.p_j.tolist(),
              "p_mean": res.p_mean, "iterations": res.iterations,
              "converged": res.converged, "flags": res.flags}
    out = Path(args.out) if args.out else None
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "bootstrap.json").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def cmd_estimate(args) -> int:
    cfg = _load_cfg(args)
    K = hz.read_calib_json(args.calib) if args.calib else cfg.intrinsics
    clusters = hz.read_events_csv(args.events)
    imu = hz.read_imu_csv(args.imu)
    rng = np.random.default_rng(cfg.base_seed)
    result = hz.run_pipeline(clusters, imu, K, cfg.window, cfg.ransac,
                             rng=rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    hz.write_velocity_csv(out / "velocity.csv", result.times,
                          result.v_world, result.v_body)
    print(f"velocity estimates written to {out / 'velocity.csv'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_cfg(args)
    report = hz.run_experiment(cfg, args.out)
    n = len(report.per_trial)
    print(f"{cfg.kind}: {n} trials written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    est = hz.read_velocity_csv(args.estimate)
    gt = hz.read_groundtruth_csv(args.groundtruth)
    eps, phis, thetas = [], [], []
    for i, t in enumerate(est["t"]):
        j = int(np.argmin(np.abs(gt["t"] - t)))
        R = quat_to_matrix(gt["q"][j])
        v_gt_body = R.T @ gt["v_w"][j]
        eps.append(hz.metric_epsilon(v_gt_body, est["v_b"][i]))
        phis.append(hz.metric_phi(v_gt_body, est["v_b"][i]))
        thetas.append(hz.metric_theta(v_gt_body, est["v_b"][i]))
    report = {"epsilon": hz.aggregate(eps), "phi": hz.aggregate(phis),
              "theta": hz.aggregate(thetas)}
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="linevel",
        description="Event-camera velocity estimation from line clusters "
                    "and inertial measurements")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--format", choices=("csv", "json"), default="csv")

    sp = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("bootstrap", help="closed-form velocity on one slice")
    common(sp)
    sp.add_argument("--events", required=True)
    sp.add_argument("--calib")
    sp.add_argument("--imu")
    sp.add_argument("--omega", help="wx,wy,wz rad/s")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_bootstrap)

    sp = sub.add_parser("estimate", help="full sliding-window pipeline")
    common(sp)
    sp.add_argument("--events", required=True)
    sp.add_argument("--imu", required=True)
    sp.add_argument("--calib")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("sweep", help="parameter sweep experiments")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("eval", help="metrics from estimates + ground truth")
    common(sp)
    sp.add_argument("--estimate", required=True)
    sp.add_argument("--groundtruth", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
