"""Command-line entry point: ``hero <subcommand>``."""
import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import config as cfgmod
from . import evaluation, scan, simworld, trainer
from .errors import HeroError
from .features import FeatureModel
from .features.checkpoint import load_checkpoint, save_checkpoint

log = logging.getLogger("hero")

ABLATIONS = ("no_masking", "no_mah_gate", "scalar_weight", "no_augmentation")


def _load(path):
    if path is None:
        return cfgmod.apply_env(cfgmod.RunConfig())
    return cfgmod.load_config(path)


def _scan_dir(data):
    sub = os.path.join(data, "scans")
    return sub if os.path.isdir(sub) else data


def _frames(cfg, data, masking=True):
    scans = scan.read_sequence(_scan_dir(data))
    if not scans:
        raise HeroError(f"no scans found in {data}")
    s = cfg.scan
    return trainer.prepare_frames(scans, s.size, s.resolution, s.cell_size, s.beta, s.min_valid_ratio, masking)


def cmd_simulate(args):
    cfg = _load(args.config)
    sim = cfg.sim
    seq = simworld.simulate_sequence(cfg.seed, sim.n_frames, sim.dt, sim.n_landmarks, sim.traj_qc,
                                     sim.initial_speed, sim.initial_yaw_rate, sim.margin, sim.sensor())
    out = os.path.join(args.out, "scans")
    os.makedirs(out, exist_ok=True)
    for k, s in enumerate(seq.scans):
        scan.write_scan(os.path.join(out, f"{k:06d}.bin"), s)
    evaluation.write_groundtruth(os.path.join(args.out, "groundtruth.csv"), seq.groundtruth)
    np.savetxt(os.path.join(args.out, "landmarks.csv"),
               np.column_stack([seq.world.landmarks, seq.world.reflectivity]),
               fmt="%.9e", delimiter=",", header="x,y,reflectivity", comments="")
    cfgmod.write_config(os.path.join(args.out, "config.json"), cfg)
    print(json.dumps({"frames": len(seq.scans), "out": args.out,
                      "path_length": float(evaluation.path_lengths(seq.groundtruth.poses)[-1])}))
    return 0


def cmd_project(args):
    s = scan.read_scan(args.scan)
    img = scan.polar_to_cartesian(s, args.size, args.resolution, args.beta)
    prefix = args.out or os.path.splitext(args.scan)[0]
    scan.write_pgm(prefix + ".pgm", img.pixels)
    scan.write_pgm(prefix + "_mask.pgm", img.mask.astype(np.float64))
    print(json.dumps({"image": prefix + ".pgm", "mask": prefix + "_mask.pgm",
                      "valid_pixels": int(img.mask.sum())}))
    return 0


def _train(cfg, frames, out, log_path=None, steps=None):
    tc = cfg.train_config()
    if steps is not None:
        tc.max_iterations = steps
    model = FeatureModel(cfg.architecture(), seed=cfg.seed)
    t0 = time.perf_counter()

    def progress(step, m):
        if step % 50 == 0:
            log.info("step %d loss %.4g inliers %d/%d", step, m.loss, m.inliers, m.total)

    hist = trainer.train(model, frames, tc, log_path, out, progress)
    skipped = sum(h.skipped for h in hist)
    return model, {"steps": len(hist), "skipped": skipped, "seconds": time.perf_counter() - t0}


def cmd_train(args):
    cfg = _load(args.config)
    frames = _frames(cfg, args.data, masking=not cfg.train.no_masking)
    _, info = _train(cfg, frames, args.out, args.log, args.steps)
    info["checkpoint"] = args.out
    print(json.dumps(info))
    return 0


def cmd_odometry(args):
    cfg = _load(args.config)
    model = load_checkpoint(args.model) if args.model else FeatureModel(cfg.architecture(), seed=cfg.seed)
    frames = _frames(cfg, args.data, masking=not cfg.train.no_masking)
    traj = trainer.run_odometry(model, frames, cfg.train_config())
    evaluation.write_trajectory(args.out, traj)
    print(json.dumps({"frames": len(traj), "dead_reckoned": int(traj.flags.sum()), "out": args.out}))
    return 0


def _write_per_length_csv(path, report):
    with open(path, "w") as fh:
        fh.write("length,translational_error,rotational_error,count\n")
        for L, (t, r, n) in report.per_length.items():
            fh.write(f"{L},{t:.9e},{r:.9e},{n}\n")


def cmd_evaluate(args):
    est = evaluation.read_trajectory(args.est)
    gt, _ = evaluation.read_groundtruth(args.gt)
    lengths = evaluation.parse_lengths(args.lengths) if args.lengths else evaluation.KITTI_LENGTHS
    report = evaluation.kitti_drift(est, gt, lengths)
    if args.csv:
        _write_per_length_csv(args.csv, report)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_ablate(args):
    base = _load(args.config)
    variants = ["baseline"] + list(args.variants or ABLATIONS)
    gt, _ = evaluation.read_groundtruth(os.path.join(args.data, "groundtruth.csv"))
    os.makedirs(args.out, exist_ok=True)
    results = {}
    for name in variants:
        cfg = cfgmod.from_dict(cfgmod.to_dict(base))
        if name != "baseline":
            if name not in ABLATIONS:
                raise HeroError(f"unknown ablation {name!r}")
            setattr(cfg.train, name, True)
        frames = _frames(cfg, args.data, masking=not cfg.train.no_masking)
        ckpt = os.path.join(args.out, f"{name}.herm")
        model, info = _train(cfg, frames, ckpt, os.path.join(args.out, f"{name}_train.csv"), args.steps)
        traj = trainer.run_odometry(model, frames, cfg.train_config())
        evaluation.write_trajectory(os.path.join(args.out, f"{name}_est.txt"), traj)
        report = evaluation.kitti_drift(traj, gt, cfg.eval.lengths)
        results[name] = {**report.to_dict(), **info}
        log.info("%s: %.3f %%", name, report.translational_error)
    with open(os.path.join(args.out, "ablation.json"), "w") as fh:
        json.dump(results, fh, indent=2)
    print(json.dumps({k: {"translational_error": v["translational_error"],
                          "rotational_error": v["rotational_error"]} for k, v in results.items()}, indent=2))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="hero", description="Unsupervised radar odometry toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render a synthetic scan sequence")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("project", help="polar scan to Cartesian PGM image plus mask")
    s.add_argument("scan")
    s.add_argument("--size", type=int, default=640)
    s.add_argument("--resolution", type=float, default=0.2592)
    s.add_argument("--beta", type=float, default=3.0)
    s.add_argument("--out", help="output prefix (default: next to the scan)")
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("train", help="unsupervised training on a scan sequence")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", help="CSV training log")
    s.add_argument("--steps", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("odometry", help="run sliding-window odometry")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--model", help="checkpoint (default: untrained network)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_odometry)

    s = sub.add_parser("evaluate", help="KITTI-style drift of a trajectory")
    s.add_argument("--est", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--lengths", help="start:stop:step or comma list (m)")
    s.add_argument("--csv", help="per-length CSV output")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("ablate", help="train and evaluate ablation variants")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--variants", nargs="*", choices=ABLATIONS)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (HeroError, OSError, ValueError) as exc:
        print(f"hero {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
