"""Command-line orchestration: scene synthesis through evaluation.

Subcommands: make-scene, partition, train, synthesize, eval, raycast-build.
Exit codes: 0 ok, 2 config/input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import inference, io, metrics, partition, raycast, scene, trainer
from .config import RunConfig, load_config
from .errors import (
    CheckpointError,
    ConfigError,
    LidarFieldError,
    MetricError,
    PoseFormatError,
    ScanFormatError,
    SceneFormatError,
    TrainingError,
)

METHODS = {
    "pcnerf-two-step": inference.TWO_STEP,
    "pcnerf-one-step": inference.ONE_STEP,
    "raycast": "raycast",
}


def _scan_paths(cfg: RunConfig) -> list[Path]:
    if cfg.scans_dir is None:
        raise ConfigError("config does not name a scans_dir")
    if not cfg.scans_dir.is_dir():
        raise ConfigError(f"scan directory {cfg.scans_dir} does not exist")
    paths = sorted(cfg.scans_dir.glob("*.bin"))
    if not paths:
        raise ConfigError(f"scan directory {cfg.scans_dir} holds no .bin scans")
    return paths


def _load_frames(cfg: RunConfig):
    """Sensor-frame clouds (range-filtered) plus aligned poses."""
    paths = _scan_paths(cfg)
    if cfg.poses_path is None or not cfg.poses_path.exists():
        raise ConfigError(f"pose file {cfg.poses_path} does not exist")
    poses = io.read_poses(cfg.poses_path)
    if len(poses) != len(paths):
        raise ConfigError(f"{len(paths)} scans but {len(poses)} poses")
    clouds = []
    for i, path in enumerate(paths):
        cloud = io.read_scan(path, frame_id=i)
        if cfg.r_max > 0:
            cloud = io.range_filter(cloud, np.zeros(3), cfg.r_max)
        clouds.append(cloud)
    return clouds, poses


def _world_clouds(clouds, poses):
    return [io.to_world(c, p) for c, p in zip(clouds, poses)]


def _hierarchy_path(cfg: RunConfig) -> Path:
    return cfg.output / "hierarchy.txt"


def _ckpt_path(cfg: RunConfig, block: int) -> Path:
    return cfg.output / f"block_{block:03d}.ckpt"


def _block_for_pose(blocks, pose) -> int:
    """Deterministic block choice: first containing box, else nearest center."""
    origin = pose.translation
    for i, block in enumerate(blocks):
        if bool(block.box.contains(origin[None, :])[0]):
            return i
    centers = np.stack([b.box.center for b in blocks])
    return int(np.argmin(np.linalg.norm(centers - origin, axis=1)))


def _train_config(cfg: RunConfig) -> trainer.TrainConfig:
    return trainer.TrainConfig(
        epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size,
        seed=cfg.train.seed,
        base_lr=cfg.train.base_lr,
        sampling=cfg.sampling,
        loss_weights=cfg.loss_weights,
        field=cfg.field,
        dtype=cfg.train.dtype,
    )


def cmd_make_scene(cfg: RunConfig) -> int:
    if cfg.scene_path is None or not cfg.scene_path.exists():
        raise ConfigError(f"scene file {cfg.scene_path} does not exist")
    if cfg.scans_dir is None or cfg.poses_path is None:
        raise ConfigError("make-scene needs scans_dir and poses outputs in [data]")
    scn = scene.read_scene(cfg.scene_path)
    scans, poses = scene.simulate_scans(scn, cfg.scene_gen.pattern(), cfg.scene_gen.frames)
    cfg.scans_dir.mkdir(parents=True, exist_ok=True)
    cfg.poses_path.parent.mkdir(parents=True, exist_ok=True)
    for i, records in enumerate(scans):
        io.write_scan(cfg.scans_dir / f"{i:06d}.bin", records)
    with open(cfg.poses_path, "w") as f:
        for pose in poses:
            f.write(io.format_pose(pose) + "\n")
    total = sum(s.shape[0] for s in scans)
    print(f"wrote {len(scans)} scans ({total} returns) to {cfg.scans_dir} and {cfg.poses_path}")
    return 0


def cmd_partition(cfg: RunConfig) -> int:
    clouds, poses = _load_frames(cfg)
    split = io.split_frames(len(clouds), cfg.sparsity)
    world = _world_clouds(clouds, poses)
    train_clouds = [world[i] for i in split.train_ids]
    train_poses = [poses[i] for i in split.train_ids]
    blocks = partition.partition_frames(train_clouds, train_poses, cfg.partition)
    # frame ids inside blocks index the train subset; map back to dataset ids
    for block in blocks:
        block.frame_ids = [split.train_ids[i] for i in block.frame_ids]
    cfg.output.mkdir(parents=True, exist_ok=True)
    partition.write_hierarchy(_hierarchy_path(cfg), blocks)
    n_ground = sum(1 for b in blocks for c in b.children if c.kind == "ground")
    n_object = sum(1 for b in blocks for c in b.children if c.kind == "object")
    print(
        f"wrote {_hierarchy_path(cfg)}: {len(blocks)} parent blocks, "
        f"{n_ground + n_object} children ({n_ground} ground, {n_object} object)"
    )
    return 0


def cmd_train(cfg: RunConfig, resume: bool = False) -> int:
    hpath = _hierarchy_path(cfg)
    if not hpath.exists():
        raise ConfigError(f"partition sidecar {hpath} does not exist (run partition first)")
    blocks = partition.load_hierarchy(hpath)
    clouds, poses = _load_frames(cfg)
    world = _world_clouds(clouds, poses)
    tcfg = _train_config(cfg)
    for bi, block in enumerate(blocks):
        frames = [(world[i], poses[i]) for i in block.frame_ids]
        rays = partition.assign_rays(frames, block)
        init = None
        done = 0
        ckpt = _ckpt_path(cfg, bi)
        log_lines: list[str] = []
        if resume and ckpt.exists():
            model, state, done = trainer.load_checkpoint(ckpt)
            init = (model, state, done)
            log_path = cfg.output / f"train_block_{bi:03d}.log"
            if log_path.exists():
                log_lines = log_path.read_text().splitlines()
        if done >= tcfg.epochs:
            print(f"block {bi}: checkpoint already at epoch {done}, nothing to do")
            continue
        model, state, log = trainer.train(block, rays, tcfg, init=init, log_lines=log_lines)
        trainer.save_checkpoint(ckpt, model, state, tcfg.epochs)
        (cfg.output / f"train_block_{bi:03d}.log").write_text("\n".join(log) + "\n")
        last = log[-1].split("\t")
        print(
            f"block {bi}: {len(rays)} rays, {tcfg.epochs} epochs -> {ckpt} "
            f"(final loss {last[3]})"
        )
    return 0


def cmd_raycast_build(cfg: RunConfig) -> int:
    clouds, poses = _load_frames(cfg)
    split = io.split_frames(len(clouds), cfg.sparsity)
    world = _world_clouds(clouds, poses)
    vmap = raycast.build_voxel_map([world[i] for i in split.train_ids], cfg.baseline.voxel)
    cfg.output.mkdir(parents=True, exist_ok=True)
    out = cfg.output / "voxel_map.bin"
    raycast.save_voxel_map(out, vmap)
    print(f"wrote {out}: {vmap.n_occupied} occupied cells at {vmap.voxel} m")
    return 0


def _predict_test_frame(cfg, method, frame_id, pose, dirs_sensor, blocks, models):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.train.seed, 7000 + frame_id]))
    if method == "raycast":
        vmap_path = cfg.output / "voxel_map.bin"
        if not vmap_path.exists():
            raise ConfigError(f"voxel map {vmap_path} does not exist (run raycast-build first)")
        vmap = models.setdefault("raycast", raycast.load_voxel_map(vmap_path))
        dirs_world = dirs_sensor @ pose.rotation.T
        origins = np.broadcast_to(pose.translation, dirs_world.shape)
        return raycast.cast_rays_batch(vmap, origins, dirs_world, cfg.baseline.t_max)
    bi = _block_for_pose(blocks, pose)
    if bi not in models:
        ckpt = _ckpt_path(cfg, bi)
        if not ckpt.exists():
            raise ConfigError(f"checkpoint {ckpt} does not exist (run train first)")
        models[bi] = trainer.load_checkpoint(ckpt)[0]
    model = models[bi]
    depths, _ = inference.predict_frame(
        model,
        pose,
        dirs_sensor,
        blocks[bi].children,
        blocks[bi].box,
        cfg.sampling,
        cfg.inference,
        rng,
        method=method,
    )
    return depths


def _run_views(cfg: RunConfig, method_name: str, with_metrics: bool) -> int:
    if method_name not in METHODS:
        raise ConfigError(f"unknown method {method_name!r} (choose from {sorted(METHODS)})")
    method = METHODS[method_name]
    clouds, poses = _load_frames(cfg)
    split = io.split_frames(len(clouds), cfg.sparsity)
    blocks = []
    if method != "raycast":
        hpath = _hierarchy_path(cfg)
        if not hpath.exists():
            raise ConfigError(f"partition sidecar {hpath} does not exist (run partition first)")
        blocks = partition.load_hierarchy(hpath)

    out_dir = cfg.output / f"synth_{method_name}"
    out_dir.mkdir(parents=True, exist_ok=True)
    models: dict = {}
    reports = []
    synth_clouds, real_clouds = [], []
    for frame_id in split.test_ids:
        cloud, pose = clouds[frame_id], poses[frame_id]
        truth = np.linalg.norm(cloud.points, axis=1)
        keep = truth > 1e-9
        truth = truth[keep]
        dirs_sensor = cloud.points[keep] / truth[:, None]
        depths = _predict_test_frame(cfg, method, frame_id, pose, dirs_sensor, blocks, models)

        dirs_world = dirs_sensor @ pose.rotation.T
        valid = np.isfinite(depths)
        pts = pose.translation + depths[valid, None] * dirs_world[valid]
        synth = io.PointCloud(pts, frame_id)
        real = io.to_world(io.PointCloud(cloud.points[keep], frame_id), pose)
        io.write_ply(out_dir / f"frame_{frame_id:06d}.ply", synth.points)
        (out_dir / f"frame_{frame_id:06d}.stats.txt").write_text(
            f"valid {int(valid.sum())} invalid {int((~valid).sum())}\n"
        )
        if with_metrics:
            reports.append(metrics.frame_report(frame_id, depths, truth, synth, real))
            synth_clouds.append(synth.points)
            real_clouds.append(real.points)

    if not with_metrics:
        print(f"wrote {len(split.test_ids)} synthesized views to {out_dir}")
        return 0

    map_report = metrics.map_metrics(np.concatenate(synth_clouds), np.concatenate(real_clouds))
    metrics.write_metrics_csv(cfg.output / f"metrics_{method_name}.csv", reports)
    metrics.write_map_csv(cfg.output / f"map_metrics_{method_name}.csv", map_report)
    print(f"method: {method_name}")
    print(metrics.format_table(reports, map_report))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lidarfield", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("make-scene", "partition", "train", "synthesize", "eval", "raycast-build"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="path to the run config file")
        sp.add_argument("--seed", type=int, default=None, help="override [train] seed")
        sp.add_argument("--output", default=None, help="override [data] output directory")
        sp.add_argument("--sparsity", type=float, default=None, help="override [split] sparsity")
        if name in ("synthesize", "eval"):
            sp.add_argument(
                "--method",
                default="pcnerf-two-step",
                help="pcnerf-two-step | pcnerf-one-step | raycast",
            )
        if name == "train":
            sp.add_argument("--resume", action="store_true", help="continue from a checkpoint")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
        if args.output is not None:
            cfg.output = Path(args.output)
        if args.sparsity is not None:
            cfg.sparsity = args.sparsity
            if not 0.0 < cfg.sparsity < 1.0:
                raise ConfigError(f"sparsity {cfg.sparsity} must lie in (0, 1)")

        if args.command == "make-scene":
            return cmd_make_scene(cfg)
        if args.command == "partition":
            return cmd_partition(cfg)
        if args.command == "train":
            return cmd_train(cfg, resume=args.resume)
        if args.command == "raycast-build":
            return cmd_raycast_build(cfg)
        if args.command == "synthesize":
            return _run_views(cfg, args.method, with_metrics=False)
        if args.command == "eval":
            return _run_views(cfg, args.method, with_metrics=True)
        raise ConfigError(f"unknown command {args.command}")
    except (
        ConfigError,
        SceneFormatError,
        ScanFormatError,
        PoseFormatError,
        CheckpointError,
        FileNotFoundError,
        NotADirectoryError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, MetricError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
