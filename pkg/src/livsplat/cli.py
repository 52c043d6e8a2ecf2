"""Command-line interface: dataset simulation, batch replay, evaluation, and
offline rendering.

Exit codes: 2 for a malformed dataset, 3 for a configuration error.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click
import numpy as np
import yaml

from .config import Config, load_config
from .dataset import DatasetError, quat_xyzw_to_rotation, read_tum
from .errors import ConfigError
from .geometry import PinholeCamera, SE3
from .metrics import ate
from .raster import GaussianArrays, write_ppm
from .voxmap import HashOctree


def _load_config(config_path, profile) -> Config:
    try:
        return load_config(config_path, profile)
    except (ConfigError, OSError, yaml.YAMLError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(3)


@click.group()
def main():
    """Gaussian-splat LiDAR-inertial-visual odometry toolkit."""


@main.command("run")
@click.option("--dataset", "dataset_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--profile", type=str, default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="override config seed")
def cmd_run(dataset_dir, config_path, profile, out_dir, seed):
    """Replay a dataset through the odometry pipeline."""
    from . import pipeline

    cfg = _load_config(config_path, profile)
    if seed is not None:
        cfg.seed = seed

    def progress(i, n, rec):
        if i % 10 == 0:
            click.echo(
                f"frame {i + 1}/{n}: live={rec.n_live} loss={rec.loss:.4f} "
                f"psnr={rec.psnr:.1f} total={rec.t_total_ms:.0f}ms"
            )

    try:
        summary = pipeline.run(dataset_dir, out_dir, cfg, progress=progress)
    except DatasetError as exc:
        click.echo(f"dataset error: {exc}", err=True)
        sys.exit(2)
    click.echo(
        f"done: {summary['frames']} frames, map holds {summary['gaussians']} "
        f"gaussians, window live {summary['n_live']}"
    )


def _scene_from_yaml(path):
    from .sim import Checker, GradientTex, NoiseTex, SceneSpec, default_room

    if path in (None, "room"):
        return default_room()
    with open(path) as f:
        data = yaml.safe_load(f)
    scene = SceneSpec(scale=float(data.get("scale", 4.0)))
    textures = {"checker": Checker, "gradient": GradientTex, "noise": NoiseTex}
    for box in data.get("boxes", []):
        tex_info = dict(box.get("texture", {"type": "checker"}))
        tex_cls = textures[tex_info.pop("type")]
        scene.add_box(box["center"], box["half"], tex_cls(**tex_info),
                      inward=bool(box.get("inward", False)))
    return scene


def _traj_from_yaml(path, sim_cfg):
    from .sim import TrajectorySpec

    if path in (None, "orbit"):
        times = np.linspace(0.0, 12.0, 13)
        ang = np.linspace(0, 1.5 * np.pi, 13)
        pos = np.column_stack([1.0 * np.cos(ang), 1.0 * np.sin(ang), np.full(13, 1.0)])
        return TrajectorySpec(times, pos, ang + np.pi / 2,
                              imu_rate=sim_cfg.imu_rate, frame_rate=sim_cfg.frame_rate)
    with open(path) as f:
        data = yaml.safe_load(f)
    return TrajectorySpec(
        np.asarray(data["times"], dtype=float),
        np.asarray(data["positions"], dtype=float),
        np.asarray(data["yaw"], dtype=float),
        pitch=np.asarray(data["pitch"], dtype=float) if "pitch" in data else None,
        roll=np.asarray(data["roll"], dtype=float) if "roll" in data else None,
        bc=data.get("bc", "clamped"),
        imu_rate=sim_cfg.imu_rate,
        frame_rate=sim_cfg.frame_rate,
    )


@main.command("simulate")
@click.option("--scene", "scene_path", default="room",
              help="scene YAML path or the builtin name 'room'")
@click.option("--traj", "traj_path", default="orbit",
              help="trajectory YAML path or the builtin name 'orbit'")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--profile", type=str, default=None)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=0)
def cmd_simulate(scene_path, traj_path, config_path, profile, out_dir, seed):
    """Generate a synthetic dataset from scene and trajectory specs."""
    from .sim import ScanPattern, export_dataset

    cfg = _load_config(config_path, profile)
    sim = cfg.sim
    cam = PinholeCamera(sim.fx, sim.fy, sim.cx, sim.cy, sim.width, sim.height)
    T_ic = SE3(np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]),
               [0.05, 0.0, 0.0])
    T_li = SE3(np.eye(3), [0.03, 0.0, 0.05])
    scene = _scene_from_yaml(scene_path)
    traj = _traj_from_yaml(traj_path, sim)
    manifest = export_dataset(
        out_dir, scene, traj, cam, T_li, T_ic,
        pattern=ScanPattern(
            n_azimuth=sim.lidar_azimuth, n_elevation=sim.lidar_elevation,
            azimuth_span=sim.lidar_azimuth_span, elevation_span=sim.lidar_elevation_span,
        ),
        v_s=cfg.map.root_len, max_level=cfg.map.max_level,
        kappa=cfg.init.kappa, delta=cfg.init.delta, opacity=cfg.init.opacity,
        seed=seed, gyro_noise=sim.gyro_noise, accel_noise=sim.accel_noise,
        range_noise=sim.range_noise, settings=cfg.raster_settings(),
    )
    click.echo(
        f"wrote {manifest['frames']} frames, {manifest['gaussians']} ground-truth "
        f"gaussians, {manifest['imu_samples']} imu samples to {out_dir}"
    )


@main.command("eval")
@click.option("--gt", "gt_path", required=True, type=click.Path())
@click.option("--est", "est_path", required=True, type=click.Path())
@click.option("--align", type=click.Choice(["none", "se3"]), default="none")
@click.option("--tol", type=float, default=0.01, help="association tolerance (s)")
def cmd_eval(gt_path, est_path, align, tol):
    """Translational ATE between a ground-truth and an estimated trajectory."""
    try:
        gt_stamps, gt_poses = read_tum(gt_path)
        est_stamps, est_poses = read_tum(est_path)
        result = ate(gt_stamps, gt_poses, est_stamps, est_poses, align=align, tol=tol)
    except (DatasetError, ValueError, OSError) as exc:
        click.echo(f"eval error: {exc}", err=True)
        sys.exit(2)
    click.echo(
        f"ATE over {result.matched} pairs (align={align}): "
        f"rmse={result.rmse:.6f} m mean={result.mean:.6f} m max={result.max:.6f} m"
    )


@main.command("render")
@click.option("--map", "map_path", required=True, type=click.Path())
@click.option("--pose", required=True,
              help="camera pose T_WC as 'tx ty tz qx qy qz qw'")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--profile", type=str, default=None)
def cmd_render(map_path, pose, out_path, config_path, profile):
    """Offline novel-view render from a saved map snapshot."""
    from .raster import render

    cfg = _load_config(config_path, profile)
    sim = cfg.sim
    cam = PinholeCamera(sim.fx, sim.fy, sim.cx, sim.cy, sim.width, sim.height)
    try:
        vals = [float(v) for v in pose.replace(",", " ").split()]
        if len(vals) != 7:
            raise ValueError("expected 7 numbers")
    except ValueError as exc:
        click.echo(f"bad --pose: {exc}", err=True)
        sys.exit(2)
    T_wc = SE3(quat_xyzw_to_rotation(vals[3:]), np.array(vals[:3]))
    try:
        vmap = HashOctree.load(map_path)
    except (OSError, ValueError) as exc:
        click.echo(f"cannot load map: {exc}", err=True)
        sys.exit(2)
    gaussians = [g for _, node in vmap.iter_leaves() for g in node.gaussians]
    arrays = GaussianArrays.from_gaussians(gaussians)
    out = render(arrays, T_wc, cam, cfg.raster_settings(), retain_cache=False)
    write_ppm(out_path, out.image)
    click.echo(f"rendered {len(gaussians)} gaussians to {out_path}")


if __name__ == "__main__":
    main()
