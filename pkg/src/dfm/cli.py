"""Command-line front end.

Exit status: 0 on success, 2 for bad input (unreadable or malformed files,
violated preconditions), 3 for numerical failures (degenerate geometry,
divergence).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .augmentation import AugmentationSpec, CanonicalWarp, augment_intrinsics
from .closed_form import general_two_view_depth
from .config import Config, DepthConfig
from .errors import DfmError, InputError, NumericalError
from .fileio import (
    read_calibration,
    read_correspondences,
    read_gray,
    read_pfm,
    read_pnm,
    read_poses,
    load_distribution,
    save_distribution,
    write_correspondences,
    write_json,
    write_pfm,
    write_pnm,
    write_poses,
    write_voxel_grid,
)
from .fusion import depth_ce_loss, fuse, ground_plane_depth, mono_prior_distribution, stereo_confidence
from .geometry import Intrinsics, RigidMotion
from .metrics import depth_error_metrics
from .plane_sweep import COST_KINDS, compute_cost_volume, cost_to_distribution, distribution_to_depth
from .pose import optimize_pose, synthesize_view
from .synth import Scene, kitti_camera, relative_motion, render, sample_correspondences
from .voxel import BEV_MODES, VoxelSpec, collapse_bev, sample_voxels

log = logging.getLogger("dfm")


def _camera(args) -> Intrinsics:
    return read_calibration(args.calib, args.camera).intrinsics


def _motion(path) -> RigidMotion:
    poses = read_poses(path)
    if not poses:
        raise InputError(f"{path}: no pose line")
    return poses[0]


def _mask(path, shape) -> np.ndarray | None:
    if path is None:
        return None
    m = read_pnm(path, raw=True)
    if m.ndim == 3:
        m = m[..., 0]
    if m.shape != shape:
        raise InputError(f"{path}: mask {m.shape} vs depth {shape}")
    return m


def _aug(text, size) -> AugmentationSpec | None:
    """Augmentation from inline JSON or a JSON file; None when absent."""
    if text is None:
        return None
    p = Path(text)
    try:
        spec = AugmentationSpec.from_json(p.read_text() if p.is_file() else text)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"bad augmentation spec {text!r}: {exc}") from None
    if spec.crop_size != size:
        raise InputError(f"augmentation output {spec.crop_size} does not match image {size}")
    return spec


def _depth_config(args, cfg: Config) -> DepthConfig:
    over = {
        "levels": getattr(args, "levels", None),
        "d_min": getattr(args, "dmin", None),
        "d_max": getattr(args, "dmax", None),
        "cost": getattr(args, "cost", None),
        "temperature": getattr(args, "temp", None),
        "mode": getattr(args, "mode", None),
    }
    return dataclasses.replace(cfg.depth, **{k: v for k, v in over.items() if v is not None})


def _sweep(args, cfg: Config):
    img_t = read_gray(args.img_t)
    img_prev = read_gray(args.img_prev)
    cam = _camera(args)
    dcfg = _depth_config(args, cfg)
    levels = dcfg.depth_levels()
    motion = _motion(args.pose)
    aug_t = _aug(getattr(args, "aug_t", None), img_t.shape)
    aug_prev = _aug(getattr(args, "aug_prev", None), img_prev.shape)
    warp = None
    if aug_t or aug_prev:
        # inputs are already augmented; the canonical camera comes from the calibration
        aug_t = aug_t or AugmentationSpec.identity(img_t.shape)
        aug_prev = aug_prev or AugmentationSpec.identity(img_prev.shape)
        warp = CanonicalWarp(cam, motion, aug_t, aug_prev)
        cam = augment_intrinsics(cam, aug_t)
    vol = compute_cost_volume(
        img_t, img_prev, cam, motion, levels, dcfg.cost, patch=dcfg.patch, warp=warp, threads=cfg.threads
    )
    return img_t, cam, vol, cost_to_distribution(vol, dcfg.temperature), dcfg


def cmd_synth(args, cfg: Config) -> int:
    scene_data = json.loads(Path(args.scene).read_text())
    scene = Scene.from_dict(scene_data)
    if args.calib:
        cam = _camera(args)
    elif "camera" in scene_data:
        c = scene_data["camera"]
        cam = Intrinsics(c["fx"], c["fy"], c["cu"], c["cv"])
    else:
        cam = kitti_camera()
    size = tuple(args.size or scene_data.get("size", (375, 1242)))
    poses = read_poses(args.poses)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "calib.txt").write_text(
        f"P2: {cam.fx!r} 0.0 {cam.cu!r} 0.0 0.0 {cam.fy!r} {cam.cv!r} 0.0 0.0 0.0 1.0 0.0\n"
    )
    write_poses(out / "poses.txt", poses)
    for i, pose in enumerate(poses):
        img, depth = render(scene, cam, pose, size, supersample=args.supersample)
        write_pnm(out / f"frame_{i:03d}.pgm", img)
        write_pfm(out / f"depth_{i:03d}.pfm", depth)
        if i == 0:
            continue
        # motion taking frame-i camera coordinates into frame i-1
        write_poses(out / f"motion_{i:03d}.txt", [relative_motion(pose, poses[i - 1])])
        if args.correspondences:
            corrs, da, db = sample_correspondences(
                scene, cam, pose, poses[i - 1], args.correspondences, size, seed=args.seed + i
            )
            write_correspondences(out / f"corr_{i:03d}.csv", corrs, da, db)
    log.info("rendered %d frames into %s", len(poses), out)
    return 0


def cmd_depth(args, cfg: Config) -> int:
    _, _, vol, dist, dcfg = _sweep(args, cfg)
    depth = distribution_to_depth(dist, dcfg.mode)
    write_pfm(args.out, depth)
    if args.dist:
        save_distribution(args.dist, dist)
    meta = {
        "levels": vol.levels.to_dict(),
        "cost_kind": vol.cost_kind,
        "patch": dcfg.patch,
        "temperature": dcfg.temperature,
        "mode": dcfg.mode,
        "mask_fraction": vol.mask_fraction,
        "valid_fraction": float(np.isfinite(depth).mean()),
    }
    write_json(args.meta or Path(args.out).with_suffix(".json"), meta)
    log.info("valid pixels: %.1f%%", 100.0 * np.isfinite(depth).mean())
    return 0


def cmd_depth_closed_form(args, cfg: Config) -> int:
    cam = _camera(args)
    T = _motion(args.pose)
    corrs, _, _ = read_correspondences(args.corr)
    rows = []
    failures = 0
    for c in corrs:
        try:
            r = general_two_view_depth(cam, T, c)
            du = np.nan if r.d1_from_u is None else r.d1_from_u
            dv = np.nan if r.d1_from_v is None else r.d1_from_v
            rows.append((du, dv, r.d1, r.d2, ";".join(sorted(r.flags))))
        except NumericalError as exc:
            failures += 1
            rows.append((np.nan, np.nan, np.nan, np.nan, type(exc).__name__))
    with open(args.out, "w") as f:
        f.write("u1,v1,u2,v2,D1_u,D1_v,D1,D2,flags\n")
        for c, r in zip(corrs, rows):
            f.write(",".join([*(repr(float(x)) for x in c), *(repr(float(x)) for x in r[:4]), r[4]]) + "\n")
    if failures:
        log.warning("%d of %d correspondences had no valid solution", failures, len(corrs))
    return 0


def cmd_fuse(args, cfg: Config) -> int:
    img_t, cam, vol, p_stereo, dcfg = _sweep(args, cfg)
    levels = vol.levels
    if args.mono:
        mono = read_pfm(args.mono).astype(np.float64)
        if mono.shape != img_t.shape:
            raise InputError(f"mono depth {mono.shape} vs image {img_t.shape}")
    else:
        mono = ground_plane_depth(cam, img_t.shape, cfg.fusion.camera_height, fallback=levels.d_max)
    p_mono = mono_prior_distribution(mono, levels, cfg.fusion.sharpness)
    omega = stereo_confidence(vol, cfg.fusion.exclusion_px)
    fused = fuse(p_mono, p_stereo, omega)
    write_pfm(args.out, distribution_to_depth(fused, dcfg.mode))
    if args.dist:
        save_distribution(args.dist, fused)
    if args.weights:
        write_pfm(args.weights, omega)
    return 0


def cmd_pose(args, cfg: Config) -> int:
    img_t = read_gray(args.img_t)
    img_prev = read_gray(args.img_prev)
    depth = read_pfm(args.depth).astype(np.float64)
    init = _motion(args.init) if args.init else None
    T, diag = optimize_pose(img_t, img_prev, depth, _camera(args), cfg.pose, init)
    write_poses(args.out, [T])
    write_json(args.diagnostics, diag.to_dict())
    return 0


def cmd_warp(args, cfg: Config) -> int:
    img_prev = read_gray(args.img_prev)
    depth = read_pfm(args.depth).astype(np.float64)
    img, mask = synthesize_view(img_prev, depth, _camera(args), _motion(args.pose))
    write_pnm(args.out, img)
    if args.mask:
        write_pnm(args.mask, mask.astype(np.float64))
    return 0


def cmd_lift(args, cfg: Config) -> int:
    dist = load_distribution(args.dist)
    base = cfg.voxel
    spec = VoxelSpec(
        tuple(args.xr) if args.xr else base.x_range,
        tuple(args.yr) if args.yr else base.y_range,
        tuple(args.zr) if args.zr else base.z_range,
        args.voxel if args.voxel else base.edge,
    )
    grid = sample_voxels(dist, _camera(args), spec, threads=cfg.threads)
    write_voxel_grid(args.out, grid)
    if args.bev:
        bev = collapse_bev(grid, args.bev_mode)
        if bev.ndim == 3:
            np.save(args.bev, bev)
        else:
            write_pfm(args.bev, bev)
    log.info("occupied voxels: %.1f%%", 100.0 * grid.occupied.mean())
    return 0


def cmd_eval(args, cfg: Config) -> int:
    pred = read_pfm(args.pred).astype(np.float64)
    gt = read_pfm(args.gt).astype(np.float64)
    fg = _mask(args.fg_mask, gt.shape)
    labels = _mask(args.labels, gt.shape)
    report = depth_error_metrics(pred, gt, None if fg is None else fg > 0, labels)
    write_json(args.out, report.to_dict())
    return 0


def cmd_loss(args, cfg: Config) -> int:
    dist = load_distribution(args.dist)
    gt = read_pfm(args.gt).astype(np.float64)
    fg = _mask(args.fg_mask, gt.shape)
    loss, per = depth_ce_loss(dist, gt, cfg.loss, None if fg is None else fg > 0)
    write_json(args.out, {"loss": loss, "valid_pixels": int(np.isfinite(per).sum())})
    if args.per_pixel:
        write_pfm(args.per_pixel, per)
    return 0


def _add_calib(p, required=True):
    p.add_argument("--calib", required=required, help="KITTI-style calibration file")
    p.add_argument("--camera", default=None, help="projection matrix key (default P2)")


def _add_pair(p):
    p.add_argument("--img-t", required=True, help="frame t (PGM/PPM/PFM)")
    p.add_argument("--img-prev", required=True, help="previous frame")
    p.add_argument("--pose", required=True, help="pose file: frame-t -> previous-frame motion")
    _add_calib(p)
    p.add_argument("--levels", type=int, help="number of depth levels")
    p.add_argument("--dmin", type=float, help="nearest depth level (m)")
    p.add_argument("--dmax", type=float, help="farthest depth level (m)")
    p.add_argument("--cost", choices=COST_KINDS)
    p.add_argument("--temp", type=float, help="softmax temperature (cost units)")
    p.add_argument("--mode", choices=("argmax", "expectation"))
    p.add_argument("--aug-t", help="augmentation applied to frame t (JSON or file)")
    p.add_argument("--aug-prev", help="augmentation applied to the previous frame (JSON or file)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dfm", description="Depth from motion: geometry, stereo and pose tools.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--threads", type=int, default=None, help="worker threads (overrides config)")
    ap.add_argument("--config", default=None, help="JSON config overriding defaults")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic sequence")
    p.add_argument("--scene", required=True, help="scene JSON")
    p.add_argument("--poses", required=True, help="world->camera pose per frame")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--correspondences", type=int, default=0, metavar="N", help="exact matches per frame pair")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--supersample", action="store_true")
    _add_calib(p, required=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("depth", help="plane-sweep depth from two frames")
    _add_pair(p)
    p.add_argument("--out", required=True, help="depth map (PFM)")
    p.add_argument("--dist", help="also save the depth distribution (.npz)")
    p.add_argument("--meta", help="metadata JSON (default: next to --out)")
    p.set_defaults(func=cmd_depth)

    p = sub.add_parser("depth-closed-form", help="two-view depth for matched points")
    p.add_argument("--corr", required=True, help="correspondence CSV (u1,v1,u2,v2)")
    p.add_argument("--pose", required=True, help="frame-1 -> frame-2 motion")
    p.add_argument("--out", required=True, help="output CSV")
    _add_calib(p)
    p.set_defaults(func=cmd_depth_closed_form)

    p = sub.add_parser("fuse", help="fuse stereo and monocular depth distributions")
    _add_pair(p)
    p.add_argument("--mono", help="monocular depth prior (PFM); default: flat ground plane")
    p.add_argument("--out", required=True, help="fused depth (PFM)")
    p.add_argument("--dist", help="fused distribution (.npz)")
    p.add_argument("--weights", help="stereo confidence map (PFM)")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("pose", help="photometric ego-motion with known depth")
    p.add_argument("--img-t", required=True)
    p.add_argument("--img-prev", required=True)
    p.add_argument("--depth", required=True, help="frame-t depth (PFM)")
    p.add_argument("--init", help="initial pose file")
    p.add_argument("--out", required=True, help="output pose file")
    p.add_argument("--diagnostics", default="-", help="diagnostics JSON (default stdout)")
    _add_calib(p)
    p.set_defaults(func=cmd_pose)

    p = sub.add_parser("warp", help="synthesise frame t from the previous frame")
    p.add_argument("--img-prev", required=True)
    p.add_argument("--depth", required=True, help="frame-t depth (PFM)")
    p.add_argument("--pose", required=True, help="frame-t -> previous-frame motion")
    p.add_argument("--out", required=True, help="synthesised image (PGM)")
    p.add_argument("--mask", help="validity mask (PGM)")
    _add_calib(p)
    p.set_defaults(func=cmd_warp)

    p = sub.add_parser("lift", help="resample a depth distribution into voxels")
    p.add_argument("--dist", required=True, help="depth distribution (.npz)")
    p.add_argument("--voxel", type=float, help="voxel edge in metres")
    p.add_argument("--xr", type=float, nargs=2)
    p.add_argument("--yr", type=float, nargs=2)
    p.add_argument("--zr", type=float, nargs=2)
    p.add_argument("--out", required=True, help="output prefix (.bin + .json)")
    p.add_argument("--bev", help="bird's-eye view output (PFM, or .npy for stack)")
    p.add_argument("--bev-mode", choices=BEV_MODES, default="max")
    _add_calib(p)
    p.set_defaults(func=cmd_lift)

    p = sub.add_parser("eval", help="depth error metrics")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--fg-mask", help="foreground mask (PGM, nonzero = foreground)")
    p.add_argument("--labels", help="object labels (PGM, 0 = background)")
    p.add_argument("--out", default="-", help="report JSON (default stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loss", help="depth cross-entropy of a distribution")
    p.add_argument("--dist", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--fg-mask")
    p.add_argument("--per-pixel", help="per-pixel loss map (PFM)")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_loss)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        cfg = Config.load(args.config) if args.config else Config()
        if args.threads is not None:
            if args.threads < 1:
                raise InputError("--threads must be at least 1")
            cfg = Config(cfg.depth, cfg.fusion, cfg.loss, cfg.pose, cfg.voxel, args.threads)
        return args.func(args, cfg)
    except DfmError as exc:
        print(f"dfm: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"dfm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
