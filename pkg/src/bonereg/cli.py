"""Command-line frontend binding the pipeline end to end.

Exit codes: 0 success, 1 input or algorithm error, 2 registration hit the
iteration cap without converging (the report is still written).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .cloud import PointCloud, load_xyz, save_xyz
from .mask_io import load_stack, write_stack
from .metrics import evaluate_slices, overlap_report_to_dict, RasterGrid, reslice
from .registration import (CsnIcpConfig, RegistrationError, csn_icp, icp_classic,
                           partition_indices, partition_register, report_to_dict)
from .synth import (make_phantom, perturb, perturbation_spec_from_dict,
                    phantom_spec_from_dict, voxelize_to_stack)
from .volume import build_point_cloud, scale_factor


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


_CONFIG_KEYS = {f.name for f in fields(CsnIcpConfig)}


def _load_config(args) -> CsnIcpConfig:
    """Build the registration config: defaults, overridden by --config
    file values, overridden by command-line flags."""
    values = {}
    if getattr(args, "config", None):
        doc = json.loads(Path(args.config).read_text())
        unknown = set(doc) - _CONFIG_KEYS
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        values.update(doc)
    for flag, key in (("k", "k"), ("r_th", "r_th"), ("max_iter", "max_iterations"),
                      ("partitions", "partitions")):
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    if "feature_weights" in values:
        values["feature_weights"] = tuple(values["feature_weights"])
    return CsnIcpConfig(**values)


def cmd_build_cloud(args) -> int:
    ct = load_stack(args.ct_manifest)
    mr = load_stack(args.mr_manifest)
    scale = scale_factor(ct, mr)
    mr_cloud = build_point_cloud(mr, 1.0, args.mode)
    ct_cloud = build_point_cloud(ct, scale, args.mode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_xyz(ct_cloud, out / "ct_cloud.xyz")
    save_xyz(mr_cloud, out / "mr_cloud.xyz")
    print(f"ct_cloud.xyz: {len(ct_cloud)} points")
    print(f"mr_cloud.xyz: {len(mr_cloud)} points")
    print(f"ct in-plane scale: {scale:.9g}")
    return 0


def cmd_register(args) -> int:
    config = _load_config(args)
    source = load_xyz(args.source)
    target = load_xyz(args.target)
    if args.algorithm == "icp":
        if config.partitions > 1:
            raise CliError("partitions require --algorithm csn-icp")
        report = icp_classic(source, target, config)
    elif config.partitions > 1:
        report = partition_register(source, target, config)
    else:
        report = csn_icp(source, target, config)
    if config.partitions > 1:
        moved = np.empty_like(source.points)
        for b, t in zip(partition_indices(source, config.partitions),
                        report.final_transforms):
            moved[b] = t.apply(source.points[b])
        registered = PointCloud(moved)
    else:
        registered = PointCloud(report.final_transforms[0].apply(source.points))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", report_to_dict(report))
    save_xyz(registered, out / "registered.xyz")
    final = report.final_rmse
    print(f"converged: {report.converged} after {report.iterations_used} iterations")
    print(f"final rmse: {'n/a' if final is None else format(final, '.9g')}")
    return 0 if report.converged else 2


def cmd_evaluate(args) -> int:
    moving = load_xyz(args.registered)
    target = load_xyz(args.target)
    report = evaluate_slices(moving, target, slice_count=args.slices,
                             thickness=args.thickness, pixel_pitch=args.pixel_pitch,
                             closing_iterations=args.closing_iters)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "overlap.json", overlap_report_to_dict(report))
    print(f"rmse: {report.rmse:.9g}")
    print(f"iou: {report.iou:.6f}  dice: {report.dice:.6f}")
    print(f"d_mr: {report.d_mr:.6f}  d_ct: {report.d_ct:.6f}  (means over slices)")
    return 0


def cmd_synth(args) -> int:
    phantom_doc = json.loads(Path(args.phantom_spec).read_text())
    perturb_doc = json.loads(Path(args.perturbation_spec).read_text())
    if args.seed is not None:
        phantom_doc["seed"] = args.seed
        perturb_doc["seed"] = args.seed
    pspec = phantom_spec_from_dict(phantom_doc)
    vspec = perturbation_spec_from_dict(perturb_doc)
    phantom = make_phantom(pspec)
    perturbed, transform = perturb(phantom, vspec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_xyz(phantom, out / "phantom.xyz")
    save_xyz(perturbed, out / "perturbed.xyz")
    (out / "transform.json").write_text(transform.to_json() + "\n")
    _write_json(out / "summary.json", {
        "phantom_points": len(phantom),
        "perturbed_points": len(perturbed),
        "phantom_spec": phantom_doc,
        "perturbation_spec": perturb_doc,
    })
    if args.voxelize:
        pitch, spacing = args.voxelize
        write_stack(voxelize_to_stack(phantom, pitch, spacing), out / "phantom_stack")
        write_stack(voxelize_to_stack(perturbed, pitch, spacing), out / "perturbed_stack")
    print(f"phantom.xyz: {len(phantom)} points")
    print(f"perturbed.xyz: {len(perturbed)} points")
    return 0


def cmd_reslice(args) -> int:
    cloud = load_xyz(args.cloud)
    if len(cloud) == 0:
        raise CliError("cloud is empty")
    pts = cloud.points
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    pitch = args.pixel_pitch
    if pitch is None:
        extent = max(hi[0] - lo[0], hi[1] - lo[1])
        pitch = extent / 128.0 if extent > 0 else 1.0
    margin = args.closing_iters + 1
    width = int(np.floor((hi[0] - lo[0]) / pitch)) + 1 + 2 * margin
    height = int(np.floor((hi[1] - lo[1]) / pitch)) + 1 + 2 * margin
    grid = RasterGrid(width, height, pitch,
                      (lo[0] - margin * pitch, lo[1] - margin * pitch))
    if args.z_center is not None:
        if args.thickness is None:
            raise CliError("--thickness is required with --z-center")
        centers = [args.z_center]
        thickness = args.thickness
    else:
        span = hi[2] - lo[2]
        step = span / args.slices if span > 0 else 1.0
        thickness = args.thickness if args.thickness is not None else step
        centers = [lo[2] + (i + 0.5) * step for i in range(args.slices)]
    masks = []
    for i, zc in enumerate(centers):
        mask = reslice(cloud, zc, thickness, grid, args.closing_iters)
        masks.append(type(mask)(bits=mask.bits, z_index=i))
    from .mask_io import SliceStack, StackManifest
    manifest = StackManifest(modality=args.modality, pixel_spacing_mm=pitch,
                             slice_spacing_mm=thickness,
                             slice_files=tuple(f"slice_{i:04d}.pgm"
                                               for i in range(len(masks))))
    path = write_stack(SliceStack(manifest, tuple(masks)), args.out)
    print(f"wrote {len(masks)} slice masks to {path.parent}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="bonereg",
                     description="Bone point-cloud construction, registration and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-cloud", help="build normalized CT and MR clouds from mask stacks")
    b.add_argument("ct_manifest")
    b.add_argument("mr_manifest")
    b.add_argument("--out", required=True, help="output directory")
    b.add_argument("--mode", choices=["surface", "full"], default="surface")
    b.set_defaults(func=cmd_build_cloud)

    r = sub.add_parser("register", help="register a source cloud onto a target cloud")
    r.add_argument("source")
    r.add_argument("target")
    r.add_argument("--out", required=True)
    r.add_argument("--algorithm", choices=["csn-icp", "icp"], default="csn-icp")
    r.add_argument("--config", help="JSON file with CsnIcpConfig fields")
    r.add_argument("--partitions", type=int)
    r.add_argument("--k", type=int)
    r.add_argument("--r-th", dest="r_th", type=float)
    r.add_argument("--max-iter", dest="max_iter", type=int)
    r.set_defaults(func=cmd_register)

    e = sub.add_parser("evaluate", help="score a registered cloud against its target")
    e.add_argument("registered")
    e.add_argument("target")
    e.add_argument("--out", required=True)
    e.add_argument("--slices", type=int, default=8)
    e.add_argument("--thickness", type=float)
    e.add_argument("--pixel-pitch", dest="pixel_pitch", type=float)
    e.add_argument("--closing-iters", dest="closing_iters", type=int, default=2)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("synth", help="generate a phantom, a perturbed copy and the ground truth")
    s.add_argument("phantom_spec")
    s.add_argument("perturbation_spec")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, help="override the seed in both spec files")
    s.add_argument("--voxelize", nargs=2, type=float, metavar=("PIXEL_PITCH", "SLICE_SPACING"),
                   help="also write voxelized mask stacks")
    s.set_defaults(func=cmd_synth)

    rs = sub.add_parser("reslice", help="extract 2D region masks from a cloud")
    rs.add_argument("cloud")
    rs.add_argument("--out", required=True)
    rs.add_argument("--z-center", dest="z_center", type=float)
    rs.add_argument("--thickness", type=float)
    rs.add_argument("--slices", type=int, default=8)
    rs.add_argument("--pixel-pitch", dest="pixel_pitch", type=float)
    rs.add_argument("--closing-iters", dest="closing_iters", type=int, default=2)
    rs.add_argument("--modality", choices=["CT", "MR"], default="MR")
    rs.set_defaults(func=cmd_reslice)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except RegistrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError, json.JSONDecodeError, CliError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
