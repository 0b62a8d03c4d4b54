"""Command-line pipeline: calibrate, build-map, optimize, add-edge,
export-cloud, fuse, project, evaluate, validate, serve.

Machine-readable results go to standard output as JSON; human-readable
logging goes to standard error. Exit codes: 1 usage, 2 I/O or parse error,
3 validation failure, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .calibration import (
    DepthDistortionModel,
    assemble_tree,
    calibrate_sensor_base,
    calibrate_sensor_sensor,
    fit_depth_model,
)
from .errors import FormatError, NumericalError, SemmapError, ValidationFailure
from .evaluation import EvaluationWeights, evaluate
from .geometry import GeometricElement, PointCloud
from .kb import TaxonomyCycleError
from .mapping import BuilderConfig, add_manual_edge, build_local_maps, chi2, export_global_cloud, optimize
from .projection import DEFAULT_INTRINSICS, LaserConfig, PinholeIntrinsics, render_depth, render_rgb, render_scan, unproject
from .registration import RegistrationConfig, register
from .semantic_map import is_valid, validate_map
from .transforms import RigidTransform3, TransformTree
from .io import FORMAT_VERSION
from .io.calib import read_tree, write_distortion_model, write_tree
from .io.dataset import (
    GRAPH_FILE,
    MAP_FILE,
    SEMANTIC_KB_FILE,
    load_dataset,
    load_semantic_map,
    read_meta,
    write_meta,
    writer_lock,
)
from .io.graph import read_graph, write_graph
from .io.images import read_depth_png, write_depth_png, write_rgb_png
from .io.kbfile import write_kb
from .io.logs import read_log
from .io.ply import read_ply, write_ply

log = logging.getLogger("semmap")


def fmt_line(names: list[str], values) -> str:
    return " ".join(names) + " " + " ".join(format(v, ".9g") for v in values) + "\n"

EXIT_USAGE = 1
EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _xyzq(values) -> RigidTransform3:
    return RigidTransform3.from_xyzq([float(v) for v in values])


def _intrinsics_from_args(args) -> PinholeIntrinsics:
    return PinholeIntrinsics(
        fx=args.fx, fy=args.fy, cx=args.cx, cy=args.cy,
        width=args.width, height=args.height, near=args.near, far=args.far,
    )


def _add_intrinsics_flags(parser):
    d = DEFAULT_INTRINSICS
    parser.add_argument("--fx", type=float, default=d.fx)
    parser.add_argument("--fy", type=float, default=d.fy)
    parser.add_argument("--cx", type=float, default=d.cx)
    parser.add_argument("--cy", type=float, default=d.cy)
    parser.add_argument("--width", type=int, default=d.width)
    parser.add_argument("--height", type=int, default=d.height)
    parser.add_argument("--near", type=float, default=d.near)
    parser.add_argument("--far", type=float, default=d.far)


def _add_reg_flags(parser):
    d = RegistrationConfig()
    parser.add_argument("--max-iterations", type=int, default=d.max_iterations)
    parser.add_argument("--gate", type=float, default=d.correspondence_gate)
    parser.add_argument("--min-inlier-fraction", type=float, default=d.min_inlier_fraction)
    parser.add_argument("--max-mean-residual", type=float, default=d.max_mean_residual)


def _reg_cfg_from_args(args) -> RegistrationConfig:
    return RegistrationConfig(
        max_iterations=args.max_iterations,
        correspondence_gate=args.gate,
        min_inlier_fraction=args.min_inlier_fraction,
        max_mean_residual=args.max_mean_residual,
    )


def build_parser() -> _Parser:
    parser = _Parser(prog="semmap", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    cal = sub.add_parser("calibrate", help="sensor calibration tools")
    cal_sub = cal.add_subparsers(dest="kind", required=True)

    ci = cal_sub.add_parser("intrinsics", help="fit the depth distortion model")
    ci.add_argument("--obs", action="append", required=True, metavar="DEPTH_PNG",
                    help="depth image of a flat target (repeatable)")
    ci.add_argument("--plane", action="append", metavar="NX,NY,NZ,OFFSET",
                    help="true plane per observation; omit to fit from the center window")
    ci.add_argument("--grid", type=int, nargs=2, default=(8, 6), metavar=("W", "H"))
    ci.add_argument("--out", required=True)
    _add_intrinsics_flags(ci)

    cb = cal_sub.add_parser("sensor-base", help="robot-to-camera transform from a log")
    cb.add_argument("--log", required=True)
    cb.add_argument("--child", default="cam0")
    cb.add_argument("--parent", default="base")
    cb.add_argument("--refine", action="store_true")
    cb.add_argument("--out", required=True)
    _add_reg_flags(cb)

    cs = cal_sub.add_parser("sensor-sensor", help="camera-to-camera offsets from clouds")
    cs.add_argument("--clouds", nargs="+", required=True, metavar="PLY")
    cs.add_argument("--reference", type=int, default=0)
    cs.add_argument("--out", required=True)
    _add_reg_flags(cs)

    ca = cal_sub.add_parser("assemble", help="assemble the sensor transform tree")
    ca.add_argument("--base-ref", required=True, help="edge file: reference camera under base")
    ca.add_argument("--sensors", help="edge file: remaining cameras under the reference")
    ca.add_argument("--out", required=True)

    bm = sub.add_parser("build-map", help="segment a log into registered local maps")
    bm.add_argument("log")
    bm.add_argument("out", help="output dataset directory")
    bm.add_argument("--trans-trigger", type=float, default=BuilderConfig().trans_trigger)
    bm.add_argument("--rot-trigger", type=float, default=BuilderConfig().rot_trigger)
    bm.add_argument("--voxel", type=float, default=BuilderConfig().voxel_size)
    _add_reg_flags(bm)

    op = sub.add_parser("optimize", help="optimize the pose graph in place")
    op.add_argument("dataset")
    op.add_argument("--max-iter", type=int, default=50)

    ae = sub.add_parser("add-edge", help="register two nodes and add the edge")
    ae.add_argument("dataset")
    ae.add_argument("a")
    ae.add_argument("b")
    ae.add_argument("--guess", type=float, nargs=7, metavar=("X", "Y", "Z", "QX", "QY", "QZ", "QW"))
    _add_reg_flags(ae)

    ec = sub.add_parser("export-cloud", help="merge node clouds into map.ply")
    ec.add_argument("dataset")
    ec.add_argument("--voxel", type=float, default=BuilderConfig().voxel_size)

    fu = sub.add_parser("fuse", help="fuse map, boxes and ontology; write semantic.kb")
    fu.add_argument("dataset")

    pj = sub.add_parser("project", help="simulate a sensor view of the dataset map")
    pj.add_argument("dataset")
    pj.add_argument("--pose", type=float, nargs=7, action="append", required=True,
                    metavar=("X", "Y", "Z", "QX", "QY", "QZ", "QW"))
    pj.add_argument("--sensor", choices=("rgbd", "laser"), default="rgbd")
    pj.add_argument("--out", required=True, help="output prefix (rgbd) or file (laser)")
    pj.add_argument("--splat", type=int, default=2)
    pj.add_argument("--beams", type=int, default=360)
    pj.add_argument("--angle-min", type=float, default=-np.pi)
    pj.add_argument("--angle-max", type=float, default=np.pi)
    pj.add_argument("--max-range", type=float, default=10.0)
    pj.add_argument("--slab", type=float, default=0.05)
    _add_intrinsics_flags(pj)

    ev = sub.add_parser("evaluate", help="compare a dataset against ground truth")
    ev.add_argument("dataset1")
    ev.add_argument("dataset_gt")
    ev.add_argument("--weights", type=float, nargs=4, metavar=("WG", "WS", "WD", "WU"),
                    default=(1.0, 1.0, 1.0, 1.0))
    ev.add_argument("--align", type=float, nargs=7,
                    metavar=("X", "Y", "Z", "QX", "QY", "QZ", "QW"))
    ev.add_argument("--gate", type=float, default=0.5)

    va = sub.add_parser("validate", help="check dataset and knowledge-base invariants")
    va.add_argument("dataset")

    se = sub.add_parser("serve", help="host the annotation HTTP API")
    se.add_argument("dataset")
    se.add_argument("--port", type=int, default=8700)
    se.add_argument("--host", default="127.0.0.1")

    return parser


def _cmd_calibrate_intrinsics(args) -> int:
    k = _intrinsics_from_args(args)
    observations = []
    planes = args.plane or []
    if planes and len(planes) != len(args.obs):
        raise ValidationFailure("--plane count must match --obs count")
    for i, obs_path in enumerate(args.obs):
        img = read_depth_png(obs_path)
        if planes:
            nx, ny, nz, offset = (float(v) for v in planes[i].split(","))
            plane = GeometricElement.make_plane(f"plane{i}", [nx, ny, nz], offset)
        else:
            plane = _fit_center_plane(img, k)
        observations.append((img, plane))
    model = fit_depth_model(observations, k, grid_w=args.grid[0], grid_h=args.grid[1])
    write_distortion_model(args.out, model)
    log.info("wrote distortion model to %s", args.out)
    return 0


def _fit_center_plane(img, k) -> GeometricElement:
    """Least-squares plane through the central quarter of the image."""
    h, w = img.depth.shape
    window = img.depth[h // 4: 3 * h // 4, w // 4: 3 * w // 4]
    sub = img.depth * 0.0
    sub[h // 4: 3 * h // 4, w // 4: 3 * w // 4] = window
    from .projection import DepthImage

    cloud = unproject(DepthImage(img.width, img.height, sub), k)
    if len(cloud) < 100:
        raise ValidationFailure("not enough central pixels to fit a target plane")
    pts = cloud.points
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    normal = vt[-1]
    return GeometricElement.make_plane("auto", normal, float(np.dot(normal, centroid)))


def _cmd_calibrate_sensor_base(args) -> int:
    acquisition = read_log(args.log)
    frames = acquisition.depth_frames()
    if len(frames) < 3:
        raise ValidationFailure("sensor-base calibration needs at least 3 depth frames")
    reg_cfg = _reg_cfg_from_args(args)
    motions = []
    prev_cloud = None
    prev_odom = None
    for frame in frames:
        intrinsics = acquisition.cameras[frame.sensor_id]
        cloud = unproject(acquisition.load_depth(frame), intrinsics)
        odom = acquisition.nearest_odometry(frame.stamp)
        if odom is None:
            raise ValidationFailure("sensor-base calibration log carries no odometry")
        if prev_cloud is not None:
            result = register(cloud, prev_cloud, cfg=reg_cfg)
            if result.converged:
                camera_motion = result.transform
                robot_motion = prev_odom.pose.inverse().compose(odom.pose)
                motions.append((robot_motion, camera_motion))
            else:
                log.warning("dropping frame pair at t=%s: %s", frame.stamp,
                            result.message or "registration failed")
        prev_cloud, prev_odom = cloud, odom
    transform = calibrate_sensor_base(motions, refine=args.refine)
    Path(args.out).write_text(fmt_line([args.child, args.parent], transform.to_xyzq()))
    log.info("wrote %s->%s transform to %s", args.parent, args.child, args.out)
    return 0


def _cmd_calibrate_sensor_sensor(args) -> int:
    clouds = [read_ply(p) for p in args.clouds]
    results = calibrate_sensor_sensor(clouds, args.reference, _reg_cfg_from_args(args))
    lines = []
    failures = []
    for i, result in enumerate(results):
        if i == args.reference:
            continue
        if result.converged:
            lines.append(fmt_line([f"cam{i}", f"cam{args.reference}"], result.transform.to_xyzq()))
        else:
            failures.append(i)
            log.error("sensor %d failed to register: %s", i, result.message or "no convergence")
    Path(args.out).write_text("".join(lines))
    if failures:
        raise NumericalError(f"sensor-sensor registration failed for sensors {failures}")
    log.info("wrote %d offsets to %s", len(lines), args.out)
    return 0


def _read_edge_lines(path) -> dict[str, tuple[str, RigidTransform3]]:
    edges = {}
    for raw in Path(path).read_text().splitlines():
        stripped = raw.split("#", 1)[0].strip()
        if not stripped:
            continue
        tokens = stripped.split()
        if len(tokens) != 9:
            raise FormatError(f"{path}: expected 'child parent x y z qx qy qz qw'")
        edges[tokens[0]] = (tokens[1], _xyzq(tokens[2:]))
    return edges


def _cmd_calibrate_assemble(args) -> int:
    base_edges = _read_edge_lines(args.base_ref)
    if len(base_edges) != 1:
        raise FormatError(f"{args.base_ref}: expected exactly one base->reference edge")
    (ref_name, (base_name, base_to_ref)), = base_edges.items()
    sensor_edges = _read_edge_lines(args.sensors) if args.sensors else {}
    names, offsets = [], []
    for child, (parent, offset) in sensor_edges.items():
        if parent != ref_name:
            raise ValidationFailure(
                f"sensor {child!r} hangs under {parent!r}, expected the reference {ref_name!r}"
            )
        names.append(child)
        offsets.append(offset)
    tree = assemble_tree(base_to_ref, offsets, base_frame=base_name,
                         reference_frame=ref_name, sensor_frames=names)
    write_tree(args.out, tree)
    log.info("wrote transform tree with %d frames to %s", len(tree.frames()), args.out)
    return 0


def _cmd_build_map(args) -> int:
    acquisition = read_log(args.log)
    cfg = BuilderConfig(
        trans_trigger=args.trans_trigger, rot_trigger=args.rot_trigger, voxel_size=args.voxel
    )
    maps, graph = build_local_maps(acquisition, cfg, _reg_cfg_from_args(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with writer_lock(out):
        meta = read_meta(out)
        meta.update({"format": FORMAT_VERSION, "frame": "map"})
        write_meta(out, meta)
        write_graph(out / GRAPH_FILE, graph)
    print(json.dumps({"local_maps": len(maps), "edges": len(graph.edges)}))
    return 0


def _cmd_optimize(args) -> int:
    root = Path(args.dataset)
    with writer_lock(root):
        graph = read_graph(root / GRAPH_FILE)
        before = chi2(graph)
        optimized = optimize(graph, max_iter=args.max_iter)
        after = chi2(optimized)
        write_graph(root / GRAPH_FILE, optimized)
    print(json.dumps({"chi2_before": before, "chi2_after": after}))
    return 0


def _cmd_add_edge(args) -> int:
    root = Path(args.dataset)
    guess = _xyzq(args.guess) if args.guess else RigidTransform3.identity()
    with writer_lock(root):
        graph = read_graph(root / GRAPH_FILE)
        new_graph, result = add_manual_edge(graph, args.a, args.b, guess, _reg_cfg_from_args(args))
        if result.converged:
            write_graph(root / GRAPH_FILE, new_graph)
    print(
        json.dumps(
            {
                "added": result.converged,
                "mean_residual": result.mean_residual,
                "inlier_fraction": result.inlier_fraction,
                "message": result.message,
            }
        )
    )
    if not result.converged:
        raise NumericalError(
            f"registration between {args.a!r} and {args.b!r} did not converge: "
            f"{result.message or 'alignment rejected'}"
        )
    return 0


def _cmd_export_cloud(args) -> int:
    root = Path(args.dataset)
    with writer_lock(root):
        graph = read_graph(root / GRAPH_FILE)
        maps = [n.local_map for n in graph.nodes.values() if n.local_map is not None]
        cloud = export_global_cloud(maps, graph, voxel_size=args.voxel)
        write_ply(root / MAP_FILE, cloud)
    print(json.dumps({"points": len(cloud)}))
    return 0


def _cmd_fuse(args) -> int:
    root = Path(args.dataset)
    with writer_lock(root):
        semantic = load_semantic_map(root)
        violations = validate_map(semantic)
        write_kb(root / SEMANTIC_KB_FILE, semantic.kb)
        meta = read_meta(root)
        meta.update(
            {
                "format": FORMAT_VERSION,
                "semantic_elements": str(len(semantic.geometry.semantic_ids)),
                "spatial_atoms": str(len(semantic.kb.spatial_atoms())),
            }
        )
        write_meta(root, meta)
    print(json.dumps({"violations": [v.as_dict() for v in violations]}))
    if not is_valid(violations):
        raise ValidationFailure("fused semantic map has validation errors")
    return 0


def _cmd_project(args) -> int:
    root = Path(args.dataset)
    cloud = read_ply(root / MAP_FILE)
    poses = [_xyzq(p) for p in args.pose]
    if args.sensor == "rgbd":
        k = _intrinsics_from_args(args)
        for i, pose in enumerate(poses):
            suffix = f"{i:04d}" if len(poses) > 1 else ""
            depth = render_depth(cloud, pose, k, splat_px=args.splat)
            write_depth_png(f"{args.out}{suffix}_depth.png", depth)
            if cloud.colors is not None:
                rgb = render_rgb(cloud, pose, k, splat_px=args.splat)
                write_rgb_png(f"{args.out}{suffix}_rgb.png", rgb)
        log.info("wrote %d rendered view(s) with prefix %s", len(poses), args.out)
    else:
        cfg = LaserConfig(
            angle_min=args.angle_min, angle_max=args.angle_max,
            n_beams=args.beams, max_range=args.max_range, slab_half_height=args.slab,
        )
        lines = []
        for pose in poses:
            ranges = render_scan(cloud, pose, cfg)
            lines.append(" ".join(format(v, ".9g") for v in ranges))
        text = "\n".join(lines) + "\n"
        if args.out == "-":
            sys.stdout.write(text)
        else:
            Path(args.out).write_text(text)
            log.info("wrote %d scan line(s) to %s", len(poses), args.out)
    return 0


def _cmd_evaluate(args) -> int:
    sm1 = load_semantic_map(args.dataset1)
    smgt = load_semantic_map(args.dataset_gt)
    weights = EvaluationWeights(*args.weights)
    align = _xyzq(args.align) if args.align else RigidTransform3.identity()
    report = evaluate(sm1, smgt, weights, align, gate=args.gate)
    print(json.dumps(report.as_dict()))
    return 0


def _cmd_validate(args) -> int:
    semantic = load_semantic_map(args.dataset)
    violations = validate_map(semantic)
    print(json.dumps([v.as_dict() for v in violations]))
    if not is_valid(violations):
        raise ValidationFailure(f"{args.dataset}: validation failed")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app

    app = create_app(args.dataset)
    log.info("serving %s on %s:%d", args.dataset, args.host, args.port)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


_COMMANDS = {
    ("calibrate", "intrinsics"): _cmd_calibrate_intrinsics,
    ("calibrate", "sensor-base"): _cmd_calibrate_sensor_base,
    ("calibrate", "sensor-sensor"): _cmd_calibrate_sensor_sensor,
    ("calibrate", "assemble"): _cmd_calibrate_assemble,
    ("build-map",): _cmd_build_map,
    ("optimize",): _cmd_optimize,
    ("add-edge",): _cmd_add_edge,
    ("export-cloud",): _cmd_export_cloud,
    ("fuse",): _cmd_fuse,
    ("project",): _cmd_project,
    ("evaluate",): _cmd_evaluate,
    ("validate",): _cmd_validate,
    ("serve",): _cmd_serve,
}


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    key = (args.command,) if args.command != "calibrate" else (args.command, args.kind)
    try:
        return _COMMANDS[key](args)
    except (FormatError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_IO
    except (ValidationFailure, TaxonomyCycleError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except SemmapError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
