"""Command-line entry point: ``contactgrasp <command> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, pipeline, seeding
from .geom import load_mesh
from .hand import HandFileError
from .scene import THREADS_ENV, place_objects
from .synth import DEFAULT_TAU, DEFAULT_VOXEL, SearchSpace

FORMATS = f"""\
file formats:
  annotations  text, one grasp per line: object_id, pose (16 numbers, row-major 4x4),
               spread theta1 theta2 theta3, three contacts (px py pz nx ny nz),
               per-finger projections x1 y1 x2 y2 x3 y3, anchor finger, epsilon,
               exact flag.  '#:' lines hold 'key = value' run parameters.
  depth        binary, magic {io.DEPTH_MAGIC.decode()}, uint32 width and height, then
               float32 meters row by row (little-endian); 0 marks a miss.
  labels       binary, magic {io.LABEL_MAGIC.decode()}, uint32 point count, then per point:
               position and normal (6 float32), graspable and finger (2 uint8),
               x y (2 float32), then (uint16 bin, float32 res) for m ms s1 s2.
  scene        text, one object per line: object_id mesh_path scale pose[16].
  registry     text, one object per line: object_id mesh_path [scale].
  capture      PREFIX.capture (text manifest of all parameters), PREFIX.depth,
               PREFIX.grasps (camera frame) and PREFIX.labels.

environment:
  {THREADS_ENV}  worker threads for rendering (default: CPU count)
"""


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _seed(text: str) -> int:
    try:
        return seeding.check_seed(int(text))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.replace(",", " ").split())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="contactgrasp", description="Contact-anchored grasp dataset tools.",
                                epilog=FORMATS, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    raw = argparse.RawDescriptionHelpFormatter

    s = sub.add_parser("sample-grasps", help="synthesize grasp annotations for one object mesh",
                       epilog=FORMATS, formatter_class=raw)
    s.add_argument("--mesh", required=True, help="object mesh (.off or .obj), meters after scaling")
    s.add_argument("--hand", help="hand description file (default: the bundled three-finger hand)")
    s.add_argument("--out", required=True, help="annotation file to write")
    s.add_argument("--object-id", help="id written into each record (default: mesh file stem)")
    s.add_argument("--scale", type=float, default=1.0, help="factor applied to mesh coordinates")
    s.add_argument("--tau", type=float, default=DEFAULT_TAU, help="minimum epsilon quality kept")
    s.add_argument("--target", type=int, default=100, help="stop after this many grasps")
    s.add_argument("--seed", type=_seed, default=0, help="seed for the sample visiting order")
    s.add_argument("--voxel", type=float, default=DEFAULT_VOXEL, help="surface sample spacing (m)")
    s.add_argument("--mu", type=float, default=0.5, help="friction coefficient")
    s.add_argument("--edges", type=int, default=8, help="friction cone edges")
    d = SearchSpace.default()
    s.add_argument("--depths", type=_floats, default=d.depths, help="approach depths (m), sorted")
    s.add_argument("--rolls", type=_floats, default=d.rolls, help="rolls about the approach axis (rad)")
    s.add_argument("--spreads", type=_floats, default=d.spreads, help="spread angles (rad)")

    s = sub.add_parser("build-scene", help="place objects on the table in stable poses",
                       epilog=FORMATS, formatter_class=raw)
    s.add_argument("--objects", required=True, help="object registry file")
    s.add_argument("--count", type=int, required=True, help="number of objects to place")
    s.add_argument("--seed", type=_seed, default=0, help="placement seed")
    s.add_argument("--out", required=True, help="scene file to write")

    s = sub.add_parser("render", help="render a scene and write a labeled capture",
                       epilog=FORMATS, formatter_class=raw)
    s.add_argument("--scene", required=True, help="scene file from build-scene")
    s.add_argument("--camera", required=True,
                   help="random:SEED, identity, look:EX,EY,EZ,TX,TY,TZ or a camera file with "
                        "fx fy cx cy width height pose[16] as 'key = value' lines")
    s.add_argument("--annotations", required=True, help="directory holding <object_id>.grasps files")
    s.add_argument("--out", required=True, help="output prefix")
    s.add_argument("--hand", help="hand description file (default: bundled)")
    s.add_argument("--points", type=int, default=pipeline.DEFAULT_POINTS,
                   help="points kept in the cloud; 0 keeps every valid pixel")
    s.add_argument("--seed", type=_seed, default=0, help="seed for cloud subsampling")
    s.add_argument("--radius", type=float, default=pipeline.DEFAULT_LABEL_RADIUS,
                   help="labeling radius around contacts (m)")

    s = sub.add_parser("validate", help="re-check every invariant of pipeline output",
                       epilog=FORMATS, formatter_class=raw)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--capture", help="capture prefix written by render")
    g.add_argument("--annotations", help="annotation file written by sample-grasps")

    s = sub.add_parser("eval-quality", help="exact and sampled epsilon quality per grasp",
                       epilog=FORMATS, formatter_class=raw)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--annotations", help="annotation file written by sample-grasps")
    g.add_argument("--wrenches", help="text file of wrench sets: 6 numbers per line, "
                                      "sets separated by blank lines")
    s.add_argument("--oracle-dirs", type=_positive_int, default=100_000, help="sampled directions")
    s.add_argument("--seed", type=_seed, default=0, help="seed for the sampled directions")
    return p


def cmd_sample_grasps(args) -> int:
    space = SearchSpace(args.depths, args.rolls, args.spreads)
    run = pipeline.sample_grasps(args.mesh, args.hand, object_id=args.object_id, scale=args.scale,
                                 tau=args.tau, target=args.target, seed=args.seed, voxel=args.voxel,
                                 mu=args.mu, edges=args.edges, space=space)
    io.write_annotations(args.out, run.annotations, run.params)
    print(f"kept/evaluated: {len(run.annotations)}/{run.stats.evaluated}")
    if not run.annotations:
        print("warning: no grasp passed the quality threshold", file=sys.stderr)
    return 0


def cmd_build_scene(args) -> int:
    registry = io.read_registry(args.objects)
    ids = [r[0] for r in registry]
    paths = [str(r[1]) for r in registry]
    scales = [r[2] for r in registry]
    meshes = [load_mesh(p, s) for p, s in zip(paths, scales)]
    scene = place_objects(meshes, args.count, args.seed, ids, paths, scales)
    io.write_scene(args.out, scene, {"objects": str(Path(args.objects).resolve()),
                                     "count": str(args.count), "seed": str(args.seed)})
    print(f"placed {len(scene)} objects")
    if len(scene) < args.count:
        print(f"warning: only {len(scene)} of {args.count} objects fit on the table", file=sys.stderr)
    return 0


def cmd_render(args) -> int:
    cam = pipeline.parse_camera(args.camera)
    cap, warnings = pipeline.render_capture(args.scene, cam, args.annotations, args.out, args.hand,
                                            args.points if args.points > 0 else None, args.seed, args.radius)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    n_grasp = int(cap.targets.graspable.sum())
    print(f"grasps: {len(cap.annotations)}  points: {len(cap.cloud)}  graspable points: {n_grasp}")
    return 0


def cmd_validate(args) -> int:
    if args.capture:
        bad = pipeline.validate_capture(args.capture)
    else:
        bad = pipeline.validate_annotation_file(args.annotations)
    for b in bad:
        print(b)
    print(f"{len(bad)} violation(s)" if bad else "ok")
    return 1 if bad else 0


def cmd_eval_quality(args) -> int:
    if args.annotations:
        sets = pipeline.annotation_wrench_sets(args.annotations)
    else:
        sets = pipeline.read_wrench_sets(args.wrenches)
    rows = pipeline.quality_rows(sets, args.oracle_dirs, args.seed)
    print("row exact oracle gap")
    for i, r in enumerate(rows, start=1):
        print(f"{i} {r.exact:.9f} {r.oracle:.9f} {r.gap:.3e}")
    if not rows:
        print("no grasps")
        return 0
    exact = np.array([r.exact for r in rows])
    gaps = np.array([r.gap for r in rows])
    print(f"count {len(rows)}  mean exact {exact.mean():.6f}  min exact {exact.min():.6f}  "
          f"max gap {gaps.max():.3e}  oracle below exact {int(np.sum(gaps < -1e-12))}")
    return 0


COMMANDS = {"sample-grasps": cmd_sample_grasps, "build-scene": cmd_build_scene, "render": cmd_render,
            "validate": cmd_validate, "eval-quality": cmd_eval_quality}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, ValueError, HandFileError) as exc:
        # FormatError and HandFileError are ValueErrors; OSError covers missing files
        print(f"contactgrasp {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
