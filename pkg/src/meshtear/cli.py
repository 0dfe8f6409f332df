"""Command-line front end.

Subcommands:
  info       summarize an OBJ model
  synth      write a procedural model (blob / grid / cylinder) as OBJ
  tear       apply a scalpel path to a model and write the torn OBJ
  decompose  cluster a model into particles and write the dump
  bench      replay a path with timing; writes CSV + PNG, gates on p50
  replay     re-run a recorded session transcript headlessly
  serve      run the interactive session server
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bench as bench_mod
from . import synth
from .formats import (
    load_obj,
    load_scalpel_path,
    write_clustering,
    write_obj,
)
from .mesh import build_mesh
from .particles import decompose, update_after_tear
from .service import SessionServer, replay_transcript
from .tear import apply_tear_segment, build_cells, sample_path


def _load_mesh(path: str):
    data = load_obj(Path(path).read_bytes())
    for w in data.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return build_mesh(data.positions, data.faces, normals=data.normals, uvs=data.uvs)


def _cmd_info(args) -> int:
    mesh = _load_mesh(args.model)
    print(f"vertices {mesh.vertex_count}")
    print(f"faces    {mesh.live_face_count}")
    print(f"diagonal {mesh.diagonal:.6g}")
    print(f"aabb     {mesh.aabb_min.tolist()} .. {mesh.aabb_max.tolist()}")
    return 0


def _cmd_synth(args) -> int:
    if args.shape == "blob":
        mesh = synth.reference_blob()
    elif args.shape == "grid":
        mesh = synth.flat_grid(args.nx, args.ny)
    else:
        mesh, _ = synth.skinned_cylinder()
    Path(args.out).write_bytes(write_obj(mesh))
    print(f"wrote {args.out}: {mesh.vertex_count} vertices, {mesh.live_face_count} faces")
    return 0


def _cmd_tear(args) -> int:
    mesh = _load_mesh(args.model)
    path = load_scalpel_path(Path(args.path).read_bytes())
    state = decompose(mesh, args.d) if args.clustering else None
    samples = sample_path(path.samples, path.spacing)
    deltas = []
    for cell in build_cells(samples, path.width):
        delta = apply_tear_segment(mesh, cell)
        if state is not None:
            update_after_tear(state, delta, mesh, args.d)
        deltas.append(delta)
    removed = sum(len(d.removed_faces) for d in deltas)
    added = sum(len(d.new_faces) for d in deltas)
    print(f"{len(deltas)} segments: -{removed} faces, +{added} faces")
    Path(args.out).write_bytes(write_obj(mesh))
    if state is not None and args.clustering:
        Path(args.clustering).write_bytes(write_clustering(state, args.d))
    return 0


def _cmd_decompose(args) -> int:
    mesh = _load_mesh(args.model)
    state = decompose(mesh, args.d)
    Path(args.out).write_bytes(write_clustering(state, args.d))
    print(f"{len(state.particles)} particles over {mesh.vertex_count} vertices (d={args.d})")
    return 0


def _cmd_bench(args) -> int:
    mesh = _load_mesh(args.model)
    path = load_scalpel_path(Path(args.path).read_bytes())
    report = bench_mod.run_tear_bench(
        mesh, path, repetitions=args.reps, d=args.d,
        mesh_name=Path(args.model).stem,
    )
    out_csv = Path(args.out)
    out_csv.write_bytes(report.to_csv())
    png = out_csv.with_suffix(".png")
    bench_mod.render_report(report, str(png))
    print(f"wrote {out_csv} and {png}")
    print(f"clustering (offline): {report.clustering_micros / 1000.0:.1f} ms")
    print(f"segments {report.segments}, faces touched {report.faces_touched}"
          f"/{report.total_faces} ({report.touched_fraction():.1%})")
    print(f"p50 per-segment {report.segment_p50_ms:.2f} ms (budget {args.budget} ms)")
    if report.flagged_zero_work:
        print("flagged: path never touched the mesh (zero-work run)")
    if not report.gate(args.budget):
        print("BUDGET GATE FAILED", file=sys.stderr)
        return 1
    return 0


def _cmd_replay(args) -> int:
    messages = [
        json.loads(line)
        for line in Path(args.transcript).read_text().splitlines()
        if line.strip()
    ]
    session = replay_transcript(messages)
    obj_bytes, clustering_bytes = session.final_artifacts()
    Path(args.out).write_bytes(obj_bytes)
    if args.clustering:
        Path(args.clustering).write_bytes(clustering_bytes)
    print(f"replayed {len(messages)} messages; revision {session.revision}")
    return 0


def _cmd_serve(args) -> int:
    server = SessionServer(args.host, args.port, record_dir=args.record)
    print(f"session server on {args.host}:{args.port}"
          + (f", recording to {args.record}" if args.record else ""))
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="meshtear")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("info", help="summarize an OBJ model")
    p.add_argument("model")
    p.set_defaults(func=_cmd_info)

    p = sub.add_parser("synth", help="write a procedural model")
    p.add_argument("shape", choices=["blob", "grid", "cylinder"])
    p.add_argument("out")
    p.add_argument("--nx", type=int, default=40)
    p.add_argument("--ny", type=int, default=40)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("tear", help="apply a scalpel path to a model")
    p.add_argument("model")
    p.add_argument("path")
    p.add_argument("out")
    p.add_argument("--d", type=float, default=0.1)
    p.add_argument("--clustering", help="also write the clustering dump here")
    p.set_defaults(func=_cmd_tear)

    p = sub.add_parser("decompose", help="cluster a model into particles")
    p.add_argument("model")
    p.add_argument("out")
    p.add_argument("--d", type=float, default=0.1)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("bench", help="latency bench: CSV + PNG + budget gate")
    p.add_argument("model")
    p.add_argument("path")
    p.add_argument("out", help="CSV output path; PNG lands next to it")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--d", type=float, default=0.1)
    p.add_argument("--budget", type=float, default=bench_mod.DEFAULT_BUDGET_MS)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("replay", help="re-run a session transcript")
    p.add_argument("transcript", help="JSONL message log")
    p.add_argument("out", help="final mesh OBJ path")
    p.add_argument("--clustering", help="final clustering dump path")
    p.set_defaults(func=_cmd_replay)

    p = sub.add_parser("serve", help="run the session server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7341)
    p.add_argument("--record", help="directory for transcript JSONL files")
    p.set_defaults(func=_cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
