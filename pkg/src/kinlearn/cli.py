"""Command-line pipeline: generate | segment | learn | predict | eval.

All randomized stages draw from the single ``--seed`` flag, every
tolerance is a flag with its library default, and all emitted files use
``repr`` floats, so repeating an invocation with the same inputs and
seed produces byte-identical artifacts.

Exit codes: 0 success; 2 bad input (invalid spec, missing ground truth,
missing configuration, unparseable file); 3 fewer than 2 clusters;
4 disconnected parts; 5 unknown object id in a model database.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from dataclasses import dataclass

import numpy as np

from . import synth, trajectories
from .errors import (
    DisconnectedParts,
    InvalidSpec,
    KinlearnError,
    MissingConfiguration,
    MissingGroundTruth,
    ParseError,
    SchemaVersionMismatch,
    UnknownObject,
)
from .joints import (
    NoiseModel,
    fit_prismatic,
    fit_revolute,
    fit_rigid,
    relative_pose_sequence,
)
from .kingraph import (
    ModelDatabase,
    build_graph,
    evaluate,
    load_db,
    predict,
    save_db,
)
from .posegraph import (
    DEFAULT_INLIER_THRESHOLD,
    DEFAULT_SPARSE_STRIDE,
    estimate_cluster_poses,
)
from .segmentation import (
    DEFAULT_GAMMA_NORMAL,
    DEFAULT_GAMMA_POS,
    SimilarityParams,
    cluster,
    similarity_matrix,
)
from .trajectories import RIGID

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_TOO_FEW_CLUSTERS = 3
EXIT_DISCONNECTED = 4
EXIT_UNKNOWN_OBJECT = 5

MIN_FRAMES = 10


@dataclass
class RunConfig:
    """Resolved options for one CLI invocation."""

    subcommand: str
    seed: int = 0
    eps: float = 0.05
    min_pts: int = 5
    gamma_pos: float = DEFAULT_GAMMA_POS
    gamma_normal: float = DEFAULT_GAMMA_NORMAL
    inlier_thresh: float = DEFAULT_INLIER_THRESHOLD
    sparse_stride: int = DEFAULT_SPARSE_STRIDE
    sigma_pos: float = 0.01
    sigma_rot: float = 0.087
    fmt: str = "text"

    def similarity_params(self) -> SimilarityParams:
        return SimilarityParams(gamma_pos=self.gamma_pos, gamma_normal=self.gamma_normal)

    def noise_model(self) -> NoiseModel:
        return NoiseModel(sigma_pos=self.sigma_pos, sigma_rot=self.sigma_rot)


def _fmt(x: float) -> str:
    return repr(float(x))


def _write(path: str | None, text: str, stdout) -> None:
    if path:
        with open(path, "w") as f:
            f.write(text)
    else:
        stdout.write(text)


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig(subcommand=args.command, seed=args.seed)
    for name in ("eps", "min_pts", "gamma_pos", "gamma_normal",
                 "inlier_thresh", "sparse_stride", "sigma_pos", "sigma_rot"):
        if hasattr(args, name):
            setattr(cfg, name, getattr(args, name))
    if hasattr(args, "format"):
        cfg.fmt = args.format
    return cfg


# ---------------------------------------------------------------------------
# shared pipeline stages


def _segment(demo, cfg: RunConfig):
    matrix = similarity_matrix(demo, cfg.similarity_params())
    assignment = cluster(matrix, eps=cfg.eps, min_pts=cfg.min_pts)
    return matrix, assignment


def _dump_similarity(matrix, path: str) -> None:
    lines = ["id," + ",".join(str(i) for i in matrix.ids)]
    for i, tid in enumerate(matrix.ids):
        row = ",".join(
            "" if np.isnan(v) else _fmt(v) for v in matrix.values[i]
        )
        lines.append(f"{tid},{row}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _learn_pipeline(demo, cfg: RunConfig, object_id: str):
    """segment -> per-cluster poses -> kinematic graph; shared by learn/eval."""
    _, assignment = _segment(demo, cfg)
    if assignment.n_clusters() < 2:
        raise TooFewClusters(assignment.n_clusters())
    seqs = estimate_cluster_poses(
        demo, assignment,
        inlier_threshold=cfg.inlier_thresh,
        sparse_stride=cfg.sparse_stride,
        seed=cfg.seed,
    )
    if len(seqs) < 2:
        raise TooFewClusters(len(seqs))
    graph = build_graph(seqs, noise=cfg.noise_model(), object_id=object_id)
    return assignment, seqs, graph


class TooFewClusters(KinlearnError):
    def __init__(self, n):
        super().__init__(f"segmentation produced {n} cluster(s); need at least 2")
        self.n = n


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args, stdout, stderr) -> int:
    specs = synth.default_specs()
    if args.object not in specs:
        stderr.write(
            f"error: unknown object {args.object!r}; catalog: "
            + ", ".join(sorted(specs)) + "\n"
        )
        return EXIT_BAD_INPUT
    if args.frames < MIN_FRAMES:
        stderr.write(f"error: --frames must be >= {MIN_FRAMES}\n")
        return EXIT_BAD_INPUT
    spec = specs[args.object].with_noise(sigma_pos=args.noise, dropout=args.dropout)
    try:
        demo = synth.generate(spec, frames=args.frames, seed=args.seed)
    except InvalidSpec as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_BAD_INPUT
    trajectories.save(demo, args.output)
    stdout.write(
        f"{args.object}: {len(demo.trajectories)} trajectories, "
        f"{args.frames} frames -> {args.output}\n"
    )
    return EXIT_OK


def cmd_segment(args, stdout, stderr) -> int:
    cfg = _config_from_args(args)
    demo = trajectories.load(args.demo)
    matrix, assignment = _segment(demo, cfg)
    if args.dump_similarity:
        _dump_similarity(matrix, args.dump_similarity)
    noise = sum(1 for c in assignment.labels.values() if c == -1)
    lines = []
    if cfg.fmt == "csv":
        lines.append("trajectory,cluster")
        for tid in sorted(assignment.labels):
            lines.append(f"{tid},{assignment.labels[tid]}")
    else:
        lines.append(f"clusters: {assignment.n_clusters()} (noise: {noise})")
        for cid in sorted(assignment.clusters):
            members = assignment.clusters[cid]
            lines.append(f"cluster {cid}: {len(members)} trajectories")
    _write(args.output, "\n".join(lines) + "\n", stdout)
    if assignment.n_clusters() < 2:
        stderr.write("error: fewer than 2 clusters; nothing articulated to learn\n")
        return EXIT_TOO_FEW_CLUSTERS
    return EXIT_OK


def _bic_table(seqs, graph, noise) -> list[str]:
    by_id = {s.cluster_id: s for s in seqs}
    lines = []
    for a, b, model in graph.edges:
        rel = relative_pose_sequence(by_id[b], by_id[a])
        bics = {
            "rigid": fit_rigid(rel, noise).bic,
            "prismatic": fit_prismatic(rel, noise).bic,
            "revolute": fit_revolute(rel, noise).bic,
        }
        table = " ".join(f"{k}={_fmt(v)}" for k, v in bics.items())
        lines.append(f"edge ({a}, {b}): {model.kind}  BIC {table}")
    return lines


def cmd_learn(args, stdout, stderr) -> int:
    cfg = _config_from_args(args)
    demo = trajectories.load(args.demo)
    object_id = args.object
    if args.dump_similarity:
        matrix, _ = _segment(demo, cfg)
        _dump_similarity(matrix, args.dump_similarity)
    try:
        assignment, seqs, graph = _learn_pipeline(demo, cfg, object_id)
    except TooFewClusters as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_TOO_FEW_CLUSTERS
    except DisconnectedParts as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_DISCONNECTED

    db = ModelDatabase()
    db.add(graph, provenance={"demo": args.demo, "seed": str(cfg.seed)})
    save_db(db, args.output)

    poses_path = args.poses or args.output + ".poses.csv"
    lines = ["cluster,frame,qw,qx,qy,qz,tx,ty,tz,inliers"]
    for seq in seqs:
        for frame in sorted(seq.poses):
            p = seq.poses[frame]
            vals = ",".join(_fmt(v) for v in (*p.q, *p.t))
            lines.append(
                f"{seq.cluster_id},{frame},{vals},{seq.inlier_counts.get(frame, 0)}"
            )
    with open(poses_path, "w") as f:
        f.write("\n".join(lines) + "\n")

    noise = sum(1 for c in assignment.labels.values() if c == -1)
    stdout.write(f"clusters: {assignment.n_clusters()} (noise: {noise})\n")
    for line in _bic_table(seqs, graph, cfg.noise_model()):
        stdout.write(line + "\n")
    stdout.write(f"model db -> {args.output}\n")
    stdout.write(f"cluster poses -> {poses_path}\n")
    return EXIT_OK


def _parse_sweep(text: str):
    lo, hi, step = (float(v) for v in text.split(":"))
    if step <= 0 or hi < lo:
        raise ValueError("sweep must be LO:HI:STEP with STEP > 0 and HI >= LO")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def cmd_predict(args, stdout, stderr) -> int:
    try:
        db = load_db(args.db)
        graph = db.get(args.object)
    except (ParseError, SchemaVersionMismatch) as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_BAD_INPUT
    except UnknownObject as exc:
        stderr.write(
            f"error: {exc}; known objects: " + ", ".join(sorted(db.graphs)) + "\n"
        )
        return EXIT_UNKNOWN_OBJECT

    free_edges = [(a, b, m) for a, b, m in graph.edges if m.kind != RIGID]
    if args.schedule:
        rows = np.loadtxt(args.schedule, ndmin=2)
        if rows.shape[1] != len(free_edges):
            stderr.write(
                f"error: schedule has {rows.shape[1]} column(s), graph has "
                f"{len(free_edges)} non-rigid edge(s)\n"
            )
            return EXIT_BAD_INPUT
    elif args.sweep:
        try:
            qs = _parse_sweep(args.sweep)
        except ValueError as exc:
            stderr.write(f"error: {exc}\n")
            return EXIT_BAD_INPUT
        rows = np.repeat(qs[:, None], max(len(free_edges), 1), axis=1)
    elif free_edges:
        stderr.write("error: need --sweep or --schedule for non-rigid edges\n")
        return EXIT_BAD_INPUT
    else:
        rows = np.zeros((1, 0))

    header = ["row"]
    header += [f"q_{a}_{b}" for a, b, _ in free_edges]
    for v in graph.vertices:
        header += [f"p{v}_{c}" for c in ("qw", "qx", "qy", "qz", "tx", "ty", "tz")]
    header.append("extrapolated")
    lines = [",".join(header)]
    for r, qrow in enumerate(rows):
        configs = {(a, b): q for (a, b, _), q in zip(free_edges, qrow)}
        extrapolated = any(
            not (m.q_range()[0] <= q <= m.q_range()[1])
            for (_, _, m), q in zip(free_edges, qrow)
        )
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                poses = predict(graph, configs)
        except MissingConfiguration as exc:
            stderr.write(f"error: {exc}\n")
            return EXIT_BAD_INPUT
        cells = [str(r)] + [_fmt(q) for q in qrow]
        for v in graph.vertices:
            p = poses[v]
            cells += [_fmt(x) for x in (*p.q, *p.t)]
        cells.append("1" if extrapolated else "0")
        lines.append(",".join(cells))
    _write(args.output, "\n".join(lines) + "\n", stdout)
    return EXIT_OK


def cmd_eval(args, stdout, stderr) -> int:
    cfg = _config_from_args(args)
    try:
        db = load_db(args.db)
        db.get(args.object)
    except (ParseError, SchemaVersionMismatch) as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_BAD_INPUT
    except UnknownObject as exc:
        stderr.write(
            f"error: {exc}; known objects: " + ", ".join(sorted(db.graphs)) + "\n"
        )
        return EXIT_UNKNOWN_OBJECT

    rows = []
    successes = types_ok = 0
    for demo_path in args.demos:
        demo = trajectories.load(demo_path)
        if demo.ground_truth is None:
            stderr.write(f"error: {demo_path}: no ground truth sidecar\n")
            return EXIT_BAD_INPUT
        try:
            assignment, seqs, graph = _learn_pipeline(demo, cfg, args.object)
            report = evaluate(
                graph, seqs, assignment, demo.ground_truth, cfg.noise_model()
            )
        except KinlearnError as exc:
            rows.append((demo_path, False, False, float("nan"), float("nan"), str(exc)))
            continue
        successes += report.success
        types_ok += report.types_correct
        rows.append((
            demo_path, report.success, report.types_correct,
            report.mean_pose_error_m, report.mean_pose_error_deg, "",
        ))

    n = len(args.demos)
    lines = []
    if cfg.fmt == "csv":
        lines.append("demo,success,types_correct,mean_pos_m,mean_rot_deg,note")
        for path, ok, tc, pos, rot, note in rows:
            lines.append(
                f"{path},{int(ok)},{int(tc)},{_fmt(pos)},{_fmt(rot)},{note}"
            )
    else:
        for path, ok, tc, pos, rot, note in rows:
            status = "ok" if ok else "FAIL"
            detail = note or (
                f"mean {_fmt(pos)} m / {_fmt(rot)} deg, "
                f"types {'ok' if tc else 'WRONG'}"
            )
            lines.append(f"{path}: {status} ({detail})")
        lines.append(f"{args.object}: {successes}/{n} success, {types_ok}/{n} correct types")
    _write(args.output, "\n".join(lines) + "\n", stdout)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_segmentation_flags(p):
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--min-pts", type=int, default=5, dest="min_pts")
    p.add_argument("--gamma-pos", type=float, default=DEFAULT_GAMMA_POS, dest="gamma_pos")
    p.add_argument("--gamma-normal", type=float, default=DEFAULT_GAMMA_NORMAL,
                   dest="gamma_normal")
    p.add_argument("--dump-similarity", dest="dump_similarity", metavar="CSV")


def _add_learning_flags(p):
    p.add_argument("--inlier-thresh", type=float, default=DEFAULT_INLIER_THRESHOLD,
                   dest="inlier_thresh")
    p.add_argument("--sparse-stride", type=int, default=DEFAULT_SPARSE_STRIDE,
                   dest="sparse_stride")
    p.add_argument("--sigma-pos", type=float, default=0.01, dest="sigma_pos")
    p.add_argument("--sigma-rot", type=float, default=0.087, dest="sigma_rot")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kinlearn",
        description="Learn kinematic models of articulated objects from "
                    "3-D feature trajectories.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a demonstration")
    g.add_argument("--object", required=True)
    g.add_argument("--frames", type=int, default=120)
    g.add_argument("--noise", type=float, default=0.0, help="position sigma (m)")
    g.add_argument("--dropout", type=float, default=0.0, help="per-frame loss prob")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--output", required=True)

    s = sub.add_parser("segment", help="cluster trajectories into rigid parts")
    s.add_argument("demo")
    s.add_argument("--seed", type=int, default=0)
    _add_segmentation_flags(s)
    s.add_argument("--format", choices=("text", "csv"), default="text")
    s.add_argument("-o", "--output")

    l = sub.add_parser("learn", help="learn a kinematic graph from a demo")
    l.add_argument("demo")
    l.add_argument("--object", required=True, help="object id for the model db")
    l.add_argument("--seed", type=int, default=0)
    _add_segmentation_flags(l)
    _add_learning_flags(l)
    l.add_argument("--poses", metavar="CSV", help="per-cluster pose CSV path")
    l.add_argument("-o", "--output", required=True, help="model db path")

    p = sub.add_parser("predict", help="sweep configurations through a model")
    p.add_argument("db")
    p.add_argument("--object", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sweep", metavar="LO:HI:STEP")
    p.add_argument("--schedule", metavar="FILE")
    p.add_argument("--format", choices=("text", "csv"), default="csv")
    p.add_argument("-o", "--output")

    e = sub.add_parser("eval", help="evaluate models against ground truth")
    e.add_argument("db")
    e.add_argument("demos", nargs="+")
    e.add_argument("--object", required=True)
    e.add_argument("--seed", type=int, default=0)
    _add_segmentation_flags(e)
    _add_learning_flags(e)
    e.add_argument("--format", choices=("text", "csv"), default="text")
    e.add_argument("-o", "--output")
    return parser


_COMMANDS = {
    "generate": cmd_generate,
    "segment": cmd_segment,
    "learn": cmd_learn,
    "predict": cmd_predict,
    "eval": cmd_eval,
}


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args, stdout, stderr)
    except FileNotFoundError as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_BAD_INPUT
    except ParseError as exc:
        stderr.write(f"error: {exc}\n")
        return EXIT_BAD_INPUT


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
