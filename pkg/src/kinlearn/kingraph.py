"""Kinematic tree assembly, persistence and articulated-motion prediction.

Every pair of clusters sharing enough frames gets a fitted joint model;
the object's structure is the minimum spanning tree of the resulting
graph under BIC edge costs, with deterministic lexicographic
tie-breaking. Learned graphs live in a schema-versioned text database
keyed by object id and can be replayed at arbitrary configurations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DisconnectedParts,
    DuplicateObject,
    MissingConfiguration,
    ParseError,
    SchemaVersionMismatch,
    UnknownObject,
)
from .geometry import Pose, compose, inverse, relative, rotation_angle
from .joints import (
    JointModel,
    NoiseModel,
    RelativePoseSequence,
    model_fit_error,
    relative_pose_sequence,
    select_model,
)
from .trajectories import PRISMATIC, REVOLUTE, RIGID

__all__ = [
    "KinematicGraph",
    "ModelDatabase",
    "EdgeReport",
    "EvaluationReport",
    "build_graph",
    "minimum_spanning_tree",
    "predict",
    "save_db",
    "load_db",
    "evaluate",
]

DB_SCHEMA = 1

SUCCESS_MAX_POS = 0.10  # meters, mean pose error
SUCCESS_MAX_ROT = 25.0  # degrees, mean pose error


@dataclass
class KinematicGraph:
    """Spanning tree of part ids with a joint model per edge.

    An edge (a, b, model) means pose_b = pose_a composed with the model's
    predicted relative pose; the root is the lowest part id.
    """

    object_id: str
    vertices: tuple[int, ...]
    edges: tuple[tuple[int, int, JointModel], ...]

    def __post_init__(self):
        self.vertices = tuple(sorted(self.vertices))
        if len(self.edges) != len(self.vertices) - 1:
            raise ValueError("edges do not form a spanning tree")
        seen = {self.root()}
        remaining = list(self.edges)
        while remaining:
            progress = [e for e in remaining if e[0] in seen or e[1] in seen]
            if not progress:
                raise ValueError("edges do not form a spanning tree")
            for e in progress:
                seen.update((e[0], e[1]))
                remaining.remove(e)
        if seen != set(self.vertices):
            raise ValueError("edges do not form a spanning tree")

    def root(self) -> int:
        return self.vertices[0]

    def edge_between(self, a: int, b: int):
        for e in self.edges:
            if {e[0], e[1]} == {a, b}:
                return e
        return None


def build_graph(pose_seqs, noise: NoiseModel | None = None, object_id: str = "") -> KinematicGraph:
    """Fit all pairwise joint models and keep the BIC-minimum spanning tree.

    Pairs sharing fewer than 3 frames get no candidate edge; if the
    remaining candidates cannot connect every cluster, DisconnectedParts
    is raised. A single cluster yields a trivial one-vertex graph with a
    warning.
    """
    seqs = sorted(pose_seqs, key=lambda s: s.cluster_id)
    ids = [s.cluster_id for s in seqs]
    if len(ids) == 1:
        warnings.warn("single part: trivial kinematic graph", RuntimeWarning)
        return KinematicGraph(object_id, tuple(ids), ())

    candidates = []
    for i in range(len(seqs)):
        for j in range(i + 1, len(seqs)):
            a, b = seqs[i], seqs[j]
            common = set(a.poses) & set(b.poses)
            if len(common) < 3:
                continue
            rel = relative_pose_sequence(b, a)
            model = select_model(rel, noise)
            candidates.append((float(model.bic), a.cluster_id, b.cluster_id, model))

    try:
        edges = minimum_spanning_tree(ids, candidates)
    except DisconnectedParts:
        raise DisconnectedParts(
            "no spanning tree: some cluster pairs never share enough frames"
        ) from None
    return KinematicGraph(object_id, tuple(ids), tuple(edges))


def minimum_spanning_tree(ids, candidates):
    """Kruskal over (cost, a, b, payload) candidates, deterministic ties.

    Candidates are visited in ascending (cost, a, b) order so equal-cost
    instances always resolve the same way. Returns (a, b, payload) edges;
    raises DisconnectedParts when the candidates cannot span ``ids``.
    """
    ids = sorted(ids)
    ordered = sorted(candidates, key=lambda c: (c[0], c[1], c[2]))
    parent = {v: v for v in ids}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    edges = []
    for cost, a, b, payload in ordered:
        ra, rb = find(a), find(b)
        if ra == rb:
            continue
        parent[ra] = rb
        edges.append((a, b, payload))
        if len(edges) == len(ids) - 1:
            break
    if len(edges) != len(ids) - 1:
        raise DisconnectedParts("candidate edges do not span all parts")
    return edges


def _edge_config(configurations, a, b):
    if (a, b) in configurations:
        return configurations[(a, b)]
    if (b, a) in configurations:
        return configurations[(b, a)]
    return None


def predict(
    graph: KinematicGraph,
    configurations: dict,
    base_pose: Pose | None = None,
) -> dict[int, Pose]:
    """Part poses at the given per-edge configurations.

    The root part carries ``base_pose`` (identity by default); every
    other part's pose follows its path to the root through the edge
    models. Rigid edges need no configuration; configurations outside
    the observed range trigger an extrapolation warning but are honored.
    """
    base_pose = base_pose or Pose.identity()
    poses = {graph.root(): base_pose}
    remaining = list(graph.edges)
    while remaining:
        progress = False
        for e in list(remaining):
            a, b, model = e
            if a in poses:
                src, dst, forward = a, b, True
            elif b in poses:
                src, dst, forward = b, a, False
            else:
                continue
            if model.kind == RIGID:
                q = 0.0
            else:
                q = _edge_config(configurations, a, b)
                if q is None:
                    raise MissingConfiguration(
                        f"edge ({a}, {b}) [{model.kind}] needs a configuration"
                    )
                lo, hi = model.q_range()
                if not lo <= q <= hi:
                    warnings.warn(
                        f"edge ({a}, {b}): configuration {q} outside observed "
                        f"range [{lo}, {hi}], extrapolating",
                        RuntimeWarning,
                    )
            delta = model.predict(float(q))
            if not forward:
                delta = inverse(delta)
            poses[dst] = compose(poses[src], delta)
            remaining.remove(e)
            progress = True
        if not progress:
            raise ValueError("graph is not connected")
    return poses


# ---------------------------------------------------------------------------
# persistence


@dataclass
class ModelDatabase:
    """Object id -> learned kinematic graph plus free-form provenance."""

    graphs: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def add(self, graph: KinematicGraph, provenance: dict | None = None) -> None:
        if graph.object_id in self.graphs:
            raise DuplicateObject(f"object {graph.object_id!r} already stored")
        if not graph.object_id or any(c.isspace() for c in graph.object_id):
            raise ValueError("object id must be a non-empty token")
        self.graphs[graph.object_id] = graph
        self.provenance[graph.object_id] = dict(provenance or {})

    def get(self, object_id: str) -> KinematicGraph:
        if object_id not in self.graphs:
            raise UnknownObject(f"no model for object {object_id!r}")
        return self.graphs[object_id]


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.atleast_1d(values))


_PARAM_NAMES = {
    RIGID: ("rotation", "translation"),
    PRISMATIC: ("axis", "base", "rotation"),
    REVOLUTE: ("axis", "center", "base"),
}


def save_db(db: ModelDatabase, path: str) -> None:
    lines = [f"kgraphdb {DB_SCHEMA}"]
    for oid in sorted(db.graphs):
        g = db.graphs[oid]
        lines.append(f"object {oid}")
        for key in sorted(db.provenance.get(oid, {})):
            lines.append(f"provenance {key} {db.provenance[oid][key]}")
        lines.append("vertices " + " ".join(str(v) for v in g.vertices))
        for a, b, m in g.edges:
            lines.append(
                f"edge {a} {b} {m.kind} {m.p} "
                f"{float(m.loglik)!r} {float(m.bic)!r} {int(m.degenerate)}"
            )
            for name in _PARAM_NAMES[m.kind]:
                value = m.params[name]
                if isinstance(value, Pose):
                    lines.append(f"param {name} {_fmt(value.q)} {_fmt(value.t)}")
                else:
                    lines.append(f"param {name} {_fmt(value)}")
            lines.append("configs " + _fmt(m.configurations))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_db(path: str) -> ModelDatabase:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    header = lines[0].split()
    if len(header) != 2 or header[0] != "kgraphdb":
        raise ParseError("expected header 'kgraphdb <schema>'", line=1)
    if header[1] != str(DB_SCHEMA):
        raise SchemaVersionMismatch(header[1], str(DB_SCHEMA))

    db = ModelDatabase()
    oid = None
    vertices: list[int] = []
    edges: list = []
    provenance: dict = {}
    pending: list | None = None  # [a, b, model kwargs]

    def finish_edge(lineno):
        nonlocal pending
        if pending is None:
            return
        a, b, kw = pending
        missing = [n for n in _PARAM_NAMES[kw["kind"]] if n not in kw["params"]]
        if missing or "configurations" not in kw:
            raise ParseError(f"edge ({a}, {b}) incomplete: missing {missing}", line=lineno)
        edges.append((a, b, JointModel(**kw)))
        pending = None

    def finish_object(lineno):
        nonlocal oid, vertices, edges, provenance
        if oid is None:
            return
        finish_edge(lineno)
        try:
            graph = KinematicGraph(oid, tuple(vertices), tuple(edges))
        except ValueError as exc:
            raise ParseError(f"object {oid}: {exc}", line=lineno) from None
        db.add(graph, provenance)
        oid, vertices, edges, provenance = None, [], [], {}

    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split()
        tag = parts[0]
        try:
            if tag == "object":
                finish_object(lineno)
                oid = parts[1]
            elif tag == "provenance":
                provenance[parts[1]] = " ".join(parts[2:])
            elif tag == "vertices":
                vertices = [int(v) for v in parts[1:]]
            elif tag == "edge":
                finish_edge(lineno)
                kind = parts[3]
                if kind not in _PARAM_NAMES:
                    raise ParseError(f"unknown joint kind {kind!r}", line=lineno)
                pending = [
                    int(parts[1]),
                    int(parts[2]),
                    {
                        "kind": kind,
                        "params": {},
                        "p": int(parts[4]),
                        "loglik": float(parts[5]),
                        "bic": float(parts[6]),
                        "configurations": None,
                        "degenerate": bool(int(parts[7])),
                    },
                ]
            elif tag == "param":
                if pending is None:
                    raise ParseError("param record outside an edge", line=lineno)
                name = parts[1]
                vals = np.array([float(v) for v in parts[2:]])
                if name == "base" and pending[2]["kind"] == REVOLUTE:
                    if len(vals) != 7:
                        raise ParseError("base pose needs 7 floats", line=lineno)
                    pending[2]["params"][name] = Pose(vals[:4], vals[4:])
                else:
                    pending[2]["params"][name] = vals
            elif tag == "configs":
                if pending is None:
                    raise ParseError("configs record outside an edge", line=lineno)
                pending[2]["configurations"] = np.array([float(v) for v in parts[1:]])
            else:
                raise ParseError(f"unknown record tag {tag!r}", line=lineno)
        except ParseError:
            raise
        except (ValueError, IndexError) as exc:
            raise ParseError(str(exc), line=lineno) from None
    finish_object(len(lines) + 1)
    return db


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EdgeReport:
    clusters: tuple[int, int]
    parts: tuple[int, int]
    kind: str
    true_kind: str | None
    kind_correct: bool
    axis_error_deg: float | None
    axis_position_error_m: float | None
    fit_error_m: float
    fit_error_deg: float


@dataclass
class EvaluationReport:
    part_of_cluster: dict[int, int]
    pose_rmse_m: dict[int, float]
    pose_rmse_deg: dict[int, float]
    edges: list[EdgeReport]
    mean_pose_error_m: float
    mean_pose_error_deg: float
    types_correct: bool
    success: bool


def _axis_direction_error(fitted, true_axis) -> float:
    cosang = abs(float(np.asarray(fitted) @ np.asarray(true_axis)))
    return float(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))))


def _line_distance(p1, d1, p2, d2) -> float:
    """Distance between two 3-D lines (point, direction)."""
    cross = np.cross(d1, d2)
    off = np.asarray(p2) - np.asarray(p1)
    n = np.linalg.norm(cross)
    if n < 1e-9:  # parallel lines
        return float(np.linalg.norm(off - (off @ d1) * np.asarray(d1)))
    return float(abs(off @ cross) / n)


def evaluate(
    graph: KinematicGraph,
    pose_seqs,
    assignment,
    ground_truth,
    noise: NoiseModel | None = None,
) -> EvaluationReport:
    """Compare a learned graph against synthetic ground truth.

    Clusters map to parts by majority vote over their member labels.
    Pose RMSE compares each cluster's estimated motion with the true
    part motion relative to the cluster's first observed frame; the
    success flag applies the mean 10 cm / 25 degree rule.
    """
    by_cluster = {s.cluster_id: s for s in pose_seqs}
    part_of_cluster: dict[int, int] = {}
    for cid, members in assignment.clusters.items():
        if cid not in by_cluster:
            continue
        votes: dict[int, int] = {}
        for tid in members:
            part = ground_truth.labels[tid]
            votes[part] = votes.get(part, 0) + 1
        part_of_cluster[cid] = max(sorted(votes), key=lambda p: votes[p])

    pose_rmse_m: dict[int, float] = {}
    pose_rmse_deg: dict[int, float] = {}
    all_pos: list[float] = []
    all_rot: list[float] = []
    for cid, seq in by_cluster.items():
        part = part_of_cluster[cid]
        first = seq.first_frame()
        ref = ground_truth.part_poses[part][first]
        sq_pos: list[float] = []
        sq_rot: list[float] = []
        for f, pose in seq.poses.items():
            true = compose(ground_truth.part_poses[part][f], inverse(ref))
            err = relative(pose, true)
            sq_pos.append(float(np.linalg.norm(err.t)) ** 2)
            sq_rot.append(float(np.degrees(rotation_angle(err))) ** 2)
            all_pos.append(np.sqrt(sq_pos[-1]))
            all_rot.append(np.sqrt(sq_rot[-1]))
        pose_rmse_m[part] = float(np.sqrt(np.mean(sq_pos)))
        pose_rmse_deg[part] = float(np.sqrt(np.mean(sq_rot)))

    gt_joints = {
        frozenset((j.parent, j.child)): j for j in ground_truth.joints
    }
    edge_reports: list[EdgeReport] = []
    for a, b, model in graph.edges:
        pa, pb = part_of_cluster[a], part_of_cluster[b]
        true_joint = gt_joints.get(frozenset((pa, pb)))
        true_kind = true_joint.kind if true_joint else None
        correct = true_kind == model.kind
        axis_err = pos_err = None
        if correct and model.kind in (PRISMATIC, REVOLUTE):
            axis_err = _axis_direction_error(model.params["axis"], true_joint.axis)
            if model.kind == REVOLUTE:
                pos_err = _line_distance(
                    model.params["center"], model.params["axis"],
                    true_joint.origin, true_joint.axis,
                )
        rel = relative_pose_sequence(by_cluster[b], by_cluster[a])
        fe_m, fe_deg = model_fit_error(model, rel)
        edge_reports.append(
            EdgeReport((a, b), (pa, pb), model.kind, true_kind, correct,
                       axis_err, pos_err, fe_m, fe_deg)
        )

    mean_pos = float(np.mean(all_pos)) if all_pos else 0.0
    mean_rot = float(np.mean(all_rot)) if all_rot else 0.0
    types_ok = all(e.kind_correct for e in edge_reports)
    success = mean_pos < SUCCESS_MAX_POS and mean_rot < SUCCESS_MAX_ROT
    return EvaluationReport(
        part_of_cluster, pose_rmse_m, pose_rmse_deg, edge_reports,
        mean_pos, mean_rot, types_ok, success,
    )
