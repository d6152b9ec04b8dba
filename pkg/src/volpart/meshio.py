"""File formats: labeled surfaces in, tet meshes in, parts and plans out.

Surfaces arrive as OBJ with material groups (one material per attribute,
named ``attr_<k>`` or mapped in first-seen order) or OFF with per-face color
rows (exact RGB triples mapped through a sidecar JSON table when present).
Tet meshes arrive as TetGen .node/.ele pairs or MEDIT .mesh files and are
matched to the surface boundary. Output is one OBJ per part plus plan.json
and report.json; floats are serialized with 17 significant digits and vertex
ordering is deterministic, so reruns produce byte-identical files.
"""

from __future__ import annotations

import json
import os
import re
from collections import defaultdict

import numpy as np

from .errors import (BoundaryMismatch, FormatError, OpenPartBoundary,
                     ParseError, UnlabeledFace)
from .oracle import PartGeometry
from .surface import LabeledSurfaceMesh
from .tetmesh import LabeledTetMesh


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# --------------------------------------------------------------------------
# surface loaders
# --------------------------------------------------------------------------

def load_labeled_surface(path) -> LabeledSurfaceMesh:
    path = os.fspath(path)
    if path.lower().endswith(".obj"):
        return _load_obj_surface(path)
    if path.lower().endswith(".off"):
        return _load_off_surface(path)
    raise ParseError(f"unsupported surface format: {path}")


def _material_label(name: str, table: dict) -> int:
    m = re.fullmatch(r"attr_(\d+)", name)
    if m:
        return int(m.group(1))
    if name not in table:
        table[name] = len(table)
    return table[name]


def _load_obj_surface(path) -> LabeledSurfaceMesh:
    verts = []
    faces = []
    labels = []
    current = None
    table = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            tok = line.split()
            if not tok or tok[0].startswith("#"):
                continue
            if tok[0] == "v":
                verts.append([float(x) for x in tok[1:4]])
            elif tok[0] == "usemtl":
                current = _material_label(tok[1], table)
            elif tok[0] == "f":
                if current is None:
                    raise UnlabeledFace(f"{path}:{ln}: face before usemtl")
                idx = [int(t.split("/")[0]) for t in tok[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                if len(idx) != 3:
                    # fan-triangulate, same material
                    for k in range(1, len(idx) - 1):
                        faces.append([idx[0], idx[k], idx[k + 1]])
                        labels.append(current)
                    continue
                faces.append(idx)
                labels.append(current)
    if not faces:
        raise ParseError(f"{path}: no faces")
    return LabeledSurfaceMesh(np.array(verts), np.array(faces), np.array(labels))


def _load_off_surface(path) -> LabeledSurfaceMesh:
    sidecar = path + ".labels.json"
    color_table = None
    if os.path.exists(sidecar):
        with open(sidecar) as fh:
            raw = json.load(fh)
        color_table = {tuple(map(float, k.split(","))): int(v)
                       for k, v in raw.items()}
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#")[0].strip()
            if line:
                tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise ParseError(f"{path}: missing OFF header")
    pos = 1
    nv, nf = int(tokens[pos]), int(tokens[pos + 1])
    pos += 3
    verts = np.array(tokens[pos:pos + 3 * nv], dtype=np.float64).reshape(nv, 3)
    pos += 3 * nv
    faces = []
    labels = []
    seen = {}
    for _ in range(nf):
        cnt = int(tokens[pos])
        if cnt != 3:
            raise ParseError(f"{path}: only triangles supported")
        idx = [int(t) for t in tokens[pos + 1:pos + 4]]
        color = tokens[pos + 4:pos + 7]
        if len(color) < 3:
            raise UnlabeledFace(f"{path}: face without color row")
        key = tuple(float(c) for c in color)
        if color_table is not None:
            if key not in color_table:
                raise UnlabeledFace(f"{path}: color {key} missing from "
                                    "sidecar table")
            labels.append(color_table[key])
        else:
            if key not in seen:
                seen[key] = len(seen)
            labels.append(seen[key])
        faces.append(idx)
        pos += 7
    return LabeledSurfaceMesh(verts, np.array(faces), np.array(labels))


# --------------------------------------------------------------------------
# tet mesh loaders
# --------------------------------------------------------------------------

def _read_numeric_rows(path, expected_cols):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.split("#")[0].strip()
            if line:
                rows.append(line.split())
    if not rows:
        raise FormatError(f"{path}: empty file")
    return rows


def load_tet_mesh(node_path, ele_path, surface: LabeledSurfaceMesh,
                  resolve=True) -> LabeledTetMesh:
    """TetGen .node/.ele pair conforming to the given surface."""
    rows = _read_numeric_rows(node_path, 4)
    n_nodes = int(rows[0][0])
    if len(rows) < n_nodes + 1:
        raise FormatError(f"{node_path}: truncated node list")
    ids = []
    pts = []
    for r in rows[1:n_nodes + 1]:
        ids.append(int(r[0]))
        pts.append([float(x) for x in r[1:4]])
    base = min(ids)
    order = np.argsort(ids)
    verts = np.array(pts)[order]
    id_map = {ids[i]: k for k, i in enumerate(order)}

    rows = _read_numeric_rows(ele_path, 5)
    n_tets = int(rows[0][0])
    if len(rows) < n_tets + 1:
        raise FormatError(f"{ele_path}: truncated element list")
    tets = []
    for r in rows[1:n_tets + 1]:
        try:
            tets.append([id_map[int(x)] for x in r[1:5]])
        except KeyError as exc:
            raise FormatError(
                f"{ele_path}: element references missing node {exc}") from exc
    return _finish_tet_mesh(verts, np.array(tets, dtype=np.int64), surface,
                            resolve)


def load_medit_mesh(path, surface: LabeledSurfaceMesh,
                    resolve=True) -> LabeledTetMesh:
    """MEDIT .mesh (ASCII) tetrahedral file."""
    with open(path) as fh:
        tokens = fh.read().split()
    def find(kw):
        for i, t in enumerate(tokens):
            if t.lower() == kw:
                return i
        return -1
    iv = find("vertices")
    it = find("tetrahedra")
    if iv < 0 or it < 0:
        raise FormatError(f"{path}: missing Vertices/Tetrahedra sections")
    nv = int(tokens[iv + 1])
    verts = np.array(tokens[iv + 2:iv + 2 + 4 * nv],
                     dtype=np.float64).reshape(nv, 4)[:, :3]
    nt = int(tokens[it + 1])
    tets = np.array(tokens[it + 2:it + 2 + 5 * nt],
                    dtype=np.int64).reshape(nt, 5)[:, :4] - 1
    if tets.min() < 0 or tets.max() >= nv:
        raise FormatError(f"{path}: tetrahedron references missing vertex")
    return _finish_tet_mesh(verts, tets, surface, resolve)


def _finish_tet_mesh(verts, tets, surface, resolve):
    """Match the tet boundary to the surface, transfer labels, split
    conflicting tets."""
    from .tetmesh import _extract_boundary
    bd_tris, _, _ = _extract_boundary(tets)
    tol = 1e-6 * surface.bbox_diag

    # vertex correspondence by position
    from scipy.spatial import cKDTree
    tree = cKDTree(surface.vertices)
    dist, near = tree.query(verts[np.unique(bd_tris)])
    bd_verts = np.unique(bd_tris)
    if np.any(dist > tol):
        worst = float(dist.max())
        raise BoundaryMismatch(
            f"tet boundary vertex deviates {worst:g} from the surface "
            f"(tolerance {tol:g})")
    to_surface = dict(zip(bd_verts.tolist(), near.tolist()))

    face_of = {}
    for fidx, tri in enumerate(surface.faces):
        face_of[tuple(sorted(map(int, tri)))] = fidx

    labels = np.empty(len(bd_tris), dtype=np.int64)
    fmap = np.empty(len(bd_tris), dtype=np.int64)
    unmatched = []
    for b, tri in enumerate(bd_tris):
        key = tuple(sorted(to_surface[int(v)] for v in tri))
        f = face_of.get(key)
        if f is None:
            unmatched.append(b)
            continue
        labels[b] = surface.face_label[f]
        fmap[b] = f
    if unmatched:
        # conforming refinements: match by centroid containment
        for b in unmatched:
            c = verts[bd_tris[b]].mean(axis=0)
            hit = surface.bvh.sq_distance(c)
            if hit > tol * tol:
                raise BoundaryMismatch(
                    f"boundary triangle {b} lies off the surface")
            best = None
            for fidx, tri in enumerate(surface.faces):
                from .geom import point_triangle_sqdistance
                d = point_triangle_sqdistance(c, *surface.vertices[tri])
                if d <= tol * tol:
                    best = fidx
                    break
            if best is None:
                raise BoundaryMismatch(
                    f"boundary triangle {b} matches no surface face")
            labels[b] = surface.face_label[best]
            fmap[b] = best

    tm = LabeledTetMesh(verts, tets, labels, fmap)
    if resolve:
        tm, _ = tm.resolve_conflicts()
    return tm


def write_tetgen(tm: LabeledTetMesh, node_path, ele_path):
    with open(node_path, "w") as fh:
        fh.write(f"{len(tm.vertices)} 3 0 0\n")
        for i, v in enumerate(tm.vertices):
            fh.write(f"{i} {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
    with open(ele_path, "w") as fh:
        fh.write(f"{len(tm.tets)} 4 0\n")
        for i, t in enumerate(tm.tets):
            fh.write(f"{i} {t[0]} {t[1]} {t[2]} {t[3]}\n")


# --------------------------------------------------------------------------
# writers
# --------------------------------------------------------------------------

def write_obj_mesh(path, vertices, faces, material=None):
    with open(path, "w") as fh:
        if material is not None:
            fh.write(f"usemtl {material}\n")
        for v in vertices:
            fh.write(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
        for f in faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def write_labeled_obj(path, mesh: LabeledSurfaceMesh):
    """Surface with one usemtl group per attribute (faces re-grouped)."""
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {_fmt(v[0])} {_fmt(v[1])} {_fmt(v[2])}\n")
        for attr in mesh.attributes:
            fh.write(f"usemtl attr_{int(attr)}\n")
            for f in np.flatnonzero(mesh.face_label == attr):
                a, b, c = mesh.faces[f] + 1
                fh.write(f"f {a} {b} {c}\n")


def check_part_mesh(mesh: PartGeometry, part_id):
    """Closed 2-manifold write gate."""
    edges = defaultdict(int)
    for f in mesh.faces:
        for e in range(3):
            a, b = int(f[e]), int(f[(e + 1) % 3])
            if a == b:
                raise OpenPartBoundary(f"part {part_id}: degenerate edge")
            edges[(min(a, b), max(a, b))] += 1
    bad = [e for e, c in edges.items() if c != 2]
    if bad:
        raise OpenPartBoundary(
            f"part {part_id}: {len(bad)} edges are not 2-manifold "
            f"(first: {bad[0]})")


def write_parts(result, out_dir) -> list:
    """One OBJ per part + plan.json + report.json; returns written paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for part in result.parts:
        check_part_mesh(part.mesh, part.part_id)
        path = os.path.join(out_dir, f"part_{part.part_id}.obj")
        write_obj_mesh(path, part.mesh.vertices, part.mesh.faces,
                       material=f"attr_{int(part.attribute)}")
        written.append(path)

    plan_path = os.path.join(out_dir, "plan.json")
    with open(plan_path, "w") as fh:
        json.dump(result.plan.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    written.append(plan_path)

    report_path = os.path.join(out_dir, "report.json")
    with open(report_path, "w") as fh:
        json.dump(_round_floats(result.report), fh, indent=1, sort_keys=True)
        fh.write("\n")
    written.append(report_path)
    return written


def _round_floats(obj):
    if isinstance(obj, float):
        return float(_fmt(obj))
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(_fmt(float(obj)))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def load_part_obj(path) -> tuple[PartGeometry, int]:
    """Part OBJ written by write_parts: mesh + attribute id."""
    verts = []
    faces = []
    attr = -1
    with open(path) as fh:
        for line in fh:
            tok = line.split()
            if not tok:
                continue
            if tok[0] == "v":
                verts.append([float(x) for x in tok[1:4]])
            elif tok[0] == "usemtl":
                m = re.fullmatch(r"attr_(\d+)", tok[1])
                if m:
                    attr = int(m.group(1))
            elif tok[0] == "f":
                faces.append([int(t.split("/")[0]) - 1 for t in tok[1:4]])
    return PartGeometry(np.array(verts), np.array(faces, dtype=np.int64)), attr
