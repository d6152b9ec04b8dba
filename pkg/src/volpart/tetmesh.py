"""Labeled tetrahedral mesh: boundary extraction, dual graph, seed labels.

The boundary triangle set of the tet mesh is the working surface for the
whole pipeline; after conflict splitting every boundary triangle maps back to
the surface face it originated from.

Seed constraints follow the manifold-labeling rule: a tet incident on a
surface face, an interior surface edge, or an interior surface vertex of a
region is pinned to that region's part. Tets whose incident simplices pin
them to different regions are split (edge / face / barycenter splits chosen
by how the conflicting simplices sit inside the tet) until no conflicts
remain.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from . import geom
from .errors import InfeasibleConstraints, InvertedTet
from .surface import LabeledSurfaceMesh

UNASSIGNED = -1

# local faces with outward winding for a positively oriented tet (a,b,c,d)
_TET_FACES = ((0, 2, 1), (0, 1, 3), (0, 3, 2), (1, 2, 3))
_TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


@dataclass
class DualGraph:
    """One node per tet at its barycenter; one arc per internal face."""
    arc_tets: np.ndarray      # (A, 2) tet indices
    arc_area: np.ndarray      # (A,)
    arc_normal: np.ndarray    # (A, 3) unit, pointing from arc_tets[:,0] to [:,1]
    arc_verts: np.ndarray     # (A, 3) face vertex indices
    arc_centroid: np.ndarray  # (A, 3)
    barycenters: np.ndarray   # (T, 3)

    @property
    def n_arcs(self) -> int:
        return len(self.arc_tets)


class LabeledTetMesh:
    def __init__(self, vertices, tets, bd_label, surface_face_map=None,
                 part_of=None, fix_orientation=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        tets = np.ascontiguousarray(tets, dtype=np.int64)
        if fix_orientation:
            vols = geom.tet_volumes(self.vertices, tets)
            if np.any(vols == 0.0):
                raise InvertedTet(f"degenerate tet {int(np.argmin(np.abs(vols)))}")
            flip = vols < 0
            if np.any(flip):
                tets = tets.copy()
                tets[flip, 2], tets[flip, 3] = tets[flip, 3], tets[flip, 2].copy()
        self.tets = tets
        self.part_of = (np.full(len(tets), UNASSIGNED, dtype=np.int64)
                        if part_of is None else
                        np.ascontiguousarray(part_of, dtype=np.int64))

        self.bd_tris, self.bd_tet, self._internal = _extract_boundary(self.tets)
        bd_label = np.ascontiguousarray(bd_label, dtype=np.int64)
        if len(bd_label) != len(self.bd_tris):
            raise ValueError("boundary label count mismatch")
        self.bd_label = bd_label
        self.surface_face_map = (np.arange(len(self.bd_tris), dtype=np.int64)
                                 if surface_face_map is None else
                                 np.ascontiguousarray(surface_face_map,
                                                      dtype=np.int64))
        self._surface = None
        self._dual = None

    # -- derived ------------------------------------------------------------

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def surface(self) -> LabeledSurfaceMesh:
        """Working surface: the boundary triangles with transferred labels."""
        if self._surface is None:
            self._surface = LabeledSurfaceMesh(
                self.vertices, self.bd_tris, self.bd_label, validate=False)
        return self._surface

    @property
    def volumes(self) -> np.ndarray:
        return geom.tet_volumes(self.vertices, self.tets)

    @property
    def barycenters(self) -> np.ndarray:
        return self.vertices[self.tets].mean(axis=1)

    @property
    def dual(self) -> DualGraph:
        if self._dual is None:
            self._dual = self._build_dual()
        return self._dual

    def _build_dual(self) -> DualGraph:
        bary = self.barycenters
        tets = []
        verts = []
        for tri, owners in sorted(self._internal.items()):
            tp, tq = owners
            tets.append((tp, tq))
            verts.append(tri)
        arc_tets = np.array(tets, dtype=np.int64).reshape(-1, 2)
        arc_verts = np.array(verts, dtype=np.int64).reshape(-1, 3)
        p = self.vertices[arc_verts]
        cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        dbl = np.linalg.norm(cr, axis=1)
        area = 0.5 * dbl
        normal = np.zeros_like(cr)
        ok = dbl > 0
        normal[ok] = cr[ok] / dbl[ok, None]
        if len(arc_tets):
            # orient from first owner to second
            towards = bary[arc_tets[:, 1]] - bary[arc_tets[:, 0]]
            flip = np.einsum("ij,ij->i", towards, normal) < 0
            normal[flip] *= -1.0
        return DualGraph(arc_tets, area, normal, arc_verts,
                         p.mean(axis=1), bary)

    # -- seed constraints ----------------------------------------------------

    def seed_constraints(self):
        """Per-tet sets of region indices mandated by the manifold-labeling
        rule, as {tet: {region: carrier}} where carrier describes the pinning
        simplex (kind, vertex tuple)."""
        surf = self.surface
        region_of_face = surf.region_of_face
        out = defaultdict(dict)

        # surface faces
        for b, tri in enumerate(self.bd_tris):
            r = int(region_of_face[b])
            out[int(self.bd_tet[b])].setdefault(r, ("face", tuple(sorted(map(int, tri)))))

        # interior edges / vertices of each region
        interior_edges, interior_vertices = _region_interior_simplices(surf)

        vert_tets = defaultdict(list)
        for t, tet in enumerate(self.tets):
            for v in tet:
                vert_tets[int(v)].append(t)

        for (u, v), r in sorted(interior_edges.items()):
            for t in vert_tets[u]:
                tet = self.tets[t]
                if v in tet:
                    out[t].setdefault(r, ("edge", (u, v)))

        for v, r in sorted(interior_vertices.items()):
            for t in vert_tets[v]:
                out[t].setdefault(r, ("vertex", (v,)))

        return out

    def seed_labels(self, part_of_region) -> np.ndarray:
        """Seed part label per tet (UNASSIGNED when unconstrained).

        part_of_region maps region index -> part id; raises
        InfeasibleConstraints when a tet is pinned to two parts.
        """
        seeds = np.full(self.n_tets, UNASSIGNED, dtype=np.int64)
        for t, cons in self.seed_constraints().items():
            parts = {part_of_region[r] for r in cons}
            if len(parts) > 1:
                raise InfeasibleConstraints(
                    f"tet {t} pinned to parts {sorted(parts)}")
            seeds[t] = parts.pop()
        return seeds

    # -- conflict splitting ---------------------------------------------------

    def resolve_conflicts(self, max_rounds=20):
        """Split tets until no tet is pinned to two different regions.

        Returns (mesh, n_splits); the boundary geometry is unchanged up to
        conforming subdivision of surface faces, recorded in
        surface_face_map.
        """
        mesh = self
        total = 0
        for _ in range(max_rounds):
            conflicts = mesh._find_conflicts()
            if not conflicts:
                return mesh, total
            mesh = mesh._apply_splits(conflicts)
            total += 1
        raise InfeasibleConstraints("conflict splitting did not converge")

    def _find_conflicts(self):
        """List of (tet, carrier_a, carrier_b) for pinning conflicts."""
        out = []
        for t, cons in sorted(self.seed_constraints().items()):
            if len(cons) < 2:
                continue
            regions = sorted(cons)
            carrier_a = cons[regions[0]]
            carrier_b = cons[regions[1]]
            out.append((t, carrier_a, carrier_b))
        return out

    def _apply_splits(self, conflicts):
        """One round: classify each conflict and split; at most one split per
        tet per round, edge splits first (they touch whole edge rings)."""
        edge_splits = set()
        face_splits = set()
        tet_splits = set()
        for t, ca, cb in conflicts:
            kind = _classify_conflict(ca, cb)
            if kind[0] == "edge":
                edge_splits.add(kind[1])
            elif kind[0] == "face":
                face_splits.add(kind[1])
            else:
                tet_splits.add(t)

        verts = [v for v in self.vertices]
        tets = [tuple(map(int, t)) for t in self.tets]
        # boundary labels move through a triple-keyed map
        bd_map = {}
        for b, tri in enumerate(self.bd_tris):
            key = tuple(sorted(map(int, tri)))
            bd_map[key] = (int(self.bd_label[b]), int(self.surface_face_map[b]))

        def split_edge(u, v):
            m = len(verts)
            verts.append(0.5 * (np.asarray(verts[u]) + verts[v]))
            for t in range(len(tets)):
                tet = tets[t]
                if tet is None or u not in tet or v not in tet:
                    continue
                a = tuple(m if x == v else x for x in tet)
                b = tuple(m if x == u else x for x in tet)
                tets[t] = None
                tets.append(a)
                tets.append(b)
            # conforming surface subdivision
            for key in [k for k in bd_map if u in k and v in k]:
                label, orig = bd_map.pop(key)
                w = [x for x in key if x != u and x != v][0]
                bd_map[tuple(sorted((u, m, w)))] = (label, orig)
                bd_map[tuple(sorted((v, m, w)))] = (label, orig)

        def split_face(tri):
            c = len(verts)
            verts.append((np.asarray(verts[tri[0]]) +
                          verts[tri[1]] + verts[tri[2]]) / 3.0)
            ts = set(tri)
            for t in range(len(tets)):
                tet = tets[t]
                if tet is None or not ts.issubset(tet):
                    continue
                apex = [x for x in tet if x not in ts][0]
                tets[t] = None
                for k in range(3):
                    tets.append((tri[k], tri[(k + 1) % 3], c, apex))
            key = tuple(sorted(tri))
            if key in bd_map:
                label, orig = bd_map.pop(key)
                for k in range(3):
                    bd_map[tuple(sorted((tri[k], tri[(k + 1) % 3], c)))] = \
                        (label, orig)

        def split_tet(t):
            tet = tets[t]
            if tet is None:
                return
            c = len(verts)
            verts.append(np.asarray(
                [verts[x] for x in tet]).mean(axis=0))
            tets[t] = None
            for f in _TET_FACES:
                tets.append((tet[f[0]], tet[f[1]], tet[f[2]], c))

        for u, v in sorted(edge_splits):
            split_edge(u, v)
        for tri in sorted(face_splits):
            # an earlier edge split may have consumed this face; then no tet
            # contains all three corners and this is a no-op
            split_face(tri)
        for t in sorted(tet_splits):
            split_tet(t)

        new_tets = np.array([t for t in tets if t is not None], dtype=np.int64)
        new_verts = np.array(verts)
        vols = geom.tet_volumes(new_verts, new_tets)
        flip = vols < 0
        new_tets[flip, 2], new_tets[flip, 3] = \
            new_tets[flip, 3], new_tets[flip, 2].copy()

        bd_tris, _, _ = _extract_boundary(new_tets)
        labels = np.empty(len(bd_tris), dtype=np.int64)
        fmap = np.empty(len(bd_tris), dtype=np.int64)
        for b, tri in enumerate(bd_tris):
            key = tuple(sorted(map(int, tri)))
            if key not in bd_map:
                raise InfeasibleConstraints(
                    f"boundary triangle {key} lost its label during splitting")
            labels[b], fmap[b] = bd_map[key]
        return LabeledTetMesh(new_verts, new_tets, labels, fmap,
                              fix_orientation=False)

    # -- misc -----------------------------------------------------------------

    def replaced_parts(self, part_of: np.ndarray) -> "LabeledTetMesh":
        out = LabeledTetMesh(self.vertices, self.tets, self.bd_label,
                             self.surface_face_map, part_of.copy(),
                             fix_orientation=False)
        out._surface = self._surface
        out._dual = self._dual
        out._internal = self._internal
        return out


def _extract_boundary(tets):
    """Boundary triangles (outward winding), their owner tets, and the
    internal-face map {sorted triple: (tet_a, tet_b)}."""
    face_owner = {}
    for t, tet in enumerate(tets):
        for f in _TET_FACES:
            tri = (int(tet[f[0]]), int(tet[f[1]]), int(tet[f[2]]))
            key = tuple(sorted(tri))
            face_owner.setdefault(key, []).append((t, tri))

    bd_tris, bd_tet = [], []
    internal = {}
    for key, owners in sorted(face_owner.items()):
        if len(owners) == 1:
            t, tri = owners[0]
            bd_tris.append(tri)
            bd_tet.append(t)
        elif len(owners) == 2:
            internal[key] = (owners[0][0], owners[1][0])
        else:
            raise InvertedTet(
                f"face {key} shared by {len(owners)} tets (broken mesh)")
    return (np.array(bd_tris, dtype=np.int64).reshape(-1, 3),
            np.array(bd_tet, dtype=np.int64), internal)


def _region_interior_simplices(surf: LabeledSurfaceMesh):
    """Surface edges and vertices interior to a region.

    An edge is interior when both incident faces are in the same region; a
    vertex is interior when all its incident faces are. Returns
    ({(u, v): region}, {v: region}) with u < v.
    """
    adj = surf.adjacency
    faces = surf.faces
    region = surf.region_of_face

    edges = {}
    for f in range(len(faces)):
        for k in range(3):
            g = adj.face_neighbors[f, k]
            if region[f] == region[g] and f < g:
                a, b = int(faces[f, k]), int(faces[f, (k + 1) % 3])
                edges[(min(a, b), max(a, b))] = int(region[f])

    vertices = {}
    for v in range(len(surf.vertices)):
        fs = adj.vertex_faces(v)
        if len(fs) == 0:
            continue
        r = region[fs[0]]
        if np.all(region[fs] == r):
            vertices[int(v)] = int(r)
    return edges, vertices


def _classify_conflict(ca, cb):
    """Pick the split that separates two pinning carriers.

    vertex-vertex joined by a tet edge -> split that edge; a vertex against
    an edge (they always share a tet face) -> split the face spanned by both;
    two edges sharing a vertex -> split their common face; anything else
    (disjoint simplices) -> barycenter split of the tet.
    """
    kind_a, va = ca
    kind_b, vb = cb
    if kind_a > kind_b:  # order: edge < face < vertex alphabetically; normalize
        kind_a, va, kind_b, vb = kind_b, vb, kind_a, va

    if kind_a == "vertex" and kind_b == "vertex":
        return ("edge", tuple(sorted((va[0], vb[0]))))
    if {kind_a, kind_b} == {"edge", "vertex"}:
        edge = va if kind_a == "edge" else vb
        vert = vb[0] if kind_b == "vertex" else va[0]
        if vert in edge:
            # vertex on the pinned edge: carriers intersect; separate the
            # other endpoint instead
            other = edge[0] if edge[1] == vert else edge[1]
            return ("edge", tuple(sorted((vert, other))))
        return ("face", tuple(sorted((edge[0], edge[1], vert))))
    if kind_a == "edge" and kind_b == "edge":
        shared = set(va) & set(vb)
        if len(shared) == 1:
            tri = tuple(sorted(set(va) | set(vb)))
            return ("face", tri)
        if len(shared) == 2:
            return ("edge", tuple(sorted(va)))
        return ("tet", None)
    if {kind_a, kind_b} == {"face", "vertex"}:
        face = va if kind_a == "face" else vb
        vert = vb[0] if kind_b == "vertex" else va[0]
        if vert in face:
            return ("tet", None)
        return ("tet", None)
    return ("tet", None)
