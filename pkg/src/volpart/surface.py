"""Labeled surface mesh: validation, adjacency, regions and ray queries.

A labeled surface is a closed, orientable 2-manifold triangle mesh where
every face carries one attribute id. Regions are the maximal edge-connected
face sets sharing an attribute; they drive feasibility analysis and the
conformity constraints downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geom
from .bvh import BVH
from .errors import NonManifoldEdge, NonManifoldInput, OpenBoundary

UNASSIGNED = -1


@dataclass
class RayHit:
    face: int
    t: float
    bary: np.ndarray  # (3,) barycentric coordinates, sums to 1

    def point(self, mesh: "LabeledSurfaceMesh") -> np.ndarray:
        v = mesh.vertices[mesh.faces[self.face]]
        return self.bary @ v


@dataclass
class Region:
    """Maximal edge-connected set of faces sharing one attribute."""
    index: int
    attribute: int
    faces: np.ndarray  # face ids
    area: float


class SurfaceAdjacency:
    """Per-face neighbors, per-vertex one-rings and region boundary loops."""

    def __init__(self, mesh: "LabeledSurfaceMesh"):
        faces = mesh.faces
        n_faces = len(faces)
        n_verts = len(mesh.vertices)

        # half-edge map: (a, b) -> face. Closed orientable manifold means
        # every undirected edge appears exactly twice, once per direction.
        half = {}
        for f in range(n_faces):
            for k in range(3):
                a = int(faces[f, k])
                b = int(faces[f, (k + 1) % 3])
                if (a, b) in half:
                    raise NonManifoldEdge(
                        f"edge ({a},{b}) has two faces with identical winding")
                half[(a, b)] = f

        self.face_neighbors = np.full((n_faces, 3), -1, dtype=np.int64)
        for f in range(n_faces):
            for k in range(3):
                a = int(faces[f, k])
                b = int(faces[f, (k + 1) % 3])
                g = half.get((b, a))
                if g is None:
                    raise OpenBoundary(f"edge ({a},{b}) has no opposite face")
                self.face_neighbors[f, k] = g

        # vertex one-rings (CSR)
        counts = np.bincount(faces.ravel(), minlength=n_verts)
        self.vf_offsets = np.zeros(n_verts + 1, dtype=np.int64)
        np.cumsum(counts, out=self.vf_offsets[1:])
        self.vf_data = np.empty(self.vf_offsets[-1], dtype=np.int64)
        cursor = self.vf_offsets[:-1].copy()
        for f in range(n_faces):
            for k in range(3):
                v = faces[f, k]
                self.vf_data[cursor[v]] = f
                cursor[v] += 1

        self._mesh = mesh
        self._boundary_loops = None

    def vertex_faces(self, v: int) -> np.ndarray:
        return self.vf_data[self.vf_offsets[v]:self.vf_offsets[v + 1]]

    def vertex_neighbors(self, v: int) -> np.ndarray:
        faces = self._mesh.faces[self.vertex_faces(v)]
        nb = np.unique(faces)
        return nb[nb != v]

    def label_boundary_edges(self):
        """Undirected edges whose two faces carry different labels."""
        faces = self._mesh.faces
        labels = self._mesh.face_label
        out = []
        for f in range(len(faces)):
            for k in range(3):
                g = self.face_neighbors[f, k]
                if labels[f] != labels[g] and f < g:
                    a = int(faces[f, k])
                    b = int(faces[f, (k + 1) % 3])
                    out.append((min(a, b), max(a, b)))
        return out

    def region_boundary_loops(self):
        """Connected components of label-discontinuous edges, each returned
        as an edge list (a loop when every vertex has boundary degree 2)."""
        if self._boundary_loops is not None:
            return self._boundary_loops
        edges = self.label_boundary_edges()
        adj = {}
        for a, b in edges:
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
        seen = set()
        loops = []
        for a, b in edges:
            if (a, b) in seen:
                continue
            comp = [(a, b)]
            seen.add((a, b))
            queue = [a, b]
            visited_v = {a, b}
            while queue:
                v = queue.pop()
                for w in adj[v]:
                    e = (min(v, w), max(v, w))
                    if e not in seen:
                        seen.add(e)
                        comp.append(e)
                    if w not in visited_v:
                        visited_v.add(w)
                        queue.append(w)
            loops.append(comp)
        self._boundary_loops = loops
        return loops


class LabeledSurfaceMesh:
    """Closed labeled triangle mesh plus its derived structures."""

    def __init__(self, vertices, faces, face_label, validate=True):
        self.vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(faces, dtype=np.int64)
        self.face_label = np.ascontiguousarray(face_label, dtype=np.int64)
        if len(self.faces) != len(self.face_label):
            raise ValueError("face_label length mismatch")

        self.normals, self.areas = geom.face_normals_areas(self.vertices, self.faces)
        self.centroids = geom.face_centroids(self.vertices, self.faces)
        self.bbox_diag = geom.bbox_diag(self.vertices)

        if validate and np.any(self.areas <= 0.0):
            bad = int(np.argmin(self.areas))
            raise NonManifoldInput(f"degenerate face {bad} (area 0)")

        self.adjacency = SurfaceAdjacency(self)
        self.regions = self._build_regions()
        self.region_of_face = np.empty(len(self.faces), dtype=np.int64)
        for r in self.regions:
            self.region_of_face[r.faces] = r.index

        self._bvh = None
        self._region_bvhs = {}
        self._mean_edge = None
        self._vertex_normals = None

    # -- derived ------------------------------------------------------------

    @property
    def bvh(self) -> BVH:
        if self._bvh is None:
            self._bvh = BVH(self.vertices, self.faces)
        return self._bvh

    def region_bvh(self, region_index: int) -> BVH:
        if region_index not in self._region_bvhs:
            f = self.regions[region_index].faces
            self._region_bvhs[region_index] = BVH(
                self.vertices, self.faces[f], face_ids=f)
        return self._region_bvhs[region_index]

    @property
    def mean_edge_length(self) -> float:
        if self._mean_edge is None:
            p = self.vertices[self.faces]
            e = np.concatenate([
                np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
                np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                np.linalg.norm(p[:, 0] - p[:, 2], axis=1)])
            # every edge counted twice on a closed mesh; mean is unaffected
            self._mean_edge = float(e.mean())
        return self._mean_edge

    @property
    def vertex_normals(self) -> np.ndarray:
        """Area-weighted vertex normals (outward)."""
        if self._vertex_normals is None:
            vn = np.zeros_like(self.vertices)
            w = self.normals * self.areas[:, None]
            for k in range(3):
                np.add.at(vn, self.faces[:, k], w)
            norms = np.linalg.norm(vn, axis=1)
            ok = norms > 0
            vn[ok] /= norms[ok, None]
            self._vertex_normals = vn
        return self._vertex_normals

    def _build_regions(self):
        """Edge-connected components of equal-label faces."""
        n_faces = len(self.faces)
        region_of = np.full(n_faces, -1, dtype=np.int64)
        regions = []
        for f0 in range(n_faces):
            if region_of[f0] >= 0:
                continue
            ridx = len(regions)
            label = self.face_label[f0]
            stack = [f0]
            region_of[f0] = ridx
            members = [f0]
            while stack:
                f = stack.pop()
                for g in self.adjacency.face_neighbors[f]:
                    if region_of[g] < 0 and self.face_label[g] == label:
                        region_of[g] = ridx
                        stack.append(g)
                        members.append(g)
            members = np.array(sorted(members), dtype=np.int64)
            regions.append(Region(ridx, int(label), members,
                                  float(self.areas[members].sum())))
        return regions

    @property
    def attributes(self) -> np.ndarray:
        return np.unique(self.face_label)

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @property
    def volume(self) -> float:
        return geom.divergence_volume(self.vertices, self.faces)

    # -- queries ------------------------------------------------------------

    def cast_ray(self, origin, direction, exclude=()) -> RayHit | None:
        """Nearest watertight intersection with any face not in exclude."""
        hit = self.bvh.first_hit_excluding(origin, direction, set(exclude))
        if hit is None:
            return None
        t, fid, u, v = hit
        return RayHit(int(fid), float(t), np.array([1.0 - u - v, u, v]))

    def min_distance_to_region(self, point, region_index: int) -> float:
        return float(np.sqrt(self.region_bvh(region_index).sq_distance(point)))

    def is_watertight_at(self, interior_point, rng=None) -> bool:
        """Parity self-check: rays from an interior point must exit an odd
        number of times."""
        rng = rng or np.random.default_rng(7)
        d = geom.normalize(rng.normal(size=3))
        return self.bvh.count_hits(interior_point, d) % 2 == 1

    def with_labels(self, face_label) -> "LabeledSurfaceMesh":
        """Same geometry, new labeling (regions recomputed)."""
        return LabeledSurfaceMesh(self.vertices, self.faces, face_label,
                                  validate=False)


def build_adjacency(mesh: LabeledSurfaceMesh) -> SurfaceAdjacency:
    """Adjacency of an already validated mesh (spec entry point)."""
    return mesh.adjacency
