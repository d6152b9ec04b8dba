"""Candidate extraction directions and region extractability analysis.

Directions are sampled as the vertices of a uniformly triangulated unit
sphere (4096 by default), augmented with frequently seen surface normals
(area share >= 1%) and the major axes. Robust directions maximize the
spherical distance to the nearest infeasible direction, computed over the
dual-mesh facet adjacency.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.spatial import ConvexHull
from scipy.sparse.csgraph import dijkstra

from .bvh import BVH
from .errors import NoFeasibleDirection
from .surface import LabeledSurfaceMesh

RAY_NUDGE_REL = 1e-7       # origin offset along the ray, relative to bbox diag
MERGE_TOL_RAD = 1e-4       # duplicate directions merged within this angle
OFFSET_FRACTION = 0.10     # inward offset of the shell test, x mean edge len
FREQUENT_NORMAL_SHARE = 0.01


@dataclass
class DirectionSphere:
    """Sampled direction set plus the dual-facet adjacency used for robust
    direction selection."""
    directions: np.ndarray          # (D, 3) unit vectors
    n_base: int
    adjacency: csr_matrix           # great-circle arc lengths between facets

    def __len__(self):
        return len(self.directions)


def _fibonacci_sphere(n: int) -> np.ndarray:
    """Deterministic, near-uniform point set on the unit sphere."""
    i = np.arange(n, dtype=np.float64)
    ga = np.pi * (3.0 - np.sqrt(5.0))
    z = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    th = ga * i
    return np.column_stack([r * np.cos(th), r * np.sin(th), z])


def _sphere_adjacency(points: np.ndarray) -> csr_matrix:
    """Facet adjacency of the dual mesh == vertex adjacency of the
    triangulation (convex hull), weighted by great-circle distance."""
    hull = ConvexHull(points)
    edges = set()
    for a, b, c in hull.simplices:
        edges.add((min(a, b), max(a, b)))
        edges.add((min(b, c), max(b, c)))
        edges.add((min(a, c), max(a, c)))
    if not edges:
        return csr_matrix((len(points), len(points)))
    e = np.array(sorted(edges), dtype=np.int64)
    dots = np.clip(np.einsum("ij,ij->i", points[e[:, 0]], points[e[:, 1]]),
                   -1.0, 1.0)
    w = np.arccos(dots)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    data = np.concatenate([w, w])
    return csr_matrix((data, (rows, cols)), shape=(len(points), len(points)))


def frequent_normals(surface: LabeledSurfaceMesh,
                     share: float = FREQUENT_NORMAL_SHARE) -> np.ndarray:
    """Normal directions carried by at least `share` of the surface area.

    Normals are bucketed with a fixed quantization so exactly repeated
    directions (flat panels) accumulate; the bucket mean is returned.
    """
    q = np.round(surface.normals / 1e-5).astype(np.int64)
    buckets = {}
    for i in range(len(q)):
        key = (int(q[i, 0]), int(q[i, 1]), int(q[i, 2]))
        acc = buckets.get(key)
        if acc is None:
            buckets[key] = [surface.areas[i], surface.normals[i] * surface.areas[i]]
        else:
            acc[0] += surface.areas[i]
            acc[1] = acc[1] + surface.normals[i] * surface.areas[i]
    cutoff = share * surface.total_area
    out = []
    for key in sorted(buckets):
        area, nsum = buckets[key]
        if area >= cutoff:
            n = nsum / np.linalg.norm(nsum)
            out.append(n)
    return np.array(out).reshape(-1, 3)


def build_direction_set(surface: LabeledSurfaceMesh,
                        sphere_res: int = 4096) -> DirectionSphere:
    base = _fibonacci_sphere(sphere_res)
    extras = [frequent_normals(surface),
              np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0],
                        [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.float64)]
    dirs = [base]
    count = len(base)
    merged = base
    for block in extras:
        for d in block:
            dots = np.clip(merged @ d, -1.0, 1.0)
            if np.arccos(dots.max()) > MERGE_TOL_RAD:
                dirs.append(d[None, :])
                merged = np.vstack([merged, d[None, :]])
                count += 1
    directions = np.vstack(dirs)
    return DirectionSphere(directions, len(base), _sphere_adjacency(directions))


# --------------------------------------------------------------------------
# extractability tests
# --------------------------------------------------------------------------

def _nudged(origins: np.ndarray, direction: np.ndarray, nudge: float):
    return origins + nudge * direction[None, :]


def _region_ray_origins(surface: LabeledSurfaceMesh, region_index: int):
    """Ray origins for the region test: every region vertex, plus interior
    vertices offset inward by a fraction of the mean edge length."""
    region = surface.regions[region_index]
    verts = np.unique(surface.faces[region.faces])
    origins = surface.vertices[verts]

    interior = []
    rof = surface.region_of_face
    for v in verts:
        fs = surface.adjacency.vertex_faces(int(v))
        if np.all(rof[fs] == region_index):
            interior.append(int(v))
    if interior:
        interior = np.array(interior, dtype=np.int64)
        inward = -surface.vertex_normals[interior]
        off = surface.vertices[interior] + \
            OFFSET_FRACTION * surface.mean_edge_length * inward
        origins = np.vstack([origins, off])
    return origins


def triangle_extractable(surface: LabeledSurfaceMesh, face: int,
                         direction: np.ndarray, own_region: int) -> bool:
    """True iff rays from the triangle's vertices along `direction` miss
    every face outside `own_region`."""
    mask = (surface.region_of_face != own_region).astype(np.uint8)
    origins = _nudged(surface.vertices[surface.faces[face]], direction,
                      RAY_NUDGE_REL * surface.bbox_diag)
    return not surface.bvh.any_ray_hits_mask(origins, direction, mask)


def region_extractable(surface: LabeledSurfaceMesh, region_index: int,
                       direction: np.ndarray,
                       obstacle_mask: np.ndarray | None = None) -> bool:
    """Conjunction of the vertex-ray test over region faces and the
    inward-offset shell test."""
    if obstacle_mask is None:
        obstacle_mask = (surface.region_of_face != region_index)
    mask = obstacle_mask.astype(np.uint8)
    origins = _nudged(_region_ray_origins(surface, region_index), direction,
                      RAY_NUDGE_REL * surface.bbox_diag)
    return not surface.bvh.any_ray_hits_mask(origins, direction, mask)


def face_cover_mask(surface: LabeledSurfaceMesh, region_index: int,
                    direction: np.ndarray,
                    obstacle_mask: np.ndarray | None = None) -> np.ndarray:
    """Per-face extractability flags (cover set) for the region's faces."""
    region = surface.regions[region_index]
    if obstacle_mask is None:
        obstacle_mask = (surface.region_of_face != region_index)
    mask = obstacle_mask.astype(np.uint8)
    verts = np.unique(surface.faces[region.faces])
    origins = _nudged(surface.vertices[verts], direction,
                      RAY_NUDGE_REL * surface.bbox_diag)
    blocked = surface.bvh.rays_hit_mask(origins, direction, mask)
    blocked_v = dict(zip(verts.tolist(), blocked.tolist()))
    out = np.empty(len(region.faces), dtype=bool)
    for i, f in enumerate(region.faces):
        a, b, c = surface.faces[f]
        out[i] = not (blocked_v[int(a)] or blocked_v[int(b)] or blocked_v[int(c)])
    return out


def select_robust_direction(mask: np.ndarray, sphere: DirectionSphere) -> int:
    """Index of the feasible direction furthest (graph-geodesically) from the
    nearest infeasible one; lowest index on ties."""
    feasible = np.flatnonzero(mask)
    if len(feasible) == 0:
        raise NoFeasibleDirection("empty feasibility mask")
    infeasible = np.flatnonzero(~mask)
    if len(infeasible) == 0:
        return int(feasible[0])
    dist = dijkstra(sphere.adjacency, directed=False, indices=infeasible,
                    min_only=True)
    best = feasible[0]
    best_d = dist[best]
    for f in feasible[1:]:
        if dist[f] > best_d:
            best, best_d = f, dist[f]
    return int(best)


@dataclass
class RegionFeasibility:
    region: int
    feasible: bool
    direction: np.ndarray | None
    direction_index: int
    mask: np.ndarray


@dataclass
class FeasibilityResult:
    per_region: list[RegionFeasibility] = field(default_factory=list)

    @property
    def all_infeasible(self) -> bool:
        return all(not r.feasible for r in self.per_region)

    def feasible_regions(self):
        return [r.region for r in self.per_region if r.feasible]


def analyze(surface: LabeledSurfaceMesh, sphere: DirectionSphere,
            region_indices=None) -> FeasibilityResult:
    """Full feasibility mask, flag and robust direction per region."""
    result = FeasibilityResult()
    indices = (range(len(surface.regions)) if region_indices is None
               else region_indices)
    for r in indices:
        mask = np.empty(len(sphere), dtype=bool)
        origins = _region_ray_origins(surface, r)
        obstacle = (surface.region_of_face != r).astype(np.uint8)
        nudge = RAY_NUDGE_REL * surface.bbox_diag
        if not obstacle.any():
            mask[:] = True  # single region: nothing can obstruct it
        else:
            for d in range(len(sphere)):
                direction = sphere.directions[d]
                mask[d] = not surface.bvh.any_ray_hits_mask(
                    _nudged(origins, direction, nudge), direction, obstacle)
        if mask.any():
            di = select_robust_direction(mask, sphere)
            result.per_region.append(RegionFeasibility(
                r, True, sphere.directions[di].copy(), di, mask))
        else:
            result.per_region.append(RegionFeasibility(r, False, None, -1, mask))
    return result
