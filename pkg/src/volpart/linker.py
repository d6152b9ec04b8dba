"""Merging disjoint same-attribute regions into connected parts.

Each merged attribute gets a tree of interior tets connecting its regions:
anchors sit under the point of each region farthest from its boundary, arcs
of the tet dual graph are weighted to favor short hops that stay deep inside
the solid, and terminals are joined by the classic Steiner 2-approximation
(repeated shortest-path merging). Later attributes treat earlier trees as
blocked. Extractability tests for merged parts shoot rays from both region
and path vertices, against other parts' regions and path surfaces.
"""

from __future__ import annotations

import heapq
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .bvh import BVH
from .directions import (RAY_NUDGE_REL, DirectionSphere, FeasibilityResult,
                         RegionFeasibility, _nudged, _region_ray_origins,
                         select_robust_direction)
from .errors import NoPath
from .surface import LabeledSurfaceMesh
from .tetmesh import LabeledTetMesh, _TET_FACES


@dataclass
class LinkRequest:
    """attribute -> list of region indices to merge, or "all"."""
    merges: dict = field(default_factory=dict)

    def regions_for(self, attribute, candidates):
        want = self.merges.get(attribute, "all")
        if want == "all":
            return list(candidates)
        want = set(want)
        return [r for r in candidates if r in want]


def region_anchor(mesh: LabeledTetMesh, region_index: int):
    """(primary tet, candidate tet list) under the region point farthest from
    its boundary.

    Distances run over the region's face-adjacency graph from boundary faces
    (centroid-to-centroid weights); candidates are tets under faces within
    half the peak distance of the peak face.
    """
    surf = mesh.surface
    region = surf.regions[region_index]
    faces = region.faces
    local_of = {int(f): i for i, f in enumerate(faces)}
    n = len(faces)

    dist = np.full(n, np.inf)
    heap = []
    for i, f in enumerate(faces):
        for e in range(3):
            g = int(surf.adjacency.face_neighbors[f, e])
            if g not in local_of:
                dist[i] = 0.0
                heapq.heappush(heap, (0.0, i))
                break
    if not heap:  # region with no boundary (covers a whole shell)
        dist[:] = 0.0
        peak = 0
    else:
        while heap:
            d, i = heapq.heappop(heap)
            if d > dist[i]:
                continue
            ci = surf.centroids[faces[i]]
            for e in range(3):
                g = local_of.get(int(surf.adjacency.face_neighbors[faces[i], e]))
                if g is None:
                    continue
                nd = d + float(np.linalg.norm(surf.centroids[faces[g]] - ci))
                if nd < dist[g]:
                    dist[g] = nd
                    heapq.heappush(heap, (nd, g))
        peak = int(np.argmax(dist))

    # second field: graph distance from the peak face
    from_peak = np.full(n, np.inf)
    from_peak[peak] = 0.0
    heap = [(0.0, peak)]
    while heap:
        d, i = heapq.heappop(heap)
        if d > from_peak[i]:
            continue
        ci = surf.centroids[faces[i]]
        for e in range(3):
            g = local_of.get(int(surf.adjacency.face_neighbors[faces[i], e]))
            if g is None:
                continue
            nd = d + float(np.linalg.norm(surf.centroids[faces[g]] - ci))
            if nd < from_peak[g]:
                from_peak[g] = nd
                heapq.heappush(heap, (nd, g))

    half = 0.5 * float(dist[peak]) if np.isfinite(dist[peak]) else 0.0
    cand_faces = [faces[i] for i in range(n) if from_peak[i] <= half]
    cands = sorted({int(mesh.bd_tet[f]) for f in cand_faces})
    primary = int(mesh.bd_tet[faces[peak]])
    return primary, cands


def arc_weights(mesh: LabeledTetMesh) -> np.ndarray:
    """Eq-style weights: squared barycenter hop over summed surface
    clearances, pulling paths toward the interior."""
    dual = mesh.dual
    surf_bvh = mesh.surface.bvh
    d_surf = np.sqrt(surf_bvh.sq_distances(dual.barycenters))
    n1 = dual.arc_tets[:, 0]
    n2 = dual.arc_tets[:, 1]
    hop = np.linalg.norm(dual.barycenters[n1] - dual.barycenters[n2], axis=1)
    denom = d_surf[n1] + d_surf[n2]
    denom = np.maximum(denom, 1e-300)
    return hop * hop / denom


@dataclass
class LinkResult:
    path_tets: dict = field(default_factory=dict)   # part -> sorted tet list
    order: list = field(default_factory=list)       # processing order of parts


def link_regions(mesh: LabeledTetMesh, groups: dict, seeds: np.ndarray) -> LinkResult:
    """Carve connecting trees for every part owning several regions.

    groups: part -> list of region indices. seeds: per-tet part pin (or -1);
    pinned tets of other parts are blocked, as are earlier trees. Raises
    NoPath naming the part when the unaffiliated graph cannot connect it.
    """
    dual = mesh.dual
    n_t = mesh.n_tets
    w = arc_weights(mesh)

    adj = defaultdict(list)
    for a in range(dual.n_arcs):
        t0, t1 = map(int, dual.arc_tets[a])
        adj[t0].append((t1, float(w[a])))
        adj[t1].append((t0, float(w[a])))

    multi = [p for p, regs in groups.items() if len(regs) > 1]
    region_area = {p: sum(mesh.surface.regions[r].area for r in groups[p])
                   for p in multi}
    order = sorted(multi, key=lambda p: (-len(groups[p]), region_area[p], p))

    blocked = seeds != -1  # any pinned tet is affiliated
    result = LinkResult(order=list(order))

    for p in order:
        anchors = []
        for r in groups[p]:
            primary, cands = region_anchor(mesh, r)
            own = [c for c in cands if seeds[c] == p or seeds[c] == -1]
            anchors.append(own if own else [primary])
        tree = _steiner_tree(adj, anchors, blocked, seeds, p, n_t)
        if tree is None:
            raise NoPath(f"part {p}: regions cannot be linked through "
                         "unaffiliated tets")
        result.path_tets[p] = sorted(tree)
        for t in tree:
            blocked[t] = True
    return result


def _steiner_tree(adj, anchors, blocked, seeds, part, n_t):
    """Repeated shortest-path merging over allowed nodes.

    Interior path nodes must be unaffiliated; anchor candidates of this part
    are always traversable. Returns the unaffiliated tets to label."""
    all_anchor = set()
    for a in anchors:
        all_anchor.update(a)

    def allowed(t):
        return not blocked[t] or t in all_anchor

    sources = set(anchors[0])
    tree_tets = set()
    remaining = list(range(1, len(anchors)))

    while remaining:
        # terminals already touching the tree connect for free
        for k in list(remaining):
            if any(a in sources for a in anchors[k]):
                sources.update(anchors[k])
                remaining.remove(k)
        if not remaining:
            break

        target_of = {}
        for k in remaining:
            for t in anchors[k]:
                target_of.setdefault(t, k)

        dist = {t: 0.0 for t in sources}
        prev = {}
        heap = [(0.0, t) for t in sorted(sources)]
        heapq.heapify(heap)
        found = None
        seen = set()
        while heap:
            d, t = heapq.heappop(heap)
            if t in seen:
                continue
            seen.add(t)
            if t in target_of:
                found = (t, target_of[t])
                break
            for u, wt in adj[t]:
                if not allowed(u):
                    continue
                nd = d + wt
                if nd < dist.get(u, np.inf):
                    dist[u] = nd
                    prev[u] = t
                    heapq.heappush(heap, (nd, u))
        if found is None:
            return None
        t, k = found
        path = [t]
        while path[-1] in prev:
            path.append(prev[path[-1]])
        for node in path:
            sources.add(node)
            if not blocked[node]:
                tree_tets.add(node)
        sources.update(anchors[k])
        remaining.remove(k)
    return tree_tets


def path_surface(mesh: LabeledTetMesh, tets) -> tuple[np.ndarray, np.ndarray]:
    """Boundary triangles and vertex ids of a path tet set."""
    tet_set = set(int(t) for t in tets)
    count = defaultdict(list)
    for t in sorted(tet_set):
        tet = mesh.tets[t]
        for f in _TET_FACES:
            tri = (int(tet[f[0]]), int(tet[f[1]]), int(tet[f[2]]))
            count[tuple(sorted(tri))].append(tri)
    tris = [v[0] for k, v in sorted(count.items()) if len(v) == 1]
    tris = np.asarray(tris, dtype=np.int64).reshape(-1, 3)
    verts = np.unique(tris) if len(tris) else np.empty(0, dtype=np.int64)
    return tris, verts


# --------------------------------------------------------------------------
# augmented feasibility (groups + paths)
# --------------------------------------------------------------------------

class GroupAnalyzer:
    """Feasibility of parts that may own several regions and carved paths.

    Obstacles for a part are the surface faces of all other parts' regions
    plus other parts' path surfaces; ray origins are the part's region
    vertices (with the inward-offset shell) plus its path vertices.
    """

    def __init__(self, mesh: LabeledTetMesh, groups: dict, path_tets: dict):
        self.mesh = mesh
        self.surface = mesh.surface
        self.groups = groups
        surf = self.surface
        n_f = len(surf.faces)

        tris = [surf.faces]
        owner = [np.array([self._part_of_region(int(r))
                           for r in surf.region_of_face], dtype=np.int64)]
        self.path_verts = {}
        for p in sorted(path_tets):
            ptris, pverts = path_surface(mesh, path_tets[p])
            self.path_verts[p] = pverts
            if len(ptris):
                tris.append(ptris)
                owner.append(np.full(len(ptris), p, dtype=np.int64))
        all_tris = np.vstack(tris)
        self.face_part = np.concatenate(owner)
        self.bvh = BVH(mesh.vertices, all_tris)
        self.nudge = RAY_NUDGE_REL * surf.bbox_diag

    def _part_of_region(self, r):
        for p, regs in self.groups.items():
            if r in regs:
                return p
        return -1

    def origins(self, part) -> np.ndarray:
        out = []
        for r in self.groups[part]:
            out.append(_region_ray_origins(self.surface, r))
        pv = self.path_verts.get(part)
        if pv is not None and len(pv):
            out.append(self.mesh.vertices[pv])
        return np.vstack(out)

    def blocked(self, part, direction, excluded_parts=()) -> bool:
        mask = (self.face_part != part) & (self.face_part >= 0)
        for q in excluded_parts:
            mask &= self.face_part != q
        if not mask.any():
            return False
        return self.bvh.any_ray_hits_mask(
            _nudged(self.origins(part), direction, self.nudge),
            direction, mask.astype(np.uint8))

    def analyze(self, sphere: DirectionSphere) -> FeasibilityResult:
        result = FeasibilityResult()
        for p in sorted(self.groups):
            mask = np.empty(len(sphere), dtype=bool)
            origins = self.origins(p)
            obstacle = (self.face_part != p) & (self.face_part >= 0)
            if not obstacle.any():
                mask[:] = True
            else:
                om = obstacle.astype(np.uint8)
                for d in range(len(sphere)):
                    direction = sphere.directions[d]
                    mask[d] = not self.bvh.any_ray_hits_mask(
                        _nudged(origins, direction, self.nudge), direction, om)
            if mask.any():
                di = select_robust_direction(mask, sphere)
                result.per_region.append(RegionFeasibility(
                    p, True, sphere.directions[di].copy(), di, mask))
            else:
                result.per_region.append(
                    RegionFeasibility(p, False, None, -1, mask))
        return result


def augmented_region_extractable(analyzer: GroupAnalyzer, part,
                                 direction) -> bool:
    """Spec entry point: group + path extractability along one direction."""
    return not analyzer.blocked(part, direction)
