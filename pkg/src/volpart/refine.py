"""Segmentation refinement: split an all-infeasible region into
region-extractable sub-regions.

Binary splitting ranks direction pairs by a score that rewards opposite
directions and balanced cover areas, grows two sub-regions by priority from
far-apart seeds (only ever assigning a face to a side it is extractable
along), smooths the in-between boundary inside the dual-extractable strip,
and validates that neither sub-region blocks the other. If ten pair
candidates fail, an n-way split takes over with greedily chosen direction
sets.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .directions import DirectionSphere, face_cover_mask, region_extractable
from .errors import Disconnected, GrowthStalled, NoValidPair, SplitFailed
from .surface import LabeledSurfaceMesh

SPLIT_ALPHA = 0.1       # balance weight in the pair score
GAMMA = 0.15            # boundary-length weight in the growth priority
PAIR_BUDGET = 10
COVER_PREFILTER = 0.20  # only directions covering this area share enter pairs
MAX_FILTERED_DIRECTIONS = 600
STRIP_RINGS = 3
L_INNER_FLOOR = 1e-3    # x mean edge length


@dataclass
class SplitCandidate:
    d0_index: int
    d1_index: int
    d0: np.ndarray
    d1: np.ndarray
    cover0: np.ndarray  # bool per region face
    cover1: np.ndarray
    area0: float
    area1: float
    score: float        # pair score D_01; higher ranks first


@dataclass
class RegionSplit:
    surface: LabeledSurfaceMesh
    new_attributes: list
    parent_attribute: int
    directions: list
    n_way: int


def direction_covers(surface: LabeledSurfaceMesh, region_index: int,
                     sphere: DirectionSphere, full_enumeration=False):
    """Cover sets: for each candidate direction, the faces of the region
    extractable along it. Directions with empty cover are dropped; unless
    full enumeration is requested, small covers are pre-filtered and the
    remainder subsampled to keep pair ranking tractable."""
    region = surface.regions[region_index]
    covers = []
    dir_idx = []
    for d in range(len(sphere)):
        cov = face_cover_mask(surface, region_index, sphere.directions[d])
        if cov.any():
            covers.append(cov)
            dir_idx.append(d)
    if not covers:
        return np.empty((0, len(region.faces)), dtype=bool), []
    covers = np.array(covers)
    dir_idx = np.array(dir_idx, dtype=np.int64)
    if full_enumeration:
        return covers, dir_idx

    areas = surface.areas[region.faces]
    cov_area = covers @ areas
    big = cov_area >= COVER_PREFILTER * areas.sum()
    if big.sum() > MAX_FILTERED_DIRECTIONS:
        keep = np.flatnonzero(big)
        stride = int(np.ceil(len(keep) / MAX_FILTERED_DIRECTIONS))
        sel = keep[::stride]
    elif big.any():
        sel = np.flatnonzero(big)
        extra = np.flatnonzero(~big)
        room = MAX_FILTERED_DIRECTIONS - len(sel)
        if room > 0 and len(extra):
            stride = max(1, int(np.ceil(len(extra) / room)))
            sel = np.sort(np.concatenate([sel, extra[::stride]]))
    else:
        sel = np.arange(len(dir_idx))
        if len(sel) > MAX_FILTERED_DIRECTIONS:
            stride = int(np.ceil(len(sel) / MAX_FILTERED_DIRECTIONS))
            sel = sel[::stride]
    return covers[sel], dir_idx[sel]


def rank_direction_pairs(surface: LabeledSurfaceMesh, region_index: int,
                         sphere: DirectionSphere, split_alpha=SPLIT_ALPHA,
                         full_enumeration=False) -> list[SplitCandidate]:
    """Valid (full-cover) direction pairs, best score first."""
    region = surface.regions[region_index]
    covers, dir_idx = direction_covers(surface, region_index, sphere,
                                       full_enumeration)
    if len(covers) == 0:
        raise NoValidPair("no direction covers any face of the region")

    areas = surface.areas[region.faces]
    cov_area = covers @ areas
    uncovered = ~covers
    # pair (i, j) is valid iff no face is uncovered by both
    co_uncovered = uncovered.astype(np.float64) @ uncovered.astype(np.float64).T
    valid = co_uncovered < 0.5
    iu, ju = np.triu_indices(len(covers), k=1)
    ok = valid[iu, ju]
    iu, ju = iu[ok], ju[ok]
    if len(iu) == 0:
        raise NoValidPair("no direction pair covers the region")

    diffs = np.abs(cov_area[iu] - cov_area[ju])
    mean_diff = float(diffs.mean()) if float(diffs.mean()) > 0 else 1.0
    dirs = sphere.directions[dir_idx]
    dots = np.einsum("ij,ij->i", dirs[iu], dirs[ju])
    score = (1.0 - dots) / 2.0 + split_alpha * (1.0 - diffs / mean_diff)

    order = np.argsort(-score, kind="stable")
    out = []
    for k in order:
        i, j = int(iu[k]), int(ju[k])
        out.append(SplitCandidate(
            int(dir_idx[i]), int(dir_idx[j]), dirs[i].copy(), dirs[j].copy(),
            covers[i], covers[j], float(cov_area[i]), float(cov_area[j]),
            float(score[k])))
    return out


def pair_score(d0, d1, area0, area1, mean_diff, split_alpha=SPLIT_ALPHA):
    """Score of one direction pair (higher = better)."""
    return (1.0 - float(np.dot(d0, d1))) / 2.0 + \
        split_alpha * (1.0 - abs(area0 - area1) / mean_diff)


# --------------------------------------------------------------------------
# region growth
# --------------------------------------------------------------------------

def _region_centroid(surface, region):
    faces = region.faces
    w = surface.areas[faces]
    return (surface.centroids[faces] * w[:, None]).sum(axis=0) / w.sum()


def _ray_distances(surface, region, origin, direction):
    """Distance of each region face centroid to the seed ray."""
    rel = surface.centroids[region.faces] - origin
    t = np.maximum(0.0, rel @ direction)
    proj = origin + t[:, None] * direction
    return np.linalg.norm(surface.centroids[region.faces] - proj, axis=1)


def grow_subregions(surface: LabeledSurfaceMesh, region_index: int,
                    directions, covers, gamma=GAMMA):
    """Best-first growth of one sub-region per direction.

    Faces enter a sub-region only if extractable along its direction; the
    priority is the normalized seed-ray distance plus gamma times the
    boundary-length ratio. Returns an assignment array (region-local)."""
    region = surface.regions[region_index]
    faces = region.faces
    n = len(faces)
    n_sub = len(directions)
    local_of = {int(f): i for i, f in enumerate(faces)}

    origin = _region_centroid(surface, region)
    ray_dist = [_ray_distances(surface, region, origin, d) for d in directions]
    d_mean = [max(float(rd.mean()), 1e-300) for rd in ray_dist]

    # local adjacency and edge lengths
    nb = []
    edge_len = []
    for i, f in enumerate(faces):
        row = []
        lens = []
        for e in range(3):
            g = surface.adjacency.face_neighbors[f, e]
            a = surface.faces[f, e]
            b = surface.faces[f, (e + 1) % 3]
            l = float(np.linalg.norm(surface.vertices[a] - surface.vertices[b]))
            row.append(local_of.get(int(g), -1))
            lens.append(l)
        nb.append(row)
        edge_len.append(lens)
    floor = L_INNER_FLOOR * surface.mean_edge_length

    assign = np.full(n, -1, dtype=np.int64)

    # seeds: furthest along each ray among extractable faces
    proj = surface.centroids[faces] - origin
    taken = set()
    for j, d in enumerate(directions):
        score = proj @ d
        order = np.argsort(-score, kind="stable")
        seed = -1
        for k in order:
            if covers[j][k] and int(k) not in taken:
                seed = int(k)
                break
        if seed < 0:
            raise GrowthStalled(f"no extractable seed for direction {j}")
        taken.add(seed)
        assign[seed] = j

    def priority(i, j):
        l_inner = 0.0
        l_outer = 0.0
        for e in range(3):
            g = nb[i][e]
            if g >= 0 and assign[g] == j:
                l_inner += edge_len[i][e]
            else:
                l_outer += edge_len[i][e]
        l_inner = max(l_inner, floor)
        return ray_dist[j][i] / d_mean[j] + gamma * l_outer / l_inner

    heap = []
    counter = 0
    for i in range(n):
        if assign[i] < 0:
            continue
        j = assign[i]
        for g in nb[i]:
            if g >= 0 and assign[g] < 0 and covers[j][g]:
                heapq.heappush(heap, (priority(g, j), counter, g, j))
                counter += 1

    n_assigned = int((assign >= 0).sum())
    while heap and n_assigned < n:
        p, _, i, j = heapq.heappop(heap)
        if assign[i] >= 0:
            continue
        cur = priority(i, j)
        if heap and cur > p + 1e-15 and cur > heap[0][0]:
            heapq.heappush(heap, (cur, counter, i, j))
            counter += 1
            continue
        assign[i] = j
        n_assigned += 1
        for g in nb[i]:
            if g >= 0 and assign[g] < 0 and covers[j][g]:
                heapq.heappush(heap, (priority(g, j), counter, g, j))
                counter += 1

    if n_assigned < n:
        raise GrowthStalled(
            f"{n - n_assigned} faces unreachable by any extractable side")
    for j in range(n_sub):
        if not _connected(np.flatnonzero(assign == j), nb, assign, j):
            raise Disconnected(f"sub-region {j} is not edge-connected")
    return assign


def _connected(members, nb, assign, j) -> bool:
    if len(members) == 0:
        return False
    member_set = set(members.tolist())
    seen = {int(members[0])}
    stack = [int(members[0])]
    while stack:
        i = stack.pop()
        for g in nb[i]:
            if g in member_set and g not in seen and assign[g] == j:
                seen.add(g)
                stack.append(g)
    return len(seen) == len(member_set)


# --------------------------------------------------------------------------
# boundary optimization
# --------------------------------------------------------------------------

def optimize_split_boundary(surface: LabeledSurfaceMesh, region_index: int,
                            assign: np.ndarray, covers) -> np.ndarray:
    """Face-granularity boundary smoothing inside the dual-extractable strip.

    Greedy relabeling of strip faces that strictly shortens the boundary
    while preserving each side's extractability gate and connectivity; falls
    back to the raw boundary when the strip is empty or nothing improves.
    """
    region = surface.regions[region_index]
    faces = region.faces
    n = len(faces)
    local_of = {int(f): i for i, f in enumerate(faces)}

    nb = []
    edge_len = []
    for f in faces:
        row = []
        lens = []
        for e in range(3):
            g = surface.adjacency.face_neighbors[f, e]
            a, b = surface.faces[f, e], surface.faces[f, (e + 1) % 3]
            row.append(local_of.get(int(g), -1))
            lens.append(float(np.linalg.norm(
                surface.vertices[a] - surface.vertices[b])))
        nb.append(row)
        edge_len.append(lens)

    dual = covers[0] & covers[1]
    if not dual.any():
        return assign

    # faces within STRIP_RINGS of the raw boundary
    depth = np.full(n, -1, dtype=np.int64)
    frontier = []
    for i in range(n):
        for g in nb[i]:
            if g >= 0 and assign[g] != assign[i]:
                depth[i] = 0
                frontier.append(i)
                break
    d = 0
    while frontier and d < STRIP_RINGS:
        nxt = []
        for i in frontier:
            for g in nb[i]:
                if g >= 0 and depth[g] < 0:
                    depth[g] = d + 1
                    nxt.append(g)
        frontier = nxt
        d += 1
    strip = dual & (depth >= 0)

    assign = assign.copy()

    def boundary_delta(i, new_j):
        old_j = assign[i]
        delta = 0.0
        for e in range(3):
            g = nb[i][e]
            if g < 0:
                continue  # region border edge: unchanged by the flip
            if assign[g] == old_j:
                delta += edge_len[i][e]
            elif assign[g] == new_j:
                delta -= edge_len[i][e]
        return delta

    def stays_connected(i, old_j):
        members = np.flatnonzero(assign == old_j)
        members = members[members != i]
        if len(members) == 0:
            return False
        member_set = set(members.tolist())
        seen = {int(members[0])}
        stack = [int(members[0])]
        while stack:
            k = stack.pop()
            for g in nb[k]:
                if g in member_set and g not in seen:
                    seen.add(g)
                    stack.append(g)
        return len(seen) == len(member_set)

    for _ in range(4 * n):
        improved = False
        for i in range(n):
            if not strip[i]:
                continue
            old_j = assign[i]
            new_j = 1 - old_j
            if not any(g >= 0 and assign[g] == new_j for g in nb[i]):
                continue
            if boundary_delta(i, new_j) >= -1e-12:
                continue
            if not stays_connected(i, old_j):
                continue
            assign[i] = new_j
            improved = True
        if not improved:
            break
    return assign


def boundary_length(surface: LabeledSurfaceMesh, region_index: int,
                    assign: np.ndarray) -> float:
    region = surface.regions[region_index]
    faces = region.faces
    local_of = {int(f): i for i, f in enumerate(faces)}
    total = 0.0
    for i, f in enumerate(faces):
        for e in range(3):
            g = surface.adjacency.face_neighbors[f, e]
            gl = local_of.get(int(g), -1)
            if gl >= 0 and gl > i and assign[gl] != assign[i]:
                a, b = surface.faces[f, e], surface.faces[f, (e + 1) % 3]
                total += float(np.linalg.norm(
                    surface.vertices[a] - surface.vertices[b]))
    return total


# --------------------------------------------------------------------------
# full split
# --------------------------------------------------------------------------

def _subregion_valid(surface, region_index, assign, j, direction):
    """Relabel temporarily and run the full region test (other regions and
    the sibling sub-regions are all obstacles)."""
    region = surface.regions[region_index]
    labels = surface.face_label.copy()
    base = int(surface.face_label.max()) + 1
    for i, f in enumerate(region.faces):
        labels[f] = base + int(assign[i])
    probe = surface.with_labels(labels)
    target_attr = base + j
    target = next(r.index for r in probe.regions
                  if r.attribute == target_attr)
    return region_extractable(probe, target, direction)


def split_region(surface: LabeledSurfaceMesh, sphere: DirectionSphere,
                 max_pairs: int = PAIR_BUDGET, split_alpha=SPLIT_ALPHA,
                 gamma=GAMMA, full_enumeration=False,
                 max_subregions: int = 6) -> RegionSplit:
    """Replace the largest region by extractable sub-regions with fresh
    attribute ids; binary first, n-way fallback."""
    region_index = max(range(len(surface.regions)),
                       key=lambda r: surface.regions[r].area)
    region = surface.regions[region_index]

    candidates = rank_direction_pairs(surface, region_index, sphere,
                                      split_alpha, full_enumeration)
    for cand in candidates[:max_pairs]:
        try:
            assign = grow_subregions(
                surface, region_index, [cand.d0, cand.d1],
                [cand.cover0, cand.cover1], gamma)
        except (GrowthStalled, Disconnected):
            continue
        assign = optimize_split_boundary(surface, region_index, assign,
                                         [cand.cover0, cand.cover1])
        if all(_subregion_valid(surface, region_index, assign, j, d)
               for j, d in enumerate((cand.d0, cand.d1))):
            return _apply_split(surface, region_index, assign,
                                [cand.d0, cand.d1], 2)

    covers, dir_idx = direction_covers(surface, region_index, sphere,
                                       full_enumeration)
    areas = surface.areas[region.faces]
    cov_area = covers @ areas
    dirs = sphere.directions[dir_idx]
    for n_way in range(3, max_subregions + 1):
        if n_way > len(dirs):
            break
        sel = _greedy_direction_set(dirs, cov_area, covers, n_way, split_alpha)
        if sel is None:
            continue
        try:
            assign = grow_subregions(
                surface, region_index, [dirs[s] for s in sel],
                [covers[s] for s in sel], gamma)
        except (GrowthStalled, Disconnected):
            continue
        if all(_subregion_valid(surface, region_index, assign, j, dirs[s])
               for j, s in enumerate(sel)):
            return _apply_split(surface, region_index, assign,
                                [dirs[s] for s in sel], n_way)
    raise SplitFailed(
        f"region {region_index} admits no extractable split with up to "
        f"{max_subregions} sub-regions")


def _greedy_direction_set(dirs, cov_area, covers, n_way, split_alpha):
    """Direction set maximizing the pairwise score sum, grown greedily and
    required to cover the region jointly."""
    m = len(dirs)
    diffs = np.abs(cov_area[:, None] - cov_area[None, :])
    mean_diff = float(diffs[np.triu_indices(m, 1)].mean()) if m > 1 else 1.0
    if mean_diff <= 0:
        mean_diff = 1.0
    dots = dirs @ dirs.T
    score = (1.0 - dots) / 2.0 + split_alpha * (1.0 - diffs / mean_diff)

    iu, ju = np.triu_indices(m, 1)
    if len(iu) == 0:
        return None
    best = int(np.argmax(score[iu, ju]))
    sel = [int(iu[best]), int(ju[best])]
    while len(sel) < n_way:
        gains = score[sel].sum(axis=0)
        gains[sel] = -np.inf
        sel.append(int(np.argmax(gains)))
    joint = np.zeros(covers.shape[1], dtype=bool)
    for s in sel:
        joint |= covers[s]
    if not joint.all():
        return None
    return sorted(sel)


def _apply_split(surface, region_index, assign, directions, n_way):
    region = surface.regions[region_index]
    labels = surface.face_label.copy()
    base = int(surface.face_label.max()) + 1
    for i, f in enumerate(region.faces):
        labels[f] = base + int(assign[i])
    return RegionSplit(surface.with_labels(labels),
                       [base + j for j in range(n_way)],
                       region.attribute, list(directions), n_way)
