"""Independent brute-force verification of linear extractability.

sweep_collides approximates a swept-volume intersection with a two-sided ray
test: forward rays from a dense sampling of the moving part (vertices, edge
midpoints, face centroids and small inward offsets of each) against every
obstacle, and reverse rays from obstacle samples against the part. Hits at
interface-contact distance are ignored. An exact mode re-checks with dense
step translation and triangle-triangle intersection. The module also
empirically validates that interface plus region extractability implies a
collision-free extraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geom
from .bvh import BVH

CONTACT_TOL_REL = 1e-6
SAMPLE_OFFSET_REL = 1e-4
EXACT_STEP_REL = 1e-3


@dataclass
class PartGeometry:
    vertices: np.ndarray
    faces: np.ndarray

    _bvh: BVH | None = None

    @property
    def bvh(self) -> BVH:
        if self._bvh is None:
            self._bvh = BVH(self.vertices, self.faces)
        return self._bvh

    def translated(self, offset) -> "PartGeometry":
        return PartGeometry(self.vertices + np.asarray(offset)[None, :],
                            self.faces)


def sweep_samples(part: PartGeometry, offset: float) -> np.ndarray:
    """Vertices, edge midpoints, face centroids and their inward offsets."""
    v = part.vertices
    f = part.faces
    p = v[f]
    centroids = p.mean(axis=1)
    normals, areas = geom.face_normals_areas(v, f)

    mids = {}
    mid_normal = {}
    for k in range(len(f)):
        for e in range(3):
            a, b = int(f[k, e]), int(f[k, (e + 1) % 3])
            key = (min(a, b), max(a, b))
            if key not in mids:
                mids[key] = 0.5 * (v[a] + v[b])
                mid_normal[key] = normals[k].copy()
            else:
                mid_normal[key] = mid_normal[key] + normals[k]
    mid_pts = np.array([mids[k] for k in sorted(mids)]).reshape(-1, 3)
    mid_nrm = np.array([mid_normal[k] for k in sorted(mids)]).reshape(-1, 3)
    nl = np.linalg.norm(mid_nrm, axis=1)
    mid_nrm[nl > 0] /= nl[nl > 0, None]

    vn = np.zeros_like(v)
    w = normals * areas[:, None]
    for k in range(3):
        np.add.at(vn, f[:, k], w)
    used = np.unique(f)
    vn_len = np.linalg.norm(vn, axis=1)
    vn[vn_len > 0] /= vn_len[vn_len > 0, None]

    base = np.vstack([v[used], mid_pts, centroids])
    nrm = np.vstack([vn[used], mid_nrm, normals])
    inward = base - offset * nrm
    return np.vstack([base, inward])


def sweep_collides(part: PartGeometry, direction, obstacles,
                   exact: bool = False) -> bool:
    """True iff translating `part` along `direction` hits any obstacle."""
    direction = np.asarray(direction, dtype=np.float64)
    obstacles = [o for o in obstacles if len(o.faces)]
    if not obstacles or len(part.faces) == 0:
        return False
    pts = [part.vertices] + [o.vertices for o in obstacles]
    diag = geom.bbox_diag(np.vstack(pts))
    tol = CONTACT_TOL_REL * diag
    off = SAMPLE_OFFSET_REL * diag

    part_samples = sweep_samples(part, off)
    ones = None
    for obs in obstacles:
        if ones is None or len(ones) != obs.bvh.n_faces:
            ones = np.ones(obs.bvh.n_faces, dtype=np.uint8)
        if obs.bvh.any_ray_hits_mask(part_samples, direction, ones, t_min=tol):
            return True
    part_ones = np.ones(part.bvh.n_faces, dtype=np.uint8)
    rev = -direction
    for obs in obstacles:
        obs_samples = sweep_samples(obs, off)
        if part.bvh.any_ray_hits_mask(obs_samples, rev, part_ones, t_min=tol):
            return True
    if exact:
        return step_translation_collides(part, direction, obstacles, diag)
    return False


def step_translation_collides(part: PartGeometry, direction, obstacles,
                              diag=None, step_rel=EXACT_STEP_REL) -> bool:
    """Dense translation reference: move the part in small steps and test
    triangle-triangle intersection against all obstacles at every step."""
    direction = np.asarray(direction, dtype=np.float64)
    if diag is None:
        pts = [part.vertices] + [o.vertices for o in obstacles]
        diag = geom.bbox_diag(np.vstack(pts))
    step = step_rel * diag
    n_steps = int(np.ceil(1.5 * diag / step))
    for k in range(1, n_steps + 1):
        moved = part.vertices + (k * step) * direction[None, :]
        tris = moved[part.faces]
        hit = False
        for obs in obstacles:
            for tri in tris:
                if obs.bvh.intersects_triangle(tri):
                    hit = True
                    break
            if hit:
                break
        if hit:
            return True
    return False


# --------------------------------------------------------------------------
# proposition check: (interface && region extractable) => no collision
# --------------------------------------------------------------------------

@dataclass
class PropositionReport:
    interface_ok: bool
    region_ok: bool
    collides: bool

    @property
    def implication_holds(self) -> bool:
        return not (self.interface_ok and self.region_ok) or not self.collides


def interface_extractable(part: PartGeometry, interface_face_mask,
                          direction, tol=1e-12) -> bool:
    """All flagged faces (the part's interfaces with remaining parts) must
    have outward normals non-acute to the direction."""
    normals, _ = geom.face_normals_areas(part.vertices, part.faces)
    sel = normals[interface_face_mask]
    if len(sel) == 0:
        return True
    return bool(np.max(sel @ np.asarray(direction)) <= tol)


def region_extractable_sampled(part: PartGeometry, outer_face_mask, direction,
                               obstacles, diag=None) -> bool:
    """Rays from the part's outer-surface samples must miss every obstacle."""
    direction = np.asarray(direction, dtype=np.float64)
    obstacles = [o for o in obstacles if len(o.faces)]
    if not obstacles:
        return True
    if diag is None:
        pts = [part.vertices] + [o.vertices for o in obstacles]
        diag = geom.bbox_diag(np.vstack(pts))
    tol = CONTACT_TOL_REL * diag
    outer = PartGeometry(part.vertices, part.faces[outer_face_mask])
    if len(outer.faces) == 0:
        return True
    samples = sweep_samples(outer, SAMPLE_OFFSET_REL * diag)
    for obs in obstacles:
        ones = np.ones(obs.bvh.n_faces, dtype=np.uint8)
        if obs.bvh.any_ray_hits_mask(samples, direction, ones, t_min=tol):
            return False
    return True


def verify_proposition1(part: PartGeometry, interface_face_mask, direction,
                        obstacles, exact=False) -> PropositionReport:
    outer_mask = ~np.asarray(interface_face_mask, dtype=bool)
    return PropositionReport(
        interface_ok=interface_extractable(part, interface_face_mask, direction),
        region_ok=region_extractable_sampled(part, outer_mask, direction,
                                             obstacles),
        collides=sweep_collides(part, direction, obstacles, exact=exact))
