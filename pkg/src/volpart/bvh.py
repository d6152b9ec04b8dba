"""Bounding-volume hierarchy with watertight ray casting and distance queries.

The tree is built once per mesh (binned SAH, rebuilt per pipeline pass) and
queried through numba kernels. The ray-triangle test follows the
Woop/Benthin/Wald watertight formulation in double precision; hits on shared
edges/vertices are counted (boundary-inclusive), and ties between coincident
hits resolve to the nearest t, then the lowest face index.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_LEAF_SIZE = 4
_N_BINS = 16
_STACK = 256


class BVH:
    """Static BVH over a triangle soup.

    Parameters
    ----------
    vertices : (V, 3) float array
    faces : (F, 3) int array, indices into vertices
    face_ids : optional (F,) int array of external ids reported in hits;
        defaults to 0..F-1.
    """

    def __init__(self, vertices, faces, face_ids=None):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        faces = np.ascontiguousarray(faces, dtype=np.int64)
        self.n_faces = len(faces)
        if face_ids is None:
            face_ids = np.arange(self.n_faces, dtype=np.int64)
        else:
            face_ids = np.ascontiguousarray(face_ids, dtype=np.int64)

        if self.n_faces == 0:
            self.node_min = np.zeros((1, 3))
            self.node_max = np.zeros((1, 3))
            self.node_left = np.full(1, -1, dtype=np.int64)
            self.node_right = np.full(1, -1, dtype=np.int64)
            self.node_first = np.zeros(1, dtype=np.int64)
            self.node_count = np.zeros(1, dtype=np.int64)
            self.tri = np.zeros((0, 3, 3))
            self.ids = face_ids
            return

        tris = vertices[faces]  # (F, 3, 3)
        lo = tris.min(axis=1)
        hi = tris.max(axis=1)
        cent = tris.mean(axis=1)

        order = np.arange(self.n_faces)
        node_min, node_max, left, right, first, count = [], [], [], [], [], []

        def new_node():
            node_min.append(None)
            node_max.append(None)
            left.append(-1)
            right.append(-1)
            first.append(0)
            count.append(0)
            return len(node_min) - 1

        def build(idx):
            ni = new_node()
            sub_lo = lo[order[idx]].min(axis=0)
            sub_hi = hi[order[idx]].max(axis=0)
            node_min[ni] = sub_lo
            node_max[ni] = sub_hi
            if len(idx) <= _LEAF_SIZE:
                _make_leaf(ni, idx)
                return ni
            split = _sah_split(idx)
            if split is None:
                _make_leaf(ni, idx)
                return ni
            li, ri = split
            left[ni] = build(li)
            right[ni] = build(ri)
            return ni

        def _make_leaf(ni, idx):
            first[ni] = _make_leaf.cursor
            count[ni] = len(idx)
            leaf_order[_make_leaf.cursor:_make_leaf.cursor + len(idx)] = order[idx]
            _make_leaf.cursor += len(idx)

        def _sah_split(idx):
            sub = order[idx]
            c = cent[sub]
            clo, chi = c.min(axis=0), c.max(axis=0)
            ext = chi - clo
            axis = int(np.argmax(ext))
            if ext[axis] <= 0:
                return None
            rel = (c[:, axis] - clo[axis]) / ext[axis]
            bins = np.minimum((rel * _N_BINS).astype(np.int64), _N_BINS - 1)
            counts = np.bincount(bins, minlength=_N_BINS)
            # bin bounds
            blo = np.full((_N_BINS, 3), np.inf)
            bhi = np.full((_N_BINS, 3), -np.inf)
            for b in range(_N_BINS):
                m = bins == b
                if counts[b]:
                    blo[b] = lo[sub[m]].min(axis=0)
                    bhi[b] = hi[sub[m]].max(axis=0)
            best_cost, best_b = np.inf, -1
            for b in range(1, _N_BINS):
                nl = counts[:b].sum()
                nr = counts[b:].sum()
                if nl == 0 or nr == 0:
                    continue
                l_lo = blo[:b].min(axis=0)
                l_hi = bhi[:b].max(axis=0)
                r_lo = blo[b:].min(axis=0)
                r_hi = bhi[b:].max(axis=0)
                cost = nl * _half_area(l_lo, l_hi) + nr * _half_area(r_lo, r_hi)
                if cost < best_cost:
                    best_cost, best_b = cost, b
            if best_b < 0:
                # all centroids in one bin: median split
                half = len(idx) // 2
                sel = np.argsort(c[:, axis], kind="stable")
                return idx[sel[:half]], idx[sel[half:]]
            mask = bins < best_b
            return idx[mask], idx[~mask]

        leaf_order = np.empty(self.n_faces, dtype=np.int64)
        _make_leaf.cursor = 0
        build(np.arange(self.n_faces))

        self.node_min = np.ascontiguousarray(node_min, dtype=np.float64)
        self.node_max = np.ascontiguousarray(node_max, dtype=np.float64)
        self.node_left = np.asarray(left, dtype=np.int64)
        self.node_right = np.asarray(right, dtype=np.int64)
        self.node_first = np.asarray(first, dtype=np.int64)
        self.node_count = np.asarray(count, dtype=np.int64)
        self.tri = np.ascontiguousarray(tris[leaf_order])  # (F, 3, 3) in leaf order
        self.ids = face_ids[leaf_order]

    # -- queries ------------------------------------------------------------

    def first_hit(self, origin, direction, t_min=0.0, t_max=np.inf):
        """Nearest intersection; returns (t, face_id, u, v) or None."""
        if self.n_faces == 0:
            return None
        t, fid, u, v = _first_hit(
            self.node_min, self.node_max, self.node_left, self.node_right,
            self.node_first, self.node_count, self.tri, self.ids,
            np.asarray(origin, dtype=np.float64),
            np.asarray(direction, dtype=np.float64),
            float(t_min), float(t_max))
        if fid < 0:
            return None
        return t, fid, u, v

    def first_hit_excluding(self, origin, direction, exclude, t_min=0.0):
        """Nearest hit whose face id is not in `exclude` (small id set)."""
        if self.n_faces == 0:
            return None
        excl = np.asarray(sorted(exclude), dtype=np.int64) if exclude else \
            np.empty(0, dtype=np.int64)
        t, fid, u, v = _first_hit_excl(
            self.node_min, self.node_max, self.node_left, self.node_right,
            self.node_first, self.node_count, self.tri, self.ids, excl,
            np.asarray(origin, dtype=np.float64),
            np.asarray(direction, dtype=np.float64), float(t_min))
        if fid < 0:
            return None
        return t, fid, u, v

    def hits_mask(self, origin, direction, mask, t_min=0.0):
        """True iff the ray intersects any face whose id is flagged in mask."""
        if self.n_faces == 0:
            return False
        return bool(_any_hit_mask(
            self.node_min, self.node_max, self.node_left, self.node_right,
            self.node_first, self.node_count, self.tri, self.ids,
            np.ascontiguousarray(mask, dtype=np.uint8),
            np.asarray(origin, dtype=np.float64),
            np.asarray(direction, dtype=np.float64), float(t_min)))

    def any_ray_hits_mask(self, origins, direction, mask, t_min=0.0):
        """True iff any of the rays (shared direction) hits a flagged face."""
        if self.n_faces == 0 or len(origins) == 0:
            return False
        return bool(_batch_any_hit_mask(
            self.node_min, self.node_max, self.node_left, self.node_right,
            self.node_first, self.node_count, self.tri, self.ids,
            np.ascontiguousarray(mask, dtype=np.uint8),
            np.ascontiguousarray(origins, dtype=np.float64),
            np.asarray(direction, dtype=np.float64), float(t_min)))

    def rays_hit_mask(self, origins, direction, mask, t_min=0.0):
        """Per-ray flags: does each ray hit any face flagged in mask."""
        if self.n_faces == 0 or len(origins) == 0:
            return np.zeros(len(origins), dtype=bool)
        out = np.zeros(len(origins), dtype=np.uint8)
        _each_hit_mask(
            self.node_min, self.node_max, self.node_left, self.node_right,
            self.node_first, self.node_count, self.tri, self.ids,
            np.ascontiguousarray(mask, dtype=np.uint8),
            np.ascontiguousarray(origins, dtype=np.float64),
            np.asarray(direction, dtype=np.float64), float(t_min), out)
        return out.astype(bool)

    def count_hits(self, origin, direction, t_min=0.0):
        """Number of boundary-inclusive intersections along the ray."""
        if self.n_faces == 0:
            return 0
        return int(_count_hits(
            self.node_min, self.node_max, self.node_left, self.node_right,
            self.node_first, self.node_count, self.tri, self.ids,
            np.asarray(origin, dtype=np.float64),
            np.asarray(direction, dtype=np.float64), float(t_min)))

    def sq_distance(self, point):
        """Squared distance from point to the nearest triangle."""
        if self.n_faces == 0:
            return np.inf
        return float(_closest_sqdist(
            self.node_min, self.node_max, self.node_left, self.node_right,
            self.node_first, self.node_count, self.tri,
            np.asarray(point, dtype=np.float64)))

    def sq_distances(self, points):
        if self.n_faces == 0:
            return np.full(len(points), np.inf)
        out = np.empty(len(points))
        _closest_sqdist_batch(
            self.node_min, self.node_max, self.node_left, self.node_right,
            self.node_first, self.node_count, self.tri,
            np.ascontiguousarray(points, dtype=np.float64), out)
        return out

    def intersects_triangle(self, tri) -> bool:
        """Conservative broad-phase + exact narrow-phase triangle query."""
        if self.n_faces == 0:
            return False
        from .geom import triangles_intersect
        tri = np.asarray(tri, dtype=np.float64)
        t_lo = tri.min(axis=0)
        t_hi = tri.max(axis=0)
        cand = _collect_overlaps(
            self.node_min, self.node_max, self.node_left, self.node_right,
            self.node_first, self.node_count, t_lo, t_hi)
        for i in cand:
            if triangles_intersect(tri, self.tri[i]):
                return True
        return False


def _half_area(lo, hi):
    d = np.maximum(hi - lo, 0)
    return d[0] * d[1] + d[1] * d[2] + d[2] * d[0]


# --------------------------------------------------------------------------
# numba kernels
# --------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _ray_setup(direction):
    ax = abs(direction[0])
    ay = abs(direction[1])
    az = abs(direction[2])
    if az >= ax and az >= ay:
        kz = 2
    elif ay >= ax:
        kz = 1
    else:
        kz = 0
    kx = kz + 1
    if kx == 3:
        kx = 0
    ky = kx + 1
    if ky == 3:
        ky = 0
    if direction[kz] < 0.0:
        kx, ky = ky, kx
    sz = 1.0 / direction[kz]
    sx = direction[kx] * sz
    sy = direction[ky] * sz
    return kx, ky, kz, sx, sy, sz


@njit(cache=True, inline="always")
def _tri_hit(v0, v1, v2, origin, kx, ky, kz, sx, sy, sz, t_min, t_max):
    """Watertight intersection; returns t or -1.0."""
    ax = v0[kx] - origin[kx] - sx * (v0[kz] - origin[kz])
    ay = v0[ky] - origin[ky] - sy * (v0[kz] - origin[kz])
    bx = v1[kx] - origin[kx] - sx * (v1[kz] - origin[kz])
    by = v1[ky] - origin[ky] - sy * (v1[kz] - origin[kz])
    cx = v2[kx] - origin[kx] - sx * (v2[kz] - origin[kz])
    cy = v2[ky] - origin[ky] - sy * (v2[kz] - origin[kz])

    u = cx * by - cy * bx
    v = ax * cy - ay * cx
    w = bx * ay - by * ax

    if (u < 0.0 or v < 0.0 or w < 0.0) and (u > 0.0 or v > 0.0 or w > 0.0):
        return -1.0
    det = u + v + w
    if det == 0.0:
        return -1.0
    az = sz * (v0[kz] - origin[kz])
    bz = sz * (v1[kz] - origin[kz])
    cz = sz * (v2[kz] - origin[kz])
    t = (u * az + v * bz + w * cz) / det
    if t < t_min or t > t_max:
        return -1.0
    return t


@njit(cache=True, inline="always")
def _slab_hit(nlo, nhi, origin, inv_d, t_max):
    t0 = 0.0
    t1 = t_max
    for k in range(3):
        if inv_d[k] == np.inf or inv_d[k] == -np.inf:
            if origin[k] < nlo[k] or origin[k] > nhi[k]:
                return False
            continue
        ta = (nlo[k] - origin[k]) * inv_d[k]
        tb = (nhi[k] - origin[k]) * inv_d[k]
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
    return t0 <= t1 * 1.0000000000001


@njit(cache=True, inline="always")
def _inv_dir(direction):
    inv = np.empty(3)
    for k in range(3):
        if direction[k] != 0.0:
            inv[k] = 1.0 / direction[k]
        else:
            inv[k] = np.inf
    return inv


@njit(cache=True)
def _first_hit(nmin, nmax, nleft, nright, nfirst, ncount, tri, ids,
               origin, direction, t_min, t_max):
    kx, ky, kz, sx, sy, sz = _ray_setup(direction)
    inv = _inv_dir(direction)
    best_t = t_max
    best_id = np.int64(-1)
    best_u = 0.0
    best_v = 0.0
    stack = np.empty(_STACK, dtype=np.int64)
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _slab_hit(nmin[node], nmax[node], origin, inv, best_t):
            continue
        if nleft[node] < 0:
            for i in range(nfirst[node], nfirst[node] + ncount[node]):
                t = _tri_hit(tri[i, 0], tri[i, 1], tri[i, 2], origin,
                             kx, ky, kz, sx, sy, sz, t_min, best_t)
                if t >= 0.0:
                    if t < best_t or (t == best_t and ids[i] < best_id) or best_id < 0:
                        best_t = t
                        best_id = ids[i]
                        # barycentrics recomputed cheaply from edge functions
                        best_u, best_v = _barycentrics(
                            tri[i, 0], tri[i, 1], tri[i, 2], origin, direction, t)
        else:
            stack[top] = nleft[node]
            top += 1
            stack[top] = nright[node]
            top += 1
    return best_t, best_id, best_u, best_v


@njit(cache=True, inline="always")
def _barycentrics(v0, v1, v2, origin, direction, t):
    p = np.empty(3)
    for k in range(3):
        p[k] = origin[k] + t * direction[k]
    e0 = np.empty(3)
    e1 = np.empty(3)
    d = np.empty(3)
    for k in range(3):
        e0[k] = v1[k] - v0[k]
        e1[k] = v2[k] - v0[k]
        d[k] = p[k] - v0[k]
    d00 = e0[0] * e0[0] + e0[1] * e0[1] + e0[2] * e0[2]
    d01 = e0[0] * e1[0] + e0[1] * e1[1] + e0[2] * e1[2]
    d11 = e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]
    d20 = d[0] * e0[0] + d[1] * e0[1] + d[2] * e0[2]
    d21 = d[0] * e1[0] + d[1] * e1[1] + d[2] * e1[2]
    den = d00 * d11 - d01 * d01
    if den == 0.0:
        return 0.0, 0.0
    v = (d11 * d20 - d01 * d21) / den
    w = (d00 * d21 - d01 * d20) / den
    return v, w


@njit(cache=True)
def _first_hit_excl(nmin, nmax, nleft, nright, nfirst, ncount, tri, ids,
                    excl, origin, direction, t_min):
    kx, ky, kz, sx, sy, sz = _ray_setup(direction)
    inv = _inv_dir(direction)
    best_t = np.inf
    best_id = np.int64(-1)
    best_u = 0.0
    best_v = 0.0
    stack = np.empty(_STACK, dtype=np.int64)
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _slab_hit(nmin[node], nmax[node], origin, inv, best_t):
            continue
        if nleft[node] < 0:
            for i in range(nfirst[node], nfirst[node] + ncount[node]):
                skip = False
                for j in range(len(excl)):
                    if excl[j] == ids[i]:
                        skip = True
                        break
                if skip:
                    continue
                t = _tri_hit(tri[i, 0], tri[i, 1], tri[i, 2], origin,
                             kx, ky, kz, sx, sy, sz, t_min, best_t)
                if t >= 0.0:
                    if best_id < 0 or t < best_t or (t == best_t and ids[i] < best_id):
                        best_t = t
                        best_id = ids[i]
                        best_u, best_v = _barycentrics(
                            tri[i, 0], tri[i, 1], tri[i, 2], origin, direction, t)
        else:
            stack[top] = nleft[node]
            top += 1
            stack[top] = nright[node]
            top += 1
    return best_t, best_id, best_u, best_v


@njit(cache=True)
def _any_hit_mask(nmin, nmax, nleft, nright, nfirst, ncount, tri, ids,
                  mask, origin, direction, t_min):
    kx, ky, kz, sx, sy, sz = _ray_setup(direction)
    inv = _inv_dir(direction)
    stack = np.empty(_STACK, dtype=np.int64)
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _slab_hit(nmin[node], nmax[node], origin, inv, np.inf):
            continue
        if nleft[node] < 0:
            for i in range(nfirst[node], nfirst[node] + ncount[node]):
                if mask[ids[i]] == 0:
                    continue
                t = _tri_hit(tri[i, 0], tri[i, 1], tri[i, 2], origin,
                             kx, ky, kz, sx, sy, sz, t_min, np.inf)
                if t >= 0.0:
                    return True
        else:
            stack[top] = nleft[node]
            top += 1
            stack[top] = nright[node]
            top += 1
    return False


@njit(cache=True)
def _batch_any_hit_mask(nmin, nmax, nleft, nright, nfirst, ncount, tri, ids,
                        mask, origins, direction, t_min):
    for r in range(origins.shape[0]):
        if _any_hit_mask(nmin, nmax, nleft, nright, nfirst, ncount, tri, ids,
                         mask, origins[r], direction, t_min):
            return True
    return False


@njit(cache=True)
def _each_hit_mask(nmin, nmax, nleft, nright, nfirst, ncount, tri, ids,
                   mask, origins, direction, t_min, out):
    for r in range(origins.shape[0]):
        if _any_hit_mask(nmin, nmax, nleft, nright, nfirst, ncount, tri, ids,
                         mask, origins[r], direction, t_min):
            out[r] = 1


@njit(cache=True)
def _count_hits(nmin, nmax, nleft, nright, nfirst, ncount, tri, ids,
                origin, direction, t_min):
    kx, ky, kz, sx, sy, sz = _ray_setup(direction)
    inv = _inv_dir(direction)
    n = 0
    stack = np.empty(_STACK, dtype=np.int64)
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if not _slab_hit(nmin[node], nmax[node], origin, inv, np.inf):
            continue
        if nleft[node] < 0:
            for i in range(nfirst[node], nfirst[node] + ncount[node]):
                t = _tri_hit(tri[i, 0], tri[i, 1], tri[i, 2], origin,
                             kx, ky, kz, sx, sy, sz, t_min, np.inf)
                if t >= 0.0:
                    n += 1
        else:
            stack[top] = nleft[node]
            top += 1
            stack[top] = nright[node]
            top += 1
    return n


@njit(cache=True, inline="always")
def _aabb_sqdist(lo, hi, p):
    d = 0.0
    for k in range(3):
        if p[k] < lo[k]:
            d += (lo[k] - p[k]) ** 2
        elif p[k] > hi[k]:
            d += (p[k] - hi[k]) ** 2
    return d


@njit(cache=True, inline="always")
def _pt_tri_sqdist(p, a, b, c):
    ab0 = b[0] - a[0]
    ab1 = b[1] - a[1]
    ab2 = b[2] - a[2]
    ac0 = c[0] - a[0]
    ac1 = c[1] - a[1]
    ac2 = c[2] - a[2]
    ap0 = p[0] - a[0]
    ap1 = p[1] - a[1]
    ap2 = p[2] - a[2]
    d1 = ab0 * ap0 + ab1 * ap1 + ab2 * ap2
    d2 = ac0 * ap0 + ac1 * ap1 + ac2 * ap2
    if d1 <= 0.0 and d2 <= 0.0:
        return ap0 * ap0 + ap1 * ap1 + ap2 * ap2
    bp0 = p[0] - b[0]
    bp1 = p[1] - b[1]
    bp2 = p[2] - b[2]
    d3 = ab0 * bp0 + ab1 * bp1 + ab2 * bp2
    d4 = ac0 * bp0 + ac1 * bp1 + ac2 * bp2
    if d3 >= 0.0 and d4 <= d3:
        return bp0 * bp0 + bp1 * bp1 + bp2 * bp2
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        den = d1 - d3
        t = d1 / den if den != 0.0 else 0.0
        q0 = p[0] - (a[0] + t * ab0)
        q1 = p[1] - (a[1] + t * ab1)
        q2 = p[2] - (a[2] + t * ab2)
        return q0 * q0 + q1 * q1 + q2 * q2
    cp0 = p[0] - c[0]
    cp1 = p[1] - c[1]
    cp2 = p[2] - c[2]
    d5 = ab0 * cp0 + ab1 * cp1 + ab2 * cp2
    d6 = ac0 * cp0 + ac1 * cp1 + ac2 * cp2
    if d6 >= 0.0 and d5 <= d6:
        return cp0 * cp0 + cp1 * cp1 + cp2 * cp2
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        den = d2 - d6
        t = d2 / den if den != 0.0 else 0.0
        q0 = p[0] - (a[0] + t * ac0)
        q1 = p[1] - (a[1] + t * ac1)
        q2 = p[2] - (a[2] + t * ac2)
        return q0 * q0 + q1 * q1 + q2 * q2
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        den = (d4 - d3) + (d5 - d6)
        t = (d4 - d3) / den if den != 0.0 else 0.0
        q0 = p[0] - (b[0] + t * (c[0] - b[0]))
        q1 = p[1] - (b[1] + t * (c[1] - b[1]))
        q2 = p[2] - (b[2] + t * (c[2] - b[2]))
        return q0 * q0 + q1 * q1 + q2 * q2
    den = va + vb + vc
    v = vb / den
    w = vc / den
    q0 = p[0] - (a[0] + ab0 * v + ac0 * w)
    q1 = p[1] - (a[1] + ab1 * v + ac1 * w)
    q2 = p[2] - (a[2] + ab2 * v + ac2 * w)
    return q0 * q0 + q1 * q1 + q2 * q2


@njit(cache=True)
def _closest_sqdist(nmin, nmax, nleft, nright, nfirst, ncount, tri, p):
    best = np.inf
    stack = np.empty(_STACK, dtype=np.int64)
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        if _aabb_sqdist(nmin[node], nmax[node], p) >= best:
            continue
        if nleft[node] < 0:
            for i in range(nfirst[node], nfirst[node] + ncount[node]):
                d = _pt_tri_sqdist(p, tri[i, 0], tri[i, 1], tri[i, 2])
                if d < best:
                    best = d
        else:
            l = nleft[node]
            r = nright[node]
            dl = _aabb_sqdist(nmin[l], nmax[l], p)
            dr = _aabb_sqdist(nmin[r], nmax[r], p)
            if dl < dr:
                stack[top] = r
                top += 1
                stack[top] = l
                top += 1
            else:
                stack[top] = l
                top += 1
                stack[top] = r
                top += 1
    return best


@njit(cache=True)
def _closest_sqdist_batch(nmin, nmax, nleft, nright, nfirst, ncount, tri,
                          points, out):
    for i in range(points.shape[0]):
        out[i] = _closest_sqdist(nmin, nmax, nleft, nright, nfirst, ncount,
                                 tri, points[i])


@njit(cache=True)
def _collect_overlaps(nmin, nmax, nleft, nright, nfirst, ncount, t_lo, t_hi):
    found = []
    stack = np.empty(_STACK, dtype=np.int64)
    top = 0
    stack[top] = 0
    top += 1
    while top > 0:
        top -= 1
        node = stack[top]
        ok = True
        for k in range(3):
            if nmin[node][k] > t_hi[k] or nmax[node][k] < t_lo[k]:
                ok = False
                break
        if not ok:
            continue
        if nleft[node] < 0:
            for i in range(nfirst[node], nfirst[node] + ncount[node]):
                found.append(i)
        else:
            stack[top] = nleft[node]
            top += 1
            stack[top] = nright[node]
            top += 1
    return found
