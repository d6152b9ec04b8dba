"""Low-level geometric predicates shared by every stage.

All functions take plain numpy arrays; meshes are (V, 3) float64 vertex
blocks plus integer index arrays. Tolerances are expressed relative to the
bounding-box diagonal of whatever mesh is being processed (default 1e-9).
"""

from __future__ import annotations

import numpy as np

REL_EPS = 1e-9


def bbox_diag(vertices: np.ndarray) -> float:
    """Length of the axis-aligned bounding-box diagonal."""
    if len(vertices) == 0:
        return 0.0
    return float(np.linalg.norm(vertices.max(axis=0) - vertices.min(axis=0)))


def normalize(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0.0:
        return v.copy()
    return v / n


def signed_volume(p0, p1, p2, p3) -> float:
    """One sixth of the scalar triple product; positive for positively
    oriented tets."""
    a = np.asarray(p1, dtype=np.float64) - p0
    b = np.asarray(p2, dtype=np.float64) - p0
    c = np.asarray(p3, dtype=np.float64) - p0
    return float(np.dot(a, np.cross(b, c))) / 6.0


def tet_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    """Signed volumes of all tets at once."""
    p = vertices[tets]
    a = p[:, 1] - p[:, 0]
    b = p[:, 2] - p[:, 0]
    c = p[:, 3] - p[:, 0]
    return np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0


def face_normals_areas(vertices: np.ndarray, faces: np.ndarray):
    """Unit normals and areas of all triangles; degenerate faces keep a zero
    normal."""
    p = vertices[faces]
    cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    dbl = np.linalg.norm(cr, axis=1)
    areas = 0.5 * dbl
    normals = np.zeros_like(cr)
    ok = dbl > 0
    normals[ok] = cr[ok] / dbl[ok, None]
    return normals, areas


def face_centroids(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    return vertices[faces].mean(axis=1)


def divergence_volume(vertices: np.ndarray, faces: np.ndarray) -> float:
    """Enclosed volume of a closed, outward-oriented triangle mesh."""
    p = vertices[faces]
    return float(np.einsum("ij,ij->i", p[:, 0], np.cross(p[:, 1], p[:, 2])).sum()) / 6.0


def point_triangle_distance(p, a, b, c) -> float:
    """Exact minimum distance from point p to triangle (a, b, c)."""
    return float(np.sqrt(point_triangle_sqdistance(p, a, b, c)))


def point_triangle_sqdistance(p, a, b, c) -> float:
    """Squared point-triangle distance (Ericson, Real-Time Collision
    Detection, 5.1.5)."""
    p = np.asarray(p, dtype=np.float64)
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.dot(ab, ap)
    d2 = np.dot(ac, ap)
    if d1 <= 0.0 and d2 <= 0.0:
        return float(np.dot(ap, ap))
    bp = p - b
    d3 = np.dot(ab, bp)
    d4 = np.dot(ac, bp)
    if d3 >= 0.0 and d4 <= d3:
        return float(np.dot(bp, bp))
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        denom = d1 - d3
        v = d1 / denom if denom != 0.0 else 0.0
        q = a + v * ab
        return float(np.dot(p - q, p - q))
    cp = p - c
    d5 = np.dot(ab, cp)
    d6 = np.dot(ac, cp)
    if d6 >= 0.0 and d5 <= d6:
        return float(np.dot(cp, cp))
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        denom = d2 - d6
        w = d2 / denom if denom != 0.0 else 0.0
        q = a + w * ac
        return float(np.dot(p - q, p - q))
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        denom = (d4 - d3) + (d5 - d6)
        w = (d4 - d3) / denom if denom != 0.0 else 0.0
        q = b + w * (c - b)
        return float(np.dot(p - q, p - q))
    denom = va + vb + vc
    v = vb / denom
    w = vc / denom
    q = a + ab * v + ac * w
    return float(np.dot(p - q, p - q))


def rotation_aligning(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Minimal rotation matrix taking unit vector src onto unit vector dst."""
    src = normalize(np.asarray(src, dtype=np.float64))
    dst = normalize(np.asarray(dst, dtype=np.float64))
    c = float(np.dot(src, dst))
    axis = np.cross(src, dst)
    s = float(np.linalg.norm(axis))
    if s < 1e-15:
        if c > 0.0:
            return np.eye(3)
        # opposite vectors: rotate pi around any perpendicular axis
        perp = np.cross(src, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-12:
            perp = np.cross(src, [0.0, 1.0, 0.0])
        perp = normalize(perp)
        return 2.0 * np.outer(perp, perp) - np.eye(3)
    axis = axis / s
    K = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def triangles_intersect(t1: np.ndarray, t2: np.ndarray) -> bool:
    """Moller's triangle-triangle overlap test (no epsilon inflation);
    coplanar pairs fall back to 2D edge/containment checks."""
    v0, v1, v2 = (np.asarray(t1[i], dtype=np.float64) for i in range(3))
    u0, u1, u2 = (np.asarray(t2[i], dtype=np.float64) for i in range(3))

    n1 = np.cross(v1 - v0, v2 - v0)
    d1 = -np.dot(n1, v0)
    du = np.array([np.dot(n1, u) + d1 for u in (u0, u1, u2)])
    if np.all(du > 0) or np.all(du < 0):
        return False

    n2 = np.cross(u1 - u0, u2 - u0)
    d2 = -np.dot(n2, u0)
    dv = np.array([np.dot(n2, v) + d2 for v in (v0, v1, v2)])
    if np.all(dv > 0) or np.all(dv < 0):
        return False

    dvec = np.cross(n1, n2)
    if np.dot(dvec, dvec) < 1e-30:
        return _coplanar_tri_tri(n1, (v0, v1, v2), (u0, u1, u2))

    axis = int(np.argmax(np.abs(dvec)))
    iv = _tri_interval(np.array([v0[axis], v1[axis], v2[axis]]), dv)
    iu = _tri_interval(np.array([u0[axis], u1[axis], u2[axis]]), du)
    if iv is None or iu is None:
        # a triangle lies in the other's plane up to roundoff; treat as touch
        return _coplanar_tri_tri(n1, (v0, v1, v2), (u0, u1, u2))
    return max(iv[0], iu[0]) <= min(iv[1], iu[1])


def _tri_interval(proj, dist):
    """Interval of the plane-intersection line covered by a triangle."""
    # pick the vertex on its own side
    s = np.sign(dist)
    if s[0] == s[1] and s[0] != 0:
        order = (0, 2, 1, 2)
    elif s[0] == s[2] and s[0] != 0:
        order = (0, 1, 2, 1)
    elif s[1] == s[2] and s[1] != 0:
        order = (1, 0, 0, 2)
    else:
        nz = np.nonzero(s)[0]
        if len(nz) == 0:
            return None
        a = nz[0]
        rest = [i for i in range(3) if i != a]
        order = (a, rest[0], a, rest[1])
    i, j, k, l = order
    t1 = _edge_plane_param(proj, dist, j, i)
    t2 = _edge_plane_param(proj, dist, l, k)
    lo, hi = min(t1, t2), max(t1, t2)
    return lo, hi


def _edge_plane_param(proj, dist, i, j):
    denom = dist[i] - dist[j]
    if denom == 0.0:
        return proj[j]
    return proj[i] + (proj[j] - proj[i]) * dist[i] / denom


def _coplanar_tri_tri(n, tri1, tri2) -> bool:
    drop = int(np.argmax(np.abs(n)))
    keep = [i for i in range(3) if i != drop]
    a = np.array([p[keep] for p in tri1])
    b = np.array([p[keep] for p in tri2])
    for i in range(3):
        for j in range(3):
            if _segments_intersect_2d(a[i], a[(i + 1) % 3], b[j], b[(j + 1) % 3]):
                return True
    return _point_in_tri_2d(b[0], a) or _point_in_tri_2d(a[0], b)


def _segments_intersect_2d(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    o1, o2 = orient(p1, p2, q1), orient(p1, p2, q2)
    o3, o4 = orient(q1, q2, p1), orient(q1, q2, p2)
    if ((o1 > 0) != (o2 > 0)) and ((o3 > 0) != (o4 > 0)) and o1 != o2 and o3 != o4:
        return True
    return False


def _point_in_tri_2d(p, tri) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(tri[0], tri[1], p)
    d2 = orient(tri[1], tri[2], p)
    d3 = orient(tri[2], tri[0], p)
    has_neg = (d1 < 0) or (d2 < 0) or (d3 < 0)
    has_pos = (d1 > 0) or (d2 > 0) or (d3 > 0)
    return not (has_neg and has_pos)
