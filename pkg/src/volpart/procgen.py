"""Procedural solids used by the test suite and the demo CLI.

Each generator returns a LabeledTetMesh whose boundary triangles carry
attribute labels assigned by a labeling callback over (centroid, normal).
Tet meshes are built structurally (Kuhn cubes, prism shells, fans), so the
boundary conforms to the intended surface exactly and the output is fully
deterministic.
"""

from __future__ import annotations

import numpy as np

from .tetmesh import LabeledTetMesh, _extract_boundary

# six tets per cube around the (0,0,0)-(1,1,1) diagonal; identical in every
# cell, so shared faces are cut the same way on both sides
_KUHN_PATHS = (
    (0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))


def _axis_offsets(path):
    out = [np.zeros(3, dtype=np.int64)]
    acc = np.zeros(3, dtype=np.int64)
    for ax in path:
        acc = acc.copy()
        acc[ax] = 1
        out.append(acc)
    return out


def voxel_solid(cells, labeler, scale=1.0, origin=(0.0, 0.0, 0.0)):
    """Tet mesh of a union of unit cells (set of integer (i,j,k) triples)."""
    cells = sorted(set(map(tuple, cells)))
    vid = {}
    verts = []

    def vertex(i, j, k):
        key = (i, j, k)
        if key not in vid:
            vid[key] = len(verts)
            verts.append(key)
        return vid[key]

    tets = []
    for c in cells:
        base = np.array(c, dtype=np.int64)
        corner = {}
        for path in _KUHN_PATHS:
            offs = _axis_offsets(path)
            ids = []
            for o in offs:
                key = tuple(base + o)
                if key not in corner:
                    corner[key] = vertex(*key)
                ids.append(corner[key])
            tets.append(ids)

    vertices = np.asarray(verts, dtype=np.float64) * scale + np.asarray(origin)
    return _labeled_from_tets(vertices, np.asarray(tets, dtype=np.int64), labeler)


def _labeled_from_tets(vertices, tets, labeler):
    from .geom import tet_volumes
    vols = tet_volumes(vertices, tets)
    flip = vols < 0
    if np.any(flip):
        tets = tets.copy()
        tets[flip, 2], tets[flip, 3] = tets[flip, 3], tets[flip, 2].copy()
    bd_tris, _, _ = _extract_boundary(tets)
    p = vertices[bd_tris]
    centroids = p.mean(axis=1)
    normals = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    norms = np.linalg.norm(normals, axis=1)
    normals = normals / norms[:, None]
    labels = np.array([labeler(c, n) for c, n in zip(centroids, normals)],
                      dtype=np.int64)
    return LabeledTetMesh(vertices, tets, labels)


# --------------------------------------------------------------------------
# spheres
# --------------------------------------------------------------------------

def icosphere(subdiv=2):
    """Unit icosphere (vertices, faces) with 20 * 4**subdiv faces."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)],
        dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1)[:, None]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [v for v in verts]

    def midpoint(cache, a, b):
        key = (min(a, b), max(a, b))
        if key not in cache:
            m = verts[a] + verts[b]
            m = m / np.linalg.norm(m)
            cache[key] = len(verts)
            verts.append(m)
        return cache[key]

    for _ in range(subdiv):
        cache = {}
        nxt = []
        for a, b, c in faces:
            ab = midpoint(cache, a, b)
            bc = midpoint(cache, b, c)
            ca = midpoint(cache, c, a)
            nxt += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = nxt
    return np.asarray(verts), np.asarray(faces, dtype=np.int64)


def _prism_tets(top, bottom):
    """Split prism (top triangle over bottom triangle) into 3 tets using the
    smallest-global-index diagonal rule, so adjacent prisms conform."""
    u = list(map(int, top))
    w = list(map(int, bottom))
    ids = u + w
    s = ids.index(min(ids))
    # rotate/flip so the smallest vertex sits at top position 0
    if s < 3:
        rot = s
        u = u[rot:] + u[:rot]
        w = w[rot:] + w[:rot]
    else:
        rot = s - 3
        w2 = w[rot:] + w[:rot]
        u2 = u[rot:] + u[:rot]
        # vertical flip with a reflection to keep quad pairing (ui over wi)
        u, w = [w2[0], w2[2], w2[1]], [u2[0], u2[2], u2[1]]
    v0, v1, v2 = u
    v3, v4, v5 = w
    if min(v1, v5) < min(v2, v4):
        return [(v0, v1, v2, v5), (v0, v1, v5, v4), (v0, v4, v5, v3)]
    return [(v0, v1, v2, v4), (v0, v4, v2, v5), (v0, v4, v5, v3)]


def layered_ball(labeler, subdiv=2, radii=(1.0, 0.55)):
    """Solid ball: concentric icosphere shells split into prisms plus a
    central fan; boundary is the outermost icosphere."""
    sphere_v, sphere_f = icosphere(subdiv)
    n = len(sphere_v)
    verts = [sphere_v * r for r in radii]
    center = len(radii) * n
    vertices = np.vstack(verts + [np.zeros((1, 3))])

    tets = []
    for layer in range(len(radii) - 1):
        off_o = layer * n
        off_i = (layer + 1) * n
        for a, b, c in sphere_f:
            tets.extend(_prism_tets((a + off_o, b + off_o, c + off_o),
                                    (a + off_i, b + off_i, c + off_i)))
    off_i = (len(radii) - 1) * n
    for a, b, c in sphere_f:
        tets.append((a + off_i, b + off_i, c + off_i, center))
    return _labeled_from_tets(vertices, np.asarray(tets, dtype=np.int64), labeler)


# --------------------------------------------------------------------------
# cylinders
# --------------------------------------------------------------------------

def _disk(radius, n_seg, n_ring):
    """Triangulated disk: center + concentric rings (2D points, triangles)."""
    pts = [(0.0, 0.0)]
    for r in range(1, n_ring + 1):
        rad = radius * r / n_ring
        for s in range(n_seg):
            a = 2.0 * np.pi * s / n_seg
            pts.append((rad * np.cos(a), rad * np.sin(a)))

    def ring(r, s):
        return 1 + (r - 1) * n_seg + (s % n_seg)

    tris = []
    for s in range(n_seg):
        tris.append((0, ring(1, s), ring(1, s + 1)))
    for r in range(1, n_ring):
        for s in range(n_seg):
            a, b = ring(r, s), ring(r, s + 1)
            c, d = ring(r + 1, s), ring(r + 1, s + 1)
            if min(a, d) < min(b, c):
                tris.append((a, b, d))
                tris.append((a, d, c))
            else:
                tris.append((a, b, c))
                tris.append((b, d, c))
    return np.asarray(pts), tris


def layered_cylinder(labeler, radius=1.0, height=2.0, n_seg=16, n_ring=2,
                     n_layer=6):
    """Solid cylinder extruded from a triangulated disk."""
    pts2d, tris = _disk(radius, n_seg, n_ring)
    n = len(pts2d)
    layers = []
    for k in range(n_layer + 1):
        z = height * k / n_layer
        layers.append(np.column_stack(
            [pts2d[:, 0], pts2d[:, 1], np.full(n, z)]))
    vertices = np.vstack(layers)

    tets = []
    for k in range(n_layer):
        lo = k * n
        hi = (k + 1) * n
        for a, b, c in tris:
            tets.extend(_prism_tets((a + hi, b + hi, c + hi),
                                    (a + lo, b + lo, c + lo)))
    return _labeled_from_tets(vertices, np.asarray(tets, dtype=np.int64), labeler)
