"""Interface mesh extraction from a discrete partition.

The interface complex collects every internal tet face whose two tets carry
different part labels. Faces are wound so the geometric normal is the
outward normal of the first owner. Vertices shared with the outer surface
are pinned. Each pairwise interface is made a 2-manifold-with-boundary by
duplicating pinch vertices and cutting along non-manifold edges (tet labels
are untouched); triangles with two pinned boundary edges are split on their
interior edge so the optimizer has enough freedom to rotate them.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .tetmesh import LabeledTetMesh


@dataclass
class InterfaceMesh:
    positions: np.ndarray        # (N, 3) working positions
    reference: np.ndarray        # (N, 3) reference positions (v')
    source_vertex: np.ndarray    # (N,) tet vertex id, -1 for split midpoints
    faces: np.ndarray            # (K, 3)
    owners: np.ndarray           # (K, 2) part ids; normal is outward for [:,0]
    pinned: np.ndarray           # (N,) bool
    boundary_edge: np.ndarray    # (K,) local edge on the outer seam, or -1
    midpoint_of: dict = field(default_factory=dict)  # vert -> (u, w) for splits

    @property
    def n_vertices(self) -> int:
        return len(self.positions)

    @property
    def dof_of(self) -> np.ndarray:
        """Degree-of-freedom id per vertex: duplicates created by manifold
        enforcement share their tet source vertex and must move together so
        the tet mesh can track the deformation."""
        dof = np.empty(self.n_vertices, dtype=np.int64)
        seen = {}
        for v in range(self.n_vertices):
            s = int(self.source_vertex[v])
            key = ("s", s) if s >= 0 else ("m", v)
            if key not in seen:
                seen[key] = len(seen)
            dof[v] = seen[key]
        return dof

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_normals(self, positions=None) -> np.ndarray:
        p = (self.positions if positions is None else positions)[self.faces]
        cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        n = np.linalg.norm(cr, axis=1)
        ok = n > 0
        cr[ok] /= n[ok, None]
        return cr

    def face_areas(self, positions=None) -> np.ndarray:
        p = (self.positions if positions is None else positions)[self.faces]
        return 0.5 * np.linalg.norm(
            np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def vertex_rings(self):
        """One-ring vertex adjacency over the whole complex (sorted lists)."""
        rings = defaultdict(set)
        for f in self.faces:
            a, b, c = map(int, f)
            rings[a].update((b, c))
            rings[b].update((a, c))
            rings[c].update((a, b))
        return {v: sorted(s) for v, s in rings.items()}

    def vertex_faces(self):
        vf = defaultdict(list)
        for k, f in enumerate(self.faces):
            for v in f:
                vf[int(v)].append(k)
        return vf

    def flattened_positions(self) -> np.ndarray:
        """Positions with split midpoints snapped back onto their edges, the
        geometry actually representable by the underlying tet mesh."""
        pos = self.positions.copy()
        for m, (u, w) in self.midpoint_of.items():
            pos[m] = 0.5 * (pos[u] + pos[w])
        return pos


def build_interface_mesh(mesh: LabeledTetMesh, labels: np.ndarray) -> InterfaceMesh:
    dual = mesh.dual
    lp = labels[dual.arc_tets[:, 0]]
    lq = labels[dual.arc_tets[:, 1]]
    sel = np.flatnonzero(lp != lq)

    faces = []
    owners = []
    for a in sel:
        tri = dual.arc_verts[a]
        p = mesh.vertices[tri]
        n = np.cross(p[1] - p[0], p[2] - p[0])
        if np.dot(n, dual.arc_normal[a]) < 0:
            tri = tri[[0, 2, 1]]
        faces.append(tuple(map(int, tri)))
        owners.append((int(lp[a]), int(lq[a])))

    surface_verts = set(np.unique(mesh.bd_tris).tolist())
    surface_edges = set()
    for tri in mesh.bd_tris:
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            surface_edges.add((min(a, b), max(a, b)))

    faces, owners, vert_ids = _manifoldize(faces, owners, surface_verts)

    positions = np.array([mesh.vertices[s] for s, _ in vert_ids],
                         dtype=np.float64).reshape(-1, 3)
    source = np.array([s for s, _ in vert_ids], dtype=np.int64)
    pinned = np.array([s in surface_verts for s, _ in vert_ids], dtype=bool)

    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    owners = np.asarray(owners, dtype=np.int64).reshape(-1, 2)

    boundary_edge = _seam_edges(faces, source, pinned, surface_edges)

    iface = InterfaceMesh(positions, positions.copy(), source, faces, owners,
                          pinned, boundary_edge)
    _split_double_seam_faces(iface, surface_edges)
    return iface


def _manifoldize(faces, owners, surface_verts):
    """Duplicate pinch vertices per fan within each pairwise interface.

    Faces are re-indexed onto interface-local vertices; returns the new face
    list and [(source_vertex, copy_index)] bookkeeping. Non-manifold edges
    (3+ faces in one pairwise interface) are never traversed when growing
    fans, which cuts bowtie sheets apart; a vertex whose faces form several
    fans receives one copy per fan unless it is shared with another pairwise
    interface and not on the outer surface (a triple line, kept shared).
    """
    groups = defaultdict(list)
    for k, ow in enumerate(owners):
        groups[tuple(sorted(ow))].append(k)

    pair_count = defaultdict(set)
    for k, f in enumerate(faces):
        key = tuple(sorted(owners[k]))
        for v in f:
            pair_count[v].add(key)

    # fan id per (face, corner)
    fan_of = {}
    n_fans = defaultdict(int)
    for key in sorted(groups):
        members = groups[key]
        edge_faces = defaultdict(list)
        for k in members:
            f = faces[k]
            for e in range(3):
                a, b = f[e], f[(e + 1) % 3]
                edge_faces[(min(a, b), max(a, b))].append(k)
        vert_faces = defaultdict(list)
        for k in members:
            for v in faces[k]:
                vert_faces[v].append(k)
        for v in sorted(vert_faces):
            fs = vert_faces[v]
            unvisited = set(fs)
            while unvisited:
                seed = min(unvisited)
                fan = {seed}
                unvisited.remove(seed)
                stack = [seed]
                while stack:
                    k = stack.pop()
                    f = faces[k]
                    for e in range(3):
                        a, b = f[e], f[(e + 1) % 3]
                        if v != a and v != b:
                            continue
                        ef = edge_faces[(min(a, b), max(a, b))]
                        if len(ef) != 2:
                            continue  # boundary or singular edge: do not cross
                        for g in ef:
                            if g in unvisited:
                                unvisited.remove(g)
                                fan.add(g)
                                stack.append(g)
                fid = n_fans[v]
                n_fans[v] += 1
                for k in fan:
                    fan_of[(k, v)] = fid

    vert_ids = []
    new_index = {}
    new_faces = []
    for k, f in enumerate(faces):
        nf = []
        for v in f:
            splittable = (v in surface_verts) or len(pair_count[v]) == 1
            fid = fan_of.get((k, v), 0) if splittable and n_fans[v] > 1 else 0
            key = (v, fid)
            if key not in new_index:
                new_index[key] = len(vert_ids)
                vert_ids.append(key)
            nf.append(new_index[key])
        new_faces.append(tuple(nf))
    return new_faces, owners, vert_ids


def _seam_edges(faces, source, pinned, surface_edges):
    """Local index of each face's outer-seam edge (-1 when none); faces with
    several seam edges report the first and are split afterwards."""
    out = np.full(len(faces), -1, dtype=np.int64)
    for k, f in enumerate(faces):
        for e in range(3):
            a, b = int(f[e]), int(f[(e + 1) % 3])
            if pinned[a] and pinned[b]:
                sa, sb = int(source[a]), int(source[b])
                if (min(sa, sb), max(sa, sb)) in surface_edges:
                    if out[k] < 0:
                        out[k] = e
    return out


def _count_seam_edges(face, source, pinned, surface_edges):
    n = 0
    seam = []
    for e in range(3):
        a, b = int(face[e]), int(face[(e + 1) % 3])
        if pinned[a] and pinned[b]:
            sa, sb = int(source[a]), int(source[b])
            if (min(sa, sb), max(sa, sb)) in surface_edges:
                n += 1
                seam.append(e)
    return n, seam


def _split_double_seam_faces(iface: InterfaceMesh, surface_edges):
    """Split every face carrying two outer-seam edges on its interior edge.

    The midpoint is a fresh free vertex; the neighbor across the split edge
    (if any) is split too, keeping the complex conforming. Faces whose three
    edges all lie on the seam are fully pinned and left alone.
    """
    for _ in range(8):
        target = -1
        for k in range(iface.n_faces):
            n, seam = _count_seam_edges(iface.faces[k], iface.source_vertex,
                                        iface.pinned, surface_edges)
            if n == 2:
                target = k
                break
        if target < 0:
            return
        k = target
        n, seam = _count_seam_edges(iface.faces[k], iface.source_vertex,
                                    iface.pinned, surface_edges)
        interior = ({0, 1, 2} - set(seam)).pop()
        f = iface.faces[k]
        a, b = int(f[interior]), int(f[(interior + 1) % 3])

        m = iface.n_vertices
        mid = 0.5 * (iface.positions[a] + iface.positions[b])
        iface.positions = np.vstack([iface.positions, mid[None, :]])
        iface.reference = np.vstack([iface.reference, mid[None, :]])
        iface.source_vertex = np.append(iface.source_vertex, -1)
        iface.pinned = np.append(iface.pinned, False)
        iface.midpoint_of[m] = (a, b)

        new_faces = []
        new_owners = []
        new_seam = []
        for g in range(iface.n_faces):
            fg = iface.faces[g]
            edge_pos = -1
            for e in range(3):
                u, v = int(fg[e]), int(fg[(e + 1) % 3])
                if {u, v} == {a, b}:
                    edge_pos = e
                    break
            if edge_pos < 0:
                new_faces.append(tuple(fg))
                new_owners.append(tuple(iface.owners[g]))
                new_seam.append(int(iface.boundary_edge[g]))
                continue
            u, v, w = (int(fg[edge_pos]), int(fg[(edge_pos + 1) % 3]),
                       int(fg[(edge_pos + 2) % 3]))
            for child in ((u, m, w), (m, v, w)):
                new_faces.append(child)
                new_owners.append(tuple(iface.owners[g]))
                new_seam.append(-1)
        iface.faces = np.asarray(new_faces, dtype=np.int64)
        iface.owners = np.asarray(new_owners, dtype=np.int64)
        iface.boundary_edge = _seam_edges(iface.faces, iface.source_vertex,
                                          iface.pinned, surface_edges)
