"""Interface geometry optimization.

Strictly enforces per-face extractability (outward normal against each
owning part's direction) while keeping interfaces smooth and close to the
discrete solution. One relaxed quadratic solve (fidelity + uniform
Laplacian, pinned seam) is followed by an active-set local-global loop over
per-triangle deformation gradients: violating faces enter the active set,
each gets a minimal target rotation from a closed-form projection of its
normal onto the feasible cone, and a weighted least-squares solve

    sum_f phi_f ||Q_f - I||_F^2 + sum_{f in A} psi_f ||Q_f - R_f||_F^2

reconciles them (Q_f is the Sumner-style per-triangle gradient with a free
phantom vertex, so the system decouples per coordinate).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import splu

from . import geom
from .errors import SingularSystem
from .ifacemesh import InterfaceMesh

ALPHA_DEFAULT = 0.85
LAMBDA_DEFAULT = 1000.0
EPS_DEFAULT = 0.02
MAX_ITER_DEFAULT = 30
CONV_DEFAULT = 1e-5

MIN_ANGLE_DEG = 5.0
LAPLACIAN_FACTOR = 3.0

STATUS_EXTRACTABLE = "Extractable"
STATUS_CONVERGED = "Converged"
STATUS_ITERATION_CAP = "IterationCap"


@dataclass
class OptimizedInterfaces:
    iface: InterfaceMesh
    status: str
    max_violation: float
    iterations: int
    log: list = field(default_factory=list)


# --------------------------------------------------------------------------
# relaxed quadratic smoothing
# --------------------------------------------------------------------------

def _dof_columns(iface: InterfaceMesh):
    """Column index per vertex; -1 for pinned. Vertices sharing a tet source
    (manifoldization duplicates) share one column."""
    dof = iface.dof_of
    n_dofs = int(dof.max()) + 1 if len(dof) else 0
    dof_pinned = np.zeros(n_dofs, dtype=bool)
    dof_pinned[dof[iface.pinned]] = True
    col_of_dof = np.full(n_dofs, -1, dtype=np.int64)
    free_dofs = np.flatnonzero(~dof_pinned)
    col_of_dof[free_dofs] = np.arange(len(free_dofs))
    col = col_of_dof[dof]
    rep = np.full(len(free_dofs), -1, dtype=np.int64)  # representative vertex
    for v in range(len(dof)):
        c = col[v]
        if c >= 0 and rep[c] < 0:
            rep[c] = v
    return col, len(free_dofs), rep


def relaxed_smooth(iface: InterfaceMesh, alpha: float = ALPHA_DEFAULT) -> np.ndarray:
    """Minimizer of the fidelity+Laplacian energy with the seam pinned."""
    n = iface.n_vertices
    rings = iface.vertex_rings()
    col_of, n_free, rep = _dof_columns(iface)
    if n_free == 0:
        return iface.positions.copy()

    rows, cols, vals = [], [], []
    rhs_fixed = []  # (row, coefficient, vertex) applied per coordinate
    r = 0
    sa = np.sqrt(alpha)
    sl = np.sqrt(1.0 - alpha)

    def add(row, v, coef):
        if col_of[v] >= 0:
            rows.append(row)
            cols.append(col_of[v])
            vals.append(coef)
        else:
            rhs_fixed.append((row, -coef, v))

    target_rows = []  # (row, coefficient, target_vertex) toward tilde-v
    for v in range(n):
        if col_of[v] < 0:
            continue
        add(r, v, sa)
        target_rows.append((r, sa, v))
        r += 1
    for v in range(n):
        nb = rings.get(v, [])
        if col_of[v] < 0 or not nb:
            continue
        add(r, v, sl)
        for b in nb:
            add(r, b, -sl / len(nb))
        r += 1

    A = coo_matrix((vals, (rows, cols)), shape=(r, n_free)).tocsr()
    AtA = (A.T @ A).tocsc()
    try:
        lu = splu(AtA)
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc

    out = iface.positions.copy()
    tilde = iface.positions
    for c in range(3):
        b = np.zeros(r)
        for row, coef, v in target_rows:
            b[row] += coef * tilde[v, c]
        for row, coef, v in rhs_fixed:
            b[row] += coef * tilde[v, c]
        x = lu.solve(A.T @ b)
        if not np.all(np.isfinite(x)):
            raise SingularSystem("relaxed solve produced non-finite values")
        out[~iface.pinned, c] = x[col_of[~iface.pinned]]
    return out


# --------------------------------------------------------------------------
# local step
# --------------------------------------------------------------------------

def project_normal(n, d1, d2, edge_dir=None):
    """Closest vector to n satisfying n'.d1 <= 0, n'.d2 >= 0 and, when an
    outer seam edge is present, n'.edge = 0. Returns None when only the zero
    vector satisfies the active constraints."""
    cons = []  # (vector, sense) with sense +1 -> n'.v <= 0, -1 -> n'.v >= 0
    if d1 is not None:
        cons.append((np.asarray(d1, dtype=np.float64), 1.0))
    if d2 is not None:
        cons.append((np.asarray(d2, dtype=np.float64), -1.0))
    eq = [np.asarray(edge_dir, dtype=np.float64)] if edge_dir is not None else []

    def feasible(v):
        for vec, sense in cons:
            if sense * np.dot(v, vec) > 1e-12:
                return False
        for e in eq:
            if abs(np.dot(v, e)) > 1e-9:
                return False
        return True

    def project(active):
        basis = eq + [vec for vec, _ in active]
        if not basis:
            return n.copy()
        B = np.array(basis)
        # project n onto the orthogonal complement of span(B)
        q, _ = np.linalg.qr(B.T)
        rank = np.linalg.matrix_rank(B, tol=1e-12)
        q = q[:, :rank]
        return n - q @ (q.T @ n)

    candidates = []
    from itertools import combinations
    for k in range(len(cons) + 1):
        for combo in combinations(cons, k):
            v = project(list(combo))
            if feasible(v):
                candidates.append(v)
    if not candidates:
        return None
    best = min(candidates, key=lambda v: float(np.dot(n - v, n - v)))
    if np.linalg.norm(best) < 1e-12:
        return None
    return best


def local_rotation(n, d1, d2, edge_dir=None) -> np.ndarray:
    """Minimal rotation taking the face normal into the feasible cone;
    identity when the projection degenerates."""
    n = np.asarray(n, dtype=np.float64)
    target = project_normal(n, d1, d2, edge_dir)
    if target is None:
        return np.eye(3)
    return geom.rotation_aligning(n, target / np.linalg.norm(target))


# --------------------------------------------------------------------------
# global step
# --------------------------------------------------------------------------

def _reference_frames(iface: InterfaceMesh, degenerate_floor: float):
    """Per-face inverse reference frame W = V'^{-1} from reference positions.

    The frame uses the Sumner phantom vertex v3 = v0 + n; degenerate faces
    get their normal offset inflated to the mean edge length.
    """
    ref = iface.reference
    p = ref[iface.faces]
    e1 = p[:, 1] - p[:, 0]
    e2 = p[:, 2] - p[:, 0]
    nrm = np.cross(e1, e2)
    nlen = np.linalg.norm(nrm, axis=1)
    mean_edge = np.mean(np.linalg.norm(e1, axis=1) + np.linalg.norm(e2, axis=1)) / 2.0
    W = np.empty((iface.n_faces, 3, 3))
    for f in range(iface.n_faces):
        if nlen[f] > degenerate_floor:
            n = nrm[f] / nlen[f]
        else:
            n = nrm[f] / nlen[f] * mean_edge if nlen[f] > 0 else \
                np.array([0.0, 0.0, 1.0]) * mean_edge
        V = np.column_stack([e1[f], e2[f], n])
        try:
            W[f] = np.linalg.inv(V)
        except np.linalg.LinAlgError:
            W[f] = np.eye(3)
    return W


def global_solve(iface: InterfaceMesh, active, rotations, phi, psi,
                 degenerate_floor=1e-12) -> np.ndarray:
    """Weighted deformation-gradient least squares over free vertices.

    Gradients are expressed as Q_f = D_f * W_f where D_f stacks the deformed
    edge vectors (v1-v0, v2-v0, v3-v0) column-wise per coordinate and v3 is a
    free phantom; each coordinate solves independently with the same matrix.
    """
    n = iface.n_vertices
    nf = iface.n_faces
    col_of, n_free, rep = _dof_columns(iface)
    if n_free == 0:
        return iface.positions.copy()
    n_cols = n_free + nf  # phantom per face

    W = _reference_frames(iface, degenerate_floor)

    rows, cols, vals = [], [], []
    fixed = []   # (row, coef, vertex)
    consts = []  # (row, value) target entries
    r = 0

    def add_vertex(row, v, coef):
        if col_of[v] >= 0:
            rows.append(row)
            cols.append(col_of[v])
            vals.append(coef)
        else:
            fixed.append((row, -coef, v))

    active_set = set(int(a) for a in active)
    targets = [(f, np.eye(3), float(phi.get(f, 1.0))) for f in range(nf)]
    targets += [(f, rotations[f], float(psi[f])) for f in sorted(active_set)]

    for f, T, weight in targets:
        if weight <= 0.0:
            continue
        w = np.sqrt(weight)
        v0, v1, v2 = map(int, iface.faces[f])
        Wf = W[f]
        # Q[c, l] = sum_m D[c, m] * Wf[m, l], D columns: v1-v0, v2-v0, v3-v0
        for l in range(3):
            row = r
            r += 1
            add_vertex(row, v1, w * Wf[0, l])
            add_vertex(row, v2, w * Wf[1, l])
            # v3 phantom column
            rows.append(row)
            cols.append(n_free + f)
            vals.append(w * Wf[2, l])
            add_vertex(row, v0, -w * (Wf[0, l] + Wf[1, l] + Wf[2, l]))
            consts.append((row, w, T[:, l]))

    A = coo_matrix((vals, (rows, cols)), shape=(r, n_cols)).tocsr()
    AtA = (A.T @ A).tocsc()
    try:
        lu = splu(AtA)
    except RuntimeError as exc:
        raise SingularSystem(str(exc)) from exc

    # phantom initial target: Q == T means D == T V'; rows' rhs per coordinate
    out = iface.positions.copy()
    for c in range(3):
        b = np.zeros(r)
        for row, w, tcol in consts:
            b[row] += w * tcol[c]
        for row, coef, v in fixed:
            b[row] += coef * iface.positions[v, c]
        x = lu.solve(A.T @ b)
        if not np.all(np.isfinite(x)):
            raise SingularSystem("global solve produced non-finite values")
        out[~iface.pinned, c] = x[col_of[~iface.pinned]]
    return out


# --------------------------------------------------------------------------
# violation bookkeeping
# --------------------------------------------------------------------------

def face_constraints(iface: InterfaceMesh, directions, feasible):
    """Per-face (d1, d2): d1 constrains the outward side of owner a, d2 the
    opposite side; None when that owner is infeasible."""
    out = []
    for a, b in iface.owners:
        d1 = directions.get(int(a)) if int(a) in feasible else None
        d2 = directions.get(int(b)) if int(b) in feasible else None
        out.append((d1, d2))
    return out


def face_violations(iface: InterfaceMesh, constraints, positions=None) -> np.ndarray:
    """max(0, n.d) per face, worst side."""
    normals = iface.face_normals(positions)
    out = np.zeros(iface.n_faces)
    for f, (d1, d2) in enumerate(constraints):
        v = 0.0
        if d1 is not None:
            v = max(v, float(np.dot(normals[f], d1)))
        if d2 is not None:
            v = max(v, float(-np.dot(normals[f], d2)))
        out[f] = max(0.0, v)
    return out


# --------------------------------------------------------------------------
# reference update
# --------------------------------------------------------------------------

def update_reference(iface: InterfaceMesh, new_positions, constraints,
                     surface_bvh) -> None:
    """Adopt the solve result, then guarded Laplacian smoothing of vertices
    on degenerate faces; a move is rejected if it raises the maximum
    constraint violation or its faces would cross the outer surface."""
    iface.positions = new_positions.copy()

    rings = iface.vertex_rings()
    vf = iface.vertex_faces()

    # degenerate faces: tiny min angle or outsized Laplacian delta
    deltas = np.zeros(iface.n_vertices)
    for v, nb in rings.items():
        deltas[v] = np.linalg.norm(
            iface.positions[v] - iface.positions[nb].mean(axis=0))
    mean_delta = deltas.mean() if len(deltas) else 0.0

    bad_vertices = set()
    p = iface.positions[iface.faces]
    for f in range(iface.n_faces):
        a, b, c = p[f]
        angs = _triangle_angles(a, b, c)
        if np.min(angs) < np.deg2rad(MIN_ANGLE_DEG):
            bad_vertices.update(map(int, iface.faces[f]))
    if mean_delta > 0:
        for v in np.flatnonzero(deltas > LAPLACIAN_FACTOR * mean_delta):
            bad_vertices.add(int(v))

    viol = face_violations(iface, constraints)
    e_max = viol.max() if len(viol) else 0.0

    dof = iface.dof_of
    dof_count = np.bincount(dof)
    for v in sorted(bad_vertices):
        if iface.pinned[v] or v not in rings or not rings[v]:
            continue
        if dof_count[dof[v]] > 1:
            continue  # manifoldization duplicates move only via the solves
        candidate = iface.positions.copy()
        candidate[v] = iface.positions[rings[v]].mean(axis=0)
        new_viol = face_violations(iface, constraints, candidate)
        if len(new_viol) and new_viol.max() > e_max + 1e-12:
            continue
        crosses = False
        for f in vf.get(v, []):
            tri = candidate[iface.faces[f]]
            if surface_bvh is not None and surface_bvh.intersects_triangle(tri):
                crosses = True
                break
        if crosses:
            continue
        iface.positions = candidate
        viol = new_viol
        e_max = new_viol.max() if len(new_viol) else 0.0

    iface.reference = iface.positions.copy()


def _triangle_angles(a, b, c):
    def ang(u, v):
        nu = np.linalg.norm(u)
        nv = np.linalg.norm(v)
        if nu == 0 or nv == 0:
            return 0.0
        return np.arccos(np.clip(np.dot(u, v) / (nu * nv), -1, 1))
    return np.array([ang(b - a, c - a), ang(a - b, c - b), ang(a - c, b - c)])


# --------------------------------------------------------------------------
# driver
# --------------------------------------------------------------------------

def optimize(iface: InterfaceMesh, directions, feasible, surface_bvh=None,
             alpha=ALPHA_DEFAULT, lam=LAMBDA_DEFAULT, eps=EPS_DEFAULT,
             max_iter=MAX_ITER_DEFAULT, conv=CONV_DEFAULT, bbox_diag=1.0,
             dump_cb=None) -> OptimizedInterfaces:
    """Full interface optimization; the returned status is re-audited on the
    tet-representable (flattened) geometry, so Extractable is never reported
    unless the committed interfaces satisfy every constraint."""
    constraints = face_constraints(iface, directions, feasible)
    log = []

    if iface.n_faces == 0:
        return OptimizedInterfaces(iface, STATUS_EXTRACTABLE, 0.0, 0, log)

    smoothed = relaxed_smooth(iface, alpha)
    iface.positions = smoothed
    iface.reference = smoothed.copy()

    edge_dirs = _seam_edge_dirs(iface)

    active = set()
    rotations = {}
    status = STATUS_ITERATION_CAP
    it = 0
    for it in range(max_iter):
        viol = face_violations(iface, constraints)
        if viol.max() <= eps:
            status = STATUS_EXTRACTABLE
            break
        newly = np.flatnonzero(viol > 1e-9)
        active.update(int(f) for f in newly)

        normals = iface.face_normals(iface.reference)
        e_vals = {}
        for f in active:
            d1, d2 = constraints[f]
            rotations[f] = local_rotation(normals[f], d1, d2, edge_dirs.get(f))
            e_vals[f] = float(viol[f])

        phi, psi = _weights(iface, active, rotations, normals, e_vals, lam)
        new_pos = global_solve(iface, active, rotations, phi, psi)
        disp = float(np.max(np.linalg.norm(new_pos - iface.positions, axis=1)))
        update_reference(iface, new_pos, constraints, surface_bvh)
        log.append({"iteration": it, "active": len(active),
                    "max_violation": float(viol.max()),
                    "displacement": disp})
        if dump_cb is not None:
            dump_cb(it, iface)
        if disp < conv * bbox_diag:
            status = STATUS_CONVERGED
            break
    else:
        it = max_iter

    # commit: snap split midpoints back to their edges and audit the result
    iface.positions = iface.flattened_positions()
    iface.reference = iface.positions.copy()
    final = face_violations(iface, constraints)
    max_v = float(final.max()) if len(final) else 0.0
    if max_v <= eps:
        status = STATUS_EXTRACTABLE
    elif status == STATUS_EXTRACTABLE:
        status = STATUS_CONVERGED  # flattening broke a constraint: be honest
    return OptimizedInterfaces(iface, status, max_v, it, log)


def _weights(iface, active, rotations, normals, e_vals, lam):
    """Confidence-weighted phi/psi for the global solve.

    Confidence compares each active face's rotated normal with its
    edge-neighbors' (identity for faces outside the set): agreeing rotations
    approach 1, contradicting ones 0.
    """
    neighbors = _face_adjacency(iface.faces)
    mean_e = np.mean([max(v, 0.0) for v in e_vals.values()]) if e_vals else 0.0
    phi = {}
    psi = {}
    for f in active:
        rn = rotations[f] @ normals[f]
        dots = []
        for g in neighbors.get(f, []):
            gn = rotations[g] @ normals[g] if g in active else normals[g]
            dots.append((1.0 + float(np.dot(rn, gn))) / 2.0)
        c = float(np.clip(np.mean(dots), 0.0, 1.0)) if dots else 1.0
        i_f = (e_vals.get(f, 0.0) / mean_e) if mean_e > 0 else 1.0
        phi[f] = 1.0 - c
        psi[f] = lam * c * i_f
    return phi, psi


def _face_adjacency(faces):
    edge_faces = {}
    for k, f in enumerate(faces):
        for e in range(3):
            a, b = int(f[e]), int(f[(e + 1) % 3])
            key = (min(a, b), max(a, b))
            edge_faces.setdefault(key, []).append(k)
    adj = {}
    for fs in edge_faces.values():
        if len(fs) == 2:
            a, b = fs
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
    return adj


def _seam_edge_dirs(iface: InterfaceMesh):
    out = {}
    for f in range(iface.n_faces):
        e = int(iface.boundary_edge[f])
        if e < 0:
            continue
        a = int(iface.faces[f, e])
        b = int(iface.faces[f, (e + 1) % 3])
        d = iface.positions[b] - iface.positions[a]
        n = np.linalg.norm(d)
        if n > 0:
            out[f] = d / n
    return out
