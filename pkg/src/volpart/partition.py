"""Discrete mesh partition by multi-label graph cut on the tet dual graph.

The combined objective is the extractability cost (per-side normal violation
plus the in-channel indicator on interface faces of feasible parts) plus the
partition quality measure (interface area and the distance-weighted balance
term), combined with weight w_p. Minimization runs alpha-expansion; each
expansion is an exact s-t min cut (the pairwise family here satisfies the
submodularity condition, see _expansion_caps), and every move is re-audited
against an independent energy evaluation before being accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix, coo_matrix
from scipy.sparse.csgraph import maximum_flow, breadth_first_order, connected_components

from .bvh import BVH
from .errors import InfeasibleConstraints
from .tetmesh import LabeledTetMesh, UNASSIGNED

W_P_DEFAULT = 0.1
K_IC_DEFAULT = 5.0
OMEGA_MULTIPLIER = 3.0
_FLOW_SCALE = float(2 ** 30)


@dataclass
class CostModel:
    """All scalars of the combined objective, bound to one tet mesh."""
    w_p: float
    k_ic: float
    omega: float
    mean_arc_area: float        # A': average internal face area
    mean_tet_volume: float      # V'
    directions: dict            # part id -> unit direction (feasible parts)
    feasible: set               # part ids with a valid direction
    part_regions: dict          # part id -> list of region indices
    omega_scale: dict = field(default_factory=dict)  # per-part overrides

    @classmethod
    def build(cls, mesh: LabeledTetMesh, directions, feasible, part_regions,
              w_p=W_P_DEFAULT, k_ic=K_IC_DEFAULT,
              omega_multiplier=OMEGA_MULTIPLIER, omega_scale=None):
        surf = mesh.surface
        omega = omega_multiplier * (surf.total_area / abs(surf.volume)) ** (2.0 / 3.0)
        dual = mesh.dual
        mean_area = float(dual.arc_area.mean()) if dual.n_arcs else 1.0
        mean_vol = float(mesh.volumes.mean())
        return cls(w_p, k_ic, omega, mean_area, mean_vol, dict(directions),
                   set(feasible), dict(part_regions),
                   dict(omega_scale) if omega_scale else {})


@dataclass
class DiscretePartition:
    labels: np.ndarray
    energy: float
    energy_trace: list
    breakdown: dict


def in_channel_cost(mesh: LabeledTetMesh, costs: CostModel,
                    part_of_region: dict) -> np.ndarray:
    """IC table: (arcs, parts) of {0, k_IC} for feasible parts.

    A face is outside part i's channel when the ray from its centroid along
    d_i first hits a surface face of a different part.
    """
    dual = mesh.dual
    surf = mesh.surface
    n_parts = len(costs.part_regions)
    out = np.zeros((dual.n_arcs, n_parts))
    for p in sorted(costs.feasible):
        d = costs.directions[p]
        for a in range(dual.n_arcs):
            hit = surf.bvh.first_hit(dual.arc_centroid[a], d)
            if hit is None:
                continue
            hit_part = part_of_region[int(surf.region_of_face[int(hit[1])])]
            if hit_part != p:
                out[a, p] = costs.k_ic
    return out


def side_cost_table(mesh: LabeledTetMesh, costs: CostModel,
                    part_of_region: dict) -> np.ndarray:
    """(arcs, parts, 2): extractability violation per arc, per part, per side.

    Side 0 means the part owns arc_tets[:, 0] (outward normal = arc normal);
    side 1 the opposite. Infeasible parts contribute zero.
    """
    dual = mesh.dual
    n_parts = len(costs.part_regions)
    table = np.zeros((dual.n_arcs, n_parts, 2))
    ic = in_channel_cost(mesh, costs, part_of_region)
    for p in sorted(costs.feasible):
        d = costs.directions[p]
        nd = dual.arc_normal @ d
        table[:, p, 0] = np.maximum(0.0, nd) + ic[:, p]
        table[:, p, 1] = np.maximum(0.0, -nd) + ic[:, p]
    return table


def unary_cost_table(mesh: LabeledTetMesh, costs: CostModel) -> np.ndarray:
    """(tets, parts): w_p * omega * (V/V') * d(centroid, part regions)."""
    surf = mesh.surface
    bary = mesh.barycenters
    vols = mesh.volumes
    n_parts = len(costs.part_regions)
    out = np.empty((mesh.n_tets, n_parts))
    for p in range(n_parts):
        faces = np.concatenate(
            [surf.regions[r].faces for r in costs.part_regions[p]])
        bvh = BVH(surf.vertices, surf.faces[faces])
        dist = np.sqrt(bvh.sq_distances(bary))
        scale = costs.omega_scale.get(p, 1.0)
        out[:, p] = costs.w_p * costs.omega * scale * (vols / costs.mean_tet_volume) * dist
    return out


def pairwise_cost(area_ratio, side_table_row, label_i, label_j, w_p):
    """Binary cost of labeling the two tets across one arc."""
    if label_i == label_j:
        return 0.0
    return area_ratio * (w_p + side_table_row[label_i, 0]
                         + side_table_row[label_j, 1])


class GraphCutSolver:
    """Alpha-expansion with audited, monotone energy."""

    def __init__(self, mesh: LabeledTetMesh, costs: CostModel,
                 seeds: np.ndarray, part_of_region: dict, label_order=None):
        self.mesh = mesh
        self.costs = costs
        self.seeds = seeds
        self.n_parts = len(costs.part_regions)
        self.part_of_region = part_of_region
        dual = mesh.dual
        self.arcs = dual.arc_tets
        self.area_ratio = dual.arc_area / costs.mean_arc_area
        self.side = side_cost_table(mesh, costs, part_of_region)
        self.unary = unary_cost_table(mesh, costs)
        bad = (seeds != UNASSIGNED) & ((seeds < 0) | (seeds >= self.n_parts))
        if np.any(bad):
            raise InfeasibleConstraints("seed labels out of range")
        self.label_order = (list(label_order) if label_order is not None
                            else list(range(self.n_parts)))

    # -- energy ---------------------------------------------------------------

    def energy(self, labels: np.ndarray) -> float:
        lp = labels[self.arcs[:, 0]]
        lq = labels[self.arcs[:, 1]]
        cut = lp != lq
        rows = np.arange(len(self.arcs))
        pair = np.where(
            cut,
            self.area_ratio * (self.costs.w_p
                               + self.side[rows, lp, 0]
                               + self.side[rows, lq, 1]),
            0.0)
        una = self.unary[np.arange(len(labels)), labels]
        return float(pair.sum() + una.sum())

    def energy_breakdown(self, labels: np.ndarray) -> dict:
        lp = labels[self.arcs[:, 0]]
        lq = labels[self.arcs[:, 1]]
        cut = lp != lq
        rows = np.arange(len(self.arcs))
        extract = np.where(
            cut, self.area_ratio * (self.side[rows, lp, 0]
                                    + self.side[rows, lq, 1]), 0.0).sum()
        area = (self.area_ratio * cut).sum() * self.costs.w_p
        una = self.unary[np.arange(len(labels)), labels].sum()
        return {"extractability": float(extract),
                "interface_area": float(area),
                "balance": float(una),
                "total": float(extract + area + una)}

    # -- expansion -------------------------------------------------------------

    def initial_labels(self) -> np.ndarray:
        labels = self.seeds.copy()
        free = labels == UNASSIGNED
        if np.any(free):
            # warm start: nearest part by centroid-to-region distance
            scale = np.array([self.costs.omega_scale.get(p, 1.0)
                              for p in range(self.n_parts)])
            vols = self.mesh.volumes
            dist = self.unary / (vols[:, None] + 1e-300)
            dist = dist / scale[None, :]
            labels[free] = np.argmin(dist[free], axis=1)
        return labels

    def solve(self, max_sweeps=20) -> DiscretePartition:
        labels = self.initial_labels()
        energy = self.energy(labels)
        trace = [energy]
        movable_any = self.seeds == UNASSIGNED
        for _ in range(max_sweeps):
            improved = False
            for alpha in self.label_order:
                if not np.any(movable_any & (labels != alpha)):
                    continue
                cand = self._expand(labels, alpha)
                if cand is None:
                    continue
                e = self.energy(cand)
                if e < energy - 1e-12 * max(1.0, abs(energy)):
                    labels = cand
                    energy = e
                    trace.append(e)
                    improved = True
            if not improved:
                break
        labels = self._enforce_connectivity(labels)
        energy = self.energy(labels)
        return DiscretePartition(labels, energy, trace,
                                 self.energy_breakdown(labels))

    def _expand(self, labels: np.ndarray, alpha: int):
        movable = (self.seeds == UNASSIGNED) & (labels != alpha)
        if not np.any(movable):
            return None
        node_of = np.full(len(labels), -1, dtype=np.int64)
        idx = np.flatnonzero(movable)
        node_of[idx] = np.arange(len(idx))
        n = len(idx)
        SRC = n
        SNK = n + 1

        u0 = self.unary[idx, labels[idx]].copy()   # cost of keeping own label
        u1 = self.unary[idx, alpha].copy()         # cost of taking alpha

        rows, cols, caps = [], [], []

        lp = labels[self.arcs[:, 0]]
        lq = labels[self.arcs[:, 1]]
        rowsel = np.arange(len(self.arcs))
        ar = self.area_ratio
        w_p = self.costs.w_p

        def pc(a_lab, b_lab, r):
            same = a_lab == b_lab
            val = ar[r] * (w_p + self.side[r, a_lab, 0] + self.side[r, b_lab, 1])
            return np.where(same, 0.0, val)

        mp = movable[self.arcs[:, 0]]
        mq = movable[self.arcs[:, 1]]

        # both ends movable
        both = mp & mq
        if np.any(both):
            r = rowsel[both]
            p = node_of[self.arcs[both, 0]]
            q = node_of[self.arcs[both, 1]]
            e00 = pc(lp[both], lq[both], r)
            e01 = pc(lp[both], np.full(len(r), alpha), r)
            e10 = pc(np.full(len(r), alpha), lq[both], r)
            # e11 = 0
            np.add.at(u1, p, e10 - e00)
            np.add.at(u1, q, -e10)
            cap = np.maximum(0.0, e01 + e10 - e00)  # guard; always >= 0 here
            rows.append(p)
            cols.append(q)
            caps.append(cap)
            # constant e00 dropped

        # p movable, q fixed
        onlyp = mp & ~mq
        if np.any(onlyp):
            r = rowsel[onlyp]
            p = node_of[self.arcs[onlyp, 0]]
            e0 = pc(lp[onlyp], lq[onlyp], r)
            e1 = pc(np.full(len(r), alpha), lq[onlyp], r)
            np.add.at(u0, p, e0)
            np.add.at(u1, p, e1)

        onlyq = ~mp & mq
        if np.any(onlyq):
            r = rowsel[onlyq]
            q = node_of[self.arcs[onlyq, 1]]
            e0 = pc(lp[onlyq], lq[onlyq], r)
            e1 = pc(lp[onlyq], np.full(len(r), alpha), r)
            np.add.at(u0, q, e0)
            np.add.at(u1, q, e1)

        # t-links: node on sink side (x=1, relabel to alpha) pays u1
        base = np.minimum(u0, u1)
        s_caps = u1 - base
        t_caps = u0 - base
        nodes = np.arange(n)
        rows += [np.full(n, SRC), nodes]
        cols += [nodes, np.full(n, SNK)]
        caps += [s_caps, t_caps]

        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        caps = np.concatenate(caps)
        icaps = np.round(caps * _FLOW_SCALE).astype(np.int64)
        keep = icaps > 0
        graph = coo_matrix(
            (icaps[keep], (rows[keep], cols[keep])),
            shape=(n + 2, n + 2)).tocsr()
        graph.sum_duplicates()

        res = maximum_flow(graph, SRC, SNK)
        residual = graph - res.flow
        residual.data = np.maximum(residual.data, 0)
        residual.eliminate_zeros()
        order = breadth_first_order(residual, SRC, directed=True,
                                    return_predecessors=False)
        source_side = np.zeros(n + 2, dtype=bool)
        source_side[order] = True

        out = labels.copy()
        relabel = ~source_side[:n]   # sink side takes alpha
        out[idx[relabel]] = alpha
        return out

    def _enforce_connectivity(self, labels: np.ndarray) -> np.ndarray:
        """Relabel stray components to their dominant neighbor label.

        The kept component per part is the one holding seed-constrained tets
        (falling back to the largest); stray unconstrained components take
        the neighboring label with the largest shared contact area.
        """
        labels = labels.copy()
        for _ in range(self.n_parts + 1):
            moved = self._connectivity_pass(labels)
            if not moved:
                break
        return labels

    def _connectivity_pass(self, labels: np.ndarray) -> bool:
        n_t = len(labels)
        same = labels[self.arcs[:, 0]] == labels[self.arcs[:, 1]]
        g = coo_matrix(
            (np.ones(same.sum()),
             (self.arcs[same, 0], self.arcs[same, 1])),
            shape=(n_t, n_t))
        n_comp, comp = connected_components(g, directed=False)
        moved = False
        for p in range(self.n_parts):
            in_p = labels == p
            comps = np.unique(comp[in_p])
            if len(comps) <= 1:
                continue
            seeded = np.unique(comp[in_p & (self.seeds != UNASSIGNED)])
            sizes = {c: int(np.sum(comp[in_p] == c)) for c in comps}
            if len(seeded):
                keep = max(seeded.tolist(), key=lambda c: sizes[c])
            else:
                keep = max(sizes, key=lambda c: (sizes[c], -c))
            for c in comps:
                if c == keep or c in seeded:
                    continue
                members = np.flatnonzero(in_p & (comp == c))
                member_set = set(members.tolist())
                contact = {}
                for a in range(len(self.arcs)):
                    t0, t1 = self.arcs[a]
                    if t0 in member_set and labels[t1] != p:
                        contact[labels[t1]] = contact.get(labels[t1], 0.0) + \
                            self.area_ratio[a]
                    elif t1 in member_set and labels[t0] != p:
                        contact[labels[t0]] = contact.get(labels[t0], 0.0) + \
                            self.area_ratio[a]
                if not contact:
                    continue
                target = max(sorted(contact), key=lambda k: contact[k])
                labels[members] = target
                moved = True
        return moved


def solve(mesh: LabeledTetMesh, costs: CostModel, seeds: np.ndarray,
          part_of_region: dict, label_order=None) -> DiscretePartition:
    """Seeded alpha-expansion to a stable labeling."""
    solver = GraphCutSolver(mesh, costs, seeds, part_of_region, label_order)
    return solver.solve()


def enforce_manifold_interfaces(partition: DiscretePartition,
                                mesh: LabeledTetMesh):
    """Extract the interface complex with per-pair manifold enforcement.

    Tet labels are never changed; singular vertices/edges are resolved by
    duplication during interface extraction. Returns (partition, interface
    mesh)."""
    from .ifacemesh import build_interface_mesh
    return partition, build_interface_mesh(mesh, partition.labels)
