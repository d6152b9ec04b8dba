"""Multi-pass disassembly pipeline.

Each pass analyzes per-part extraction directions on the current model,
links multi-region attributes, solves the discrete partition, optimizes
interface geometry, audits which parts can actually leave, and extracts
them as one stage. Residual models reuse the surviving tets with the
optimizer-deformed coordinates. Stalls route to sequential extraction
(re-solving with a single feasible part) and, failing that, to segmentation
refinement of the largest region.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from . import geom
from .directions import build_direction_set
from .errors import InvertedResidualTet, PipelineStalled, SplitFailed, VolpartError
from .ifacemesh import InterfaceMesh, build_interface_mesh
from .linker import GroupAnalyzer, LinkRequest, link_regions
from .optimizer import optimize, face_violations, face_constraints
from .oracle import PartGeometry
from .partition import CostModel, GraphCutSolver
from .refine import split_region
from .surface import LabeledSurfaceMesh
from .tetmesh import UNASSIGNED, LabeledTetMesh, _extract_boundary


@dataclass
class PipelineParams:
    w_p: float = 0.1
    k_ic: float = 5.0
    alpha: float = 0.85
    lam: float = 1000.0
    eps: float = 0.02
    max_iter: int = 30
    conv: float = 1e-5
    split_alpha: float = 0.1
    gamma: float = 0.15
    pair_budget: int = 10
    sphere_res: int = 4096
    omega_multiplier: float = 3.0
    omega_scale: dict = field(default_factory=dict)   # attribute -> factor
    merge: dict = field(default_factory=dict)         # attribute -> "all"|ids
    full_pairs: bool = False
    max_passes: int = 64
    dump_iterations: bool = False


@dataclass
class PartRecord:
    part_id: int
    attribute: int
    parent_attribute: int
    direction: np.ndarray
    mesh: PartGeometry
    interface_mask: np.ndarray       # per mesh face
    covered_input_faces: np.ndarray  # original surface face ids
    tet_count: int
    volume: float
    area: float
    interface_area: float


@dataclass
class Stage:
    parts: list


@dataclass
class AssemblyPlan:
    stages: list = field(default_factory=list)

    @property
    def n_parts(self) -> int:
        return sum(len(s.parts) for s in self.stages)

    def to_dict(self) -> dict:
        return {"stages": [[
            {"part": p.part_id, "attribute": int(p.attribute),
             "direction": [float(x) for x in p.direction]}
            for p in s.parts] for s in self.stages]}


@dataclass
class PartitionResult:
    parts: list
    plan: AssemblyPlan
    report: dict


class _Pass:
    """One disassembly iteration bound to a tet mesh."""

    def __init__(self, tm: LabeledTetMesh, params: PipelineParams,
                 attr_parent: dict, link_request: LinkRequest):
        self.tm = tm
        self.params = params
        self.attr_parent = attr_parent
        surf = tm.surface

        # parts: merged same-attribute region groups (default merge all),
        # unmerged regions become their own parts
        by_attr = defaultdict(list)
        for r in surf.regions:
            by_attr[r.attribute].append(r.index)
        self.groups = {}
        self.part_attr = {}
        pid = 0
        for attr in sorted(by_attr):
            merged = link_request.regions_for(attr, by_attr[attr])
            if len(merged) > 1:
                self.groups[pid] = sorted(merged)
                self.part_attr[pid] = attr
                pid += 1
            rest = [r for r in by_attr[attr] if r not in merged] \
                if len(merged) > 1 else by_attr[attr]
            for r in rest:
                self.groups[pid] = [r]
                self.part_attr[pid] = attr
                pid += 1
        self.n_parts = pid
        self.part_of_region = {}
        for p, regs in self.groups.items():
            for r in regs:
                self.part_of_region[r] = p

    def seed_and_link(self):
        seeds = self.tm.seed_labels(self.part_of_region)
        self.link = link_regions(self.tm, self.groups, seeds)
        for p, tets in self.link.path_tets.items():
            for t in tets:
                seeds[t] = p
        self.seeds = seeds
        self.analyzer = GroupAnalyzer(self.tm, self.groups, self.link.path_tets)
        return seeds

    def analyze(self, sphere):
        self.sphere = sphere
        self.feas = self.analyzer.analyze(sphere)
        self.directions = {rf.region: rf.direction
                           for rf in self.feas.per_region if rf.feasible}
        self.feasible = set(self.directions)
        return self.feas

    def solve_and_optimize(self, feasible=None, directions=None):
        feasible = self.feasible if feasible is None else feasible
        directions = self.directions if directions is None else directions
        omega_scale = {}
        for p in range(self.n_parts):
            attr = self.part_attr[p]
            parent = self.attr_parent.get(attr, attr)
            if parent in self.params.omega_scale:
                omega_scale[p] = self.params.omega_scale[parent]
        costs = CostModel.build(
            self.tm, directions, feasible,
            {p: self.groups[p] for p in range(self.n_parts)},
            w_p=self.params.w_p, k_ic=self.params.k_ic,
            omega_multiplier=self.params.omega_multiplier,
            omega_scale=omega_scale)
        area_of = {p: sum(self.tm.surface.regions[r].area
                          for r in self.groups[p])
                   for p in range(self.n_parts)}
        order = sorted(range(self.n_parts), key=lambda p: (-area_of[p], p))
        solver = GraphCutSolver(self.tm, costs, self.seeds,
                                self.part_of_region, order)
        dp = solver.solve()
        iface = build_interface_mesh(self.tm, dp.labels)
        opt = optimize(
            iface, directions, feasible,
            surface_bvh=self.tm.surface.bvh,
            alpha=self.params.alpha, lam=self.params.lam,
            eps=self.params.eps, max_iter=self.params.max_iter,
            conv=self.params.conv, bbox_diag=self.tm.surface.bbox_diag)
        return dp, iface, opt

    # -- stage audit --------------------------------------------------------

    def interface_ok(self, iface: InterfaceMesh, part: int) -> bool:
        if part not in self.directions:
            return False
        d = self.directions[part]
        normals = iface.face_normals()
        eps = self.params.eps
        for f in range(iface.n_faces):
            a, b = iface.owners[f]
            if a == part:
                if float(np.dot(normals[f], d)) > eps:
                    return False
            elif b == part:
                if float(-np.dot(normals[f], d)) > eps:
                    return False
        return True

    def audit_stage(self, iface: InterfaceMesh):
        """Greedy within-stage extraction set (descending part volume);
        removing a part relaxes the region audit for the rest."""
        freed = []
        freed_set = set()
        order = sorted(range(self.n_parts),
                       key=lambda p: (-self._part_volume(p), p))
        progress = True
        while progress:
            progress = False
            for p in order:
                if p in freed_set or p not in self.feasible:
                    continue
                if not self.interface_ok(iface, p):
                    continue
                if self.analyzer.blocked(p, self.directions[p],
                                         excluded_parts=freed_set):
                    continue
                freed.append(p)
                freed_set.add(p)
                progress = True
        return freed

    def set_labels(self, labels):
        self.labels = labels
        self._vol = self.tm.volumes

    def _part_volume(self, p) -> float:
        return float(self._vol[self.labels == p].sum())


def _part_mesh(tm: LabeledTetMesh, labels, part, iface: InterfaceMesh):
    """Closed part mesh: outer boundary faces plus owned interface faces,
    with optimizer-deformed interface geometry."""
    pos_of_source = {}
    for v in range(iface.n_vertices):
        s = int(iface.source_vertex[v])
        if s >= 0:
            pos_of_source[s] = iface.positions[v]

    key_index = {}
    verts = []

    def vid(key, pos):
        if key not in key_index:
            key_index[key] = len(verts)
            verts.append(pos)
        return key_index[key]

    faces = []
    iface_flag = []
    covered = []
    outer = np.flatnonzero(labels[tm.bd_tet] == part)
    for b in outer:
        tri = tm.bd_tris[b]
        ids = []
        for t in tri:
            t = int(t)
            pos = pos_of_source.get(t, tm.vertices[t])
            ids.append(vid(("t", t), pos))
        faces.append(ids)
        iface_flag.append(False)
        covered.append(int(tm.surface_face_map[b]))

    for f in range(iface.n_faces):
        a, b = map(int, iface.owners[f])
        if a != part and b != part:
            continue
        tri = [int(x) for x in iface.faces[f]]
        if b == part:
            tri = [tri[0], tri[2], tri[1]]
        ids = []
        for v in tri:
            s = int(iface.source_vertex[v])
            key = ("t", s) if s >= 0 else ("m", v)
            ids.append(vid(key, iface.positions[v]))
        faces.append(ids)
        iface_flag.append(True)

    vertices = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    return (PartGeometry(vertices, faces),
            np.asarray(iface_flag, dtype=bool),
            np.asarray(sorted(c for c in covered if c >= 0), dtype=np.int64))


def _check_closed(mesh: PartGeometry):
    edges = defaultdict(int)
    for f in mesh.faces:
        for e in range(3):
            a, b = int(f[e]), int(f[(e + 1) % 3])
            edges[(min(a, b), max(a, b))] += 1
    return all(c == 2 for c in edges.values())


def _relabel_exposed(bd_tris, known_attr, temp_attr):
    """Confirm temp labels by growing adjacent regions, then assign leftovers
    to the surface-geodesically nearest labeled face's attribute."""
    n = len(bd_tris)
    # face adjacency via shared edges
    edge_faces = defaultdict(list)
    for f in range(n):
        tri = bd_tris[f]
        for e in range(3):
            a, b = int(tri[e]), int(tri[(e + 1) % 3])
            edge_faces[(min(a, b), max(a, b))].append(f)
    nbrs = defaultdict(list)
    for fs in edge_faces.values():
        for i in fs:
            for j in fs:
                if i != j:
                    nbrs[i].append(j)

    label = known_attr.copy()
    # growth: confirm exposed faces whose temp label matches an adjacent
    # confirmed region
    queue = [f for f in range(n) if label[f] >= 0]
    while queue:
        nxt = []
        for f in queue:
            for g in nbrs[f]:
                if label[g] < 0 and temp_attr[g] == label[f]:
                    label[g] = temp_attr[g]
                    nxt.append(g)
        queue = nxt

    if np.any(label < 0):
        # nearest labeled face by BFS rings (surface distance fallback)
        queue = [f for f in range(n) if label[f] >= 0]
        while queue and np.any(label < 0):
            nxt = []
            for f in queue:
                for g in sorted(nbrs[f]):
                    if label[g] < 0:
                        label[g] = label[f]
                        nxt.append(g)
            queue = nxt
    return label


def _untangle(vertices, tets, locked):
    """Interior Laplacian relaxation of vertices on inverted tets."""
    vols = geom.tet_volumes(vertices, tets)
    if np.all(vols > 0):
        return vertices, True
    vertices = vertices.copy()
    incident = defaultdict(list)
    for t, tet in enumerate(tets):
        for v in tet:
            incident[int(v)].append(t)
    for _ in range(50):
        vols = geom.tet_volumes(vertices, tets)
        bad = np.flatnonzero(vols <= 0)
        if len(bad) == 0:
            return vertices, True
        moved = False
        for t in bad:
            for v in tets[t]:
                v = int(v)
                if locked[v]:
                    continue
                ring = np.unique(np.concatenate(
                    [tets[k] for k in incident[v]]))
                ring = ring[ring != v]
                vertices[v] = vertices[ring].mean(axis=0)
                moved = True
        if not moved:
            break
    return vertices, bool(np.all(geom.tet_volumes(vertices, tets) > 0))


def _build_residual(tm: LabeledTetMesh, labels, extracted, iface,
                    part_attr) -> LabeledTetMesh | None:
    extracted = set(extracted)
    keep = ~np.isin(labels, sorted(extracted))
    if not np.any(keep):
        return None

    new_pos = tm.vertices.copy()
    for v in range(iface.n_vertices):
        s = int(iface.source_vertex[v])
        if s >= 0:
            new_pos[s] = iface.positions[v]

    tets = tm.tets[keep]
    kept_labels = labels[keep]

    # lock every vertex on the residual boundary (outer surface + newly
    # exposed interfaces); only purely interior vertices may relax
    bd_tris, bd_tet, _ = _extract_boundary(tets)
    locked = np.zeros(len(new_pos), dtype=bool)
    locked[np.unique(bd_tris)] = True
    new_pos, ok = _untangle(new_pos, tets, locked)
    if not ok:
        # deformation cannot be carried: fall back to discrete geometry
        new_pos = tm.vertices.copy()
        if not np.all(geom.tet_volumes(new_pos, tets) > 0):
            raise InvertedResidualTet("residual tets inverted even on "
                                      "undeformed coordinates")

    old_bd = {}
    for b, tri in enumerate(tm.bd_tris):
        old_bd[tuple(sorted(map(int, tri)))] = b

    known = np.full(len(bd_tris), -1, dtype=np.int64)
    temp = np.empty(len(bd_tris), dtype=np.int64)
    sfm = np.full(len(bd_tris), -1, dtype=np.int64)
    for b, tri in enumerate(bd_tris):
        key = tuple(sorted(map(int, tri)))
        owner_part = int(kept_labels[bd_tet[b]])
        temp[b] = part_attr[owner_part]
        if key in old_bd:
            ob = old_bd[key]
            known[b] = tm.bd_label[ob]
            sfm[b] = tm.surface_face_map[ob]

    bd_label = _relabel_exposed(bd_tris, known, temp)

    used = np.unique(tets)
    remap = np.full(len(new_pos), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    res = LabeledTetMesh(new_pos[used], remap[tets], bd_label, sfm,
                         fix_orientation=False)
    return res


def run(tm: LabeledTetMesh, params: PipelineParams | None = None,
        link_request: LinkRequest | None = None,
        input_face_count: int | None = None) -> PartitionResult:
    """Full disassembly: returns extracted parts, the staged plan and the
    run report. Raises PipelineStalled when no strategy can advance."""
    params = params or PipelineParams()
    link_request = link_request or LinkRequest()
    total_volume = float(tm.volumes.sum())
    if input_face_count is None:
        input_face_count = len(tm.bd_tris)

    attr_parent = {}
    plan = AssemblyPlan()
    parts_out = []
    report = {"passes": [], "splits": [], "sequential": [],
              "total_volume": total_volume}

    tm, n_splits = tm.resolve_conflicts()
    if n_splits:
        report["conflict_split_rounds"] = n_splits

    next_part_id = 0
    for pass_no in range(params.max_passes):
        ps = _Pass(tm, params, attr_parent, link_request)
        ps.seed_and_link()
        sphere = build_direction_set(tm.surface, params.sphere_res)
        feas = ps.analyze(sphere)

        pass_log = {"pass": pass_no, "n_parts": ps.n_parts,
                    "feasible": sorted(ps.feasible)}

        if feas.all_infeasible:
            split = split_region(tm.surface, sphere,
                                 max_pairs=params.pair_budget,
                                 split_alpha=params.split_alpha,
                                 gamma=params.gamma,
                                 full_enumeration=params.full_pairs)
            for a in split.new_attributes:
                attr_parent[a] = attr_parent.get(split.parent_attribute,
                                                 split.parent_attribute)
            tm = LabeledTetMesh(tm.vertices, tm.tets,
                                split.surface.face_label,
                                tm.surface_face_map, fix_orientation=False)
            tm, _ = tm.resolve_conflicts()
            report["splits"].append(
                {"pass": pass_no, "parent": split.parent_attribute,
                 "new": split.new_attributes, "n_way": split.n_way})
            pass_log["action"] = "split"
            report["passes"].append(pass_log)
            continue

        dp, iface, opt = ps.solve_and_optimize()
        ps.set_labels(dp.labels)
        pass_log["energy_trace"] = dp.energy_trace
        pass_log["energy"] = dp.energy
        pass_log["breakdown"] = dp.breakdown
        pass_log["optimizer_status"] = opt.status
        pass_log["optimizer_log"] = opt.log

        freed = ps.audit_stage(iface)

        if not freed:
            freed, dp, iface, opt, seq_log = _sequential(ps, iface)
            report["sequential"].append(
                {"pass": pass_no, "candidates": seq_log})
            if not freed:
                # sequential failed everywhere: refine the largest region
                try:
                    split = split_region(tm.surface, sphere,
                                         max_pairs=params.pair_budget,
                                         split_alpha=params.split_alpha,
                                         gamma=params.gamma,
                                         full_enumeration=params.full_pairs)
                except (SplitFailed, VolpartError) as exc:
                    raise PipelineStalled(
                        f"pass {pass_no}: sequential extraction and region "
                        f"splitting both failed",
                        diagnostics=report) from exc
                for a in split.new_attributes:
                    attr_parent[a] = attr_parent.get(split.parent_attribute,
                                                     split.parent_attribute)
                tm = LabeledTetMesh(tm.vertices, tm.tets,
                                    split.surface.face_label,
                                    tm.surface_face_map,
                                    fix_orientation=False)
                tm, _ = tm.resolve_conflicts()
                report["splits"].append(
                    {"pass": pass_no, "parent": split.parent_attribute,
                     "new": split.new_attributes, "n_way": split.n_way,
                     "after_sequential": True})
                pass_log["action"] = "split_after_sequential"
                report["passes"].append(pass_log)
                continue
            ps.set_labels(dp.labels)

        stage_parts = []
        for p in freed:
            mesh, iface_mask, covered = _part_mesh(tm, dp.labels, p, iface)
            attr = ps.part_attr[p]
            vols = tm.volumes[dp.labels == p]
            normals, face_areas = geom.face_normals_areas(mesh.vertices,
                                                          mesh.faces)
            rec = PartRecord(
                part_id=next_part_id,
                attribute=attr,
                parent_attribute=attr_parent.get(attr, attr),
                direction=ps.directions[p].copy(),
                mesh=mesh,
                interface_mask=iface_mask,
                covered_input_faces=covered,
                tet_count=int((dp.labels == p).sum()),
                volume=float(vols.sum()),
                area=float(face_areas.sum()),
                interface_area=float(face_areas[iface_mask].sum()))
            next_part_id += 1
            stage_parts.append(rec)
            parts_out.append(rec)
        plan.stages.append(Stage(stage_parts))
        pass_log["extracted"] = [p.part_id for p in stage_parts]
        report["passes"].append(pass_log)

        residual = _build_residual(tm, dp.labels, freed, iface, ps.part_attr)
        if residual is None:
            break
        tm, _ = residual.resolve_conflicts()
    else:
        raise PipelineStalled(
            f"pass budget ({params.max_passes}) exhausted", diagnostics=report)

    report["parts"] = [{
        "part": p.part_id, "attribute": int(p.attribute),
        "parent_attribute": int(p.parent_attribute),
        "direction": [float(x) for x in p.direction],
        "tet_count": p.tet_count, "volume": p.volume, "area": p.area,
        "interface_area": p.interface_area}
        for p in parts_out]
    report["volume_check"] = {
        "parts_total": float(sum(p.volume for p in parts_out)),
        "solid": total_volume}
    return PartitionResult(parts_out, plan, report)


def _sequential(ps: _Pass, failed_iface: InterfaceMesh):
    """Sequential part extraction: candidates ordered by the share of their
    interface area violating their own constraint after the failed joint
    optimization; the first candidate whose single-part re-solve passes the
    audit wins."""
    normals = failed_iface.face_normals()
    areas = failed_iface.face_areas()
    score = {}
    for p in sorted(ps.feasible):
        d = ps.directions[p]
        tot = 0.0
        bad = 0.0
        for f in range(failed_iface.n_faces):
            a, b = failed_iface.owners[f]
            if a != p and b != p:
                continue
            nd = float(np.dot(normals[f], d)) if a == p else \
                float(-np.dot(normals[f], d))
            tot += areas[f]
            if nd > ps.params.eps:
                bad += areas[f]
        score[p] = bad / tot if tot > 0 else 0.0

    log = []
    for p in sorted(score, key=lambda q: (score[q], q)):
        dp, iface, opt = ps.solve_and_optimize(
            feasible={p}, directions={p: ps.directions[p]})
        ps.set_labels(dp.labels)
        ok = ps.interface_ok(iface, p) and not ps.analyzer.blocked(
            p, ps.directions[p])
        log.append({"part": p, "violating_share": score[p],
                    "status": opt.status, "extracted": bool(ok)})
        if ok:
            return [p], dp, iface, opt, log
    return [], None, None, None, log