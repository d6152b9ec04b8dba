"""Command-line interface.

Subcommands: partition (full pipeline), analyze (feasibility only), verify
(oracle audit of an emitted plan), split (segmentation refiner only). Exit
codes: 0 success, 1 input error, 2 pipeline stalled. Progress is logged as
line-delimited JSON on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import meshio
from .config import build_config
from .directions import build_direction_set, analyze as analyze_directions
from .errors import PipelineStalled, VolpartError
from .linker import LinkRequest
from .oracle import sweep_collides
from .pipeline import run as run_pipeline
from .refine import split_region


def _log(**kv):
    sys.stderr.write(json.dumps(kv, sort_keys=True) + "\n")


def _parse_kv_list(values, what):
    out = {}
    for item in values or []:
        if "=" not in item:
            raise ValueError(f"bad {what} '{item}', expected key=value")
        k, v = item.split("=", 1)
        out[int(k)] = v
    return out


def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--w-p", dest="w_p", type=float)
    p.add_argument("--k-ic", dest="k_ic", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--conv", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--split-alpha", dest="split_alpha", type=float)
    p.add_argument("--pair-budget", dest="pair_budget", type=int)
    p.add_argument("--sphere-res", dest="sphere_res", type=int)
    p.add_argument("--omega-multiplier", dest="omega_multiplier", type=float)
    p.add_argument("--omega-scale", action="append", metavar="ATTR=FACTOR",
                   help="per-attribute balance weight scale (repeatable)")
    p.add_argument("--merge", action="append", metavar="ATTR=all|ID,ID",
                   help="regions of an attribute to merge (repeatable)")
    p.add_argument("--dump-iterations", action="store_true", default=None)
    p.add_argument("--exact-oracle", action="store_true", default=None)
    p.add_argument("--full-pair-enumeration", dest="full_pairs",
                   action="store_true", default=None)
    p.add_argument("--workers", type=int,
                   help="worker pool size for parallel pure stages "
                        "(current implementation runs them serially)")


def _config_from_args(args):
    overrides = {}
    for name in ["w_p", "k_ic", "alpha", "lam", "eps", "max_iter", "conv",
                 "gamma", "split_alpha", "pair_budget", "sphere_res",
                 "omega_multiplier", "dump_iterations", "exact_oracle",
                 "full_pairs", "workers"]:
        overrides[name] = getattr(args, name, None)
    scales = _parse_kv_list(getattr(args, "omega_scale", None), "omega-scale")
    if scales:
        overrides["omega_scale"] = {k: float(v) for k, v in scales.items()}
    merges = _parse_kv_list(getattr(args, "merge", None), "merge")
    if merges:
        overrides["merge"] = {
            k: ("all" if v == "all" else [int(x) for x in v.split(",")])
            for k, v in merges.items()}
    return build_config(args.config, overrides)


def _load_tets(args, surface):
    if args.tets and args.tets.lower().endswith(".mesh"):
        return meshio.load_medit_mesh(args.tets, surface)
    if not args.ele:
        raise VolpartError("need .node and .ele paths (or one .mesh)")
    return meshio.load_tet_mesh(args.tets, args.ele, surface)


def cmd_partition(args) -> int:
    cfg = _config_from_args(args)
    surface = meshio.load_labeled_surface(args.surface)
    _log(event="loaded_surface", faces=len(surface.faces),
         regions=len(surface.regions))
    tm = _load_tets(args, surface)
    _log(event="loaded_tets", tets=tm.n_tets)
    result = run_pipeline(tm, cfg.pipeline_params(),
                          LinkRequest(cfg.merge))
    for entry in result.report["passes"]:
        _log(event="pass", **{k: v for k, v in entry.items()
                              if k not in ("optimizer_log",)})
    written = meshio.write_parts(result, args.out)
    _log(event="written", files=[os.path.basename(w) for w in written],
         stages=len(result.plan.stages), parts=result.plan.n_parts)
    return 0


def cmd_analyze(args) -> int:
    cfg = _config_from_args(args)
    surface = meshio.load_labeled_surface(args.surface)
    sphere = build_direction_set(surface, cfg.sphere_res)
    res = analyze_directions(surface, sphere)
    payload = {"directions": len(sphere), "regions": [
        {"region": rf.region,
         "attribute": int(surface.regions[rf.region].attribute),
         "feasible": bool(rf.feasible),
         "direction": ([float(x) for x in rf.direction]
                       if rf.feasible else None),
         "feasible_direction_count": int(rf.mask.sum())}
        for rf in res.per_region]}
    text = json.dumps(payload, indent=1, sort_keys=True)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)
    return 0


def cmd_verify(args) -> int:
    cfg = _config_from_args(args)
    plan_path = os.path.join(args.out_dir, "plan.json")
    with open(plan_path) as fh:
        plan = json.load(fh)
    parts = {}
    dirs = {}
    stages = []
    for stage in plan["stages"]:
        ids = []
        for entry in stage:
            pid = entry["part"]
            mesh, _ = meshio.load_part_obj(
                os.path.join(args.out_dir, f"part_{pid}.obj"))
            parts[pid] = mesh
            dirs[pid] = np.array(entry["direction"])
            ids.append(pid)
        stages.append(ids)

    ok = True
    for k, ids in enumerate(stages):
        later = [parts[q] for s in stages[k + 1:] for q in s]
        for pid in ids:
            collides = sweep_collides(parts[pid], dirs[pid], later,
                                      exact=bool(cfg.exact_oracle))
            _log(event="verify", stage=k, part=pid,
                 obstacles=len(later), collides=bool(collides))
            if collides:
                ok = False
    print(json.dumps({"ok": ok, "stages": len(stages),
                      "parts": len(parts)}, sort_keys=True))
    return 0 if ok else 1


def cmd_split(args) -> int:
    cfg = _config_from_args(args)
    surface = meshio.load_labeled_surface(args.surface)
    sphere = build_direction_set(surface, cfg.sphere_res)
    split = split_region(surface, sphere, max_pairs=cfg.pair_budget,
                         split_alpha=cfg.split_alpha, gamma=cfg.gamma,
                         full_enumeration=cfg.full_pairs)
    meshio.write_labeled_obj(args.out, split.surface)
    _log(event="split", parent=int(split.parent_attribute),
         new=split.new_attributes, n_way=split.n_way, out=args.out)
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="volpart",
        description="Partition a labeled solid into single-attribute, "
                    "linearly assemblable parts.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition", help="run the full pipeline")
    p.add_argument("surface")
    p.add_argument("tets", help=".node file or MEDIT .mesh")
    p.add_argument("ele", nargs="?", help=".ele file for .node input")
    p.add_argument("-o", "--out", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_partition)

    p = sub.add_parser("analyze", help="direction feasibility only")
    p.add_argument("surface")
    p.add_argument("-o", "--out")
    _add_common(p)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("verify", help="oracle audit of an emitted plan")
    p.add_argument("out_dir")
    _add_common(p)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("split", help="segmentation refiner only")
    p.add_argument("surface")
    p.add_argument("-o", "--out", required=True)
    _add_common(p)
    p.set_defaults(fn=cmd_split)

    args = ap.parse_args(argv)
    try:
        return args.fn(args)
    except PipelineStalled as exc:
        _log(event="stalled", error=str(exc))
        return 2
    except (VolpartError, OSError, ValueError, json.JSONDecodeError) as exc:
        _log(event="error", kind=type(exc).__name__, error=str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
