"""Command-line surface.

Exit codes: 0 success, 2 validation failure, 3 missing cost-table
entries, 4 runtime/numeric failure. The DENSESPACE_LOG environment
variable sets the log level (e.g. DEBUG, INFO).

Every command is deterministic given its config and seed; primary
output files are byte-identical across reruns. Each command appends an
experiment report (JSON lines, one record per run) next to its output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import reference
from .cost import (
    CostBreakdown,
    CostError,
    CostTable,
    MissingCostEntryError,
    arch_signatures,
    chained_cost,
    exact_cost,
    flops_of_arch,
    local_cost,
    params_of_arch,
)
from .derive import DeriveError, DerivedArchitecture, derive
from .experiments import ExperimentError, correlate, write_correlation_csv
from .ioutil import canonical_json, sha256_hex, write_canonical
from .params import ArchParams, ParamsError
from .search import (
    RandomSearchError,
    SearchConfig,
    SearchError,
    SyntheticEvaluator,
    random_search,
    search,
)
from .space import SpaceConfig, SpaceError, SuperNetworkSpec, build_super_network, validate

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_MISSING_DATA = 3
EXIT_RUNTIME = 4

log = logging.getLogger("densespace")

BUILTIN_ARCHS = {
    "densenas-r1": reference.densenas_r1,
    "densenas-r2": reference.densenas_r2,
    "densenas-r3": reference.densenas_r3,
}
BUILTIN_NETWORKS = {
    "resnet18": reference.resnet18_signatures,
    "resnet34": reference.resnet34_signatures,
    "resnet50b": reference.resnet50b_signatures,
}


def _append_report(path: str, record: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "a") as f:
        f.write(canonical_json(record) + "\n")


def _load_spec(path: str) -> SuperNetworkSpec:
    with open(path) as f:
        return SuperNetworkSpec.from_json(json.load(f))


def _load_arch(name_or_path: str) -> DerivedArchitecture:
    if name_or_path in BUILTIN_ARCHS:
        return BUILTIN_ARCHS[name_or_path]()
    with open(name_or_path) as f:
        return DerivedArchitecture.from_json(json.load(f))


def _load_table(arg: str, sigs=None, spec: SuperNetworkSpec | None = None) -> CostTable:
    """--table is either the literal 'flops' (analytic table) or a
    latency CSV path."""
    if arg == "flops":
        if spec is not None:
            return CostTable.flops_for_space(spec)
        return CostTable.flops_for(sigs or [])
    return CostTable.from_latency_csv(arg)


def cmd_space_build(args) -> int:
    config = SpaceConfig.from_file(args.config)
    spec = build_super_network(config)
    violations = validate(spec)
    if violations:
        for v in violations:
            print(f"violation[{v.code}]: {v.message}", file=sys.stderr)
        return EXIT_VALIDATION
    write_canonical(args.out, spec.to_json())
    print(f"wrote {args.out} ({spec.n_blocks} blocks, {len(spec.connections)} connections)")
    _append_report(args.out + ".report.jsonl", {
        "experiment": "space-build",
        "inputs": {"config_sha256": sha256_hex(canonical_json(config.to_json()))},
        "results": {"n_blocks": spec.n_blocks, "n_connections": len(spec.connections),
                    "spec_sha256": spec.sha256()},
        "artifacts": [args.out],
    })
    return EXIT_OK


def cmd_search(args) -> int:
    spec = _load_spec(args.spec)
    with open(args.config) as f:
        cfg_obj = json.load(f)
    if args.seed is not None:
        cfg_obj["seed"] = args.seed
    if getattr(args, "lam", None) is not None:
        cfg_obj["lam"] = args.lam
    if args.tau is not None:
        cfg_obj["tau"] = args.tau
    config = SearchConfig.from_json(cfg_obj)
    table = _load_table(args.table, spec=spec)
    evaluator = SyntheticEvaluator(spec, seed=config.seed)

    params, trace = search(spec, config, evaluator, table)
    arch = derive(spec, params)

    os.makedirs(args.out, exist_ok=True)
    trace_path = os.path.join(args.out, "trace.jsonl")
    with open(trace_path, "w") as f:
        f.write(trace.to_jsonl())
    params_path = os.path.join(args.out, "params.json")
    write_canonical(params_path, params.to_json())
    arch_path = os.path.join(args.out, "architecture.json")
    write_canonical(arch_path, arch.to_json())

    final_cost = exact_cost(arch, table)
    print(f"search finished: {len(arch.blocks)} blocks, exact cost {final_cost:g} ({table.unit})")
    _append_report(os.path.join(args.out, "report.jsonl"), {
        "experiment": "search",
        "inputs": {"spec_sha256": spec.sha256(), "seed": config.seed,
                   "config_sha256": sha256_hex(canonical_json(config.to_json()))},
        "results": {"final_task_loss": trace.records[-1].task_loss,
                    "final_est_cost": trace.records[-1].est_cost,
                    "derived_exact_cost": final_cost},
        "artifacts": [trace_path, params_path, arch_path],
    })
    return EXIT_OK


def cmd_cost(args) -> int:
    if args.mode in ("exact", "flops-count"):
        if args.arch in BUILTIN_NETWORKS:
            sigs = BUILTIN_NETWORKS[args.arch]()
            table = _load_table(args.table, sigs=sigs)
            total = float(table.lookup_many(sigs).sum())
            out = {"unit": table.unit, "total": total,
                   "params": reference.network_params(sigs)}
        else:
            arch = _load_arch(args.arch)
            sigs = arch_signatures(arch)
            table = _load_table(args.table, sigs=sigs)
            total = exact_cost(arch, table)
            out = {"unit": table.unit, "total": total, "params": params_of_arch(arch)}
        print(canonical_json(out))
        return EXIT_OK
    spec = _load_spec(args.spec)
    with open(args.params) as f:
        params = ArchParams.from_json(json.load(f))
    table = _load_table(args.table, spec=spec)
    if args.mode == "chained":
        total, breakdown = chained_cost(spec, params, table)
        print(canonical_json(breakdown.to_json()))
    elif args.mode == "local":
        total = local_cost(spec, params, table)
        print(canonical_json({"unit": table.unit, "total": total}))
    else:
        raise CostError(f"unknown mode {args.mode!r}")
    return EXIT_OK


def cmd_correlate(args) -> int:
    spec = _load_spec(args.spec)
    table = _load_table(args.table, spec=spec)
    result = correlate(spec, table, args.n_models, args.seed, workers=args.workers)
    write_correlation_csv(args.out, result)
    print(f"rho(chained, exact) = {result.rho_chained:.6f}")
    print(f"rho(local, exact)   = {result.rho_local:.6f}")
    _append_report(args.out + ".report.jsonl", {
        "experiment": "correlate",
        "inputs": {"spec_sha256": spec.sha256(), "seed": args.seed, "n_models": args.n_models},
        "results": {"rho_chained": result.rho_chained, "rho_local": result.rho_local},
        "artifacts": [args.out],
    })
    return EXIT_OK


def cmd_random_search(args) -> int:
    spec = _load_spec(args.spec)
    table = _load_table(args.table, spec=spec)
    ev_cfg = {}
    if args.evaluator_config:
        with open(args.evaluator_config) as f:
            ev_cfg = json.load(f)
    evaluator = SyntheticEvaluator(
        spec,
        seed=int(ev_cfg.get("seed", 0)),
        quality_scale=float(ev_cfg.get("quality_scale", 1.0)),
        noise_sigma=float(ev_cfg.get("noise_sigma", 0.0)),
    )
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    best, accepted = random_search(
        spec, table, evaluator, args.n_models, args.target, args.tolerance, rng,
        max_attempts=args.max_attempts,
    )
    write_canonical(args.out, best.to_json())
    print(f"accepted {len(accepted)} architectures; best score {max(a[2] for a in accepted):g}")
    _append_report(args.out + ".report.jsonl", {
        "experiment": "random-search",
        "inputs": {"spec_sha256": spec.sha256(), "seed": args.seed,
                   "n_models": args.n_models, "target": args.target, "tolerance": args.tolerance},
        "results": {"scores": [a[2] for a in accepted],
                    "exact_costs": [a[1] for a in accepted]},
        "artifacts": [args.out],
    })
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="densespace",
        description="Densely connected NAS search space: build, search, cost, experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("space-build", help="build and validate a super network from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_space_build)

    p = sub.add_parser("search", help="run the two-stage search with the synthetic evaluator")
    p.add_argument("--spec", required=True)
    p.add_argument("--config", required=True, help="search config JSON")
    p.add_argument("--table", default="flops", help="'flops' or a latency CSV path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("cost", help="cost queries on architectures or relaxed params")
    p.add_argument("--mode", required=True, choices=["exact", "chained", "local", "flops-count"])
    p.add_argument("--arch", help="architecture JSON, or a builtin name: "
                   + ", ".join(sorted(BUILTIN_ARCHS) + sorted(BUILTIN_NETWORKS)))
    p.add_argument("--spec")
    p.add_argument("--params")
    p.add_argument("--table", default="flops")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("correlate", help="chained vs local estimator correlation experiment")
    p.add_argument("--spec", required=True)
    p.add_argument("--table", default="flops")
    p.add_argument("--n-models", type=int, default=1500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("random-search", help="random-search baseline at a cost target")
    p.add_argument("--spec", required=True)
    p.add_argument("--table", default="flops")
    p.add_argument("--evaluator-config", default=None)
    p.add_argument("--n-models", type=int, default=15)
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--tolerance", type=float, default=0.05)
    p.add_argument("--max-attempts", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_random_search)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("DENSESPACE_LOG", "WARNING").upper())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except MissingCostEntryError as e:
        for sig in e.signatures:
            print(f"missing cost entry: {sig}", file=sys.stderr)
        return EXIT_MISSING_DATA
    except (SpaceError, ParamsError, SearchError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (CostError, DeriveError, ExperimentError, RandomSearchError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
