"""Command-line front end: parse instances, solve or audit, emit JSON.

Exit codes: 0 ok, 1 infeasible (or failed audit), 2 parse/usage error.
Output is byte-stable for a fixed (input, seed, flags) triple: keys are
sorted and floats are emitted with repr-stable formatting.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from .instance import McfInstance
from .ipm import IpmParams, solve, OPTIMAL


class ParseError(ValueError):
    pass


def parse_dimacs_min(text):
    """DIMACS min-cost-flow reader ("c", "p min", "n", "a" lines).

    Arc lower bounds are folded away: a forced low shifts the endpoint
    demands and contributes low*cost to a constant cost offset (returned as
    the second value); fully forced arcs (low == cap) disappear.
    """
    n = m = None
    supplies = {}
    arcs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("c"):
            continue
        parts = line.split()
        try:
            if parts[0] == "p":
                if len(parts) != 4 or parts[1] != "min":
                    raise ParseError("line %d: bad problem line" % lineno)
                n, m = int(parts[2]), int(parts[3])
            elif parts[0] == "n":
                supplies[int(parts[1]) - 1] = int(parts[2])
            elif parts[0] == "a":
                if len(parts) != 6:
                    raise ParseError("line %d: arc needs 5 fields" % lineno)
                arcs.append(tuple(int(x) for x in parts[1:]))
            else:
                raise ParseError("line %d: unknown record %r"
                                 % (lineno, parts[0]))
        except ParseError:
            raise
        except (ValueError, IndexError):
            raise ParseError("line %d: malformed record" % lineno)
    if n is None:
        raise ParseError("missing problem line")
    if len(arcs) != m:
        raise ParseError("problem line promises %d arcs, found %d"
                         % (m, len(arcs)))
    if m == 0:
        raise ParseError("instance has no arcs")
    demands = np.zeros(n, dtype=np.int64)
    for node, sup in supplies.items():
        if not 0 <= node < n:
            raise ParseError("supply for node %d out of range" % (node + 1))
        demands[node] = -sup  # positive supply == net producer
    edges = []
    offset = 0
    for (u, v, low, cap, cost) in arcs:
        u, v = u - 1, v - 1
        if not (0 <= u < n and 0 <= v < n):
            raise ParseError("arc endpoint out of range: %d->%d"
                             % (u + 1, v + 1))
        if low < 0 or cap < low:
            raise ParseError("arc %d->%d has bad bounds" % (u + 1, v + 1))
        if low > 0:
            demands[u] += low
            demands[v] -= low
            offset += low * cost
        if cap > low:
            edges.append((u, v, cap - low, cost))
    if int(demands.sum()) != 0:
        raise ParseError("supplies do not balance")
    if not edges:
        raise ParseError("all arcs are fully forced")
    return McfInstance(n, edges, demands), offset


def parse_json_instance(text):
    try:
        obj = json.loads(text)
        inst = McfInstance(obj["n"],
                           [tuple(e) for e in obj["edges"]],
                           obj["demands"])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError("bad json instance: %s" % e)
    return inst, 0


def load_instance(path, fmt):
    with open(path) as fh:
        text = fh.read()
    if fmt == "auto":
        fmt = "json" if text.lstrip().startswith("{") else "dimacs-min"
    if fmt == "json":
        return parse_json_instance(text)
    return parse_dimacs_min(text)


def _emit(obj, out_path):
    data = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(data)
    else:
        sys.stdout.write(data)


def _params(args):
    mode = "audit" if args.mode == "audit" else "light"
    eps_p = args.eps_p if mode == "audit" else 0.0
    return IpmParams(seed=args.seed, mode=mode, eps_p=eps_p)


def run_solve(args):
    inst, offset = load_instance(args.input, args.format)
    t0 = time.perf_counter()
    res = solve(inst, _params(args))
    wall = time.perf_counter() - t0
    out = {
        "status": res.status,
        "cost": None if res.cost is None else int(res.cost) + offset,
        "flow": None if res.flow is None else
                [int(x) for x in res.flow],
        "steps": res.stats["phase1_steps"] + res.stats["phase2_steps"],
        "seed": args.seed,
        "wall_time_s": round(wall, 3) if args.timing else None,
    }
    _emit(out, args.output)
    if args.trace and res.stats.get("traces"):
        with open(args.trace, "w") as fh:
            for name, tr in res.stats["traces"]:
                fh.write(tr.to_jsonl() + "\n")
    return 0 if res.status == OPTIMAL else 1


def run_audit(args):
    from .oracle import exact_mcf
    inst, offset = load_instance(args.input, args.format)
    params = IpmParams(seed=args.seed, mode="audit", eps_p=args.eps_p)
    checks = {}
    t0 = time.perf_counter()
    res = solve(inst, params)
    wall = time.perf_counter() - t0
    status, _, cost = exact_mcf(inst)
    if status == OPTIMAL:
        checks["matches_oracle"] = (res.status == OPTIMAL
                                    and res.cost == int(cost))
    else:
        checks["matches_oracle"] = res.status != OPTIMAL
    gamma_ok = True
    if res.stats.get("traces"):
        lp = res.stats.get("lp")
        for name, tr in res.stats["traces"]:
            mm = lp.m * (3 if name == "phase1" else 1) if lp else inst.m
            budget = params.budget(mm)
            if tr.cols["gamma_inf"] and max(tr.cols["gamma_inf"]) > budget:
                gamma_ok = False
    checks["gamma_within_budget"] = gamma_ok
    out = {
        "status": res.status,
        "cost": None if res.cost is None else int(res.cost) + offset,
        "checks": checks,
        "passed": all(checks.values()),
        "wall_time_s": round(wall, 3) if args.timing else None,
    }
    _emit(out, args.output)
    return 0 if out["passed"] else 1


def _bench_grid(rows, cols):
    tails, heads = [], []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                tails.append(v)
                heads.append(v + 1)
            if r + 1 < rows:
                tails.append(v)
                heads.append(v + cols)
    return (np.array(tails, dtype=np.int64),
            np.array(heads, dtype=np.int64), rows * cols)


def run_bench(args):
    from . import septree
    from .dynamic_sc import DynamicScState
    rng = np.random.default_rng(args.seed)
    rows = []
    for side in args.sizes:
        tails, heads, nv = _bench_grid(side, side)
        m = len(tails)
        tree = septree.build(nv, tails, heads)
        st = DynamicScState(tree, tails, heads,
                            rng.uniform(0.5, 2.0, m), eps_p=0.0)
        K = max(1, args.k)
        total = 0
        reps = 32
        for _ in range(reps):
            eids = rng.choice(m, size=min(K, m), replace=False)
            st.reweight(eids, rng.uniform(0.5, 2.0, len(eids)))
            total += st.tree.touched_cost(st.last_rebuilt)
        rows.append({"side": side, "m": m, "K": K,
                     "mean_touched": total / reps,
                     "sqrt_mK": float(np.sqrt(m * K))})
    xs = np.log([r["sqrt_mK"] for r in rows])
    ys = np.log([r["mean_touched"] for r in rows])
    slope = float(np.polyfit(xs, ys, 1)[0]) if len(rows) > 1 else None
    _emit({"rows": rows, "fitted_exponent": slope, "seed": args.seed},
          args.output)
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="sepflow",
        description="exact min-cost flow via separator-tree interior point")
    p.add_argument("--mode", choices=("solve", "audit", "bench"),
                   default="solve")
    p.add_argument("--input", help="instance path (solve/audit)")
    p.add_argument("--format", choices=("auto", "dimacs-min", "json"),
                   default="auto")
    p.add_argument("--seed", type=int,
                   default=int(os.environ.get("SEPFLOW_SEED", "0")))
    p.add_argument("--eps-p", dest="eps_p", type=float, default=0.0,
                   help="projection tolerance for audit mode")
    p.add_argument("--output", help="write JSON here instead of stdout")
    p.add_argument("--trace", help="write per-step JSONL trace here")
    p.add_argument("--timing", action="store_true",
                   help="include wall time in the output")
    p.add_argument("--sizes", type=int, nargs="+", default=[8, 15, 29],
                   help="grid side lengths for bench mode")
    p.add_argument("-k", type=int, default=4,
                   help="reweight sparsity for bench mode")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.mode == "bench":
            return run_bench(args)
        if not args.input:
            print("error: --input is required for %s mode" % args.mode,
                  file=sys.stderr)
            return 2
        if args.mode == "audit":
            return run_audit(args)
        return run_solve(args)
    except (ParseError, FileNotFoundError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
