"""``isvd`` command line.

Subcommands::

    isvd init DATASET --k K --out STATE [--format ...] [--fraction F]
    isvd update STATE BATCH [BATCH ...] [--variant exact|gkl|rpi] [--l L] [--t T]
    isvd query STATE {left,right} INDEX
    isvd bench PLAN.json [--k K] [--phi PHI] [--method M] [--variant ...]
    isvd info STATE

With ``--json`` every command prints one JSON object per line. Exit status is
0 on success, 1 on a library error or a failed ``--verify`` check and 2 on a
usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import fcntl
import json
import os
import sys

from . import engine, evaluation, persistence
from .baselines import initial_svd
from .datasets import (DatasetSpec, load_dataset, load_ratings, random_sparse, read_batch,
                       resolve_path)
from .engine import VariantConfig
from .exceptions import ISVDError

FORMAT_ALIASES = {"mm": "matrix_market", "edges": "edge_list_tsv", "ratings": "ratings_csv"}


@contextlib.contextmanager
def state_lock(path):
    """Exclusive advisory lock on ``<path>.lock`` for the duration of a write."""
    fd = os.open(os.fspath(path) + ".lock", os.O_RDWR | os.O_CREAT, 0o644)
    try:
        fcntl.flock(fd, fcntl.LOCK_EX)
        yield
    finally:
        fcntl.flock(fd, fcntl.LOCK_UN)
        os.close(fd)


def _emit(args, record, text):
    print(json.dumps(record, sort_keys=True) if args.json else text)


def _verify(args, state):
    if not args.verify:
        return 0
    rep = engine.invariant_report(state)
    ok = engine.check_invariants(state, reset_threshold=args.reset_threshold)
    _emit(args, {"event": "verify", "ok": ok, **rep},
          f"verify: {'ok' if ok else 'FAILED'} " + " ".join(f"{k}={v}" for k, v in rep.items()))
    return 0 if ok else 1


def _variant(args, parser):
    if args.variant == "exact" and (args.l is not None or args.t is not None):
        parser.error("--l/--t only apply to --variant gkl or rpi")
    if args.variant == "gkl" and args.t is not None:
        parser.error("--t only applies to --variant rpi")
    try:
        return VariantConfig(mode=args.variant, l=args.l or 10, t=args.t or 3, seed=args.seed,
                             reset_threshold=args.reset_threshold)
    except ValueError as exc:
        parser.error(str(exc))


def cmd_init(args, parser):
    if args.undirected and args.format != "edges":
        parser.error("--undirected only applies to --format edges")
    if not 0 < args.fraction <= 1:
        parser.error("--fraction must be in (0, 1]")
    spec = DatasetSpec(FORMAT_ALIASES[args.format], args.dataset, args.undirected,
                       "item_mean_center" if args.normalize else "none")
    A = load_dataset(spec)
    m = max(1, int(round(args.fraction * A.shape[0])))
    n = max(1, int(round(args.fraction * A.shape[1])))
    T = initial_svd(A[:m, :n], args.k, seed=args.seed)
    state = engine.init(T.U, T.sigma, T.V)
    with state_lock(args.out):
        persistence.save(state, args.out)
    _emit(args, {"event": "init", "m": state.m, "n": state.n, "k": state.k,
                 "sigma": state.sigma.tolist()},
          f"initialised {state.m}x{state.n} rank-{state.k} state in {args.out}")
    return _verify(args, state)


def cmd_update(args, parser):
    cfg = _variant(args, parser)
    with state_lock(args.state):
        state = persistence.load(args.state)
        for path in args.batch:
            batch = read_batch(path)
            engine.apply_batch(state, batch, cfg)
            _emit(args, {"event": "update", "batch": path, "kind": batch.kind, "m": state.m,
                         "n": state.n, "update_count": state.update_count,
                         "reset_count": state.reset_count},
                  f"{batch.kind} from {path}: now {state.m}x{state.n}, "
                  f"{state.update_count} updates, {state.reset_count} resets")
        persistence.save(state, args.state)
    return _verify(args, state)


def cmd_query(args, parser):
    state = persistence.load(args.state)
    fn = engine.query_left if args.side == "left" else engine.query_right
    row, sigma = fn(state, args.index)
    _emit(args, {"side": args.side, "index": args.index, "row": row.tolist(),
                 "sigma": sigma.tolist()},
          "row   " + " ".join(f"{v:.17g}" for v in row) + "\n"
          + "sigma " + " ".join(f"{v:.17g}" for v in sigma))
    return 0


def cmd_info(args, parser):
    state = persistence.load(args.state)
    rep = engine.invariant_report(state)
    rec = {"m": state.m, "n": state.n, "k": state.k, "update_count": state.update_count,
           "reset_count": state.reset_count, **rep}
    _emit(args, rec, "\n".join(f"{k}: {v}" for k, v in rec.items()))
    return 0


def _bench_data(plan_doc, task):
    if "synthetic" in plan_doc:
        g = plan_doc["synthetic"]
        return random_sparse(g["m"], g["n"], g["density"], g.get("seed", 0))
    ds = plan_doc.get("dataset")
    if ds is None:
        raise ISVDError("plan needs a 'dataset' or 'synthetic' section")
    fmt = FORMAT_ALIASES.get(ds["format"], ds["format"])
    if task == "collab_filtering":
        return load_ratings(resolve_path(ds["path"]))
    return load_dataset(DatasetSpec(fmt, ds["path"], ds.get("undirected", False)))


def cmd_bench(args, parser):
    with open(args.plan) as fh:
        doc = json.load(fh)
    fields = {k: v for k, v in doc.items() if k not in ("dataset", "synthetic")}
    if args.k is not None:
        fields["k"] = args.k
    if args.phi is not None:
        fields["phi"] = args.phi
    if args.method is not None:
        fields["method"] = args.method
    variant = dict(fields.get("variant", {}))
    if args.variant is not None:
        variant["mode"] = args.variant
    for flag, key in ((args.l, "l"), (args.t, "t"), (args.seed_given, "seed")):
        if flag is not None:
            variant[key] = flag
    if args.reset_threshold_given is not None:
        variant["reset_threshold"] = args.reset_threshold_given
    fields["variant"] = VariantConfig(**variant)
    plan = evaluation.ExperimentPlan.from_dict(fields)
    report = evaluation.run_streaming(plan, _bench_data(doc, plan.task))
    print(report.to_json() if args.json else evaluation.format_table([report]))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="isvd", description="Incremental truncated SVD of "
                                "sparse, growing matrices.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp_):
        sp_.add_argument("--json", action="store_true", help="line-delimited JSON output")
        sp_.add_argument("--verify", action="store_true",
                         help="check state invariants; exit 1 if any fails")
        sp_.add_argument("--reset-threshold", type=float, default=1e8)

    def variant_flags(sp_, defaults=True):
        sp_.add_argument("--variant", choices=engine.MODES, default="exact" if defaults else None)
        sp_.add_argument("--l", type=int, default=None, help="approximate basis size (10)")
        sp_.add_argument("--t", type=int, default=None, help="power iterations for rpi (3)")

    s = sub.add_parser("init", help="factorize a dataset into a new state file")
    s.add_argument("dataset")
    s.add_argument("--format", choices=sorted(FORMAT_ALIASES), default="mm")
    s.add_argument("--undirected", action="store_true")
    s.add_argument("--normalize", action="store_true", help="centre ratings by item mean")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--fraction", type=float, default=1.0,
                   help="use the leading fraction of rows and columns")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    common(s)
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("update", help="apply batch files to a state file")
    s.add_argument("state")
    s.add_argument("batch", nargs="+")
    s.add_argument("--seed", type=int, default=0)
    variant_flags(s)
    common(s)
    s.set_defaults(func=cmd_update)

    s = sub.add_parser("query", help="print one singular-vector row and sigma")
    s.add_argument("state")
    s.add_argument("side", choices=("left", "right"))
    s.add_argument("index", type=int)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_query)

    s = sub.add_parser("info", help="print state dimensions and invariant checks")
    s.add_argument("state")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_info)

    s = sub.add_parser("bench", help="run an experiment plan and report metrics")
    s.add_argument("plan")
    s.add_argument("--k", type=int)
    s.add_argument("--phi", type=int)
    s.add_argument("--method", choices=evaluation.METHODS)
    s.add_argument("--seed", dest="seed_given", type=int)
    s.add_argument("--reset-threshold", dest="reset_threshold_given", type=float)
    s.add_argument("--json", action="store_true")
    variant_flags(s, defaults=False)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except ISVDError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
