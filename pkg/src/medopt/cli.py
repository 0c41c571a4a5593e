"""medopt command line: solve, oracle, eval, gen, bench."""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .encoders import (_fmt, encode_nf_correlated, encode_sequential_auction,
                       fixed_mechanism, parse_mechanism)
from .game import GameError, dump_game, load_game
from .mediator import MediatorAugmentedGame
from .oracle import LPError, solve_lp
from .regret import ALGOS, ALIASES
from .solvers import (BudgetExhausted, certify, free_item_rate, resolve_lambda, solve_binary_search,
                      solve_direct)

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET, EXIT_INVARIANT = 0, 2, 3, 4
TRACE_COLUMNS = ("iter", "lambda_or_tau", "objective", "max_dev_gain", "saddle_gap",
                 "last_iter_gap", "wall_ms")


class ConfigError(Exception):
    pass


def _source_args(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--gen", help="generator spec, e.g. auction:R=2,V=5,B=1 or randnf:seed=7,p=2,a=3")
    src.add_argument("--game", help="game file (EFG, auction or normal-form document)")
    p.add_argument("--concept", default="ce", choices=("ce", "cce"))
    p.add_argument("--objective", default="welfare", help="welfare or p<i>")


def _output_args(p):
    p.add_argument("--out", default=None, help="output directory (default: no files)")
    p.add_argument("--threads", type=int, default=None,
                   help="thread count (also MEDOPT_THREADS)")


def build_parser():
    ap = argparse.ArgumentParser(prog="medopt", description=__doc__)
    sub = ap.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("solve", help="compute an optimal equilibrium or mechanism")
    _source_args(s)
    s.add_argument("--method", default="direct", choices=("direct", "binsearch"))
    s.add_argument("--algo", default="cfr+", help=f"one of {', '.join(ALGOS + tuple(ALIASES))}")
    s.add_argument("--lambda", dest="lam", default="25", help="multiplier or schedule sqrt4/sqrt2")
    s.add_argument("--T", type=int, default=1000, help="iterations (direct)")
    s.add_argument("--eps", type=float, default=None,
                   help="precision: stopping target (direct) or bisection width (binsearch)")
    s.add_argument("--cert-eps", type=float, default=None, help="lower-certificate slack (binsearch)")
    s.add_argument("--cold-start", action="store_true",
                   help="restart the inner solver at every threshold (binsearch)")
    s.add_argument("--inner-budget", type=int, default=100_000)
    s.add_argument("--check-every", type=int, default=10)
    alt = s.add_mutually_exclusive_group()
    alt.add_argument("--alternating", dest="alternating", action="store_true", default=None)
    alt.add_argument("--simultaneous", dest="alternating", action="store_false")
    s.add_argument("--seed", type=int, default=0, help="recorded; the solvers are deterministic")
    s.add_argument("--baselines", action="store_true",
                   help="auction only: also evaluate fp, sp and reserve-price mechanisms for plot.csv")
    _output_args(s)

    o = sub.add_parser("oracle", help="exact optimum by linear programming (small games)")
    _source_args(o)
    o.add_argument("--exact", action="store_true", help="rational arithmetic")
    o.add_argument("--cap", type=int, default=10**6)
    _output_args(o)

    e = sub.add_parser("eval", help="revenue and exploitability of a fixed auction mechanism")
    _source_args(e)
    e.add_argument("--mechanism", required=True, help="fp, sp or r<p> (second price with reserve p)")
    e.add_argument("--tie-break", default="uniform", choices=("uniform", "lowest"))
    _output_args(e)

    g = sub.add_parser("gen", help="write a generated instance as an EFG document")
    g.add_argument("spec")
    g.add_argument("--concept", default="ce", choices=("ce", "cce"))
    g.add_argument("--objective", default="welfare")
    g.add_argument("-o", "--output", default=None, help="file (default stdout)")

    b = sub.add_parser("bench", help="run a benchmark suite")
    b.add_argument("suite", choices=("fig1", "traversal"))
    b.add_argument("--T", type=int, default=10_000)
    b.add_argument("--lambda", dest="lam", default="25")
    b.add_argument("--algo", default="cfr+")
    b.add_argument("--gen", default="auction:R=2,V=5,B=1")
    b.add_argument("--repeat", type=int, default=20)
    _output_args(b)
    return ap


def load_source(args):
    from .generators import generate

    if args.gen:
        return generate(args.gen, args.concept, args.objective)
    if args.game:
        try:
            doc = json.loads(Path(args.game).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read {args.game}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise GameError(f"{args.game}: parse error at line {exc.lineno} column {exc.colno}") from None
        return from_document(doc, args.concept, args.objective)
    raise ConfigError("need exactly one game source: --gen or --game")


def from_document(doc, concept="ce", objective="welfare"):
    if not isinstance(doc, dict):
        raise GameError("document must be an object")
    if "nodes" in doc:
        game = load_game(doc)
        if doc.get("direct_strategy") is not None:
            return MediatorAugmentedGame.from_game(game, {"kind": "efg"})
        return game
    if "rounds" in doc:
        return encode_sequential_auction(doc["rounds"], doc["valuations"], doc["budget"],
                                         doc.get("bidders", 2), doc.get("payment_step"),
                                         doc.get("visibility", "public"), doc.get("ir", True))
    if "utilities" in doc:
        u = np.asarray(doc["utilities"], dtype=np.float64)
        if "players" in doc and u.shape[0] != doc["players"]:
            raise GameError("tensor shape mismatch: players field disagrees with the tensor")
        return encode_nf_correlated(u, doc.get("concept", concept), doc.get("objective", objective))
    raise GameError("unrecognized document: expected an EFG, auction or normal-form spec")


def _need_mediated(M):
    if not isinstance(M, MediatorAugmentedGame):
        raise ConfigError("this verb needs a mediator-augmented game (auction, randnf, or an "
                          "EFG document with direct_strategy)")
    return M


def _threads(args):
    t = args.threads if getattr(args, "threads", None) is not None else os.environ.get("MEDOPT_THREADS")
    if t is None:
        return 1
    try:
        t = int(t)
    except ValueError:
        raise ConfigError(f"thread count must be an integer, got {t!r}") from None
    if t < 1:
        raise ConfigError("thread count must be at least 1")
    return t


def _write_json(path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    return str(x)


def _write_trace(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRACE_COLUMNS)
        for r in rows:
            w.writerow([_cell(r.get(c)) for c in TRACE_COLUMNS])


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _trace_rows(report):
    if report.method == "direct":
        return [{"iter": p.iteration, "lambda_or_tau": p.parameter,
                 "objective": p.extra.get("objective"), "max_dev_gain": p.extra.get("max_dev_gain"),
                 "saddle_gap": p.saddle_gap, "last_iter_gap": p.last_iter_gap, "wall_ms": p.wall_ms}
                for p in report.trace]
    return report.trace


def _write_plot(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("label", "revenue", "exploitability"))
        for label, rev, expl in rows:
            w.writerow((label, repr(float(rev)), repr(float(expl))))


def _is_auction(M):
    return isinstance(M, MediatorAugmentedGame) and M.metadata.get("kind") == "auction"


def evaluate_mechanism(M, label, tie_break="uniform"):
    kind, reserve = parse_mechanism(label)
    mu = fixed_mechanism(kind, M, reserve, tie_break)
    obj, gains, gap = certify(M, mu)
    return {"mechanism": label, "revenue": obj, "exploitability": float(sum(gains)),
            "per_player_gains": gains, "equilibrium_gap": gap,
            "free_item_rate": free_item_rate(M, mu)}


def baseline_labels(M):
    spec = M.metadata["spec"]
    return ["fp", "sp"] + [f"r{_fmt(p)}" for p in spec.grid[1:] if p < spec.valuations[-1]]


def cmd_solve(args):
    if args.T < 1:
        raise ConfigError("T must be at least 1")
    if args.eps is not None and not args.eps > 0:
        raise ConfigError("eps must be positive")
    M = _need_mediated(load_source(args))
    threads = _threads(args)
    try:
        lam = resolve_lambda(args.lam, args.T)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.method == "direct":
        report = solve_direct(M, args.lam if args.lam in ("sqrt4", "sqrt2") else lam, args.algo,
                              args.T, args.eps, args.alternating)
    else:
        report = solve_binary_search(M, args.eps, args.algo, args.inner_budget, args.check_every,
                                     warm_start=not args.cold_start, alternating=args.alternating,
                                     certificate_eps=args.cert_eps)
    doc = report.to_dict()
    doc.pop("wall_ms_total", None)
    doc["config"] = _config(args, threads)
    plot = None
    if _is_auction(M):
        doc["revenue"] = report.objective
        doc["exploitability"] = float(sum(report.per_player_gains))
        doc["free_item_rate"] = free_item_rate(M, report.strategy)
        doc["free_item_rate_per_item"] = free_item_rate(M, report.strategy, "item")
        plot = [("ours", report.objective, doc["exploitability"])]
        if args.baselines:
            for label in baseline_labels(M):
                r = evaluate_mechanism(M, label)
                plot.append((label, r["revenue"], r["exploitability"]))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "report.json", doc)
        _write_trace(out / "trace.csv", _trace_rows(report))
        np.save(out / "strategy.npy", report.strategy)
        np.save(out / "strategy_last.npy", report.strategy_last)
        if plot is not None:
            _write_plot(out / "plot.csv", plot)
    _print_summary(doc, ("method", "algo", "objective", "equilibrium_gap", "saddle_gap",
                         "iterations", "free_item_rate"))
    return EXIT_OK


def _config(args, threads):
    keys = ("verb", "gen", "game", "concept", "objective", "method", "algo", "lam", "T", "eps",
            "cert_eps", "cold_start", "inner_budget", "check_every", "alternating", "seed", "mechanism",
            "tie_break", "exact")
    cfg = {k: getattr(args, k) for k in keys if hasattr(args, k)}
    cfg["threads"] = threads
    return cfg


def _print_summary(doc, keys):
    print(json.dumps({k: doc[k] for k in keys if k in doc}, sort_keys=True, default=_jsonable))


def cmd_oracle(args):
    M = _need_mediated(load_source(args))
    threads = _threads(args)
    res = solve_lp(M, exact=args.exact, cap=args.cap)
    obj, gains, gap = certify(M, res.mu) if res.representation == "sequence-form" else (res.value, [], 0.0)
    doc = res.to_dict()
    doc.update(v_star=res.value, objective_check=obj, equilibrium_gap=gap,
               config=_config(args, threads))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "report.json", doc)
        np.save(out / "strategy.npy", res.mu)
    _print_summary(doc, ("v_star", "critical_lambda", "num_constraints", "representation"))
    return EXIT_OK


def cmd_eval(args):
    M = _need_mediated(load_source(args))
    if not _is_auction(M):
        raise ConfigError("eval needs an auction game")
    threads = _threads(args)
    doc = evaluate_mechanism(M, args.mechanism, args.tie_break)
    doc["config"] = _config(args, threads)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "report.json", doc)
        _write_plot(out / "plot.csv", [(args.mechanism, doc["revenue"], doc["exploitability"])])
    _print_summary(doc, ("mechanism", "revenue", "exploitability", "free_item_rate"))
    return EXIT_OK


def cmd_gen(args):
    from .generators import generate

    out = generate(args.spec, args.concept, args.objective)
    game = out.game if isinstance(out, MediatorAugmentedGame) else out
    text = dump_game(game, indent=None)
    if args.output:
        Path(args.output).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")
    return EXIT_OK


def cmd_bench(args):
    from .generators import generate

    _threads(args)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    if args.suite == "fig1":
        M = generate(args.gen)
        if not _is_auction(M):
            raise ConfigError("fig1 needs an auction generator")
        rows = []
        for label in baseline_labels(M):
            r = evaluate_mechanism(M, label)
            rows.append((label, r["revenue"], r["exploitability"]))
        lam = args.lam if args.lam in ("sqrt4", "sqrt2") else float(args.lam)
        report = solve_direct(M, lam, args.algo, args.T)
        rows.insert(0, ("ours", report.objective, float(sum(report.per_player_gains))))
        for label, rev, expl in rows:
            print(f"{label:8s} revenue {rev:.4f} exploitability {expl:.4f}")
        if out:
            _write_plot(out / "plot.csv", rows)
            _write_trace(out / "trace.csv", _trace_rows(report))
        return EXIT_OK
    # traversal: utility and best-response throughput on the benchmark trees
    from .treeplex import best_response, expected_utilities

    rows = []
    for spec in ("kuhn3:r=3", "kuhn3:r=5", "sheriff:N=1,B=2,r=1", "sheriff:N=2,B=3,r=2"):
        g = generate(spec)
        prof = [g.treeplex(a).uniform() for a in range(g.num_players + 1)]
        t = time.perf_counter()
        for _ in range(args.repeat):
            expected_utilities(g, prof)
            best_response(g, 1, prof)
        ms = (time.perf_counter() - t) * 1e3 / args.repeat
        rows.append((spec, g.num_nodes, g.num_terminals, ms))
        print(f"{spec:24s} nodes {g.num_nodes:8d} terminals {g.num_terminals:8d} {ms:8.3f} ms/pass")
    if out:
        with open(out / "bench.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(("instance", "nodes", "terminals", "ms_per_pass"))
            w.writerows(rows)
    return EXIT_OK


VERBS = {"solve": cmd_solve, "oracle": cmd_oracle, "eval": cmd_eval, "gen": cmd_gen,
         "bench": cmd_bench}


def _fail(args, code, kind, message, extra=None):
    doc = {"error": kind, "message": message, "exit_code": code}
    if extra:
        doc.update(extra)
    sys.stderr.write(json.dumps(doc, sort_keys=True, default=_jsonable) + "\n")
    out = getattr(args, "out", None)
    if out:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            _write_json(Path(out) / "error.json", doc)
        except OSError:
            pass
    return code


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return VERBS[args.verb](args)
    except ConfigError as exc:
        return _fail(args, EXIT_CONFIG, "config", str(exc))
    except BudgetExhausted as exc:
        return _fail(args, EXIT_BUDGET, "budget", str(exc),
                     {"bracket": list(exc.bracket), "history": exc.history})
    except (GameError, LPError) as exc:
        return _fail(args, EXIT_INVARIANT, "invariant", str(exc))
    except ValueError as exc:
        return _fail(args, EXIT_CONFIG, "config", str(exc))


if __name__ == "__main__":
    sys.exit(main())
