"""Command line interface: gen, solve, train, eval, check.

Exit codes: 0 success, 1 internal error, 2 bad input.  Every run prints its
resolved configuration.  All numeric outputs are deterministic for fixed
(inputs, flags, seed); wall-clock columns are informational only.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, dual, net
from .bank import build_bank
from .check import default_suites
from .model import (
    InfeasibleError,
    ParseError,
    decompose,
    enumerate_optimum,
    generate_independent_set,
    load_instance,
    to_json,
)
from .train import (
    TrainConfig,
    compute_metrics,
    evaluate_instance,
    inference,
    train,
    zero_nets,
)


class CliError(Exception):
    def __init__(self, message: str, code: int = 2):
        super().__init__(message)
        self.code = code


def _echo_config(args: argparse.Namespace) -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print(f"config: {json.dumps(resolved, default=str)}")


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    try:
        import numba
        numba.set_num_threads(max(1, n))
    except Exception:
        pass  # sequential kernels; the flag must not change results anyway


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"n": args.n, "p": args.p, "count": args.count,
                "seed": args.seed, "files": []}
    for k in range(args.count):
        seed = args.seed + k
        inst = generate_independent_set(args.n, args.p, seed)
        if inst.num_constraints == 0:
            print(f"note: instance {k} has zero constraints")
        name = f"is_n{args.n}_p{args.p:g}_s{seed}.json"
        (out_dir / name).write_text(to_json(inst), encoding="utf-8")
        manifest["files"].append({"file": name, "seed": seed,
                                  "constraints": inst.num_constraints})
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {args.count} instance(s) to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def _load(path: str):
    try:
        return load_instance(path)
    except FileNotFoundError as exc:
        raise CliError(f"no such file: {path}") from exc
    except (ParseError, InfeasibleError) as exc:
        raise CliError(str(exc)) from exc


def cmd_solve(args) -> int:
    inst = _load(args.instance)
    dec = decompose(inst)
    try:
        bank = build_bank(inst, dec)
    except InfeasibleError as exc:
        raise CliError(f"infeasible constraint: {exc}") from exc
    state = dual.init_dual(bank)
    if args.alpha == "uniform":
        alpha = dual.default_params(bank).alpha
    else:
        try:
            values = json.loads(Path(args.alpha).read_text(encoding="utf-8"))
            alpha = np.asarray(values, dtype=np.float64)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot read alpha file: {exc}") from exc
        if alpha.shape != (bank.num_edges,):
            raise CliError(f"alpha file must hold {bank.num_edges} values")
    omega = np.full(bank.num_edges, args.omega)
    try:
        params = dual.SolverParams.make(bank, alpha, omega)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    records = dual.run(bank, state, params, args.max_sweeps, tol=args.tol)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            fh.write("sweep,seconds,lower_bound\n")
            for rec in records:
                fh.write(f"{rec.sweep},{rec.seconds:.6f},{rec.bound!r}\n")
    print(f"final lower bound: {records[-1].bound!r} "
          f"after {records[-1].sweep} sweep(s)")
    return 0


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------

def _dataset(paths_dir: str):
    root = Path(paths_dir)
    if not root.is_dir():
        raise CliError(f"not a directory: {paths_dir}")
    files = sorted(p for p in root.iterdir()
                   if p.suffix in (".json", ".lp") and p.name != "manifest.json")
    if not files:
        raise CliError(f"no instances in {paths_dir}")
    return [(p.name, _load(str(p))) for p in files]


def cmd_train(args) -> int:
    data = _dataset(args.data)
    try:
        config = TrainConfig(rounds=args.rounds, sweeps=args.sweeps, lr=args.lr,
                             batch_size=args.batch, iters=args.iters,
                             seed=args.seed, arch=args.arch)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    log_rows: list[str] = ["iteration,loss,grad_norm,stage,sampled_rounds"]

    def progress(row):
        log_rows.append(f"{row.iteration},{row.loss!r},{row.grad_norm!r},"
                        f"{row.stage},{row.sampled_rounds}")
        if row.iteration % 50 == 0:
            print(f"iter {row.iteration}: loss {row.loss:.6f} "
                  f"({row.stage}, r={row.sampled_rounds})")

    early, late, _ = train([inst for _, inst in data], config, progress=progress)
    net.save_weights(args.out, early, late,
                     meta={"arch": args.arch, "seed": args.seed,
                           "iters": args.iters, "rounds": args.rounds,
                           "sweeps": args.sweeps, "lr": args.lr,
                           "batch": args.batch})
    if args.log:
        Path(args.log).write_text("\n".join(log_rows) + "\n", encoding="utf-8")
    print(f"saved weights to {args.out}")
    return 0


def cmd_eval(args) -> int:
    data = _dataset(args.data)
    if args.weights:
        try:
            early, late, meta = net.load_weights(args.weights)
        except (OSError, ValueError) as exc:
            raise CliError(f"cannot load weights: {exc}") from exc
        arch = meta.get("arch", early.arch)
    else:
        arch = args.arch
        early, late = zero_nets(arch)
    try:
        config = TrainConfig(rounds=args.rounds, sweeps=args.sweeps,
                             seed=args.seed, arch=arch)
    except ValueError as exc:
        raise CliError(str(exc)) from exc

    rows = []
    sums = np.zeros(3)
    for name, inst in data:
        metrics, _ = evaluate_instance(inst, early, late, config,
                                       warmup_rounds=args.warmup)
        rows.append((name, metrics.best_bound, metrics.t_best,
                     metrics.gap_integral))
        sums += (metrics.gap_integral, metrics.best_bound, metrics.t_best)
    lines = ["instance,E,t_best,g_I"]
    for name, best, t_best, g_int in rows:
        lines.append(f"{name},{best!r},{t_best!r},{g_int!r}")
    k = len(rows)
    lines.append(f"MEAN,{sums[1] / k!r},{sums[2] / k!r},{sums[0] / k!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


# ---------------------------------------------------------------------------
# check
# ---------------------------------------------------------------------------

def cmd_check(args) -> int:
    results = default_suites(quick=args.quick)
    width = max(len(r.name) for r in results)
    failed = 0
    for r in results:
        mark = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {mark}  {r.detail}")
        failed += 0 if r.passed else 1
    if failed:
        print(f"{failed} suite(s) failed")
        return 1
    print("all suites passed")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="minmarg",
        description="Lagrange-decomposition dual solver for 0-1 ILPs with "
                    "learned update steps")
    parser.add_argument("--version", action="version",
                        version=f"minmarg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate independent-set instances")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--p", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("solve", help="run the non-learned dual solver")
    p.add_argument("instance")
    p.add_argument("--max-sweeps", type=int, default=200)
    p.add_argument("--omega", type=float, default=0.5)
    p.add_argument("--alpha", default="uniform",
                   help="'uniform' or a JSON file with one weight per dual variable")
    p.add_argument("--tol", type=float, default=0.0,
                   help="stop when per-sweep improvement <= tol*(1+|bound|)")
    p.add_argument("--log", help="write convergence CSV here")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", help="train the update predictor")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", choices=["doge", "doge-m"], default="doge")
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--sweeps", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="write training CSV here")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate weights on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", help="weights file (omit for the zero baseline)")
    p.add_argument("--arch", choices=["doge", "doge-m"], default="doge")
    p.add_argument("--rounds", type=int, default=20)
    p.add_argument("--sweeps", type=int, default=20)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write per-instance CSV here")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("check", help="run the invariant and gradient suites")
    p.add_argument("--quick", action="store_true")
    p.set_defaults(func=cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _echo_config(args)
    _set_threads(getattr(args, "threads", None))
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:  # pragma: no cover - internal failure path
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
