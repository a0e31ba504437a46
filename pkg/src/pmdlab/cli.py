"""Command-line surface: exact pmf queries, TV between files, structural
decomposition, the learners, and cover manifests.

Every command is a pure function of its input files, flags and seed, and
emits byte-identical output on repeated runs. Exit codes: 0 success, 2
malformed input or flags, 3 lattice support-cap overflow, 4 execution-cap
overflow (theory-sized constants or cover streams past the cap).
"""
import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .core import (
    DecompositionConfig,
    GaussianPlusSparseHypothesis,
    ParamMatrix,
    SupportCapError,
    pmd_pmf_exact,
    tv_distance,
)
from .covers import (
    GridSpec,
    grid_cover_gaussian,
    grid_cover_sparse_pmd,
    manifest_lines,
    moment_matching_cover,
)
from .decomposition import decompose
from .learn import LearnConfig, learn_pmd, learn_siirv
from .selection import TOURNAMENT_FAILURE

SCHEMA = io.SCHEMA
STRICT_SEED_ENV = "PMDLAB_STRICT_SEED"

# decompositions with theory-sized bucket constants cannot run on a desk;
# anything past this bucket size is reporting-only
THEORY_T_CAP = 1e5
DEFAULT_COVER_CAP = 100_000


class CliError(Exception):
    """Carries the exit code for a user-facing failure."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _emit(doc, as_json: bool, human: str):
    if as_json:
        print(json.dumps(doc, sort_keys=True))
    else:
        print(human)


def _sig12(x: float) -> float:
    return float(f"{float(x):.12g}")


def _parse_point(text: str, k: int):
    try:
        vals = tuple(int(p.strip()) for p in text.split(","))
    except ValueError:
        raise CliError(2, f"point {text!r} is not a comma-separated "
                          "integer tuple")
    if len(vals) != k:
        raise CliError(2, f"point has {len(vals)} coordinates, matrix has "
                          f"k={k}")
    return vals


def _load_matrix(path) -> ParamMatrix:
    try:
        return io.param_matrix_from_json(io.load_json(path))
    except (OSError, json.JSONDecodeError, io.FormatError, ValueError) as e:
        raise CliError(2, f"cannot read parameter matrix {path}: {e}")


def _materialize(obj):
    return pmd_pmf_exact(obj) if isinstance(obj, ParamMatrix) else obj


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_pmf(args) -> int:
    pm = _load_matrix(args.matrix)
    point = _parse_point(args.point, pm.k)
    table = pmd_pmf_exact(pm)
    p = _sig12(table.table.get(point, 0.0))
    _emit({"schema": SCHEMA, "point": list(point), "pmf": p},
          args.json, f"{p:.12g}")
    return 0


def cmd_tv(args) -> int:
    def load(path):
        try:
            return io.load_distribution(path)
        except (OSError, json.JSONDecodeError, io.FormatError,
                ValueError) as e:
            raise CliError(2, f"cannot read distribution {path}: {e}")

    try:
        tv = tv_distance(_materialize(load(args.a)), _materialize(load(args.b)))
    except SupportCapError:
        raise
    except ValueError as e:
        raise CliError(2, str(e))
    tv = _sig12(tv)
    _emit({"schema": SCHEMA, "tv": tv}, args.json, f"{tv:.12g}")
    return 0


def _decompose_config(args, k: int) -> DecompositionConfig:
    if args.theory:
        if args.epsilon is None:
            raise CliError(2, "--theory requires --epsilon")
        return DecompositionConfig.theory(k, args.epsilon)
    if args.c is None or args.t is None:
        raise CliError(2, "need --c and --t (or --theory --epsilon)")
    try:
        return DecompositionConfig(c=args.c, t=args.t, gamma=args.gamma)
    except ValueError as e:
        raise CliError(2, str(e))


def cmd_decompose(args) -> int:
    pm = _load_matrix(args.matrix)
    cfg = _decompose_config(args, pm.k)
    cfg_doc = {"c": cfg.c, "t": cfg.t, "gamma": cfg.gamma,
               "theory_mode": cfg.theory_mode}
    if args.dry_run:
        _emit({"schema": SCHEMA, "config": cfg_doc, "ran": False},
              args.json,
              f"c={cfg.c:.6g} t={cfg.t:.6g} gamma={cfg.gamma:.6g} (dry run)")
        return 0
    if cfg.t > THEORY_T_CAP:
        print(f"bucket size t={cfg.t:.3e} exceeds the execution cap "
              f"{THEORY_T_CAP:.0e}; rerun with --dry-run to print the "
              "constants", file=sys.stderr)
        return 4
    try:
        sd, ledger = decompose(pm, cfg)
    except ValueError as e:
        raise CliError(2, str(e))
    doc = {
        "schema": SCHEMA,
        "config": cfg_doc,
        "decomposition": io.decomposition_to_json(sd),
        "ledger": ledger.as_dict(),
        "ran": True,
    }
    if not args.skip_measure:
        hybrid = GaussianPlusSparseHypothesis(sd).support_pmf()
        doc["measured_tv"] = _sig12(tv_distance(pmd_pmf_exact(pm), hybrid))
    if args.out:
        io.dump_json(doc, args.out)
    blocks = len(sd.gaussian.blocks)
    tv_txt = f" tv={doc['measured_tv']:.6g}" if "measured_tv" in doc else ""
    _emit(doc, args.json,
          f"blocks={blocks} sparse_rows={sd.sparse.n} "
          f"ledger_total={ledger.total:.6g}{tv_txt}")
    return 0


def _file_oracle(samples: np.ndarray, path):
    state = {"used": 0}

    def oracle(m):
        lo = state["used"]
        hi = lo + int(m)
        if hi > samples.shape[0]:
            raise CliError(2, f"sample file {path} exhausted: the run needs "
                           f"more than the {samples.shape[0]} points provided")
        state["used"] = hi
        out = samples[lo:hi]
        return out

    return oracle, state


def cmd_learn(args) -> int:
    if args.seed is None:
        if os.environ.get(STRICT_SEED_ENV) == "1":
            raise CliError(2, f"{STRICT_SEED_ENV}=1 requires an explicit "
                              "--seed")
        args.seed = 0
    if args.k is None:
        raise CliError(2, "--k is required")
    try:
        samples = io.load_samples_csv(args.samples)
    except (OSError, ValueError) as e:
        raise CliError(2, f"cannot read samples {args.samples}: {e}")
    try:
        cfg = LearnConfig(eps=args.epsilon, delta=args.delta)
    except ValueError as e:
        raise CliError(2, str(e))

    rng = np.random.default_rng(args.seed)
    log = {}
    if args.kind == "pmd":
        if samples.ndim != 2 or samples.shape[1] != args.k:
            raise CliError(2, f"pmd samples must have k={args.k} columns, "
                           f"file has shape {samples.shape}")
        oracle, state = _file_oracle(samples, args.samples)
        winner = learn_pmd(oracle, args.k, cfg, rng=rng, log=log)
        sample_counts = {"first": 1, "moments": log["moment_draws"],
                         "tournament": log.get("tournament", {}).get(
                             "x_draws", 0),
                         "total": state["used"]}
        guess_counts = {"structures": len(log["structures"]),
                        "assembled": log["assembled"],
                        "mean_pruned": log["mean_pruned"],
                        "invalid_dropped": log["invalid_dropped"]}
    else:
        flat = samples[:, 0] if samples.ndim == 2 else samples
        if samples.ndim == 2 and samples.shape[1] != 1:
            raise CliError(2, "siirv samples must be one integer per line")
        oracle, state = _file_oracle(flat, args.samples)
        winner = learn_siirv(oracle, args.k, args.epsilon, args.delta,
                             rng=rng, log=log)
        sample_counts = {"learn": log["learn_draws"],
                         "tournament": log["tournament_draws"],
                         "total": state["used"]}
        guess_counts = {"hypotheses": log["tournament"]["n_hypotheses"],
                        "sparse_candidates": log["sparse"]["candidates"]}

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tournament_path = out_dir / "tournament.json"
    io.dump_json(json.loads(json.dumps(log, default=float)),
                 tournament_path)

    failed = winner is TOURNAMENT_FAILURE
    report = {
        "schema": SCHEMA,
        "kind": args.kind,
        "k": args.k,
        "epsilon": args.epsilon,
        "delta": args.delta,
        "seed": args.seed,
        "failure": failed,
        "sample_counts": sample_counts,
        "guess_counts": guess_counts,
        "tournament_log": str(tournament_path),
    }
    if not failed:
        io.dump_json(io.hypothesis_to_json(winner),
                     out_dir / "hypothesis.json")
        report["hypothesis"] = str(out_dir / "hypothesis.json")
        if args.truth:
            truth = _materialize(io.load_distribution(args.truth))
            report["tv_vs_truth"] = _sig12(
                tv_distance(winner.support_pmf(), truth))
    io.dump_json(report, out_dir / "report.json")

    human = "learn failed: no hypothesis survived" if failed else \
        f"winner: {winner.describe()}"
    if "tv_vs_truth" in report:
        human += f"\ntv vs truth: {report['tv_vs_truth']:.6g}"
    _emit(report, args.json, human)
    return 0


def _cover_elements(args):
    if args.kind in ("grid-pmd", "moment-match"):
        if args.n is None or args.k is None:
            raise CliError(2, "--n and --k are required")
        try:
            base = grid_cover_sparse_pmd(args.n, args.k, args.granularity)
        except ValueError as e:
            raise CliError(2, str(e))
        if not args.up_to:
            base = (pm for pm in base if pm.n == args.n)
        if args.kind == "moment-match":
            return moment_matching_cover(base, args.w)
        return base
    # grid-gauss
    if args.n is None or args.k is None:
        raise CliError(2, "--n and --k are required")
    spec = GridSpec(param_granularity=args.granularity,
                    mean_side=args.mean_side,
                    chol_granularity=args.chol_granularity)
    return grid_cover_gaussian(args.n, args.k, spec)


def cmd_cover(args) -> int:
    count = 0
    for line in manifest_lines(_cover_elements(args)):
        count += 1
        if count > args.cap:
            print(f"cover stream exceeded the cap of {args.cap} elements",
                  file=sys.stderr)
            return 4
        print(line)
    print(json.dumps({"schema": SCHEMA, "count": count}, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pmdlab",
        description="Exact lattice sums of categorical variables: pmf "
                    "queries, decompositions, covers and learners.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pmf", help="exact pmf of a parameter matrix at a "
                                   "lattice point")
    p.add_argument("matrix", help="parameter-matrix JSON file")
    p.add_argument("--point", required=True,
                   help="comma-separated integer coordinates")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_pmf)

    p = sub.add_parser("tv", help="total variation between two files "
                                  "(matrix or pmf)")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_tv)

    p = sub.add_parser("decompose", help="Gaussian-plus-sparse form of a "
                                         "parameter matrix")
    p.add_argument("matrix")
    p.add_argument("--c", type=float, help="parameter floor")
    p.add_argument("--t", type=float, help="base bucket size")
    p.add_argument("--gamma", type=float, default=6.5,
                   help="bucket growth exponent (> 6)")
    p.add_argument("--theory", action="store_true",
                   help="use the asymptotic constants for --epsilon")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--dry-run", action="store_true",
                   help="print the constants without running")
    p.add_argument("--skip-measure", action="store_true",
                   help="skip the exact TV measurement")
    p.add_argument("--out", help="write the result JSON here as well")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("learn", help="fit a hypothesis to a CSV of samples")
    p.add_argument("samples", help="CSV, one lattice point per line")
    p.add_argument("--kind", choices=("pmd", "siirv"), required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--truth", help="matrix or pmf JSON; report tv against it")
    p.add_argument("--out", default=".",
                   help="directory for hypothesis/report/tournament JSON")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("cover", help="stream a cover manifest as JSON lines")
    p.add_argument("--kind", choices=("grid-pmd", "grid-gauss",
                                      "moment-match"), required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--granularity", type=float, default=0.5)
    p.add_argument("--w", type=int, default=3,
                   help="moment order for --kind moment-match")
    p.add_argument("--mean-side", type=float, default=1.0)
    p.add_argument("--chol-granularity", type=float, default=1.0)
    p.add_argument("--up-to", action="store_true",
                   help="include matrices with fewer than --n rows")
    p.add_argument("--cap", type=int, default=DEFAULT_COVER_CAP)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_cover)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except SupportCapError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
