"""Command-line interface.

Exit status: 0 on success, 1 when a requested verification fails, 2 on bad
input or usage.  Every command is deterministic given its inputs and
``--seed``; JSON outputs carry a ``timestamp`` field that is the only
non-reproducible part.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import audit, tailbounds
from .equilibrium import EquilibriumError, certify, compute_equilibrium
from .gen import GenSpec, generate, make_rng
from .model import InstanceFormatError, read_instance, serialize_instance
from .sampler import MarginalVector, SamplerError, fit_max_entropy, sample_many
from .selection import (
    ParamSet,
    SelectionError,
    pav_exact,
    pav_score,
    select_committee,
    verify_parameters,
    with_overrides,
)

DEFAULT_SEED = 42
BENCH_COLUMNS = [
    "instance", "K", "seed", "status", "runtime_s", "committee", "ratio",
    "audit_mode", "resamples", "depth", "error",
]

log = logging.getLogger("abccore")


class UsageError(Exception):
    """Bad flags or inputs; maps to exit status 2."""


def _timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _emit(doc: dict, output: str | None) -> None:
    doc = dict(doc)
    doc["timestamp"] = _timestamp()
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if output:
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _load(path: str | None):
    if not path:
        raise UsageError("an input instance is required (-i/--input)")
    return read_instance(path)


def _parse_committee(source: str, inst) -> frozenset[int]:
    if os.path.isfile(source):
        text = Path(source).read_text().strip()
        try:
            doc = json.loads(text)
            names = doc["committee"] if isinstance(doc, dict) else doc
        except json.JSONDecodeError:
            names = [tok for tok in text.replace("\n", ",").split(",") if tok.strip()]
    else:
        names = [tok for tok in source.split(",") if tok.strip()]
    index = {c: i for i, c in enumerate(inst.candidates)}
    members = set()
    for name in names:
        name = str(name).strip()
        if name not in index:
            raise UsageError(f"unknown candidate {name!r} in committee")
        members.add(index[name])
    return frozenset(members)


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected a comma-separated integer list: {err}")


# --------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    spec = GenSpec(
        args.model, args.n, args.m, args.seed, q=args.q,
        voter_parties=tuple(args.voter_parties or ()),
        candidate_parties=tuple(args.candidate_parties or ()),
        radius=args.radius,
    )
    inst = generate(spec)
    fmt = args.format or ("json" if (args.output or "").endswith(".json") else "lines")
    text = serialize_instance(inst, fmt)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_equilibrium(args) -> int:
    inst = _load(args.input)
    try:
        eq = compute_equilibrium(inst, args.k, tol=args.tol)
    except EquilibriumError as err:
        cert = err.certificate
        doc = {"error": str(err)}
        if cert is not None and hasattr(cert, "to_dict"):
            doc["certificate"] = cert.to_dict()
        _emit(doc, args.output)
        print(f"equilibrium certification failed: {err}", file=sys.stderr)
        return 1
    doc = {
        "x": eq.alloc.x.tolist(),
        "k": eq.alloc.k,
        "method": eq.method,
        "budget": eq.prices.budget,
        "prices": eq.prices.p.tolist(),
        "report": eq.report.to_dict(),
    }
    _emit(doc, args.output)
    return 0


def _params_from(args) -> ParamSet:
    return with_overrides(
        ParamSet(),
        epsilon=getattr(args, "epsilon", None),
        base_threshold=getattr(args, "base_threshold", None),
        max_resamples=getattr(args, "max_resamples", None),
    )


def cmd_solve(args) -> int:
    inst = _load(args.input)
    if args.K is None:
        raise UsageError("solve needs -K")
    result = select_committee(inst, args.K, _params_from(args), seed=args.seed)
    doc = result.to_dict()
    status = 0
    if args.audit:
        res = _audit(inst, result.committee.members, args.K, args)
        doc["audit"] = res.to_dict(inst)
        if args.assert_lambda is not None and res.blocks(args.assert_lambda):
            status = 1
    _emit(doc, args.output)
    return status


def _audit(inst, members, K, args):
    mode = "exact"
    if getattr(args, "heuristic", False):
        mode = "heuristic"
    elif not getattr(args, "exact", False):
        cap = args.size_cap if getattr(args, "size_cap", None) else min(inst.m, K)
        if inst.m > audit.EXACT_MAX_M and cap > audit.EXACT_ANY_M_CAP:
            mode = "heuristic"
    if mode == "exact":
        return audit.stability_ratio_exact(inst, members, K, getattr(args, "size_cap", None))
    return audit.stability_ratio_heuristic(
        inst, members, K, budget=getattr(args, "budget", 8), rng=make_rng(args.seed)
    )


def cmd_verify(args) -> int:
    inst = _load(args.input)
    if not args.committee:
        raise UsageError("verify needs --committee")
    members = _parse_committee(args.committee, inst)
    K = args.K if args.K is not None else len(members)
    if K < 1:
        raise UsageError("K must be positive")
    res = _audit(inst, members, K, args)
    doc = res.to_dict(inst)
    status = 0
    if args.assert_lambda is not None:
        stable = not res.blocks(args.assert_lambda)
        doc["assert_lambda"] = args.assert_lambda
        doc["stable"] = stable
        status = 0 if stable else 1
    _emit(doc, args.output)
    return status


def cmd_pav(args) -> int:
    inst = _load(args.input)
    committee = pav_exact(inst, args.s)
    names = [inst.candidates[i] for i in committee.sorted()]
    _emit({"committee": names, "score": pav_score(inst, committee.members)}, args.output)
    return 0


def cmd_sample_sr(args) -> int:
    try:
        xp = np.asarray(json.loads(Path(args.marginals).read_text()), dtype=float)
    except (OSError, json.JSONDecodeError) as err:
        raise UsageError(f"cannot read marginals: {err}")
    kappa = args.kappa if args.kappa is not None else int(round(xp.sum()))
    try:
        mv = MarginalVector(xp, kappa)
    except ValueError as err:
        raise UsageError(str(err))
    w = fit_max_entropy(mv, tol=args.tol)
    rows = sample_many(w, kappa, make_rng(args.seed), args.count)
    out = io.StringIO()
    for row in rows:
        out.write(json.dumps(np.flatnonzero(row).tolist()) + "\n")
    if args.output:
        Path(args.output).write_text(out.getvalue())
    else:
        sys.stdout.write(out.getvalue())
    return 0


def cmd_tailcheck(args) -> int:
    pois = tailbounds.check_claim_pois(args.alpha, args.mu_max)
    doc = {"claim_pois": pois.to_dict()}
    ok = pois.ok
    if args.trials:
        rng = make_rng(args.seed)
        failures = 0
        for _ in range(args.trials):
            n = int(rng.integers(1, 26))
            p = rng.random(n)
            mu = math.floor(p.sum() / args.alpha)
            if not tailbounds.verify_main_tail(p, mu, args.alpha).ok:
                failures += 1
        doc["main_tail"] = {"trials": args.trials, "failures": failures}
        ok = ok and failures == 0
    doc["ok"] = ok
    if args.json or args.output:
        _emit(doc, args.output)
    else:
        cp = doc["claim_pois"]
        print(f"claim (alpha={args.alpha}, mu_max={args.mu_max}): "
              f"{'pass' if pois.ok else 'FAIL'}; argmax {cp['argmax']}, min margin {cp['min_margin']}")
        if args.trials:
            print(f"main tail: {doc['main_tail']['failures']} failures in {args.trials} trials")
    return 0 if ok else 1


def cmd_params(args) -> int:
    params = with_overrides(
        ParamSet(), alpha=args.alpha, eta=args.eta, gamma=args.gamma, lambda_inner=args.lambda_inner
    )
    report = verify_parameters(params, tol=args.tol)
    doc = report.to_dict()
    doc["t0"] = params.t0
    doc["certified_ratio"] = params.certified_ratio
    doc["stated_ratio"] = params.lambda_final
    _emit(doc, args.output)
    return 0 if report.ok else 1


def cmd_bench(args) -> int:
    directory = Path(args.dir)
    if not directory.is_dir():
        raise UsageError(f"{directory} is not a directory")
    files = sorted(p for p in directory.iterdir() if p.suffix in (".json", ".txt", ".lines"))
    params = _params_from(args)
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=BENCH_COLUMNS)
        writer.writeheader()
        for path in files:
            for K in args.K:
                for seed in args.seeds:
                    writer.writerow(_bench_row(path, K, seed, params))
    finally:
        if args.output:
            out.close()
    return 0


def _bench_row(path: Path, K: int, seed: int, params: ParamSet) -> dict:
    row = {c: "" for c in BENCH_COLUMNS}
    row.update(instance=path.name, K=K, seed=seed)
    start = time.perf_counter()
    try:
        inst = read_instance(str(path))
        result = select_committee(inst, K, params, seed=seed)
        runtime = time.perf_counter() - start
        members = result.committee.members
        if inst.m <= audit.EXACT_MAX_M or min(inst.m, K) <= audit.EXACT_ANY_M_CAP:
            res = audit.stability_ratio_exact(inst, members, K)
        else:
            res = audit.stability_ratio_heuristic(inst, members, K, rng=make_rng(seed))
        row.update(
            status="ok",
            runtime_s=f"{runtime:.4f}",
            committee=" ".join(result.names),
            ratio=f"{res.ratio:.6f}",
            audit_mode=res.mode,
            resamples=" ".join(str(lvl.resample_count) for lvl in result.levels
                               if lvl.resample_count is not None),
            depth=max(lvl.depth for lvl in result.levels) if result.levels else 0,
        )
    except Exception as err:  # rows record failures and the sweep continues
        row.update(status="error", runtime_s=f"{time.perf_counter() - start:.4f}", error=str(err))
    return row


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-i", "--input", help="instance file (.json or lines format)")
    common.add_argument("-o", "--output", help="output path (default: stdout)")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help="RNG seed (default 42)")
    common.add_argument("--tol", type=float, default=1e-6, help="tolerance")
    common.add_argument("--json", action="store_true", help="JSON output where text is the default")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="abccore", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="generate a random instance")
    p.add_argument("--model", required=True, choices=["impartial", "party_list", "euclidean1d"])
    p.add_argument("-n", type=int, required=True)
    p.add_argument("-m", type=int, required=True)
    p.add_argument("--q", type=float, default=0.3)
    p.add_argument("--voter-parties", type=_int_list)
    p.add_argument("--candidate-parties", type=_int_list)
    p.add_argument("--radius", type=float, default=0.15)
    p.add_argument("--format", choices=["json", "lines"])
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("equilibrium", parents=[common], help="certified Lindahl equilibrium")
    p.add_argument("-k", type=int, required=True)
    p.set_defaults(func=cmd_equilibrium)

    def selection_flags(p):
        p.add_argument("-K", type=int)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--base-threshold", type=int)
        p.add_argument("--max-resamples", type=int)

    def audit_flags(p):
        group = p.add_mutually_exclusive_group()
        group.add_argument("--exact", action="store_true")
        group.add_argument("--heuristic", action="store_true")
        p.add_argument("--size-cap", type=int)
        p.add_argument("--budget", type=int, default=8, help="heuristic restarts")
        p.add_argument("--assert-lambda", type=float)

    p = sub.add_parser("solve", parents=[common], help="select a committee")
    selection_flags(p)
    audit_flags(p)
    p.add_argument("--audit", action="store_true", help="audit the result")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", parents=[common], help="audit a committee")
    p.add_argument("--committee", help="comma-separated names or a file")
    p.add_argument("-K", type=int)
    audit_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("pav", parents=[common], help="exact PAV committee")
    p.add_argument("-s", type=int, required=True)
    p.set_defaults(func=cmd_pav)

    p = sub.add_parser("sample-sr", parents=[common], help="fixed-size max-entropy samples")
    p.add_argument("--marginals", required=True, help="JSON array of marginals")
    p.add_argument("--kappa", type=int)
    p.add_argument("--count", type=int, default=10)
    p.set_defaults(func=cmd_sample_sr, tol=1e-9)

    p = sub.add_parser("tailcheck", parents=[common], help="tail-bound verifiers")
    p.add_argument("--alpha", type=float, default=2.154564)
    p.add_argument("--mu-max", type=int, default=100)
    p.add_argument("--trials", type=int, default=0)
    p.set_defaults(func=cmd_tailcheck)

    p = sub.add_parser("params", parents=[common], help="check the ratio constraints")
    p.add_argument("--alpha", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lambda-inner", type=float)
    p.set_defaults(func=cmd_params, tol=1e-4)

    p = sub.add_parser("bench", parents=[common], help="benchmark sweep to CSV")
    p.add_argument("--dir", required=True)
    p.add_argument("-K", type=_int_list, required=True, help="comma-separated sizes")
    p.add_argument("--seeds", type=_int_list, default=[DEFAULT_SEED])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--base-threshold", type=int)
    p.add_argument("--max-resamples", type=int)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (UsageError, InstanceFormatError, FileNotFoundError, IsADirectoryError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (SelectionError, SamplerError, EquilibriumError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
