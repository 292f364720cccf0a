"""Command-line entry point.

Commands: sis, isis, fit, simulate, bench. Every artifact embeds the resolved
configuration (including the seed), so a run can be reproduced bit-for-bit
from its own output. Exit codes: 0 success, 2 validation error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, faststat, linying, penalized, screening, simgen
from .data import SweepWorkspace, load_dataset
from .errors import DataError, NumericalError

SCHEMA = "hazscreen-run/v1"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _default_threads():
    env = os.environ.get("HAZSCREEN_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _add_common(sp):
    sp.add_argument("--threads", type=int, default=None,
                    help="worker cap (default: HAZSCREEN_THREADS or all cores)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", type=str, default=None, help="output artifact path")


def _parse_subset(text, names):
    """Comma list of 1-based feature positions or header names."""
    lookup = {nm: j for j, nm in enumerate(names)}
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if tok in lookup:
            out.append(lookup[tok])
        else:
            try:
                idx = int(tok)
            except ValueError:
                raise DataError(f"unknown feature {tok!r}")
            if not 1 <= idx <= len(names):
                raise DataError(f"feature position {idx} out of range 1..{len(names)}")
            out.append(idx - 1)
    if not out:
        raise DataError("empty subset")
    return out


def build_parser():
    ap = argparse.ArgumentParser(
        prog="hazscreen",
        description="Variable screening and additive-hazards model selection "
                    "for right-censored survival data")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("sis", help="rank features by a scaled statistic")
    sp.add_argument("--input", required=True)
    sp.add_argument("--format", default="auto", choices=["auto", "csv", "bin"])
    sp.add_argument("--variant", default="vanilla",
                    choices=list(faststat.VARIANTS))
    sp.add_argument("--top-k", type=int, default=None)
    sp.add_argument("--threshold", type=float, default=None)
    sp.add_argument("--literal-loss", action="store_true",
                    help="use the d/sqrt(B) form of the loss scaling")
    _add_common(sp)

    sp = sub.add_parser("isis", help="iterated screening with OS-SCAD selection")
    sp.add_argument("--input", required=True)
    sp.add_argument("--format", default="auto", choices=["auto", "csv", "bin"])
    sp.add_argument("--variant", default="ly",
                    choices=["ly", "z", "loss"],
                    help="ly: adjusted coefficients, z: adjusted |Z|, "
                         "loss: loss decrease")
    sp.add_argument("--d", type=int, default=None,
                    help="screening size (default floor(n/log n))")
    sp.add_argument("--rmax", type=int, default=5)
    sp.add_argument("--tuner", default="pbic", choices=["pbic", "cv"])
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--scad-a", type=float, default=3.7)
    sp.add_argument("--lambda-min-ratio", type=float, default=penalized.LAMBDA_MIN_RATIO)
    sp.add_argument("--kr-literal", action="store_true",
                    help="refill d - |recruited| instead of d - |selected|")
    sp.add_argument("--trace-scores", action="store_true",
                    help="include per-iteration re-recruitment scores in the artifact")
    _add_common(sp)

    sp = sub.add_parser("fit", help="fit a feature subset, optionally penalized")
    sp.add_argument("--input", required=True)
    sp.add_argument("--format", default="auto", choices=["auto", "csv", "bin"])
    sp.add_argument("--subset", required=True,
                    help="comma list of 1-based feature positions or names")
    sp.add_argument("--penalty", default="none",
                    choices=["none", "lasso", "adaptive_lasso", "os_scad"])
    sp.add_argument("--tuner", default="pbic", choices=["pbic", "cv"])
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--scad-a", type=float, default=3.7)
    sp.add_argument("--lambda-min-ratio", type=float, default=penalized.LAMBDA_MIN_RATIO)
    _add_common(sp)

    sp = sub.add_parser("simulate", help="run a benchmark protocol")
    sp.add_argument("--protocol", required=True,
                    choices=["table1", "table2", "table3"])
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--p", type=int, default=None)
    sp.add_argument("--reps", type=int, default=None)
    sp.add_argument("--links", nargs="+", default=None, choices=list(simgen.LINKS))
    sp.add_argument("--rhos", nargs="+", type=float, default=None)
    sp.add_argument("--s", nargs="+", type=int, default=None, dest="sparsities")
    sp.add_argument("--dists", nargs="+", default=None,
                    choices=list(simgen.FACTOR_DISTS))
    sp.add_argument("--ks", nargs="+", type=float, default=None)
    sp.add_argument("--case", nargs="+", default=None, dest="cases",
                    choices=list(simgen.CASES))
    sp.add_argument("--variants", nargs="+", default=None)
    sp.add_argument("--d", type=int, default=None)
    sp.add_argument("--rmax", type=int, default=5)
    sp.add_argument("--tuner", default="pbic", choices=["pbic", "cv"])
    sp.add_argument("--folds", type=int, default=5)
    sp.add_argument("--full-scale", action="store_true")
    sp.add_argument("--external-rankings", default=None,
                    help="JSON file of externally computed rankings to score")
    sp.add_argument("--dump-data", default=None,
                    help="directory to write per-replicate datasets")
    sp.add_argument("--dump-format", default="csv", choices=["csv", "bin"])
    _add_common(sp)

    sp = sub.add_parser("bench", help="time the one-pass statistic")
    sp.add_argument("--n", type=int, default=300)
    sp.add_argument("--p", type=int, default=20000)
    sp.add_argument("--reps", type=int, default=3)
    _add_common(sp)

    return ap


def _cmd_sis(args):
    ds = load_dataset(args.input, fmt=args.format)
    res = screening.sis(ds, variant=args.variant, top_k=args.top_k,
                        threshold=args.threshold,
                        literal_loss=args.literal_loss)
    out = args.out or "sis_ranking.csv"
    with open(out, "w") as fh:
        fh.write("rank,feature,score\n")
        for r, j in enumerate(res.kept, start=1):
            fh.write(f"{r},{ds.names[j]},{float(res.scores[j])!r}\n")
    config = {"command": "sis", "input": args.input, "variant": args.variant,
              "top_k": args.top_k, "threshold": args.threshold,
              "literal_loss": args.literal_loss, "seed": args.seed,
              "threads": args.threads or _default_threads()}
    _write_json(out + ".run.json", {
        "schema": SCHEMA, "config": config,
        "kept": res.kept, "kept_names": [ds.names[j] for j in res.kept],
        "scores": res.scores[res.kept]})
    print(f"kept {res.kept.size} of {ds.p} features -> {out}")
    return 0


def _cmd_isis(args):
    ds = load_dataset(args.input, fmt=args.format)
    variant = {"ly": "ly_coef", "z": "zstat", "loss": "loss_drop"}[args.variant]
    trace = screening.isis(ds, variant=variant, d=args.d, r_max=args.rmax,
                           tuner=args.tuner, cv_folds=args.folds,
                           seed=args.seed, kr_literal=args.kr_literal,
                           scad_a=args.scad_a,
                           lambda_min_ratio=args.lambda_min_ratio,
                           keep_scores=args.trace_scores)
    config = {"command": "isis", "input": args.input, "variant": args.variant,
              "d": trace.d, "rmax": args.rmax, "tuner": args.tuner,
              "folds": args.folds, "scad_a": args.scad_a,
              "lambda_min_ratio": args.lambda_min_ratio,
              "kr_literal": args.kr_literal, "seed": args.seed,
              "threads": args.threads or _default_threads()}
    iters = []
    for it in trace.iterations:
        rec = {"recruited": it.recruited, "selected": it.selected,
               "lambda": it.lambda_hat}
        if args.trace_scores and it.scores is not None:
            rec["candidates"] = it.candidates
            rec["scores"] = it.scores
        iters.append(rec)
    out = args.out or "isis_trace.json"
    _write_json(out, {
        "schema": SCHEMA, "config": config, "k0": trace.k0,
        "iterations": iters, "final": trace.final,
        "final_names": [ds.names[j] for j in trace.final],
        "reason": trace.reason})
    print(f"final set ({trace.reason}): "
          f"{', '.join(ds.names[j] for j in trace.final) or '(empty)'} -> {out}")
    return 0


def _cmd_fit(args):
    ds = load_dataset(args.input, fmt=args.format)
    subset = _parse_subset(args.subset, ds.names)
    sm = linying.build_subset(ds, subset)
    linying.solve(sm)
    config = {"command": "fit", "input": args.input, "subset": args.subset,
              "penalty": args.penalty, "tuner": args.tuner,
              "folds": args.folds, "scad_a": args.scad_a,
              "lambda_min_ratio": args.lambda_min_ratio, "seed": args.seed,
              "threads": args.threads or _default_threads()}
    payload = {
        "schema": SCHEMA, "config": config,
        "subset": sm.subset, "names": [ds.names[j] for j in sm.subset],
        "beta": sm.beta, "se": sm.se, "z": sm.zstats, "loss": sm.loss}
    if args.penalty != "none":
        fs = faststat.compute_fast(ds)
        dbar = float(fs.d_diag.sum()) / ds.n
        pen = penalized.PenaltySpec(kind=args.penalty, a=args.scad_a,
                                    pilot=sm.beta)
        fits = penalized.fit_path(sm, pen, dbar=dbar,
                                  lambda_min_ratio=args.lambda_min_ratio)
        if args.tuner == "pbic":
            kap = penalized.kappa(sm)
            for f in fits:
                if f.converged:
                    penalized.pbic(sm, f, kappa_value=kap)
            usable = [f for f in fits if f.converged]
            if not usable:
                raise NumericalError("no converged fit on the penalty path")
            best = min(usable, key=lambda f: f.pbic)
            payload["pbic_path"] = [
                {"lambda": f.lambda_, "pbic": f.pbic, "df": int(np.count_nonzero(f.beta))}
                for f in usable]
        else:
            cv = penalized.cv_tune(ds, subset,
                                   penalized.PenaltySpec(kind=args.penalty,
                                                         a=args.scad_a),
                                   folds=args.folds, seed=args.seed, dbar=dbar)
            lambdas = np.array([f.lambda_ for f in fits])
            best = fits[int(np.flatnonzero(lambdas == cv.lambda_hat)[0])]
            if not best.converged:
                raise NumericalError("tuned fit did not converge")
            payload["cv_curve"] = {"lambdas": cv.lambdas,
                                   "mean_loss": cv.mean_loss}
        payload["penalized"] = {"lambda": best.lambda_, "beta": best.beta,
                                "active": best.active,
                                "active_names": [ds.names[j] for j in best.active],
                                "converged": best.converged}
    out = args.out or "fit.json"
    _write_json(out, payload)
    print(f"fit on {len(subset)} features, loss {sm.loss:.6g} -> {out}")
    return 0


def _cmd_simulate(args):
    threads = args.threads if args.threads is not None else _default_threads()
    report = simgen.run_protocol(
        args.protocol, n=args.n, p=args.p, replicates=args.reps,
        seed=args.seed, variants=args.variants, links=args.links,
        rhos=args.rhos, sparsities=args.sparsities, dists=args.dists,
        ks=args.ks, cases=args.cases, d=args.d, r_max=args.rmax,
        tuner=args.tuner, cv_folds=args.folds, threads=threads,
        full_scale=args.full_scale,
        external_rankings=args.external_rankings, dump_data=args.dump_data,
        dump_format=args.dump_format)
    out = args.out or "report.json"
    _write_json(out, report)
    _print_report(report)
    print(f"report -> {out}")
    return 0


def _print_report(report):
    print(f"protocol {report['protocol']}:")
    for cell in report["cells"]:
        desc = cell["key"]
        parts = []
        for name, m in cell["metrics"].items():
            if "mmms" in m:
                parts.append(f"{name}: MMMS {m['mmms']:g} (RSD {m['rsd']:.2g})")
            else:
                parts.append(f"{name}: TP {m['avg_true_positives']:.2f} "
                             f"size {m['avg_model_size']:.2f}")
        if "sis_mmms" in cell:
            parts.append(f"SIS MMMS {cell['sis_mmms']:g}")
        print(f"  {desc}: " + "; ".join(parts))


def _cmd_bench(args):
    res = simgen.bench_compute_fast(n=args.n, p=args.p, reps=args.reps,
                                    seed=args.seed)
    print(f"compute_fast n={res['n']} p={res['p']}: best "
          f"{res['best'] * 1e3:.1f} ms "
          f"({res['features_per_second']:.3g} features/s)")
    return 0


_COMMANDS = {"sis": _cmd_sis, "isis": _cmd_isis, "fit": _cmd_fit,
             "simulate": _cmd_simulate, "bench": _cmd_bench}


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
