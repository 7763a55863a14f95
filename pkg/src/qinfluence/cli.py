"""Command-line entry point: ``qinfluence <command> [options]``.

Exit status is 0 on success, 1 for usage errors and 2 when the computation
itself fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (DegeneracyError, EstimationError, PipelineError, PrecisionError,
                     ResourceError, SolverError, UndefinedMetricError)
from .geometry import SceneGroundTruth, read_correspondences, read_matrix, roc_auc, synthesize_scene
from .influence import Spread1D, influence_exact, influence_quantum, influence_sampled, write_influence_csv
from .oracle import build_bv_circuit, export_circuit_text, preprocess, read_instance_file
from .pipeline import ENGINES, AccumulationConfig, evaluate_fit, fit_fundamental, ransac_baseline
from .report import FLOAT_DIGITS, build_report, dumps, true_residuals, write_point_csv

log = logging.getLogger("qinfluence")

RUNTIME_ERRORS = (ResourceError, PrecisionError, DegeneracyError, SolverError,
                  UndefinedMetricError, EstimationError, PipelineError, OSError, ValueError)

SCENE_KEYS = {"n": int, "outliers": float, "noise": float, "width": float, "height": float}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _float_list(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty value list")
    return values


def _scene_spec(text: str) -> dict:
    spec = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        key, sep, val = item.partition("=")
        if not sep or key not in SCENE_KEYS:
            raise argparse.ArgumentTypeError(f"bad scene parameter {item!r}; keys: {', '.join(SCENE_KEYS)}")
        try:
            spec[key] = SCENE_KEYS[key](val)
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad value in {item!r}")
    return spec


def _fmt(v: float) -> str:
    return f"{float(v):.{FLOAT_DIGITS}g}"


def _emit(args, document: dict, text: str) -> None:
    sys.stdout.write(dumps(document) if args.json else text)


def _csv_dir(args) -> Path | None:
    if args.csv_out is None:
        return None
    out = Path(args.csv_out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- influence1d -------------------------------------------------------------

def cmd_influence1d(args) -> int:
    n = len(args.values)
    if args.method == "exact":
        est = influence_exact(Spread1D(args.values, args.two_eps), n)
    elif args.method == "sampled":
        est = influence_sampled(Spread1D(args.values, args.two_eps), n, args.M, seed=args.seed)
    else:
        inst, perm = preprocess(args.values, args.bits, args.two_eps)
        est = influence_quantum(inst, args.M, seed=args.seed, permutation=perm, exact=args.exact_marginals)
    if (out := _csv_dir(args)) is not None:
        write_influence_csv(out / "influence.csv", est)
    doc = {
        "values": args.values, "two_epsilon": args.two_eps, "method": est.method,
        "M": est.iterations, "seed": args.seed, "influences": est.alphas,
    }
    _emit(args, doc, " ".join(_fmt(a) for a in est.alphas) + "\n")
    return 0


# -- bv-sim ------------------------------------------------------------------

def cmd_bv_sim(args) -> int:
    if args.instance is not None:
        if args.values is not None:
            raise UsageError("bv-sim: give an instance file or --values, not both")
        values, bits, two_eps = read_instance_file(args.instance)
    else:
        if args.values is None or args.two_eps is None:
            raise UsageError("bv-sim: need an instance file or --values and --two-eps")
        values, bits, two_eps = args.values, args.bits, args.two_eps
    inst, perm = preprocess(values, bits, two_eps)
    oracle = build_bv_circuit(inst, args.comparator)
    est = influence_quantum(inst, args.shots, seed=args.seed, permutation=perm, comparator=args.comparator)
    se = np.sqrt(est.alphas * (1 - est.alphas) / args.shots)
    counts = oracle.circuit.gate_counts()
    if args.export:
        Path(args.export).write_text(export_circuit_text(oracle))
    if (out := _csv_dir(args)) is not None:
        write_influence_csv(out / "influence.csv", est)
    doc = {
        "instance": {"values": list(inst.values), "bits": inst.bit_precision, "two_epsilon": inst.two_epsilon},
        "permutation": list(perm),
        "qubits": oracle.circuit.num_qubits,
        "gates": sum(counts.values()),
        "gate_counts": dict(sorted(counts.items())),
        "comparator": oracle.comparator.mode,
        "shots": args.shots, "seed": args.seed,
        "influences": est.alphas, "stderr": se,
    }
    lines = [
        f"qubits: {oracle.circuit.num_qubits}",
        f"gates: {sum(counts.values())} (" + ", ".join(f"{k} {v}" for k, v in sorted(counts.items())) + ")",
        f"comparator: {oracle.comparator.mode}",
        f"shots: {args.shots}",
        "index value influence",
    ]
    lines += [f"{i} {_fmt(v)} {a:.2f} ± {s:.2f}" for i, (v, a, s) in enumerate(zip(values, est.alphas, se))]
    _emit(args, doc, "\n".join(lines) + "\n")
    return 0


# -- fit-f -------------------------------------------------------------------

def _config(args, seed: int) -> AccumulationConfig:
    return AccumulationConfig(
        epsilon=args.epsilon, M=args.M, T=args.T, H=args.H, engine=args.engine, bits=args.bits,
        seed=seed, frame_scale=args.frame_scale, exact_marginals=args.exact_marginals,
        signed_residuals=not args.absolute_residuals,
    )


def _scene(spec: dict, seed: int):
    kw = {"num_points": spec.get("n", 100), "outlier_fraction": spec.get("outliers", 0.3),
          "noise_px": spec.get("noise", 0.5), "width": spec.get("width", 640.0),
          "height": spec.get("height", 480.0)}
    return synthesize_scene(seed=seed, **kw)


def _metrics(fit, corrs, truth_F, width, height) -> dict:
    m: dict = {}
    flags = corrs.outlier_flags
    if flags is not None and 0 < flags.sum() < flags.size:
        m["auc"] = roc_auc(fit.influences, flags)
    if truth_F is not None and width and height:
        m.update(evaluate_fit(fit.F, SceneGroundTruth(truth_F, corrs.labels, width, height)))
    return m


def cmd_fit_f(args) -> int:
    if (args.corrs is None) == (args.synthetic is None):
        raise UsageError("fit-f: give a correspondence file or --synthetic, exactly one")
    if args.synthetic is not None:
        corrs, truth = _scene(args.synthetic, args.seed)
        F_gt, width, height = truth.F, truth.width, truth.height
    else:
        corrs = read_correspondences(args.corrs)
        F_gt = read_matrix(args.gt) if args.gt else None
        width, height = args.width, args.height
        if F_gt is not None and not (width and height):
            log.warning("--width and --height are needed for nsgd; skipping it")
    config = _config(args, args.seed)
    fit = fit_fundamental(corrs, config)
    metrics = _metrics(fit, corrs, F_gt, width, height)
    ransac = rmetrics = None
    if args.ransac:
        ransac = ransac_baseline(corrs, config.epsilon, config.T, config.seed, config.frame_scale)
        rmetrics = _metrics(ransac, corrs, F_gt, width, height)
    doc = build_report(config, fit, metrics, ransac, rmetrics, timings=args.timings)

    if (out := _csv_dir(args)) is not None:
        resid = None
        if F_gt is not None:
            resid = true_residuals(corrs, F_gt, config.frame_scale)
            if resid is None:
                log.warning("true F has F[0,0] close to 0; true_residual column omitted")
        write_point_csv(out / "influences.csv", fit.influences, resid, corrs.labels)

    lines = [f"points: {len(corrs)}", f"consensus: {fit.consensus}", f"gamma: {_fmt(fit.gamma)}"]
    lines += [f"{k}: {_fmt(v) if not isinstance(v, bool) else v}" for k, v in metrics.items()]
    if ransac is not None:
        lines.append(f"ransac consensus: {ransac.consensus}")
        lines += [f"ransac {k}: {_fmt(v) if not isinstance(v, bool) else v}" for k, v in rmetrics.items()]
    lines.append("F:")
    lines += ["  " + " ".join(_fmt(v) for v in row) for row in fit.F]
    _emit(args, doc, "\n".join(lines) + "\n")
    return 0


# -- bench -------------------------------------------------------------------

def run_bench(scene_spec: dict, seeds, make_config) -> dict:
    """Influence fit and RANSAC on synthetic scenes; per-scene rows plus a summary."""
    rows = []
    for seed in seeds:
        corrs, truth = _scene(scene_spec, seed)
        config = make_config(seed)
        fit = fit_fundamental(corrs, config)
        base = ransac_baseline(corrs, config.epsilon, config.T, config.seed, config.frame_scale)
        m = _metrics(fit, corrs, truth.F, truth.width, truth.height)
        rm = _metrics(base, corrs, truth.F, truth.width, truth.height)
        rows.append({
            "seed": seed, "auc": m.get("auc"), "nsgd": m["nsgd"], "accurate": m["accurate"],
            "ransac_auc": rm.get("auc"), "ransac_nsgd": rm["nsgd"], "ransac_accurate": rm["accurate"],
        })
    aucs = [r["auc"] for r in rows if r["auc"] is not None]
    summary = {
        "scenes": len(rows),
        "median_auc": float(np.median(aucs)) if aucs else None,
        "recall": float(np.mean([r["accurate"] for r in rows])),
        "ransac_recall": float(np.mean([r["ransac_accurate"] for r in rows])),
    }
    return {"rows": rows, "summary": summary}


def cmd_bench(args) -> int:
    if args.scenes < 1:
        raise UsageError("bench: --scenes must be positive")
    seeds = range(args.seed, args.seed + args.scenes)
    result = run_bench(args.scene, seeds, lambda s: _config(args, s))
    config = _config(args, args.seed).to_dict()
    config.pop("seed")
    doc = {"config": config, "scene": args.scene, "seeds": list(seeds), **result}
    cols = ["seed", "auc", "nsgd", "accurate", "ransac_auc", "ransac_nsgd", "ransac_accurate"]
    if (out := _csv_dir(args)) is not None:
        with open(out / "bench.csv", "w") as fh:
            fh.write(",".join(cols) + "\n")
            for r in result["rows"]:
                fh.write(",".join("" if r[c] is None else str(r[c]) if isinstance(r[c], (bool, int)) else _fmt(r[c])
                                  for c in cols) + "\n")
    lines = [" ".join(cols)]
    for r in result["rows"]:
        lines.append(" ".join("-" if r[c] is None else str(r[c]) if isinstance(r[c], (bool, int))
                              else f"{r[c]:.4f}" for c in cols))
    s = result["summary"]
    med = "-" if s["median_auc"] is None else f"{s['median_auc']:.4f}"
    lines.append(f"median auc {med}  recall {s['recall']:.3f}  ransac recall {s['ransac_recall']:.3f}")
    _emit(args, doc, "\n".join(lines) + "\n")
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    common.add_argument("--json", action="store_true", help="print a JSON document instead of text")
    common.add_argument("--csv-out", metavar="DIR", help="also write CSV series into DIR")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    fit_opts = _Parser(add_help=False)
    fit_opts.add_argument("--epsilon", type=float, default=0.6, help="linearised inlier threshold")
    fit_opts.add_argument("-M", type=int, default=1000, help="influence iterations per hypothesis")
    fit_opts.add_argument("-T", type=int, default=1000, help="number of hypotheses")
    fit_opts.add_argument("-H", type=int, default=50, help="influence thresholds tried in model selection")
    fit_opts.add_argument("--engine", choices=ENGINES, default="classical-1d")
    fit_opts.add_argument("--bits", type=int, default=3, help="quantisation bits for the quantum engine")
    fit_opts.add_argument("--exact-marginals", action="store_true",
                          help="quantum engine: use exact BV marginals instead of shots")
    fit_opts.add_argument("--frame-scale", type=float, default=AccumulationConfig.frame_scale,
                          help="mean point distance in the linearisation frame")
    fit_opts.add_argument("--absolute-residuals", action="store_true",
                          help="feed |a.x - b| instead of a.x - b to the 1-D influence step")

    parser = _Parser(prog="qinfluence", description="Boolean influence for robust fitting.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("influence1d", parents=[common], help="influences for 1-D point fitting")
    p.add_argument("--values", type=_float_list, required=True, help="comma-separated data")
    p.add_argument("--two-eps", type=float, required=True, help="feasibility window 2*epsilon")
    p.add_argument("--method", choices=("exact", "sampled", "quantum"), default="exact")
    p.add_argument("-M", type=int, default=1000, help="samples (sampled/quantum)")
    p.add_argument("--bits", type=int, default=3, help="quantisation bits (quantum)")
    p.add_argument("--exact-marginals", action="store_true", help="quantum: exact marginals, no shots")
    p.set_defaults(func=cmd_influence1d)

    p = sub.add_parser("bv-sim", parents=[common], help="simulate the BV influence circuit")
    p.add_argument("instance", nargs="?", help="instance file with C= and two_epsilon= headers")
    p.add_argument("--values", type=_float_list)
    p.add_argument("--bits", type=int, default=3)
    p.add_argument("--two-eps", type=float)
    p.add_argument("--shots", type=int, default=1000)
    p.add_argument("--comparator", choices=("auto", "generic"), default="auto")
    p.add_argument("--export", metavar="FILE", help="write the circuit as text (MCX gates expanded to Toffoli chains)")
    p.set_defaults(func=cmd_bv_sim)

    p = sub.add_parser("fit-f", parents=[common, fit_opts], help="estimate a fundamental matrix")
    p.add_argument("corrs", nargs="?", help="correspondence file: u v u' v' [label] per line")
    p.add_argument("--synthetic", type=_scene_spec, metavar="SPEC",
                   help="synthetic scene, e.g. n=100,outliers=0.3,noise=0.5 (scene seed = --seed)")
    p.add_argument("--gt", metavar="FILE", help="ground-truth F (9 numbers, row-major)")
    p.add_argument("--width", type=float, help="image width for nsgd")
    p.add_argument("--height", type=float, help="image height for nsgd")
    p.add_argument("--ransac", action="store_true", help="also run the RANSAC baseline")
    p.add_argument("--timings", action="store_true", help="include wall-clock timings (not reproducible)")
    p.set_defaults(func=cmd_fit_f)

    p = sub.add_parser("bench", parents=[common, fit_opts], help="sweep synthetic scenes")
    p.add_argument("--scenes", type=int, default=20, help="number of scenes, seeds start at --seed")
    p.add_argument("--scene", type=_scene_spec, default={}, metavar="SPEC", help="scene parameters")
    p.set_defaults(func=cmd_bench, M=200, T=200)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except RUNTIME_ERRORS as exc:
        print(f"qinfluence: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
