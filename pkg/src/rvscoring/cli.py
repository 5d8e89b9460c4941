"""Command-line entry point: ``rvscoring simulate|fit|generate``.

Exit status is 0 on completion (non-converged fits included), 2 for
configuration errors and 3 for input/output errors.
"""
import argparse
import csv
import io
import os
import sys

import numpy as np

from .bench import emit_report, parse_scenario, replicate_dataset, run_scenario
from .errors import ConfigurationError, RVSError
from .inference import delta_method, model_variance
from .models.io import read_dataset, write_dataset
from .models.longitudinal import CensoredMixedModel, get_model, imputed_start
from .optimizers import ALGORITHMS, OptimizerConfig, fit

EXIT_CONFIG = 2
EXIT_IO = 3


def _algorithms(text):
    algs = tuple(a for a in text.replace(" ", "").split(",") if a)
    bad = [a for a in algs if a not in ALGORITHMS]
    if not algs or bad:
        raise argparse.ArgumentTypeError(f"choose from {','.join(ALGORITHMS)}")
    return algs


def _common(p):
    p.add_argument("--format", choices=("csv", "markdown"), default="csv")
    p.add_argument("--out", help="output path (directory for generate); default stdout")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rvscoring", description="Robust-variance scoring and Marquardt fits of censored mixed models.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run a scenario file and print the report")
    sim.add_argument("scenario", help="key = value scenario file")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--replicates", type=int)
    sim.add_argument("--algorithms", type=_algorithms)
    sim.add_argument("--jobs", type=int, help="worker processes for replicates")
    sim.add_argument("--no-timing", action="store_true",
                     help="omit wall-clock rows so the report is reproducible byte for byte")
    sim.add_argument("--progress", action="store_true", help="log each replicate to stderr")
    _common(sim)

    ft = sub.add_parser("fit", help="fit one dataset file")
    ft.add_argument("dataset", help="CSV with columns subject_id,t,X,y,censored")
    ft.add_argument("--model", choices=("ar", "re"), required=True)
    ft.add_argument("--start", default="imputed",
                    help="'imputed' (default), 'true', or comma-separated working-scale values")
    ft.add_argument("--threshold", type=float, help="censoring threshold if not in the file")
    ft.add_argument("--algorithms", type=_algorithms, default=("rvs",))
    ft.add_argument("--seed", type=int, help="accepted for symmetry; fitting is deterministic")
    _common(ft)

    gen = sub.add_parser("generate", help="write the datasets of a scenario")
    gen.add_argument("scenario")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--replicates", type=int)
    _common(gen)
    return parser


def _write(text, path):
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_scenario(args):
    with open(args.scenario) as fh:
        scenario = parse_scenario(fh.read())
    return scenario.with_overrides(seed=args.seed, n_replicates=args.replicates,
                                   algorithms=getattr(args, "algorithms", None),
                                   n_jobs=getattr(args, "jobs", None))


def cmd_simulate(args):
    scenario = _load_scenario(args)
    progress = None
    if args.progress:
        def progress(res):
            parts = [f"{a}:{'ok' if f.converged else 'fail'}/{f.iterations}it/{f.wall_time:.1f}s"
                     for a, f in res.fits.items()]
            print(f"replicate {res.index}: " + " ".join(parts), file=sys.stderr, flush=True)
    report = run_scenario(scenario, progress)
    _write(emit_report(report, args.format, timing=not args.no_timing), args.out)


def _start(args, model, data):
    if args.start == "imputed":
        return imputed_start(data, model)
    if args.start == "true":
        return model.to_working(model.true_params)
    try:
        theta0 = np.array([float(v) for v in args.start.split(",")])
    except ValueError:
        raise ConfigurationError("--start must be 'imputed', 'true' or numbers") from None
    if theta0.size != model.dim:
        raise ConfigurationError(f"--start needs {model.dim} values")
    return theta0


def cmd_fit(args):
    model = get_model(args.model)
    data = read_dataset(args.dataset, args.threshold)
    theta0 = _start(args, model, data)
    problem = CensoredMixedModel(data, model)
    header = ["algorithm", "converged", "iterations", "loglik", "criterion", "wall_time",
              "likelihood_evaluations", *(f"{p}" for p in model.param_names),
              *(f"se_{p}" for p in model.param_names), "message"]
    rows = []
    for alg in args.algorithms:
        res = fit(problem, theta0, alg, OptimizerConfig())
        est = model.from_working(res.theta_hat).to_vector()
        se = np.full(model.dim, np.nan)
        message = res.message
        if res.converged:
            try:
                se = np.sqrt(np.diag(delta_method(model_variance(res), model.jacobian(res.theta_hat))))
            except RVSError as exc:
                message = f"variance unavailable: {exc}"
        rows.append([alg, int(res.converged), res.iterations, "%.10g" % res.loglik,
                     "%.6g" % res.criterion, "%.4g" % res.wall_time, res.likelihood_evaluations,
                     *("%.10g" % v for v in est), *("%.6g" % v for v in se), message])
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        text = buf.getvalue()
    else:
        text = "| " + " | ".join(header) + " |\n|" + "|".join("---" for _ in header) + "|\n"
        text += "".join("| " + " | ".join(str(v) for v in r) + " |\n" for r in rows)
    _write(text, args.out)


def cmd_generate(args):
    scenario = _load_scenario(args)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    for r in range(scenario.n_replicates):
        path = os.path.join(out, f"{scenario.model}_t{scenario.threshold:g}_rep{r:03d}.csv")
        write_dataset(replicate_dataset(scenario, r), path)
        print(path)


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "generate": cmd_generate}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"rvscoring: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"rvscoring: error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
