"""Simulation harness comparing RVS and Marquardt on censored mixed models.

A scenario fixes the model, censoring threshold, sample size and number of
replicates.  Replicate ``r`` draws its data from the PCG64 stream
``SeedSequence(seed, spawn_key=(r,))``, so it depends on ``(seed, r)`` only.
Reports hold two tables by algorithm: ``table1`` with convergence counts,
iterations and timing, and ``table2`` with per-parameter variances and Wald
coverage.
"""
import csv
import dataclasses
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigurationError, RVSError
from .inference import delta_method, model_variance
from .models.longitudinal import CensoredMixedModel, generate_dataset, get_model, imputed_start
from .optimizers import ALGORITHMS, OptimizerConfig, fit

__all__ = [
    "SimulationScenario",
    "ReplicateFit",
    "ReplicateResult",
    "SimulationReport",
    "parse_scenario",
    "replicate_rng",
    "replicate_dataset",
    "run_replicate",
    "run_scenario",
    "emit_report",
    "parse_report",
]

STANDARD_THRESHOLDS = (1.0, 2.0)
# column order in both tables: Marquardt first
REPORT_ORDER = ("marquardt", "rvs")
# optimizer overrides accepted in scenario files
_CONFIG_KINDS = {"stopping_value": float, "max_iter": int, "eta_initial": float,
                 "lambda_initial": float, "lambda_factor": float, "lambda_max": float,
                 "line_search": str, "max_halvings": int, "derivatives": str}


@dataclass(frozen=True)
class SimulationScenario:
    """One simulation design.

    ``config`` holds :class:`OptimizerConfig` overrides shared by both
    algorithms.  ``n_jobs > 1`` runs replicates in worker processes.
    """

    model: str = "re"
    threshold: float = 2.0
    n_subjects: int = 100
    n_replicates: int = 100
    algorithms: tuple = ("rvs", "marquardt")
    seed: int = 0
    config: dict = field(default_factory=dict)
    alpha: float = 0.05
    n_jobs: int = 1

    def __post_init__(self):
        get_model(self.model)
        object.__setattr__(self, "model", str(self.model).lower())
        object.__setattr__(self, "threshold", float(self.threshold))
        algs = tuple(a.strip().lower() for a in self.algorithms)
        if not algs or any(a not in ALGORITHMS for a in algs) or len(set(algs)) != len(algs):
            raise ConfigurationError(f"algorithms must be a non-empty subset of {ALGORITHMS}")
        object.__setattr__(self, "algorithms", algs)
        if int(self.n_replicates) < 1:
            raise ConfigurationError("n_replicates must be at least 1")
        if int(self.n_subjects) < 1:
            raise ConfigurationError("n_subjects must be at least 1")
        if int(self.seed) < 0:
            raise ConfigurationError("seed must be non-negative")
        if not 0 < self.alpha < 1:
            raise ConfigurationError("alpha must lie in (0, 1)")
        for key in ("n_replicates", "n_subjects", "seed", "n_jobs"):
            object.__setattr__(self, key, int(getattr(self, key)))
        object.__setattr__(self, "config", dict(self.config))
        self.optimizer_config()

    @property
    def standard_scenario(self):
        """True at the two standard thresholds (about 25% and 45% censored)."""
        return self.threshold in STANDARD_THRESHOLDS

    def optimizer_config(self):
        try:
            return OptimizerConfig(**self.config)
        except TypeError as exc:
            raise ConfigurationError(f"bad optimizer override: {exc}") from exc

    def with_overrides(self, **kw):
        return dataclasses.replace(self, **{k: v for k, v in kw.items() if v is not None})


def _convert(key, value, kind):
    try:
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
    except ValueError:
        raise ConfigurationError(f"bad value for {key}: {value!r}") from None
    return value


def parse_scenario(text):
    """Read ``key = value`` lines ('#' starts a comment) into a scenario.

    Keys naming :class:`OptimizerConfig` fields become optimizer overrides.
    """
    kinds = {"model": str, "threshold": float, "n_subjects": int, "n_replicates": int,
             "seed": int, "alpha": float, "n_jobs": int}
    kw, config = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip().lower(), value.strip()
        if not sep or not key:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        if key == "algorithms":
            kw[key] = tuple(v for v in value.replace(" ", "").split(",") if v)
        elif key in kinds:
            kw[key] = _convert(key, value, kinds[key])
        elif key in _CONFIG_KINDS:
            if key == "max_iter" and value.lower() == "none":
                config[key] = None
            else:
                config[key] = _convert(key, value, _CONFIG_KINDS[key])
        else:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
    return SimulationScenario(config=config, **kw)


def replicate_rng(seed, r):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(r,))))


def replicate_dataset(scenario, r):
    model = get_model(scenario.model)
    return generate_dataset(model, model.true_params, scenario.n_subjects, scenario.threshold,
                            replicate_rng(scenario.seed, r))


@dataclass(frozen=True)
class ReplicateFit:
    algorithm: str
    converged: bool
    iterations: int
    wall_time: float
    likelihood_evaluations: int
    derivative_evaluations: tuple
    criteria: tuple
    loglik: float
    estimate: np.ndarray
    variance: np.ndarray
    covered: np.ndarray
    message: str = ""


@dataclass(frozen=True)
class ReplicateResult:
    index: int
    censored_fraction: float
    start_time: float
    fits: dict


def run_replicate(scenario, r):
    """Generate replicate ``r``, compute the start and fit every algorithm."""
    model = get_model(scenario.model)
    data = replicate_dataset(scenario, r)
    config = scenario.optimizer_config()
    t0 = time.perf_counter()
    theta0 = imputed_start(data, model)
    start_time = time.perf_counter() - t0
    problem = CensoredMixedModel(data, model)
    truth = model.true_params.to_vector()
    z = stats.norm.ppf(1 - scenario.alpha / 2)
    fits = {}
    for alg in scenario.algorithms:
        res = fit(problem, theta0, alg, config)
        est = model.from_working(res.theta_hat).to_vector()
        var = np.full(model.dim, np.nan)
        covered = np.zeros(model.dim, dtype=bool)
        message = res.message
        if res.converged:
            try:
                V = delta_method(model_variance(res), model.jacobian(res.theta_hat))
                var = np.diag(V).copy()
                covered = np.abs(est - truth) <= z * np.sqrt(np.maximum(var, 0.0))
            except RVSError as exc:
                message = f"variance unavailable: {exc}"
        fits[alg] = ReplicateFit(
            algorithm=alg, converged=res.converged, iterations=res.iterations,
            wall_time=res.wall_time, likelihood_evaluations=res.likelihood_evaluations,
            derivative_evaluations=tuple(rec.derivative_evaluations for rec in res.trace),
            criteria=tuple(rec.criterion for rec in res.trace),
            loglik=res.loglik, estimate=est, variance=var, covered=covered, message=message)
    return ReplicateResult(r, data.censored_fraction, start_time, fits)


def _replicate_task(args):
    return run_replicate(*args)


def run_scenario(scenario, progress=None):
    """Run every replicate of ``scenario``; non-convergence is recorded, not raised.

    ``progress`` is called with each finished :class:`ReplicateResult`.
    """
    tasks = [(scenario, r) for r in range(scenario.n_replicates)]
    results = []
    if scenario.n_jobs > 1:
        with ProcessPoolExecutor(scenario.n_jobs) as pool:
            for res in pool.map(_replicate_task, tasks):
                results.append(res)
                if progress:
                    progress(res)
    else:
        for task in tasks:
            res = _replicate_task(task)
            results.append(res)
            if progress:
                progress(res)
    results.sort(key=lambda res: res.index)
    return SimulationReport(scenario, tuple(results))


@dataclass(frozen=True)
class SimulationReport:
    scenario: SimulationScenario
    replicates: tuple

    @property
    def algorithms(self):
        return tuple(a for a in REPORT_ORDER if a in self.scenario.algorithms)

    @property
    def param_names(self):
        return get_model(self.scenario.model).param_names

    @property
    def true_values(self):
        return get_model(self.scenario.model).true_params.to_vector()

    def fits(self, alg, converged_only=True):
        out = [rep.fits[alg] for rep in self.replicates]
        return [f for f in out if f.converged] if converged_only else out

    def convergence_count(self, alg):
        return len(self.fits(alg))

    def mean_time(self, alg):
        f = self.fits(alg)
        return float(np.mean([x.wall_time for x in f])) if f else float("nan")

    def mean_iterations(self, alg):
        f = self.fits(alg)
        return float(np.mean([x.iterations for x in f])) if f else float("nan")

    def time_per_iteration(self, alg):
        f = [x for x in self.fits(alg) if x.iterations > 0]
        if not f:
            return float("nan")
        return sum(x.wall_time for x in f) / sum(x.iterations for x in f)

    def time_ratio(self, alg):
        """Per-iteration wall time relative to Marquardt."""
        if "marquardt" not in self.scenario.algorithms:
            return float("nan")
        return self.time_per_iteration(alg) / self.time_per_iteration("marquardt")

    def evaluations_per_iteration(self, alg):
        """Mean likelihood evaluations spent on derivatives per iteration (line search excluded)."""
        counts = [c for x in self.fits(alg, converged_only=False) for c in x.derivative_evaluations]
        return float(np.mean(counts)) if counts else float("nan")

    def coverage_counts(self, alg):
        f = [x for x in self.fits(alg) if np.all(np.isfinite(x.variance))]
        if not f:
            return np.zeros(len(self.param_names), dtype=int), 0
        return np.sum([x.covered for x in f], axis=0).astype(int), len(f)

    def coverage(self, alg):
        k, n = self.coverage_counts(alg)
        return 100.0 * k / n if n else np.full(len(self.param_names), np.nan)

    def coverage_significant(self, alg, level=0.05):
        """Exact binomial test of each coverage rate against ``1 - alpha``."""
        k, n = self.coverage_counts(alg)
        if not n:
            return np.zeros(len(self.param_names), dtype=bool)
        p0 = 1 - self.scenario.alpha
        return np.array([stats.binomtest(int(ki), n, p0).pvalue < level for ki in k])

    def asymptotic_variance(self, alg):
        f = [x for x in self.fits(alg) if np.all(np.isfinite(x.variance))]
        return np.mean([x.variance for x in f], axis=0) if f else np.full(len(self.param_names), np.nan)

    def sample_variance(self, alg):
        f = self.fits(alg)
        if len(f) < 2:
            return np.full(len(self.param_names), np.nan)
        return np.var([x.estimate for x in f], axis=0, ddof=1)

    def joint_ssd(self):
        """Mean squared distance between the natural-scale estimates of the two
        algorithms over replicates where both converged, and how many there were."""
        if not {"rvs", "marquardt"} <= set(self.scenario.algorithms):
            return float("nan"), 0
        d = [np.sum((rep.fits["rvs"].estimate - rep.fits["marquardt"].estimate) ** 2)
             for rep in self.replicates
             if rep.fits["rvs"].converged and rep.fits["marquardt"].converged]
        return (float(np.mean(d)) if d else float("nan")), len(d)

    def summary(self, timing=True):
        """Nested dict of every reported number, as :func:`parse_report` returns it."""
        t1 = {}
        for alg in self.algorithms:
            row = {"convergence_reached": self.convergence_count(alg),
                   "replicates": len(self.replicates),
                   "mean_iterations": self.mean_iterations(alg),
                   "evaluations_per_iteration": self.evaluations_per_iteration(alg)}
            if timing:
                row.update(mean_convergence_time=self.mean_time(alg),
                           time_per_iteration=self.time_per_iteration(alg),
                           time_ratio=self.time_ratio(alg))
            t1[alg] = row
        t2 = {}
        for j, name in enumerate(self.param_names):
            row = {"true_value": float(self.true_values[j])}
            for alg in self.algorithms:
                k, n = self.coverage_counts(alg)
                row[f"{alg}_asymptotic_variance"] = float(self.asymptotic_variance(alg)[j])
                row[f"{alg}_sample_variance"] = float(self.sample_variance(alg)[j])
                row[f"{alg}_coverage"] = float(self.coverage(alg)[j])
                row[f"{alg}_covered"] = int(k[j])
                row[f"{alg}_n"] = int(n)
                row[f"{alg}_significant"] = int(self.coverage_significant(alg)[j])
            t2[name] = row
        ssd, joint = self.joint_ssd()
        return {"table1": t1, "table2": t2, "agreement": {"mean_ssd": ssd, "jointly_converged": joint}}


_T1_ROWS = ("convergence_reached", "replicates", "mean_convergence_time", "mean_iterations",
            "time_per_iteration", "time_ratio", "evaluations_per_iteration")
_T2_STATS = ("asymptotic_variance", "sample_variance", "coverage", "covered", "n", "significant")


def _fmt(key, v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None or not math.isfinite(v):
        return "nan"
    if key.endswith("coverage"):
        return "%.1f" % v
    return "%.6g" % v


def _scenario_line(s):
    return (f"# scenario model={s.model} threshold={s.threshold:g} n_subjects={s.n_subjects} "
            f"n_replicates={s.n_replicates} seed={s.seed} algorithms={','.join(s.algorithms)}"
            f" standard_scenario={'yes' if s.standard_scenario else 'no'}")


def emit_report(report, format="csv", timing=True):
    """Render ``report`` as CSV or markdown.

    The first block has one row per convergence statistic and one column per
    algorithm (Marquardt first); the second has one row per parameter with
    asymptotic variance, sample variance and coverage for each algorithm.
    ``timing=False`` drops the wall-clock rows so the text depends on the
    scenario alone.
    """
    if format not in ("csv", "markdown"):
        raise ConfigurationError("format must be 'csv' or 'markdown'")
    summ = report.summary(timing)
    algs = report.algorithms
    t1_rows = [r for r in _T1_ROWS if r in summ["table1"][algs[0]]]
    t2_cols = [f"{a}_{s}" for a in algs for s in _T2_STATS]
    agree = summ["agreement"]
    tables = [
        ("table1", ["statistic", *algs],
         [[r, *(_fmt(r, summ["table1"][a][r]) for a in algs)] for r in t1_rows]),
        ("table2", ["parameter", "true_value", *t2_cols],
         [[p, _fmt("true_value", row["true_value"]), *(_fmt(c, row[c]) for c in t2_cols)]
          for p, row in summ["table2"].items()]),
        ("agreement", ["statistic", "value"],
         [["mean_ssd", _fmt("mean_ssd", agree["mean_ssd"])],
          ["jointly_converged", _fmt("jointly_converged", agree["jointly_converged"])]]),
    ]
    buf = io.StringIO()
    buf.write(_scenario_line(report.scenario) + "\n")
    if format == "csv":
        w = csv.writer(buf, lineterminator="\n")
        for name, header, rows in tables:
            buf.write(f"\n# {name}\n")
            w.writerow(header)
            w.writerows(rows)
    else:
        titles = {"table1": "Convergence", "table2": "Variances and coverage (%)",
                  "agreement": "Estimate agreement"}
        for name, header, rows in tables:
            buf.write(f"\n### {titles[name]}\n\n")
            buf.write("| " + " | ".join(header) + " |\n")
            buf.write("|" + "|".join("---" for _ in header) + "|\n")
            for row in rows:
                buf.write("| " + " | ".join(row) + " |\n")
    return buf.getvalue()


def _num(s):
    if s == "nan":
        return float("nan")
    try:
        return int(s)
    except ValueError:
        return float(s)


def parse_report(text):
    """Inverse of :func:`emit_report` for CSV output.

    Coverage rates are recomputed from the covered/n counts, so they come
    back exact rather than rounded to one decimal.
    """
    blocks, current = {}, None
    for line in text.splitlines():
        if line.startswith("# ") and not line.startswith("# scenario"):
            current = line[2:].strip()
            blocks[current] = []
        elif line.strip() and current is not None and not line.startswith("#"):
            blocks[current].append(line)
    if not {"table1", "table2", "agreement"} <= set(blocks):
        raise ConfigurationError("text is not an emitted CSV report")
    rd = {k: list(csv.reader(v)) for k, v in blocks.items()}
    header = rd["table1"][0]
    algs = header[1:]
    t1 = {a: {} for a in algs}
    for row in rd["table1"][1:]:
        for a, v in zip(algs, row[1:]):
            t1[a][row[0]] = _num(v)
    t2 = {}
    h2 = rd["table2"][0]
    for row in rd["table2"][1:]:
        rec = {k: _num(v) for k, v in zip(h2[1:], row[1:])}
        for a in algs:
            n = rec[f"{a}_n"]
            rec[f"{a}_coverage"] = 100.0 * rec[f"{a}_covered"] / n if n else float("nan")
        t2[row[0]] = rec
    agreement = {row[0]: _num(row[1]) for row in rd["agreement"][1:]}
    return {"table1": t1, "table2": t2, "agreement": agreement}
