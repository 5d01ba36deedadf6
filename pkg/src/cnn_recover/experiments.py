"""Experiment harness behind the command-line tool.

Each command reads an :class:`ExperimentConfig`, writes its CSV (and
optionally an SVG plot) into the output directory, and returns a
:class:`CommandResult` listing the files and the named checks it evaluated.
Every random draw is derived from the config seed, so reruns give identical
bytes.  Wall-clock time is kept out of the CSVs and goes to a separate
timing file where it is reported at all.
"""

from concurrent.futures import ThreadPoolExecutor
import configparser
from dataclasses import dataclass, field
import os
import time

from .activation import KINDS, get_activation, quadrature_moments, rho_erf, rho_terms, table_closed_form
from .errors import ConfigError, NumericalError
from .io import SPECTRUM_HEADER, matrix_to_csv, spectrum_row, trace_to_csv, write_csv
from .model import ProblemConfig, make_ground_truth, matching_error, sample_dataset
from .risk import (
    GRAD_FD_TOL, HESS_FD_TOL, away_from_kinks, fd_gradient_error, fd_hessian_error, hessian,
    population_hessian_mc, spectrum,
)
from .rng import derive_seed, substream
from .train import TrainConfig, learn_cnn

COMMANDS = ("fig-a", "fig-b", "pipeline", "moments-table", "check-derivatives")

FIG_A_ACTIVATIONS = ("relu", "squared_relu", "sigmoid", "quadratic")
FIG_A_GRID = (100, 1000, 10000, 100000)
LOSS_TARGET = 1e-8
R2_TARGET = 0.95
QUAD_AGREEMENT = 1e-6
QUADRATIC_ZERO = 1e-8


def _ints(text):
    return tuple(int(float(v)) for v in _words(text))


def _floats(text):
    return tuple(float(v) for v in _words(text))


def _words(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _step(text):
    return "auto" if text.strip() == "auto" else float(text)


# key -> (parser, default); command-specific defaults override these
KEYS = {
    "activation": (str, "squared_relu"),
    "activations": (_words, None),
    "slope": (float, 0.01),
    "d": (int, None),
    "k": (int, 5),
    "r": (int, 2),
    "t": (int, 2),
    "kappa": (float, 2.0),
    "seed": (int, 0),
    "seeds": (_ints, (0, 1, 2, 3, 4)),
    "n_grid": (_ints, FIG_A_GRID),
    "n": (lambda v: int(float(v)), 1000),
    "n_mc": (lambda v: int(float(v)), 10**6),
    "step_size": (_step, "auto"),
    "T": (lambda v: int(float(v)), 500),
    "tol": (float, 1e-12),
    "resample": (lambda v: tuple(_bool(w) for w in _words(v)), (True, False)),
    "init": (str, "tensor"),
    "init_scale": (float, 1.0),
    "sigmas": (_floats, (0.5, 1.0, 2.0)),
    "instances": (int, 10),
    "perturbation": (float, 0.3),
    "target_error": (float, 1e-3),
    "plot": (_bool, True),
    "out_dir": (str, "."),
}

COMMAND_DEFAULTS = {
    "fig-a": {"activations": FIG_A_ACTIVATIONS},
    "fig-b": {"activation": "squared_relu", "step_size": 0.01, "n": 1000, "T": 10000,
              "init": "gaussian", "resample": (False,)},
    "pipeline": {"activation": "squared_relu", "n": 200000, "T": 500},
    "moments-table": {"activations": KINDS},
    "check-derivatives": {"activations": ("squared_relu", "sigmoid", "tanh", "erf"), "n": 200},
}


@dataclass
class ExperimentConfig:
    """Parsed ``[experiment]`` section with every key resolved to a value."""

    command: str
    values: dict
    source: str = None

    def __getattr__(self, name):
        values = self.__dict__.get("values", {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    @property
    def activation_list(self):
        return tuple(self.values["activations"] or (self.values["activation"],))

    def problem(self, activation=None) -> ProblemConfig:
        act = get_activation(activation or self.values["activation"], self.values["slope"])
        return ProblemConfig(k=self.values["k"], r=self.values["r"], t=self.values["t"],
                             activation=act, seed=self.values["seed"], d=self.values["d"])

    def validate(self):
        if self.values["kappa"] < 1:
            raise ConfigError("kappa must be >= 1")
        for name in ("n", "n_mc", "T", "instances"):
            if self.values[name] < 1:
                raise ConfigError(f"{name} must be >= 1")
        if any(n < 1 for n in self.values["n_grid"]):
            raise ConfigError("n_grid entries must be >= 1")
        if any(s <= 0 for s in self.values["sigmas"]):
            raise ConfigError("sigmas must be positive")
        if any(s < 0 for s in self.values["seeds"]) or self.values["seed"] < 0:
            raise ConfigError("seeds must be non-negative")
        for act in self.activation_list:
            self.problem(act)
        TrainConfig(step_size=self.values["step_size"], max_iters=self.values["T"],
                    tol=self.values["tol"], init=self.values["init"])
        return self


def parse_config(text: str, command: str, source: str = None, overrides: dict = None) -> ExperimentConfig:
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    extra = [s for s in cp.sections() if s != "experiment"]
    if extra:
        raise ConfigError(f"unknown section(s) {extra}; only [experiment] is allowed")
    if not cp.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    values = {key: default for key, (_, default) in KEYS.items()}
    values.update(COMMAND_DEFAULTS[command])
    for key, raw in cp.items("experiment"):
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r} in [experiment]")
        try:
            values[key] = KEYS[key][0](raw)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from None
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    return ExperimentConfig(command, values, source).validate()


def load_config(path, command: str, overrides: dict = None) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, command, str(path), overrides)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}  {self.detail}".rstrip()


@dataclass
class CommandResult:
    files: list = field(default_factory=list)
    checks: list = field(default_factory=list)
    rows: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)


def _pmap(fn, items, threads: int):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _out(ec: ExperimentConfig, name: str) -> str:
    os.makedirs(ec.out_dir, exist_ok=True)
    return os.path.join(ec.out_dir, name)


def _plot(path, series, xlabel, ylabel, xlog=False):
    """Deterministic SVG line plot with a log y-axis.  ``series`` maps label -> (x, y)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "cnn-recover", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        for label, (x, y) in series.items():
            ax.plot(x, y, marker="o" if xlog else None, markersize=3, label=label)
        ax.set_yscale("log")
        if xlog:
            ax.set_xscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def ground_truth(ec: ExperimentConfig):
    """Planted weights shared by every command for a given seed."""
    return make_ground_truth(ec.k, ec.t, ec.kappa, derive_seed(ec.seed, "truth"))


# ---------------------------------------------------------------------------
# fig-a


def cmd_fig_a(ec: ExperimentConfig, threads: int = 1) -> CommandResult:
    """Smallest Hessian eigenvalue at the ground truth against the sample size."""
    Wstar = ground_truth(ec)
    cells = [(a, i, n) for a in ec.activation_list for i, n in enumerate(ec.n_grid)]

    def empirical(cell):
        act, i, n = cell
        cfg = ec.problem(act)
        S = sample_dataset(Wstar, cfg, n, derive_seed(ec.seed, "fig_a_data", i))
        rep = spectrum(hessian(Wstar, S, cfg), Wstar, cfg.activation, cfg.r)
        return spectrum_row(cfg.fingerprint(), act, n, S.seed, "empirical", rep)

    def population(act):
        cfg = ec.problem(act)
        H, se = population_hessian_mc(Wstar, cfg, ec.n_mc, derive_seed(ec.seed, "fig_a_population"))
        rep = spectrum(H, Wstar, cfg.activation, cfg.r, se)
        return spectrum_row(cfg.fingerprint(), act, ec.n_mc, derive_seed(ec.seed, "fig_a_population"),
                            "population", rep)

    rows = _pmap(empirical, cells, threads) + _pmap(population, ec.activation_list, threads)
    res = CommandResult(rows=rows)
    path = _out(ec, "fig_a.csv")
    write_csv(path, SPECTRUM_HEADER, rows)
    res.files.append(path)

    col = {name: i for i, name in enumerate(SPECTRUM_HEADER)}
    by_act = {}
    for row in rows:
        by_act.setdefault(row[col["activation"]], {})[(row[col["source"]], row[col["n"]])] = row
    for act, table in by_act.items():
        emp = [(n, row[col["lambda_min"]]) for (src, n), row in sorted(table.items()) if src == "empirical"]
        if act == "quadratic":
            worst = max(lm for _, lm in emp)
            res.checks.append(Check(f"fig-a {act} lambda_min ~ 0", worst < QUADRATIC_ZERO,
                                    f"max lambda_min {worst:.3e} < {QUADRATIC_ZERO:g}"))
            continue
        low = min(lm for _, lm in emp)
        res.checks.append(Check(f"fig-a {act} lambda_min > 0", low > 0, f"min {low:.4e}"))
        ref = table[("population", ec.n_mc)]
        n_top, lm_top = emp[-1]
        gap = abs(lm_top - ref[col["lambda_min"]])
        bound = 3 * ref[col["stderr"]]
        res.checks.append(Check(f"fig-a {act} n={n_top} vs population", gap <= bound,
                                f"|{lm_top:.5f} - {ref[col['lambda_min']]:.5f}| = {gap:.2e} <= {bound:.2e}"))

    if ec.plot:
        series = {}
        for act, table in by_act.items():
            emp = sorted((n, row[col["lambda_min"]]) for (src, n), row in table.items() if src == "empirical")
            x = [n for n, _ in emp]
            series[act] = (x, [max(lm, 1e-16) for _, lm in emp])
        plot = _out(ec, "fig_a.svg")
        _plot(plot, series, "sample size n", "lambda_min (clipped at 1e-16)", xlog=True)
        res.files.append(plot)
    return res


# ---------------------------------------------------------------------------
# fig-b


def cmd_fig_b(ec: ExperimentConfig, threads: int = 1) -> CommandResult:
    """Gradient descent from several Gaussian starts on one sample set."""
    Wstar = ground_truth(ec)
    cfg = ec.problem()
    S = sample_dataset(Wstar, cfg, ec.n, derive_seed(ec.seed, "fig_b_data"))

    def run(s):
        tc = TrainConfig(step_size=ec.step_size, max_iters=ec.T, tol=ec.tol, resample=False,
                         seed=derive_seed(ec.seed, "fig_b_init", s), init=ec.init,
                         init_scale=ec.init_scale)
        return learn_cnn(S, ec.T, cfg, tc, Wstar=Wstar)

    reports = _pmap(run, ec.seeds, threads)
    res = CommandResult()
    iters = sorted({rec.iter for rep in reports for rec in rep.trace})
    lookup = [{rec.iter: rec.loss for rec in rep.trace} for rep in reports]
    header = ["iter"] + [f"loss_seed{s}" for s in ec.seeds]
    rows = [[q] + [lk.get(q) for lk in lookup] for q in iters]
    path = _out(ec, "fig_b.csv")
    write_csv(path, header, rows)
    res.files.append(path)

    summary = []
    for s, rep in zip(ec.seeds, reports):
        final = rep.trace[-1].loss
        summary.append([s, rep.iterations, final, rep.converged, rep.rate_estimate, rep.tail_r2,
                        matching_error(rep.final_W, Wstar)])
        res.checks.append(Check(f"fig-b seed {s} loss < {LOSS_TARGET:g}", final < LOSS_TARGET,
                                f"final loss {final:.3e} after {rep.iterations} iterations"))
        res.checks.append(Check(f"fig-b seed {s} tail R^2 > {R2_TARGET}", rep.tail_r2 > R2_TARGET,
                                f"R^2 {rep.tail_r2:.6f}, rate {rep.rate_estimate:.6f}"))
    spath = _out(ec, "fig_b_summary.csv")
    write_csv(spath, ["seed", "iterations", "final_loss", "converged", "rate", "tail_r2",
                      "relative_error"], summary)
    res.files.append(spath)
    res.rows = summary

    if ec.plot:
        plot = _out(ec, "fig_b.svg")
        _plot(plot, {f"seed {s}": (rep.iters, rep.losses) for s, rep in zip(ec.seeds, reports)},
              "iteration", "empirical risk")
        res.files.append(plot)
    return res


# ---------------------------------------------------------------------------
# pipeline

PIPELINE_HEADER = ["config_hash", "activation", "n", "T", "resample", "iterations", "converged",
                   "final_loss", "step_size", "samples_consumed", "init_rel_error", "final_rel_error"]


def cmd_pipeline(ec: ExperimentConfig, threads: int = 1) -> CommandResult:
    """Tensor initialization followed by gradient descent, per resampling mode."""
    Wstar = ground_truth(ec)
    cfg = ec.problem()
    S = sample_dataset(Wstar, cfg, ec.n, derive_seed(ec.seed, "pipeline_data"))
    res = CommandResult()
    timing = []
    for mode in ec.resample:
        tc = TrainConfig(step_size=ec.step_size, max_iters=ec.T, tol=ec.tol, resample=mode,
                         seed=derive_seed(ec.seed, "pipeline_train"), init=ec.init,
                         init_scale=ec.init_scale)
        start = time.perf_counter()
        rep = learn_cnn(S, ec.T, cfg, tc, Wstar=Wstar)
        timing.append([mode, time.perf_counter() - start])
        init_err = matching_error(rep.init_W, Wstar)
        final_err = matching_error(rep.final_W, Wstar)
        res.rows.append([cfg.fingerprint(), cfg.activation.kind, ec.n, ec.T, mode, rep.iterations,
                         rep.converged, rep.trace[-1].loss, rep.step_size, rep.samples_consumed,
                         init_err, final_err])
        tag = "resample" if mode else "no_resample"
        for name, writer, obj in ((f"pipeline_trace_{tag}.csv", trace_to_csv, rep),
                                  (f"pipeline_W0_{tag}.csv", matrix_to_csv, rep.init_W),
                                  (f"pipeline_final_W_{tag}.csv", matrix_to_csv, rep.final_W)):
            path = _out(ec, name)
            writer(obj, path)
            res.files.append(path)
        res.checks.append(Check(f"pipeline {tag} relative error <= {ec.target_error:g}",
                                final_err <= ec.target_error,
                                f"{final_err:.3e} (init {init_err:.3e})"))
    path = _out(ec, "pipeline.csv")
    write_csv(path, PIPELINE_HEADER, res.rows)
    tpath = _out(ec, "pipeline_timing.csv")
    write_csv(tpath, ["resample", "wall_seconds"], timing)
    res.files[:0] = [path, tpath]
    return res


# ---------------------------------------------------------------------------
# moments-table

TABLE_MOMENTS = ("alpha0", "alpha1", "alpha2", "beta0", "beta2", "rho")


def _closed_rho(act, sigma, closed):
    if act.kind == "erf":
        return rho_erf(sigma)
    return min(rho_terms(*(closed[m] for m in TABLE_MOMENTS[:-1])))


def moments_rows(activations, sigmas, slope: float = 0.01):
    """One row per (activation, sigma): closed form next to quadrature, ``None`` where absent."""
    rows = []
    for name in activations:
        act = get_activation(name, slope)
        for sigma in sigmas:
            closed = table_closed_form(act, sigma)
            note = ""
            try:
                quad = quadrature_moments(act, sigma)
                quad["rho"] = min(rho_terms(*(quad[m] for m in TABLE_MOMENTS[:-1])))
            except NumericalError as exc:
                quad, note = None, f"quadrature did not converge: {exc}"
            if closed is not None:
                closed = dict(closed, rho=_closed_rho(act, sigma, closed))
            row = [act.kind, sigma]
            diffs = []
            for m in TABLE_MOMENTS:
                c = closed[m] if closed else None
                q = quad[m] if quad else None
                row += [c, q]
                if c is not None and q is not None:
                    diffs.append(abs(c - q))
            row += [max(diffs) if diffs else None, note]
            rows.append(row)
    return rows


MOMENTS_HEADER = ["activation", "sigma"] + [f"{m}_{src}" for m in TABLE_MOMENTS
                                             for src in ("closed", "quad")] + ["max_abs_diff", "note"]


def cmd_moments_table(ec: ExperimentConfig, threads: int = 1) -> CommandResult:
    rows = moments_rows(ec.activation_list, ec.sigmas, ec.slope)
    res = CommandResult(rows=rows)
    path = _out(ec, "moments_table.csv")
    write_csv(path, MOMENTS_HEADER, rows)
    res.files.append(path)
    for row in rows:
        diff = row[-2]
        if diff is not None:
            res.checks.append(Check(f"moments {row[0]} sigma={row[1]:g} closed vs quadrature",
                                    diff <= QUAD_AGREEMENT, f"max |diff| {diff:.2e}"))
    return res


# ---------------------------------------------------------------------------
# check-derivatives

DERIV_HEADER = ["activation", "instance", "check", "rel_error", "tolerance", "passed", "note"]


def derivative_rows(ec: ExperimentConfig):
    Wstar = ground_truth(ec)
    rows = []
    for a, name in enumerate(ec.activation_list):
        cfg = ec.problem(name)
        for i in range(ec.instances):
            gen = substream(ec.seed, "derivatives", a, i)
            W = Wstar + ec.perturbation * gen.standard_normal(Wstar.shape)
            S = sample_dataset(Wstar, cfg, ec.n, derive_seed(ec.seed, "derivative_data", a, i))
            if cfg.activation.is_smooth:
                g = fd_gradient_error(W, S, cfg)
                h = fd_hessian_error(W, S, cfg)
                rows.append([name, i, "gradient", g, GRAD_FD_TOL, g < GRAD_FD_TOL, ""])
                rows.append([name, i, "hessian", h, HESS_FD_TOL, h < HESS_FD_TOL, ""])
            else:
                Sk = away_from_kinks(W, S, cfg)
                g = fd_gradient_error(W, Sk, cfg)
                rows.append([name, i, "gradient", g, GRAD_FD_TOL, g < GRAD_FD_TOL,
                             f"{len(Sk)} of {len(S)} samples away from kinks"])
                rows.append([name, i, "hessian", None, HESS_FD_TOL, None,
                             "skipped: piecewise-linear activation is not twice differentiable"])
    return rows


def cmd_check_derivatives(ec: ExperimentConfig, threads: int = 1) -> CommandResult:
    rows = derivative_rows(ec)
    res = CommandResult(rows=rows)
    path = _out(ec, "check_derivatives.csv")
    write_csv(path, DERIV_HEADER, rows)
    res.files.append(path)
    for name, i, check, err, tol, ok, note in rows:
        if ok is not None:
            res.checks.append(Check(f"{name} #{i} {check} FD", bool(ok), f"{err:.2e} < {tol:g}"))
    return res


RUNNERS = {
    "fig-a": cmd_fig_a,
    "fig-b": cmd_fig_b,
    "pipeline": cmd_pipeline,
    "moments-table": cmd_moments_table,
    "check-derivatives": cmd_check_derivatives,
}


def run_command(command: str, ec: ExperimentConfig, threads: int = 1) -> CommandResult:
    return RUNNERS[command](ec, threads)
