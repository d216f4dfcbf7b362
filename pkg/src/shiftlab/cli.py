"""Command-line front end: JSON configs, experiment orchestration and CSV/JSON output.

Exit codes: 0 success, 1 validation error, 2 solver failure, 3 I/O error.
"""

import argparse
import copy
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Union, get_args, get_origin

import numpy as np

from . import experiments as ex
from .errors import InvalidInputError, SolverFailureError
from .estimators import EstimatorSpec, SearchOptions, estimate
from .signal_model import (
    FULL,
    ParamDomain,
    SignalSpectrum,
    SobolevBall,
    simulate,
    sobolev_boundary_signal,
)
from .streams import RandomStream
from .weights import (
    CORRECTED,
    CUSTOM,
    WeightSequence,
    default_gamma,
    head_size,
    pinsker_weights,
    solve_bandwidth,
    weights_for,
)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3

EXPERIMENTS = ("simulate", "estimate", "risk", "verify_theorem1", "weights", "lowerbound", "sweep")
DEFAULT_EPS_LIST = [0.2, 0.1, 0.05, 0.02]
TIDY_HEADER = ["experiment", "eps", "estimator", "metric", "value", "std_err"]


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class ModelConfig:
    signal: Optional[List[float]] = None  # None: Sobolev-boundary signal of the ball
    K: int = 32
    theta: Optional[float] = None  # None: eps / 2
    eps: float = 0.05
    eps_list: List[float] = field(default_factory=lambda: list(DEFAULT_EPS_LIST))
    tau0: float = 0.2
    kind: str = FULL


@dataclass
class WeightsConfig:
    kind: str = CORRECTED
    N: Optional[int] = None
    gamma: Optional[float] = None
    values: Optional[List[float]] = None


@dataclass
class EstimatorConfig:
    kind: str = "adaptive_contrast"
    weights: Optional[WeightsConfig] = None  # None: the shared weights
    label: Optional[str] = None


@dataclass
class MCConfig:
    reps: int = 10000
    seed: int = 0


@dataclass
class BallConfig:
    beta: float = 2.0
    L: float = 1.0


@dataclass
class ClassConfig:
    rho: float = 1e-4
    c0: float = 1.0


@dataclass
class AssumptionBConfig:
    rho1: float = 0.01
    c1: float = 1.0


@dataclass
class SearchConfig:
    grid_points: Optional[int] = None
    refine_tol: float = 1e-10
    refine_max_iter: int = 200


@dataclass
class PriorConfig:
    # sigma2 None: zero on the head k <= gamma W and (1 - gamma) s_k^2 beyond
    sigma2: Optional[List[float]] = None
    theta_prior: Dict[str, Any] = field(default_factory=lambda: {"kind": "cosine_squared", "tau0": 0.2})


@dataclass
class BandsConfig:
    excess_ratio: List[float] = field(default_factory=lambda: [0.5, 2.0])


@dataclass
class OutputConfig:
    directory: str = "out"
    formats: List[str] = field(default_factory=lambda: ["csv", "json"])


@dataclass
class ExperimentConfig:
    experiment: str = "risk"
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: WeightsConfig = field(default_factory=WeightsConfig)
    estimators: List[EstimatorConfig] = field(default_factory=lambda: [EstimatorConfig()])
    mc: MCConfig = field(default_factory=MCConfig)
    prior: Optional[PriorConfig] = None
    ball: BallConfig = field(default_factory=BallConfig)
    class_params: ClassConfig = field(default_factory=ClassConfig)
    assumption_b: AssumptionBConfig = field(default_factory=AssumptionBConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    bands: BandsConfig = field(default_factory=BandsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        cfg = _build(cls, d, "")
        cfg.validate()
        return cfg

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise InvalidInputError(f"experiment: unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        _field_check("model.tau0", lambda: ParamDomain(self.model.tau0))
        _field_check("ball", lambda: SobolevBall(self.ball.beta, self.ball.L))
        _field_check("search", lambda: SearchOptions(**dataclasses.asdict(self.search)))
        if self.model.kind not in ("full", "local"):
            raise InvalidInputError(f"model.kind: must be 'full' or 'local', got {self.model.kind!r}")
        if not self.model.K >= 1:
            raise InvalidInputError("model.K: must be a positive integer")
        if not self.model.eps >= 0:
            raise InvalidInputError("model.eps: must be nonnegative")
        if any(not e > 0 for e in self.model.eps_list):
            raise InvalidInputError("model.eps_list: every entry must be positive")
        if self.mc.reps < 1:
            raise InvalidInputError("mc.reps: must be positive")
        if self.mc.seed < 0:
            raise InvalidInputError("mc.seed: must be nonnegative")
        for i, e in enumerate(self.estimators):
            _field_check(f"estimators[{i}].kind", lambda e=e: EstimatorSpec(e.kind, None if e.kind in _NO_WEIGHTS else _dummy_weights()))
        lo, hi = self.bands.excess_ratio
        if not lo < hi:
            raise InvalidInputError("bands.excess_ratio: lower end must be below upper end")
        for fmt in self.output.formats:
            if fmt not in ("csv", "json"):
                raise InvalidInputError(f"output.formats: unknown format {fmt!r}")


_NO_WEIGHTS = ("oracle_ml", "local_known")


def _dummy_weights():
    return WeightSequence([1.0], CUSTOM)


def _field_check(name, fn):
    try:
        fn()
    except (InvalidInputError, ValueError, TypeError) as e:
        raise InvalidInputError(f"{name}: {e}") from e


def _build(cls, d, path):
    if not isinstance(d, dict):
        raise InvalidInputError(f"{path or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(fields)
    if unknown:
        name = sorted(unknown)[0]
        raise InvalidInputError(f"{path}{name}: unknown field")
    kwargs = {}
    for name, value in d.items():
        kwargs[name] = _convert(fields[name].type, value, f"{path}{name}")
    return cls(**kwargs)


def _convert(tp, value, path):
    origin, args = get_origin(tp), get_args(tp)
    if origin is Union:
        if value is None and type(None) in args:
            return None
        tp = next(a for a in args if a is not type(None))
        return _convert(tp, value, path)
    if value is None:
        raise InvalidInputError(f"{path}: must not be null")
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path + ".")
    if origin is list:
        if not isinstance(value, list):
            raise InvalidInputError(f"{path}: expected a list")
        return [_convert(args[0], v, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is dict:
        if not isinstance(value, dict):
            raise InvalidInputError(f"{path}: expected an object")
        return dict(value)
    ok = not isinstance(value, bool)
    if tp is int:
        ok = ok and isinstance(value, (int, float)) and float(value) == int(value)
    elif tp is float:
        ok = ok and isinstance(value, (int, float))
    elif tp is str:
        ok = isinstance(value, str)
    if not ok:
        raise InvalidInputError(f"{path}: invalid value {value!r}, expected {tp.__name__}")
    return tp(value)


def apply_overrides(d: dict, overrides: List[str]) -> dict:
    """Apply ``key.sub=value`` overrides; values are parsed as JSON when possible."""
    d = copy.deepcopy(d)
    for item in overrides or []:
        if "=" not in item:
            raise InvalidInputError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = d
        parts = key.split(".")
        for p in parts[:-1]:
            if node.get(p) is None:
                node[p] = {}
            node = node[p]
            if not isinstance(node, dict):
                raise InvalidInputError(f"{key}: cannot set a field inside a non-object")
        node[parts[-1]] = value
    return d


def load_config(path: Optional[str], overrides: List[str] = (), base: Optional[dict] = None) -> ExperimentConfig:
    d = ExperimentConfig().to_dict() if base is None else base
    if path:
        with open(path, encoding="utf-8") as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as e:
                raise InvalidInputError(f"config is not valid JSON: {e}") from e
        d = _merge(d, user)
    return ExperimentConfig.from_dict(apply_overrides(d, list(overrides)))


def _merge(base: dict, user: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in user.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("weights",):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header: List[str], rows: List[list], comments: List[str] = ()) -> str:
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def atomic_write(path: str, text: str):
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class ExperimentResult:
    experiment: str
    header: List[str]
    rows: List[list]
    tidy: List[list] = field(default_factory=list)  # rows of TIDY_HEADER
    summary: Dict[str, Any] = field(default_factory=dict)
    comments: List[str] = field(default_factory=list)

    def lines(self) -> List[str]:
        return [", ".join(f"{h}={_fmt(v)}" for h, v in zip(self.header, r)) for r in self.rows]


def emit_plot_data(result: ExperimentResult, directory: str) -> str:
    """Write the long-format table ``experiment, eps, estimator, metric, value, std_err``."""
    path = os.path.join(directory, f"{result.experiment}_plot_data.csv")
    atomic_write(path, csv_text(TIDY_HEADER, result.tidy))
    return path


def write_outputs(result: ExperimentResult, cfg: ExperimentConfig, directory: str) -> List[str]:
    paths = []
    if "csv" in cfg.output.formats:
        path = os.path.join(directory, f"{result.experiment}.csv")
        atomic_write(path, csv_text(result.header, result.rows, result.comments))
        paths.append(path)
        paths.append(emit_plot_data(result, directory))
    if "json" in cfg.output.formats:
        summary = {
            "config_hash": cfg.config_hash,
            "seed": cfg.mc.seed,
            "config": cfg.to_dict(),
            "reports": [dict(zip(result.header, [_jsonable(x) for x in r])) for r in result.rows],
            **result.summary,
        }
        path = os.path.join(directory, f"{result.experiment}_summary.json")
        atomic_write(path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
        paths.append(path)
    return paths


def _jsonable(x):
    if isinstance(x, (np.integer, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    return x


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------

class Context:
    """Objects derived from a validated config."""

    def __init__(self, cfg: ExperimentConfig, threads: Optional[int] = None):
        self.cfg = cfg
        self.threads = threads
        self.ball = SobolevBall(cfg.ball.beta, cfg.ball.L)
        self.domain = ParamDomain(cfg.model.tau0)
        self.opts = SearchOptions(**dataclasses.asdict(cfg.search))
        if cfg.model.signal is None:
            self.signal = sobolev_boundary_signal(self.ball, cfg.model.K)
        else:
            _field_check("model.signal", lambda: SignalSpectrum(cfg.model.signal))
            self.signal = SignalSpectrum(cfg.model.signal)

    def theta(self, eps: float) -> float:
        th = self.cfg.model.theta
        th = eps / 2 if th is None else th
        if not self.domain.contains(th):
            raise InvalidInputError(f"model.theta: {th} lies outside [-tau0, tau0]")
        return th

    def weights(self, wc: WeightsConfig, eps: float) -> WeightSequence:
        if wc.kind == CUSTOM:
            if wc.values is None:
                raise InvalidInputError("weights.values: required for custom weights")
            return WeightSequence(wc.values, CUSTOM)
        K = self.cfg.model.K
        if wc.kind != "projection":
            K = max(K, math.ceil(solve_bandwidth(self.ball, eps).W))
        try:
            return weights_for(wc.kind, self.ball, eps, K=K, gamma=wc.gamma, N=wc.N)
        except InvalidInputError as e:
            raise InvalidInputError(f"weights: {e}") from e

    def specs(self, eps: float) -> List[EstimatorSpec]:
        out = []
        for i, e in enumerate(self.cfg.estimators):
            w = None if e.kind in _NO_WEIGHTS else self.weights(e.weights or self.cfg.weights, eps)
            sig = self.signal if e.kind in ("oracle_ml", "local_known", "linearized_oracle") else None
            try:
                out.append(EstimatorSpec(e.kind, w, sig, e.label))
            except InvalidInputError as err:
                raise InvalidInputError(f"estimators[{i}]: {err}") from err
        return out

    def K_for(self, specs) -> int:
        K = max(self.cfg.model.K, self.signal.K_f)
        for s in specs:
            if s.weights is not None:
                K = max(K, s.weights.support)
        return K


def _risk_rows(ctx, eps, experiment):
    cfg = ctx.cfg
    specs = ctx.specs(eps)
    theta = ctx.theta(eps)
    reports, diffs = ex.mc_risk_paired(specs, ctx.signal, theta, eps, ctx.K_for(specs), cfg.mc.reps, cfg.mc.seed,
                                       ctx.domain, ctx.opts, ctx.threads)
    rows, tidy = [], []
    for r in reports:
        rows.append([eps, theta, r.estimator, r.mean_sq_normalized, r.std_err, r.reps, r.degenerate_count, r.seed])
        tidy.append([experiment, eps, r.estimator, "normalized_risk", r.mean_sq_normalized, r.std_err])
        tidy.append([experiment, eps, r.estimator, "degenerate_count", r.degenerate_count, 0.0])
    for d in diffs:
        tidy.append([experiment, eps, f"{d.first}-{d.second}", "paired_difference", d.mean, d.std_err])
    return rows, tidy


RISK_HEADER = ["eps", "theta", "estimator", "mean_sq_normalized", "std_err", "reps", "degenerate_count", "seed"]


def run_risk(ctx: Context) -> ExperimentResult:
    rows, tidy = _risk_rows(ctx, ctx.cfg.model.eps, "risk")
    return ExperimentResult("risk", RISK_HEADER, rows, tidy)


def run_sweep(ctx: Context) -> ExperimentResult:
    rows, tidy = [], []
    for eps in ctx.cfg.model.eps_list:
        r, t = _risk_rows(ctx, eps, "sweep")
        rows += r
        tidy += t
    return ExperimentResult("sweep", RISK_HEADER, rows, tidy)


def run_verify_theorem1(ctx: Context) -> ExperimentResult:
    cfg = ctx.cfg
    wc = cfg.weights
    rows, tidy = [], []
    lo, hi = cfg.bands.excess_ratio
    for eps in cfg.model.eps_list:
        table = ex.verify_theorem1(ctx.signal, lambda e: ctx.weights(wc, e), ctx.theta(eps), [eps], cfg.mc.reps,
                                   cfg.mc.seed, cfg.model.K, ctx.domain, ctx.opts, ctx.threads)
        for r in table:
            rows.append([r.eps, r.mc_risk, r.predicted, r.excess_ratio, r.std_err])
            for metric in ("mc_risk", "predicted", "excess_ratio"):
                se = r.std_err if metric == "mc_risk" else 0.0
                tidy.append(["verify_theorem1", r.eps, f"adaptive_contrast[{wc.kind}]", metric, getattr(r, metric), se])
    comments = [f"excess_ratio band [{lo}, {hi}]"]
    return ExperimentResult("verify_theorem1", ["eps", "mc_risk", "predicted", "excess_ratio", "std_err"], rows, tidy,
                            comments=comments)


def weights_table(ball: SobolevBall, eps: float, K: Optional[int] = None, gamma: Optional[float] = None):
    """Rows ``(k, q_k, lambda_star_k, s2_k)`` and the bandwidth ``W``."""
    sol = solve_bandwidth(ball, eps)
    W = sol.W
    gamma = default_gamma(eps) if gamma is None else gamma
    K = max(K or 0, math.ceil(W))
    q = pinsker_weights(ball, W, K)
    lam = weights_for(CORRECTED, ball, eps, K=K, gamma=gamma)
    qv = q.padded(K)
    with np.errstate(divide="ignore"):
        s2 = np.where(qv < 1, eps**2 * qv / np.where(qv < 1, 1 - qv, 1.0), np.inf)
    rows = [[k, qv[k - 1], lam.padded(K)[k - 1], s2[k - 1]] for k in range(1, K + 1)]
    return rows, sol, gamma


def run_weights(ctx: Context) -> ExperimentResult:
    eps = ctx.cfg.model.eps
    if not eps > 0:
        raise InvalidInputError("model.eps: weights need eps > 0")
    rows, sol, gamma = weights_table(ctx.ball, eps, ctx.cfg.model.K, ctx.cfg.weights.gamma)
    comments = [f"W={_fmt(sol.W)}", f"eps={_fmt(eps)}", f"beta={_fmt(ctx.ball.beta)}", f"L={_fmt(ctx.ball.L)}",
                f"gamma={_fmt(gamma)}", f"head={head_size(gamma, sol.W)}"]
    tidy = [["weights", eps, "", name, r[i], 0.0] for r in rows for i, name in ((1, "q_k"), (2, "lambda_star_k"))]
    return ExperimentResult("weights", ["k", "q_k", "lambda_star_k", "s2_k"], rows, tidy,
                            summary={"W": sol.W, "residual": sol.residual, "iterations": sol.iterations},
                            comments=comments)


def build_prior(ctx: Context, eps: float) -> ex.PriorSpec:
    pc = ctx.cfg.prior or PriorConfig()
    tp = ex.theta_prior_from_dict(pc.theta_prior)
    if pc.sigma2 is not None:
        return ex.PriorSpec(ctx.signal, np.asarray(pc.sigma2), tp)
    gamma = ctx.cfg.weights.gamma
    prior = ex.truncated_prior(ctx.signal, ctx.ball, eps, gamma)
    return ex.PriorSpec(prior.fbar, prior.sigma2, tp)


def run_lowerbound(ctx: Context) -> ExperimentResult:
    cfg = ctx.cfg
    eps = cfg.model.eps
    prior = build_prior(ctx, eps)
    bound = ex.van_trees_bound(prior, eps)
    specs = ctx.specs(eps)
    reports = ex.bayes_risk_experiment_many(specs, prior, eps, ctx.K_for(specs), cfg.mc.reps, cfg.mc.seed,
                                            None, ctx.opts, ctx.threads)
    header = ["eps", "estimator", "bayes_risk_normalized", "std_err", "bound_raw", "bound_expanded", "i_bar",
              "risk_random_normalized", "std_err_random", "reps", "degenerate_count", "seed"]
    rows, tidy = [], []
    for r in reports:
        rows.append([eps, r.estimator, r.bayes_risk_normalized, r.std_err, bound.bound_raw, bound.bound_expanded,
                     bound.i_bar, r.risk_random_normalized, r.std_err_random, r.reps, r.degenerate_count, r.seed])
        tidy.append(["lowerbound", eps, r.estimator, "bayes_risk_normalized", r.bayes_risk_normalized, r.std_err])
        tidy.append(["lowerbound", eps, r.estimator, "risk_random_normalized", r.risk_random_normalized,
                     r.std_err_random])
    for metric in ("bound_raw", "bound_expanded", "excess_term"):
        tidy.append(["lowerbound", eps, "", metric, getattr(bound, metric), 0.0])
    delta2 = ex.vicinity_radius_sq(ctx.ball, eps, cfg.weights.gamma)
    summary = {"bound": dataclasses.asdict(bound), "delta_sq": delta2,
               "note": "delta^2 = eps^2 W gamma^(2 - 2 beta) is one finite-eps choice of the vicinity radius"}
    return ExperimentResult("lowerbound", header, rows, tidy, summary=summary)


def run_simulate(ctx: Context) -> ExperimentResult:
    cfg = ctx.cfg
    eps = cfg.model.eps
    theta = ctx.theta(eps)
    K = max(cfg.model.K, ctx.signal.K_f)
    obs = simulate(ctx.signal, theta, eps, K, cfg.model.kind, RandomStream(cfg.mc.seed))
    rows = [[k, a, b] for k, (a, b) in enumerate(obs.pairs, start=1)]
    comments = [f"kind={obs.kind}", f"eps={_fmt(eps)}", f"theta={_fmt(theta)}", f"seed={cfg.mc.seed}"]
    return ExperimentResult("simulate", ["k", "a", "b"], rows, [], comments=comments)


def run_estimate(ctx: Context) -> ExperimentResult:
    cfg = ctx.cfg
    eps = cfg.model.eps
    theta = ctx.theta(eps)
    specs = ctx.specs(eps)
    K = ctx.K_for(specs)
    obs = {}
    rows, tidy = [], []
    for s in specs:
        if s.model not in obs:
            obs[s.model] = simulate(ctx.signal, theta, eps, K, s.model, RandomStream(cfg.mc.seed))
        est = estimate(s, obs[s.model], ctx.domain, ctx.opts, on_degenerate="clamp")
        rows.append([eps, theta, s.id, est])
        tidy.append(["estimate", eps, s.id, "theta_hat", est, 0.0])
    return ExperimentResult("estimate", ["eps", "theta", "estimator", "theta_hat"], rows, tidy)


RUNNERS = {
    "risk": run_risk,
    "sweep": run_sweep,
    "verify_theorem1": run_verify_theorem1,
    "weights": run_weights,
    "lowerbound": run_lowerbound,
    "simulate": run_simulate,
    "estimate": run_estimate,
}


def execute(cfg: ExperimentConfig, out_dir: Optional[str] = None, threads: Optional[int] = None):
    """Run the configured experiment and write its outputs; returns ``(result, paths)``."""
    ctx = Context(cfg, threads)
    result = RUNNERS[cfg.experiment](ctx)
    paths = write_outputs(result, cfg, out_dir or cfg.output.directory)
    return result, paths


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
    p.add_argument("--seed", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--threads", type=int, help="worker threads (default: $SHIFT_LAB_THREADS or 1)")
    p.add_argument("--format", choices=["csv", "json"], action="append", help="output format (repeatable)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shift-lab", description="Shift estimation experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run the experiment named in a config")
    _common(p)
    for name, exp in (("simulate", "simulate"), ("estimate", "estimate"), ("risk", "risk"),
                      ("lowerbound", "lowerbound"), ("sweep", "sweep"), ("theorem1", "verify_theorem1")):
        p = sub.add_parser(name, help=f"run the {exp} experiment")
        _common(p)
        p.add_argument("--eps", type=float)
        p.set_defaults(experiment=exp)
    p = sub.add_parser("weights", help="tabulate Pinsker and corrected weights")
    _common(p)
    p.add_argument("--beta", type=float, default=2.0)
    p.add_argument("--L", type=float, default=1.0)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--K", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--out", help="CSV path (default: <out-dir>/weights.csv)")
    p = sub.add_parser("selftest", help="run the acceptance suite")
    p.add_argument("--only", help="comma-separated criterion numbers")
    p.add_argument("--threads", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config_from_args(args) -> ExperimentConfig:
    overrides = list(args.set)
    exp = getattr(args, "experiment", None)
    if exp:
        overrides.insert(0, f"experiment={json.dumps(exp)}")
    if args.seed is not None:
        overrides.append(f"mc.seed={args.seed}")
    if args.reps is not None:
        overrides.append(f"mc.reps={args.reps}")
    if args.out_dir:
        overrides.append(f"output.directory={json.dumps(args.out_dir)}")
    if args.format:
        overrides.append(f"output.formats={json.dumps(args.format)}")
    if getattr(args, "eps", None) is not None:
        overrides.append(f"model.eps={args.eps!r}")
    if args.command == "weights":
        overrides += [f"ball.beta={args.beta!r}", f"ball.L={args.L!r}"]
        if args.K is not None:
            overrides.append(f"model.K={args.K}")
        if args.gamma is not None:
            overrides.append(f"weights.gamma={args.gamma!r}")
    return load_config(args.config, overrides)


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    return ex.default_threads()


def _selftest(args) -> int:
    from . import acceptance

    only = [int(x) for x in args.only.split(",")] if args.only else None
    results = acceptance.run_all(only, threads=_threads(args))
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVALID


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "selftest":
            return _selftest(args)
        if args.command == "run" and not args.config:
            raise InvalidInputError("run requires --config")
        cfg = _config_from_args(args)
        threads = _threads(args)
        if args.command == "weights":
            result = run_weights(Context(cfg, threads))
            out = args.out or os.path.join(cfg.output.directory, "weights.csv")
            atomic_write(out, csv_text(result.header, result.rows, result.comments))
            print(f"weights: W={_fmt(result.summary['W'])} rows={len(result.rows)} -> {out}")
            return EXIT_OK
        result, paths = execute(cfg, threads=threads)
        for line in result.lines():
            print(f"{result.experiment}: {line}")
        print(f"config_hash={cfg.config_hash} wrote {len(paths)} file(s) to {cfg.output.directory}")
        return EXIT_OK
    except SolverFailureError as e:
        print(f"error: solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except (InvalidInputError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"error: I/O: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
