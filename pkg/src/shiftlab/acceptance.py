"""Acceptance suite shared by ``shift-lab selftest`` and the test-suite.

Each criterion returns a :class:`CriterionResult`; criteria that run a Monte
Carlo experiment go through the same config-driven pipeline as the command
line, so their CSV outputs can be compared across thread counts.
"""

import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from . import cli
from . import experiments as ex
from .estimators import (
    ADAPTIVE_CONTRAST,
    LINEARIZED_FULL,
    LINEARIZED_ORACLE,
    ORACLE_ML,
    EstimatorSpec,
    closed_form_risk_linearized,
    derivative_mise,
    estimate,
)
from .signal_model import FULL, ParamDomain, SignalSpectrum, SobolevBall, simulate, sobolev_boundary_signal, norms
from .streams import RandomStream
from .weights import (
    WeightSequence,
    bandwidth_asymptotic,
    bandwidth_equation,
    corrected_weights,
    default_gamma,
    minimax_value,
    pinsker_weights,
    risk_functional,
    saddle_signal,
    solve_bandwidth,
)

SEED = 20240601
BALL = SobolevBall(2.0, 1.0)
K_F = 32
EPS_MAIN = 0.05
MC_REPS = 100_000


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    files: Dict[str, bytes] = field(default_factory=dict, repr=False)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def boundary_signal() -> SignalSpectrum:
    return sobolev_boundary_signal(BALL, K_F)


def main_weights(eps: float) -> WeightSequence:
    W = solve_bandwidth(BALL, eps).W
    return corrected_weights(BALL, W, default_gamma(eps), max(K_F, math.ceil(W)))


def _base_config(experiment: str, estimators: List[dict], reps: int, seed: int, **model) -> cli.ExperimentConfig:
    d = cli.ExperimentConfig().to_dict()
    d["experiment"] = experiment
    d["estimators"] = estimators
    d["mc"] = {"reps": reps, "seed": seed}
    d["model"].update(model)
    d["model"]["signal"] = boundary_signal().to_list()
    d["output"]["formats"] = ["csv"]
    return cli.ExperimentConfig.from_dict(d)


def _run_pipeline(cfg: cli.ExperimentConfig, threads: int):
    with tempfile.TemporaryDirectory() as tmp:
        result, paths = cli.execute(cfg, tmp, threads)
        files = {}
        for p in paths:
            with open(p, "rb") as fh:
                files[os.path.basename(p)] = fh.read()
    return result, files


def _timed(number: int, name: str, fn, *args) -> CriterionResult:
    t0 = time.perf_counter()
    passed, detail, files = fn(*args)
    return CriterionResult(number, name, bool(passed), detail, time.perf_counter() - t0, files)


# --------------------------------------------------------------------------
# criteria
# --------------------------------------------------------------------------

def config_1(reps=MC_REPS) -> cli.ExperimentConfig:
    return _base_config("risk", [{"kind": LINEARIZED_ORACLE}], reps, SEED + 1, eps=EPS_MAIN, K=K_F)


def _c1(threads):
    cfg = config_1()
    result, files = _run_pipeline(cfg, threads)
    row = dict(zip(result.header, result.rows[0]))
    closed = closed_form_risk_linearized(boundary_signal(), main_weights(EPS_MAIN), EPS_MAIN)
    z = abs(row["mean_sq_normalized"] - closed) / row["std_err"]
    detail = f"mc={row['mean_sq_normalized']:.5f} closed_form={closed:.5f} |diff|/se={z:.2f} (need < 3)"
    return z < 3, detail, files


def _c2(threads):
    eps = 0.01
    r_exact, _, _ = minimax_value(BALL, eps)
    W = solve_bandwidth(BALL, eps).W
    K = 4 * math.ceil(W)
    q = pinsker_weights(BALL, W, K)
    s = saddle_signal(BALL, eps)
    identity = abs(risk_functional(s, q, eps) - r_exact) / r_exact
    rng = RandomStream(SEED + 2).generator()
    worst_f = -math.inf
    for _ in range(200):
        f = rng.standard_normal(K)
        f *= math.sqrt(BALL.L / BALL.energy(f))
        worst_f = max(worst_f, risk_functional(f, q, eps) / r_exact - 1)
    worst_h = -math.inf
    for _ in range(200):
        h = rng.random(K)
        worst_h = max(worst_h, 1 - risk_functional(s, h, eps) / r_exact)
    ok = identity <= 1e-10 and worst_f <= 1e-9 and worst_h <= 1e-9
    detail = (f"identity rel err={identity:.1e}, max R[f,q]/r-1={worst_f:.1e}, "
              f"max 1-R[s,h]/r={worst_h:.1e}")
    return ok, detail, {}


def _c3(threads):
    worst = 0.0
    for beta in (1.5, 2.0, 3.0):
        for L in (0.5, 1.0, 2.0):
            ball = SobolevBall(beta, L)
            for eps in (0.1, 0.01, 0.001):
                W = solve_bandwidth(ball, eps).W
                worst = max(worst, abs(bandwidth_equation(ball, eps, W) - L) / L)
    ratio = solve_bandwidth(BALL, 1e-4).W / bandwidth_asymptotic(BALL, 1e-4)
    ok = worst <= 1e-9 and 0.9 <= ratio <= 1.1
    return ok, f"max residual/L={worst:.1e}, W/W_asym at eps=1e-4 (beta=2, L=1)={ratio:.4f}", {}


def _c4(threads):
    rng = RandomStream(SEED + 4).generator()
    domain = ParamDomain(0.2)
    worst = 0.0
    for _ in range(50):
        Kf = int(rng.integers(1, 9))
        f = rng.uniform(-1, 1, Kf)
        f[0] = rng.choice([-1, 1]) * rng.uniform(0.1, 1.0)
        h = rng.random(int(rng.integers(1, 12)))
        h[0] = 1.0
        w = WeightSequence(h)
        theta = float(rng.uniform(-domain.tau0, domain.tau0))
        obs = simulate(SignalSpectrum(f), theta, 0.0, max(Kf, w.K_h), FULL, RandomStream(0))
        worst = max(worst, abs(estimate(EstimatorSpec(ADAPTIVE_CONTRAST, w), obs, domain) - theta))
    return worst <= 1e-8, f"max |theta_hat - theta|={worst:.1e} over 50 draws (need <= 1e-8)", {}


def config_5(reps=MC_REPS) -> cli.ExperimentConfig:
    return _base_config("risk", [{"kind": "local_naive"}, {"kind": "local_corrected"}], reps, SEED + 5,
                        eps=EPS_MAIN, K=K_F, kind="local")


def _c5(threads):
    result, files = _run_pipeline(config_5(), threads)
    diff = next(t for t in result.tidy if t[3] == "paired_difference")
    mean, se = diff[4], diff[5]
    degenerate = [r[6] for r in result.rows]
    detail = (f"risk(naive)-risk(corrected)={mean:.5f} se={se:.5f} ratio={mean / se:.1f} (need > 3); "
              f"degenerate counts={degenerate}")
    return mean > 3 * se, detail, files


def _c6(threads):
    f = boundary_signal()
    rows = []
    for eps in (0.1, 0.05, 0.02):
        rows += ex.verify_theorem1(f, main_weights, eps / 2, [eps], MC_REPS, SEED + 6, K_F, threads=threads)
    lo, hi = 0.5, 2.0
    above = all(r.mc_risk > 1 - 3 * r.std_err for r in rows)
    last = rows[-1]
    ok = above and lo <= last.excess_ratio <= hi
    parts = [f"eps={r.eps}: mc={r.mc_risk:.4f}+-{r.std_err:.4f} pred={r.predicted:.4f} "
             f"excess={r.excess_ratio:.3f}" for r in rows]
    return ok, "; ".join(parts) + f" (need mc > 1-3se everywhere and excess in [{lo}, {hi}] at 0.02)", {}


def _c7(threads):
    f = boundary_signal()
    h = main_weights(EPS_MAIN)
    mc, se = ex.derivative_mise_mc(f, h, EPS_MAIN, EPS_MAIN / 2, 10_000, SEED + 7, threads=threads)
    target = derivative_mise(f, h, EPS_MAIN)
    z = abs(mc - target) / se
    return z < 3, f"mc={mc:.5f}+-{se:.5f} R/||f'||^2={target:.5f} |diff|/se={z:.2f} (need < 3)", {}


def _c8(threads):
    rng = RandomStream(SEED + 8).generator()
    worst_err = worst_spread = 0.0
    for i in range(5):
        fbar = float(rng.uniform(-1, 1))
        eps = float(rng.uniform(0.05, 0.5))
        sigma2 = float(rng.uniform(0, 2)) * eps**2
        k = int(rng.integers(1, 6))
        exact = ex.block_fisher_info(fbar, sigma2, eps, k)
        vals = [ex.score_variance_mc(fbar, sigma2, eps, k, th, 100_000, SEED + 80 + i)[0] for th in (-0.15, 0.0, 0.1)]
        worst_err = max(worst_err, max(abs(v / exact - 1) for v in vals))
        worst_spread = max(worst_spread, (max(vals) - min(vals)) / exact)
    ok = worst_err <= 0.05 and worst_spread <= 0.05
    return ok, f"max rel err={worst_err:.3%}, max theta spread={worst_spread:.3%} (need <= 5%)", {}


def config_9(reps=MC_REPS) -> cli.ExperimentConfig:
    estimators = [{"kind": ORACLE_ML}, {"kind": ADAPTIVE_CONTRAST}, {"kind": LINEARIZED_FULL},
                  {"kind": LINEARIZED_ORACLE}]
    return _base_config("lowerbound", estimators, reps, SEED + 9, eps=EPS_MAIN, K=K_F)


def _c9(threads):
    result, files = _run_pipeline(config_9(), threads)
    rows = [dict(zip(result.header, r)) for r in result.rows]
    floor_ok = all(r["bayes_risk_normalized"] >= r["bound_raw"] - 3 * r["std_err"] for r in rows)
    eps = 1e-3
    fbar = boundary_signal()
    prior = ex.truncated_prior(fbar, BALL, eps)
    excess = ex.van_trees_bound(prior, eps).excess_term
    r_exact = minimax_value(BALL, eps)[0]
    target = r_exact / norms(fbar)[1]
    ratio = excess / target
    ok = floor_ok and abs(ratio - 1) <= 0.15
    risks = ", ".join(f"{r['estimator']}={r['bayes_risk_normalized']:.4f}+-{r['std_err']:.4f}" for r in rows)
    detail = (f"bound_raw={rows[0]['bound_raw']:.4f}; {risks}; "
              f"excess term / (r/||fbar'||^2) at eps=1e-3 = {ratio:.3f} (need within 15%)")
    return ok, detail, files


CRITERIA = {
    1: ("linearized-oracle exact risk", _c1),
    2: ("saddle-point identity", _c2),
    3: ("bandwidth solver", _c3),
    4: ("noiseless recovery", _c4),
    5: ("bias-correction ordering", _c5),
    6: ("second-order risk expansion", _c6),
    7: ("derivative MISE identity", _c7),
    8: ("block Fisher information", _c8),
    9: ("Van Trees floor", _c9),
}

DETERMINISM_CRITERIA = (1, 5, 9)


def run_criterion(number: int, threads: int = 1) -> CriterionResult:
    name, fn = CRITERIA[number]
    return _timed(number, name, fn, threads)


def determinism(first: Dict[int, CriterionResult], threads: int = 1, other_threads: int = 3) -> CriterionResult:
    """Rerun the pipeline-backed criteria with another thread count and compare CSV bytes."""
    t0 = time.perf_counter()
    mismatched = []
    for n in DETERMINISM_CRITERIA:
        base = first.get(n) or run_criterion(n, threads)
        again = run_criterion(n, other_threads if other_threads != threads else threads + 1)
        if not base.files or base.files != again.files:
            mismatched.append(n)
    detail = (f"CSV outputs of criteria {DETERMINISM_CRITERIA} identical across thread counts"
              if not mismatched else f"CSV outputs differ for criteria {mismatched}")
    return CriterionResult(10, "determinism across thread counts", not mismatched, detail, time.perf_counter() - t0)


def run_all(only: Optional[List[int]] = None, threads: int = 1) -> List[CriterionResult]:
    wanted = sorted(only) if only else list(range(1, 11))
    results = {}
    for n in wanted:
        if n in CRITERIA:
            results[n] = run_criterion(n, threads)
    if 10 in wanted:
        results[10] = determinism(results, threads)
    return [results[n] for n in wanted if n in results]
