"""Monte Carlo risk evaluation, Bayesian priors and Van Trees lower bounds.

Replications are independent work items.  Replication ``r`` of an experiment
with seed ``s`` draws its observation noise from ``RandomStream(s, r, NOISE)``
and its prior draws from ``RandomStream(s, r, PRIOR)``; work is split into
fixed-size chunks of consecutive replication indices and the per-replication
losses are reassembled in index order before any reduction.  Results are
therefore bitwise identical for any number of worker threads.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from . import streams
from .errors import InvalidInputError
from .estimators import (
    ADAPTIVE_CONTRAST,
    EstimatorSpec,
    SearchOptions,
    derivative_estimate_curve,
    estimate_batch,
)
from .signal_model import (
    FULL,
    ParamDomain,
    SignalSpectrum,
    SobolevBall,
    frequencies,
    noise_block,
    norms,
    pad,
    simulate_batch,
)
from .streams import RandomStream
from .weights import (
    WeightSequence,
    default_gamma,
    pinsker_weights,
    prior_variances,
    risk_functional,
    shrinkage_from_variances,
    solve_bandwidth,
)

log = logging.getLogger(__name__)

CHUNK = 2048
MIN_REPS = 100


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get("SHIFT_LAB_THREADS", "1")))
    except ValueError:
        return 1


def run_chunks(fn: Callable[[np.ndarray], Dict[str, np.ndarray]], reps: int,
               threads: Optional[int] = None) -> Dict[str, np.ndarray]:
    """Evaluate ``fn`` on consecutive chunks of ``range(reps)`` and concatenate in order."""
    threads = threads or default_threads()
    chunks = [np.arange(i, min(i + CHUNK, reps)) for i in range(0, reps, CHUNK)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}


def mean_and_se(x: np.ndarray):
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        return float(np.mean(x)), float("nan")
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(x.size))


# --------------------------------------------------------------------------
# frequentist risk
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RiskReport:
    estimator: str
    mean_sq_normalized: float
    std_err: float
    reps: int
    degenerate_count: int
    seed: int
    eps: float = float("nan")
    theta: float = float("nan")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class PairedDifference:
    first: str
    second: str
    mean: float
    std_err: float


def _required_K(specs: Sequence[EstimatorSpec], f: SignalSpectrum, K: int) -> int:
    if K < f.K_f:
        raise InvalidInputError(f"truncation K={K} is below the signal support K_f={f.K_f}")
    for s in specs:
        if s.weights is not None and s.weights.support > K:
            raise InvalidInputError(f"K={K} truncates the weights of {s.id} (support {s.weights.support})")
    return K


def mc_losses(specs: Sequence[EstimatorSpec], f: SignalSpectrum, theta: float, eps: float, K: int,
              reps: int, seed: int, domain: Optional[ParamDomain] = None, opts: Optional[SearchOptions] = None,
              threads: Optional[int] = None) -> Dict[str, np.ndarray]:
    """Per-replication normalized squared errors for several estimators on common noise.

    Returns ``{id: loss}`` and ``{id + "#degenerate": flags}`` arrays of length ``reps``.
    """
    if reps < MIN_REPS:
        raise InvalidInputError(f"reps must be at least {MIN_REPS}")
    domain = domain or ParamDomain()
    K = _required_K(specs, f, K)
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise InvalidInputError(f"estimator ids must be distinct: {ids}")
    info = norms(f)[1] / eps**2 if eps > 0 else 1.0
    coeffs = f.padded(K)

    def work(chunk):
        noise = noise_block(seed, chunk, K) if eps > 0 else None
        out = {}
        batches = {}
        for spec in specs:
            if spec.model not in batches:
                batches[spec.model] = simulate_batch(coeffs, theta, eps, spec.model, seed, chunk, noise)
            res = estimate_batch(spec, batches[spec.model], domain, opts)
            out[spec.id] = (res.estimate - theta) ** 2 * info
            out[spec.id + "#degenerate"] = res.degenerate
        return out

    return run_chunks(work, reps, threads)


def _report(spec_id, losses, degenerate, reps, seed, eps, theta) -> RiskReport:
    m, se = mean_and_se(losses)
    return RiskReport(spec_id, m, se, reps, int(np.sum(degenerate)), seed, float(eps), float(theta))


def mc_risk(spec: EstimatorSpec, f: SignalSpectrum, theta: float, eps: float, K: int, reps: int, seed: int,
            domain: Optional[ParamDomain] = None, opts: Optional[SearchOptions] = None,
            threads: Optional[int] = None) -> RiskReport:
    """Monte Carlo estimate of ``E[(theta_hat - theta)^2 I(f)]``.

    Degenerate ratio estimates are clamped to the domain boundary and counted.
    With ``eps = 0`` the plain squared error is reported.
    """
    out = mc_losses([spec], f, theta, eps, K, reps, seed, domain, opts, threads)
    return _report(spec.id, out[spec.id], out[spec.id + "#degenerate"], reps, seed, eps, theta)


def mc_risk_paired(specs: Sequence[EstimatorSpec], f: SignalSpectrum, theta: float, eps: float, K: int,
                   reps: int, seed: int, domain: Optional[ParamDomain] = None,
                   opts: Optional[SearchOptions] = None, threads: Optional[int] = None):
    """Risk reports for several estimators sharing the full noise stream.

    Also returns the paired difference (first minus each other estimator)
    with its standard error.
    """
    out = mc_losses(specs, f, theta, eps, K, reps, seed, domain, opts, threads)
    reports = [_report(s.id, out[s.id], out[s.id + "#degenerate"], reps, seed, eps, theta) for s in specs]
    diffs = []
    for s in specs[1:]:
        m, se = mean_and_se(out[specs[0].id] - out[s.id])
        diffs.append(PairedDifference(specs[0].id, s.id, m, se))
    return reports, diffs


# --------------------------------------------------------------------------
# second-order expansion check
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExpansionRow:
    eps: float
    mc_risk: float
    predicted: float
    excess_ratio: float
    std_err: float
    degenerate_count: int = 0


WeightsArg = Union[WeightSequence, Callable[[float], WeightSequence]]


def predicted_risk(f: SignalSpectrum, h: WeightSequence, eps: float) -> float:
    """``1 + R[f, h] / ||f'||^2``."""
    return 1.0 + risk_functional(f, h, eps) / norms(f)[1]


def verify_theorem1(f: SignalSpectrum, h: WeightsArg, theta: float, eps_list: Sequence[float], reps: int,
                    seed: int, K: Optional[int] = None, domain: Optional[ParamDomain] = None,
                    opts: Optional[SearchOptions] = None, threads: Optional[int] = None) -> List[ExpansionRow]:
    """Compare the MC risk of the contrast maximizer with ``1 + R[f, h]/||f'||^2`` at each ``eps``.

    ``h`` may be a fixed weight sequence or a function of ``eps`` (weights
    are normally re-tuned at each noise level).
    """
    rows = []
    for eps in eps_list:
        hw = h(eps) if callable(h) else h
        Ke = max(K or 0, f.K_f, hw.support)
        rep = mc_risk(EstimatorSpec(ADAPTIVE_CONTRAST, hw), f, theta, eps, Ke, reps, seed, domain, opts, threads)
        pred = predicted_risk(f, hw, eps)
        excess = (rep.mean_sq_normalized - 1.0) / (pred - 1.0) if pred != 1.0 else float("nan")
        rows.append(ExpansionRow(float(eps), rep.mean_sq_normalized, pred, excess, rep.std_err, rep.degenerate_count))
    return rows


# --------------------------------------------------------------------------
# derivative estimation
# --------------------------------------------------------------------------

def derivative_mise_mc(f: SignalSpectrum, h: WeightSequence, eps: float, theta: float, reps: int, seed: int,
                       grid_points: Optional[int] = None, threads: Optional[int] = None):
    """MC relative MISE of the linear estimator of ``f'``.

    The integrated squared error is computed by a uniform Riemann sum over
    one period, which is exact for trigonometric polynomials of degree below
    the number of grid points.
    """
    K = max(f.K_f, h.K_h)
    M = grid_points or 8 * K
    s = np.arange(M) / M - 0.5
    w = frequencies(K)
    fprime = -math.sqrt(2.0) * np.sin(np.multiply.outer(s, w)) @ (w * f.padded(K))
    n1 = norms(f)[1]

    def work(chunk):
        batch = simulate_batch(f.padded(K), theta, eps, FULL, seed, chunk)
        est = derivative_estimate_curve(batch, h, s)
        return {"rel": np.mean((est - fprime) ** 2, axis=1) / n1}

    return mean_and_se(run_chunks(work, reps, threads)["rel"])


# --------------------------------------------------------------------------
# priors
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PointMass:
    theta: float

    kind = "point_mass"

    @property
    def fisher_info(self) -> float:
        return math.inf

    def sample(self, u):
        return np.full(np.shape(u), float(self.theta))

    def to_dict(self):
        return {"kind": self.kind, "theta": self.theta}


@dataclass(frozen=True)
class CosineSquared:
    """Density ``cos^2(pi x / (2 tau0)) / tau0`` on ``[-tau0, tau0]``."""

    tau0: float

    kind = "cosine_squared"

    def __post_init__(self):
        ParamDomain(self.tau0)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        inside = np.abs(x) <= self.tau0
        return np.where(inside, np.cos(np.pi * x / (2 * self.tau0)) ** 2 / self.tau0, 0.0)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), -self.tau0, self.tau0)
        return (x + self.tau0) / (2 * self.tau0) + np.sin(np.pi * x / self.tau0) / (2 * np.pi)

    @property
    def fisher_info(self) -> float:
        return (np.pi / self.tau0) ** 2

    def sample(self, u, iterations: int = 60):
        """Inverse-CDF transform of uniforms ``u`` by bisection on the monotone CDF."""
        u = np.asarray(u, dtype=float)
        lo = np.full(u.shape, -self.tau0)
        hi = np.full(u.shape, self.tau0)
        for _ in range(iterations):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < u
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def to_dict(self):
        return {"kind": self.kind, "tau0": self.tau0}


ThetaPrior = Union[PointMass, CosineSquared]


def theta_prior_from_dict(d: dict) -> ThetaPrior:
    if d.get("kind") == PointMass.kind:
        return PointMass(float(d["theta"]))
    if d.get("kind") == CosineSquared.kind:
        return CosineSquared(float(d["tau0"]))
    raise InvalidInputError(f"prior.theta_prior.kind must be point_mass or cosine_squared, got {d.get('kind')!r}")


@dataclass(frozen=True)
class PriorSpec:
    """Independent ``N(fbar_k, sigma2_k)`` coefficients and a prior on the shift."""

    fbar: SignalSpectrum
    sigma2: np.ndarray = field(repr=False)
    theta_prior: ThetaPrior = field(default_factory=lambda: CosineSquared(0.2))

    def __post_init__(self):
        s = np.array(self.sigma2, dtype=float).reshape(-1)
        if not np.all(np.isfinite(s)) or np.any(s < 0):
            raise InvalidInputError("prior variances must be finite and nonnegative")
        s.setflags(write=False)
        object.__setattr__(self, "sigma2", s)

    @property
    def K(self) -> int:
        return max(self.fbar.K_f, self.sigma2.size)

    def means(self) -> np.ndarray:
        return self.fbar.padded(self.K)

    def variances(self) -> np.ndarray:
        return pad(self.sigma2, self.K)

    def to_dict(self) -> dict:
        return {"fbar": self.fbar.to_list(), "sigma2": self.sigma2.tolist(), "theta_prior": self.theta_prior.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        return cls(SignalSpectrum(d["fbar"]), np.asarray(d.get("sigma2", []), dtype=float),
                   theta_prior_from_dict(d.get("theta_prior", {"kind": "cosine_squared", "tau0": 0.2})))


def truncated_prior(fbar: SignalSpectrum, ball: SobolevBall, eps: float, gamma: Optional[float] = None,
                    tau0: float = 0.2, tol: float = 1e-10) -> PriorSpec:
    """Prior with zero variance on the head ``k <= floor(gamma W)`` and ``(1 - gamma) s_k^2`` beyond."""
    gamma = default_gamma(eps) if gamma is None else gamma
    W = solve_bandwidth(ball, eps, tol).W
    q = pinsker_weights(ball, W, max(math.ceil(W), fbar.K_f))
    sigma2 = prior_variances(q, eps, "truncated", gamma=gamma, W=W)
    return PriorSpec(fbar, sigma2, CosineSquared(tau0))


def vicinity_radius_sq(ball: SobolevBall, eps: float, gamma: Optional[float] = None, tol: float = 1e-10) -> float:
    """``delta^2 = eps^2 W gamma^(2 - 2 beta)``, the radius used for prior-mass checks."""
    gamma = default_gamma(eps) if gamma is None else gamma
    W = solve_bandwidth(ball, eps, tol).W
    return eps**2 * W * gamma ** (2.0 - 2.0 * ball.beta)


def _prior_draws(prior: PriorSpec, stream: RandomStream):
    gen = stream.with_tag(streams.PRIOR).generator()
    z = gen.standard_normal(prior.K)
    u = gen.random()
    return z, u


def sample_prior(prior: PriorSpec, rng: RandomStream):
    """Draw ``(f, theta)``; coefficients with zero variance equal their mean exactly."""
    z, u = _prior_draws(prior, rng)
    f = prior.means() + np.sqrt(prior.variances()) * z
    return SignalSpectrum(f), float(prior.theta_prior.sample(u))


def sample_prior_batch(prior: PriorSpec, seed: int, reps: Sequence[int]):
    """Prior draws for replications ``reps``: coefficients ``(R, K)`` and shifts ``(R,)``."""
    K = prior.K
    z = np.empty((len(reps), K))
    u = np.empty(len(reps))
    for i, r in enumerate(reps):
        z[i], u[i] = _prior_draws(prior, RandomStream(seed, int(r)))
    f = prior.means() + np.sqrt(prior.variances()) * z
    return f, prior.theta_prior.sample(u)


def membership_rate(prior: PriorSpec, delta: float, ball: SobolevBall, reps: int, seed: int,
                    threads: Optional[int] = None) -> float:
    """Fraction of prior draws falling outside the vicinity ``F_delta(fbar)``."""
    if reps < 1000:
        raise InvalidInputError("membership_rate needs at least 1000 replications")
    if not delta > 0:
        raise InvalidInputError("delta must be positive")
    mean = prior.means()

    def work(chunk):
        f, _ = sample_prior_batch(prior, seed, chunk)
        v = f - mean
        inside = (np.sum(v**2, axis=1) <= delta**2) & (ball.energy(v) <= ball.L)
        return {"outside": ~inside}

    return float(np.mean(run_chunks(work, reps, threads)["outside"]))


# --------------------------------------------------------------------------
# Fisher information and Van Trees bounds
# --------------------------------------------------------------------------

def block_fisher_info(fbar_k: float, sigma2_k: float, eps: float, k: int) -> float:
    """Information about the shift in one pair ``(x_k, x*_k)`` with ``f_k ~ N(fbar_k, sigma2_k)``.

    ``eps^-2 (fbar^2 + sigma^4 / (eps^2 + sigma^2)) (2 pi k)^2``.
    """
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps}")
    if not sigma2_k >= 0:
        raise InvalidInputError("sigma2_k must be nonnegative")
    return (fbar_k**2 + sigma2_k**2 / (eps**2 + sigma2_k)) * (2 * np.pi * k) ** 2 / eps**2


def marginal_logpdf(x, xs, theta, fbar_k: float, sigma2_k: float, eps: float, k: int):
    """Log density of ``(x, x*)`` after integrating out ``f_k ~ N(fbar_k, sigma2_k)``.

    The pair is Gaussian with mean ``fbar_k u`` and covariance
    ``eps^2 I + sigma2_k u u^T`` where ``u = (cos 2 pi k theta, sin 2 pi k theta)``.
    """
    c, s = np.cos(2 * np.pi * k * theta), np.sin(2 * np.pi * k * theta)
    ra, rb = x - fbar_k * c, xs - fbar_k * s
    along = ra * c + rb * s  # component along u
    total = ra**2 + rb**2
    var_along = eps**2 + sigma2_k
    quad = (total - along**2) / eps**2 + along**2 / var_along
    return -0.5 * quad - math.log(2 * np.pi) - 0.5 * math.log(eps**2 * var_along)


def score_variance_mc(fbar_k: float, sigma2_k: float, eps: float, k: int, theta: float, draws: int, seed: int,
                      step: float = 1e-6):
    """MC estimate of ``E[(d/dtheta log p_theta)^2]`` using central differences of the log density."""
    gen = RandomStream(seed, 0, streams.AUX).generator()
    f0 = fbar_k + math.sqrt(sigma2_k) * gen.standard_normal(draws)
    xi = gen.standard_normal((draws, 2))
    x = f0 * np.cos(2 * np.pi * k * theta) + eps * xi[:, 0]
    xs = f0 * np.sin(2 * np.pi * k * theta) + eps * xi[:, 1]
    h = step / k
    score = (marginal_logpdf(x, xs, theta + h, fbar_k, sigma2_k, eps, k)
             - marginal_logpdf(x, xs, theta - h, fbar_k, sigma2_k, eps, k)) / (2 * h)
    return mean_and_se(score**2)


@dataclass(frozen=True)
class VanTreesBound:
    bound_raw: float
    bound_expanded: float
    i_bar: float
    info_total: float
    prior_info: float
    excess_term: float  # (1/I_bar) sum (2 pi k)^2 lambda_k


def average_information(prior: PriorSpec, eps: float) -> float:
    """``I_bar = eps^-2 sum (2 pi k)^2 (fbar_k^2 + sigma2_k)``."""
    w2 = frequencies(prior.K) ** 2
    return float(np.sum(w2 * (prior.means() ** 2 + prior.variances()))) / eps**2


def van_trees_bound(prior: PriorSpec, eps: float) -> VanTreesBound:
    """Van Trees lower bound on the ``I_bar``-normalized Bayes risk and its expansion."""
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps}")
    if isinstance(prior.theta_prior, PointMass):
        raise InvalidInputError("a point-mass shift prior has infinite Fisher information")
    K = prior.K
    fbar, s2 = prior.means(), prior.variances()
    info = float(sum(block_fisher_info(fbar[k - 1], s2[k - 1], eps, k) for k in range(1, K + 1)))
    i_pi = prior.theta_prior.fisher_info
    i_bar = average_information(prior, eps)
    lam = shrinkage_from_variances(s2, eps)
    excess = float(np.sum(frequencies(K) ** 2 * lam)) / i_bar
    return VanTreesBound(i_bar / (info + i_pi), 1.0 + excess - i_pi / i_bar, i_bar, info, i_pi, excess)


@dataclass(frozen=True)
class BayesRiskReport:
    estimator: str
    bayes_risk_normalized: float
    std_err: float
    bound: float
    risk_random_normalized: float
    std_err_random: float
    reps: int
    degenerate_count: int
    seed: int
    eps: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def bayes_risk_experiment_many(specs: Sequence[EstimatorSpec], prior: PriorSpec, eps: float, K: int, reps: int,
                               seed: int, domain: Optional[ParamDomain] = None,
                               opts: Optional[SearchOptions] = None,
                               threads: Optional[int] = None) -> List[BayesRiskReport]:
    """Bayes risks of several estimators on shared prior and noise draws.

    Each replication draws ``(f, theta)`` from the prior, simulates the full
    model and applies every estimator.  Oracle estimators receive the
    realized signal.  Risks are normalized by ``I_bar`` and, for comparison,
    by the realized ``I(f)``.  Estimates outside the domain are projected
    onto it and counted as degenerate.
    """
    if reps < MIN_REPS:
        raise InvalidInputError(f"reps must be at least {MIN_REPS}")
    if not eps > 0:
        raise InvalidInputError("Bayes experiments need eps > 0")
    for s in specs:
        if s.model != FULL:
            raise InvalidInputError(f"Bayes experiments simulate the full model; {s.kind} is a local-model estimator")
    domain = domain or ParamDomain(prior.theta_prior.tau0 if isinstance(prior.theta_prior, CosineSquared) else 0.2)
    K = max(K, prior.K)
    for s in specs:
        if s.weights is not None and s.weights.support > K:
            raise InvalidInputError(f"K={K} truncates the weights of {s.id}")
    bound = van_trees_bound(prior, eps)
    i_bar = bound.i_bar
    w2 = frequencies(K) ** 2

    def work(chunk):
        fr, theta = sample_prior_batch(prior, seed, chunk)
        fr = pad(fr, K)
        batch = simulate_batch(fr, theta, eps, FULL, seed, chunk, noise_block(seed, chunk, K))
        info = np.sum(w2 * fr**2, axis=1) / eps**2
        out = {}
        for spec in specs:
            res = estimate_batch(spec, batch, domain, opts, signals=fr if spec.oracle_flag else None)
            # The linearized oracle is unbounded when sum h (2 pi k)^2 f_k^2 is near zero for a
            # drawn f; projecting onto the domain can only reduce the error since theta lies in it.
            outside = np.abs(res.estimate) > domain.tau0
            err2 = (domain.clamp(res.estimate) - theta) ** 2
            out[spec.id] = err2 * i_bar
            out[spec.id + "#random"] = err2 * info
            out[spec.id + "#degenerate"] = res.degenerate | outside
        return out

    out = run_chunks(work, reps, threads)
    reports = []
    for s in specs:
        m, se = mean_and_se(out[s.id])
        mr, ser = mean_and_se(out[s.id + "#random"])
        reports.append(BayesRiskReport(s.id, m, se, bound.bound_raw, mr, ser, reps,
                                       int(np.sum(out[s.id + "#degenerate"])), seed, float(eps)))
    return reports


def bayes_risk_experiment(spec: EstimatorSpec, prior: PriorSpec, eps: float, K: int, reps: int, seed: int,
                          domain: Optional[ParamDomain] = None, opts: Optional[SearchOptions] = None,
                          threads: Optional[int] = None):
    """Return ``(bayes_risk_normalized, std_err, bound_raw)`` for one estimator."""
    rep = bayes_risk_experiment_many([spec], prior, eps, K, reps, seed, domain, opts, threads)[0]
    return rep.bayes_risk_normalized, rep.std_err, rep.bound
