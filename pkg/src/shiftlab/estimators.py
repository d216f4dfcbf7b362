"""Shift estimators for the full and local sequence models.

The main estimator maximizes the contrast

    L(tau) = sum_k h_k (x_k cos(2 pi k tau) + x*_k sin(2 pi k tau))^2

over ``[-tau0, tau0]``.  With Pinsker-type weights this is the penalized
maximum likelihood estimator; with ``h = f`` and the square dropped it is the
known-signal maximum likelihood estimator.  The remaining estimators are
closed-form ratios.

All estimators work on :class:`ObservationBatch` rows in a vectorized way; the
scalar :func:`estimate` wraps a single observation.
"""

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateEstimateError, InvalidInputError
from .signal_model import (
    FULL,
    LOCAL,
    ObservationBatch,
    ParamDomain,
    SequenceObservation,
    SignalSpectrum,
    frequencies,
    norms,
    pad,
)
from .weights import WeightSequence, risk_functional

ORACLE_ML = "oracle_ml"
ADAPTIVE_CONTRAST = "adaptive_contrast"
LINEARIZED_FULL = "linearized_full"
LOCAL_KNOWN = "local_known"
LOCAL_NAIVE = "local_naive"
LOCAL_CORRECTED = "local_corrected"
LINEARIZED_ORACLE = "linearized_oracle"

ESTIMATOR_KINDS = (ORACLE_ML, ADAPTIVE_CONTRAST, LINEARIZED_FULL, LOCAL_KNOWN,
                   LOCAL_NAIVE, LOCAL_CORRECTED, LINEARIZED_ORACLE)
ORACLE_KINDS = frozenset({ORACLE_ML, LOCAL_KNOWN, LINEARIZED_ORACLE})
FULL_KINDS = frozenset({ORACLE_ML, ADAPTIVE_CONTRAST, LINEARIZED_FULL, LINEARIZED_ORACLE})
_NEEDS_WEIGHTS = frozenset({ADAPTIVE_CONTRAST, LINEARIZED_FULL, LOCAL_NAIVE, LOCAL_CORRECTED, LINEARIZED_ORACLE})
_NEEDS_SIGNAL = frozenset({ORACLE_ML, LOCAL_KNOWN, LINEARIZED_ORACLE})

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class EstimatorSpec:
    """Which estimator to run and the weights/signal it is built from."""

    kind: str
    weights: Optional[WeightSequence] = None
    signal: Optional[SignalSpectrum] = None
    label: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise InvalidInputError(f"unknown estimator kind {self.kind!r}")
        if self.kind in _NEEDS_WEIGHTS and self.weights is None:
            raise InvalidInputError(f"estimator {self.kind} needs weights")

    @property
    def oracle_flag(self) -> bool:
        return self.kind in ORACLE_KINDS

    @property
    def model(self) -> str:
        return FULL if self.kind in FULL_KINDS else LOCAL

    @property
    def id(self) -> str:
        if self.label:
            return self.label
        if self.weights is not None and self.kind != ORACLE_ML:
            return f"{self.kind}[{self.weights.kind}]"
        return self.kind

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "oracle": self.oracle_flag}
        if self.weights is not None:
            d["weights"] = self.weights.to_dict()
        if self.signal is not None:
            d["signal"] = self.signal.to_list()
        if self.label:
            d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorSpec":
        weights = WeightSequence.from_dict(d["weights"]) if d.get("weights") else None
        signal = SignalSpectrum(d["signal"]) if d.get("signal") is not None else None
        return cls(d["kind"], weights, signal, d.get("label"))


@dataclass(frozen=True)
class SearchOptions:
    """Grid size and refinement tolerance for the contrast maximizers.

    ``grid_points=None`` resolves to ``max(1024, 16 K_h)``.
    """

    grid_points: Optional[int] = None
    refine_tol: float = 1e-10
    refine_max_iter: int = 200

    def __post_init__(self):
        if not self.refine_tol > 0:
            raise InvalidInputError("refine_tol must be positive")
        if self.refine_max_iter < 1:
            raise InvalidInputError("refine_max_iter must be at least 1")

    def resolve(self, K_h: int) -> int:
        need = 16 * max(K_h, 1)
        if self.grid_points is None:
            return max(1024, need)
        if self.grid_points < need:
            raise InvalidInputError(
                f"grid_points={self.grid_points} cannot resolve frequency {K_h} (need >= {need})")
        return int(self.grid_points)


# --------------------------------------------------------------------------
# contrast function
# --------------------------------------------------------------------------

def _require_full(obs):
    if obs.kind != FULL:
        raise InvalidInputError("the contrast is defined for full-model observations only")


def _aligned(obs: SequenceObservation, h: WeightSequence):
    K = max(obs.K, h.K_h)
    return pad(obs.a, K), pad(obs.b, K), h.padded(K), frequencies(K)


def contrast(obs: SequenceObservation, h: WeightSequence, tau):
    """``L(tau) = sum_k h_k (a_k cos(2 pi k tau) + b_k sin(2 pi k tau))^2``."""
    _require_full(obs)
    a, b, hv, w = _aligned(obs, h)
    tau = np.asarray(tau, dtype=float)
    phase = np.multiply.outer(tau, w)
    y = a * np.cos(phase) + b * np.sin(phase)
    out = np.sum(hv * y**2, axis=-1)
    return float(out) if out.ndim == 0 else out


def contrast_derivative(obs: SequenceObservation, h: WeightSequence, tau):
    """``L'(tau) = 2 pi sum_k h_k k {2 a_k b_k cos(4 pi k tau) - (a_k^2 - b_k^2) sin(4 pi k tau)}``."""
    _require_full(obs)
    a, b, hv, w = _aligned(obs, h)
    tau = np.asarray(tau, dtype=float)
    phase2 = 2.0 * np.multiply.outer(tau, w)
    k = w / (2.0 * np.pi)
    out = 2.0 * np.pi * np.sum(hv * k * (2.0 * a * b * np.cos(phase2) - (a**2 - b**2) * np.sin(phase2)), axis=-1)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# vectorized global search
# --------------------------------------------------------------------------

class _Objective:
    """Trigonometric objective for a batch, restricted to frequencies with nonzero coefficient.

    ``quadratic=True``:  sum_k c_k y_k(tau)^2   (contrast)
    ``quadratic=False``: sum_k c_k y_k(tau)     (known-signal likelihood)
    with ``y_k(tau) = a_k cos(2 pi k tau) + b_k sin(2 pi k tau)``.
    """

    def __init__(self, coef, a, b, quadratic):
        coef = np.broadcast_to(np.asarray(coef, dtype=float), a.shape)
        active = np.flatnonzero(np.any(coef != 0.0, axis=0))
        self.c = coef[:, active]
        self.a = a[:, active]
        self.b = b[:, active]
        self.w = frequencies(a.shape[1])[active]
        self.quadratic = quadratic

    @property
    def max_k(self) -> int:
        return int(round(self.w[-1] / (2 * np.pi))) if self.w.size else 0

    def on_grid(self, grid):
        acc = np.zeros((self.a.shape[0], grid.size))
        for j in range(self.w.size):
            y = np.multiply.outer(self.a[:, j], np.cos(self.w[j] * grid))
            y += np.multiply.outer(self.b[:, j], np.sin(self.w[j] * grid))
            acc += self.c[:, j, None] * (y * y if self.quadratic else y)
        return acc

    def _parts(self, tau, rows):
        phase = tau[:, None] * self.w
        cos, sin = np.cos(phase), np.sin(phase)
        a, b = self.a[rows], self.b[rows]
        return a * cos + b * sin, b * cos - a * sin

    def value(self, tau, rows):
        y, _ = self._parts(tau, rows)
        return np.sum(self.c[rows] * (y * y if self.quadratic else y), axis=1)

    def derivative(self, tau, rows):
        y, yp = self._parts(tau, rows)
        if self.quadratic:
            return 2.0 * np.sum(self.c[rows] * self.w * y * yp, axis=1)
        return np.sum(self.c[rows] * self.w * yp, axis=1)


def _bisect_derivative(obj, lo, hi, rows, tol, max_iter):
    for _ in range(max_iter):
        if np.all(hi - lo <= tol):
            break
        mid = 0.5 * (lo + hi)
        up = obj.derivative(mid, rows) > 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    return 0.5 * (lo + hi)


def _golden_max(obj, lo, hi, rows, tol, max_iter):
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = obj.value(x1, rows), obj.value(x2, rows)
    for _ in range(max_iter):
        if np.all(hi - lo <= tol):
            break
        right = f2 > f1
        lo = np.where(right, x1, lo)
        hi = np.where(right, hi, x2)
        new_x1 = np.where(right, x2, hi - GOLDEN * (hi - lo))
        new_x2 = np.where(right, lo + GOLDEN * (hi - lo), x1)
        fx = obj.value(np.where(right, new_x2, new_x1), rows)
        f1, f2 = np.where(right, f2, fx), np.where(right, fx, f1)
        x1, x2 = new_x1, new_x2
    return 0.5 * (lo + hi)


def maximize_trig(coef, a, b, quadratic: bool, domain: ParamDomain, opts: SearchOptions) -> np.ndarray:
    """Global maximizer over ``[-tau0, tau0]`` of a trigonometric objective, row by row.

    Exhaustive grid first (ties go to the smallest ``tau``), then refinement on
    the two grid cells around the grid maximizer: bisection on the sign of the
    derivative when it brackets a stationary point, golden-section search
    otherwise (e.g. when the maximum sits on the domain boundary).
    """
    obj = _Objective(coef, np.atleast_2d(a), np.atleast_2d(b), quadratic)
    R = obj.a.shape[0]
    G = opts.resolve(obj.max_k)
    grid = np.linspace(-domain.tau0, domain.tau0, G)
    if obj.w.size == 0:
        return np.full(R, grid[0])
    i = np.argmax(obj.on_grid(grid), axis=1)
    lo = grid[np.maximum(i - 1, 0)]
    hi = grid[np.minimum(i + 1, G - 1)]
    best = grid[i]
    rows = np.arange(R)

    bracketed = (obj.derivative(lo, rows) > 0) & (obj.derivative(hi, rows) < 0)
    out = best.copy()
    br = rows[bracketed]
    if br.size:
        out[br] = _bisect_derivative(obj, lo[br], hi[br], br, opts.refine_tol, opts.refine_max_iter)
    nb = rows[~bracketed]
    if nb.size:
        g = _golden_max(obj, lo[nb], hi[nb], nb, opts.refine_tol, opts.refine_max_iter)
        cands = np.stack([lo[nb], g, hi[nb]], axis=1)
        vals = np.stack([obj.value(cands[:, j], nb) for j in range(3)], axis=1)
        out[nb] = cands[np.arange(nb.size), np.argmax(vals, axis=1)]
    # never return something worse than the grid maximizer
    worse = obj.value(out, rows) < obj.value(best, rows)
    out[worse] = best[worse]
    return domain.clamp(out)


# --------------------------------------------------------------------------
# closed-form estimators
# --------------------------------------------------------------------------

def _ratio(num, den, domain: ParamDomain):
    """Clamped ratio; nonpositive denominators go to the boundary in the numerator's direction."""
    degenerate = den <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(degenerate, np.where(den == 0, np.sign(num) * np.inf, num / den), num / den)
    raw = np.where(degenerate & (num == 0) & (den == 0), np.nan, raw)
    est = np.where(degenerate, domain.tau0 * np.sign(num), domain.clamp(raw))
    return est, degenerate, raw


def _coeff_rows(x, K: int, R: int) -> np.ndarray:
    if isinstance(x, (SignalSpectrum, WeightSequence)):
        x = x.padded(K)
    return np.broadcast_to(pad(np.asarray(x, dtype=float), K), (R, K))


@dataclass(frozen=True)
class BatchEstimate:
    estimate: np.ndarray
    degenerate: np.ndarray
    raw: np.ndarray


def linearized_oracle_batch(batch: ObservationBatch, h, f) -> np.ndarray:
    """Root of the linearized first-order condition around the true shift.

    ``tau_hat = theta + L0(theta) / E[L1(theta)]`` with the noise recovered by
    rotating each pair back by ``theta``.  Not clamped.
    """
    if batch.kind != FULL:
        raise InvalidInputError("the linearized oracle needs full-model observations")
    if batch.theta_true is None:
        raise InvalidInputError("the linearized oracle needs theta_true")
    if not batch.eps > 0:
        raise InvalidInputError("the linearized oracle is undefined for eps = 0")
    K = max(batch.K, h.K_h if isinstance(h, WeightSequence) else np.shape(h)[-1],
            f.K_f if isinstance(f, SignalSpectrum) else np.shape(f)[-1])
    R = batch.R
    a, b = pad(batch.a, K), pad(batch.b, K)
    hv, fv = _coeff_rows(h, K, R), _coeff_rows(f, K, R)
    w = frequencies(K)
    theta = np.asarray(batch.theta_true, dtype=float)
    phase = theta[:, None] * w
    cos, sin = np.cos(phase), np.sin(phase)
    eps = batch.eps
    xi = (a * cos + b * sin - fv) / eps
    xi_star = (b * cos - a * sin) / eps
    L0 = np.sum(hv * w * (eps * fv * xi_star + eps**2 * xi_star * xi), axis=1)
    EL1 = np.sum(hv * w**2 * fv**2, axis=1)
    if np.any(EL1 <= 0):
        raise DegenerateEstimateError("E[L1] = sum h_k (2 pi k)^2 f_k^2 vanishes")
    return theta + L0 / EL1


def estimate_batch(spec: EstimatorSpec, batch: ObservationBatch, domain: ParamDomain,
                   opts: Optional[SearchOptions] = None, signals=None) -> BatchEstimate:
    """Apply ``spec`` to every row of ``batch``.

    ``signals`` (shape ``(R, K)``) overrides ``spec.signal`` row by row for the
    oracle estimators; Bayes experiments use it to pass each replication's
    realized signal.
    """
    opts = opts or SearchOptions()
    if spec.model != batch.kind:
        raise InvalidInputError(f"estimator {spec.kind} expects {spec.model} observations, got {batch.kind}")
    if spec.kind in _NEEDS_SIGNAL and spec.signal is None and signals is None:
        raise InvalidInputError(f"oracle estimator {spec.kind} needs the true signal")
    if not spec.oracle_flag:
        # Feasible estimators see no ground truth.
        batch = dataclasses.replace(batch, theta_true=None)
        signals = None

    R = batch.R
    K = batch.K
    if spec.weights is not None:
        K = max(K, spec.weights.K_h)
    if signals is not None:
        K = max(K, np.shape(signals)[-1])
    elif spec.signal is not None:
        K = max(K, spec.signal.K_f)
    a, b = pad(batch.a, K), pad(batch.b, K)
    w = frequencies(K)
    fv = None
    if spec.kind in _NEEDS_SIGNAL:
        fv = _coeff_rows(signals if signals is not None else spec.signal, K, R)
    hv = _coeff_rows(spec.weights, K, R) if spec.weights is not None else None
    no_flags = np.zeros(R, dtype=bool)

    if spec.kind == ADAPTIVE_CONTRAST:
        est = maximize_trig(hv, a, b, True, domain, opts)
        return BatchEstimate(est, no_flags, est)
    if spec.kind == ORACLE_ML:
        est = maximize_trig(fv, a, b, False, domain, opts)
        return BatchEstimate(est, no_flags, est)
    if spec.kind == LINEARIZED_ORACLE:
        raw = linearized_oracle_batch(dataclasses.replace(batch, a=a, b=b), hv, fv)
        return BatchEstimate(raw, no_flags, raw)
    if spec.kind == LINEARIZED_FULL:
        num = np.sum(w * hv * a * b, axis=1)
        den = np.sum(w**2 * hv * (a**2 - b**2), axis=1)
    elif spec.kind == LOCAL_KNOWN:
        num = np.sum(w * fv * b, axis=1)
        den = np.sum(w**2 * fv**2, axis=1)
    elif spec.kind == LOCAL_NAIVE:
        num = np.sum(w * hv * a * b, axis=1)
        den = np.sum(w**2 * hv**2 * a**2, axis=1)
    else:  # LOCAL_CORRECTED
        num = np.sum(w * hv * a * b, axis=1)
        den = np.sum(w**2 * hv * (a**2 - batch.eps**2), axis=1)
    est, degenerate, raw = _ratio(num, den, domain)
    return BatchEstimate(est, degenerate, raw)


def estimate(spec: EstimatorSpec, obs: SequenceObservation, domain: ParamDomain,
             opts: Optional[SearchOptions] = None, on_degenerate: str = "raise") -> float:
    """Estimate the shift from a single observation.

    ``on_degenerate="raise"`` turns a nonpositive ratio denominator into a
    :class:`DegenerateEstimateError` carrying the raw ratio;
    ``"clamp"`` returns the boundary value instead.
    """
    if on_degenerate not in ("raise", "clamp"):
        raise InvalidInputError("on_degenerate must be 'raise' or 'clamp'")
    res = estimate_batch(spec, ObservationBatch.from_observation(obs), domain, opts)
    if res.degenerate[0] and on_degenerate == "raise":
        raise DegenerateEstimateError(f"{spec.kind}: nonpositive denominator", float(res.raw[0]))
    return float(res.estimate[0])


def linearized_oracle(obs: SequenceObservation, h: WeightSequence, f: SignalSpectrum) -> float:
    return float(linearized_oracle_batch(ObservationBatch.from_observation(obs), h, f)[0])


# --------------------------------------------------------------------------
# closed-form risks
# --------------------------------------------------------------------------

def closed_form_risk_linearized(f: SignalSpectrum, h: WeightSequence, eps: float) -> float:
    """Exact ``E[(tau_hat - theta)^2 I(f)]`` of the linearized oracle.

    ``||f'||^2 sum h_k^2 (2 pi k)^2 (f_k^2 + eps^2) / (sum h_k (2 pi k)^2 f_k^2)^2``.
    """
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps}")
    K = max(f.K_f, h.K_h)
    fv, hv, w2 = f.padded(K), h.padded(K), frequencies(K) ** 2
    den = float(np.sum(hv * w2 * fv**2))
    if den <= 0:
        raise DegenerateEstimateError("sum h_k (2 pi k)^2 f_k^2 vanishes")
    return norms(f)[1] * float(np.sum(hv**2 * w2 * (fv**2 + eps**2))) / den**2


def derivative_mise(f: SignalSpectrum, h: WeightSequence, eps: float) -> float:
    """Relative MISE ``R[f, h] / ||f'||^2`` of the linear derivative estimator."""
    n1 = norms(f)[1]
    if n1 <= 0:
        raise DegenerateEstimateError("||f'|| = 0: relative error undefined")
    return risk_functional(f, h, eps) / n1


def derivative_estimate_curve(batch: ObservationBatch, h: WeightSequence, s) -> np.ndarray:
    """Linear estimate of ``f'`` at lags ``s = t - theta`` for every row.

    Uses the known shift to form ``sqrt(2) int cos(2 pi k (t - theta)) x(t) dt``
    and returns ``-sqrt(2) sum_k h_k (2 pi k) sin(2 pi k s) y_k`` with shape
    ``(R, len(s))``.
    """
    if batch.kind != FULL or batch.theta_true is None:
        raise InvalidInputError("the derivative estimator needs full observations with known theta")
    K = max(batch.K, h.K_h)
    a, b, hv, w = pad(batch.a, K), pad(batch.b, K), h.padded(K), frequencies(K)
    phase = np.asarray(batch.theta_true)[:, None] * w
    y = a * np.cos(phase) + b * np.sin(phase)
    basis = np.sin(np.multiply.outer(np.asarray(s, dtype=float), w))  # (S, K)
    return -math.sqrt(2.0) * (y * hv * w) @ basis.T
