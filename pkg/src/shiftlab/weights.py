"""Weight sequences, the Pinsker bandwidth and second-order risk functionals.

The second-order term of the normalized risk of a contrast estimator with
weights ``h`` is ``R[f, h] / ||f'||^2`` where

    R[f, h] = sum_k (2 pi k)^2 [(1 - h_k)^2 f_k^2 + eps^2 h_k^2].

Over a Sobolev ball this is minimized (in the minimax sense) by the Pinsker
weights ``q_k = [1 - (k/W)^(beta-1)]_+`` with bandwidth ``W`` solving
``G(W) = L`` below.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidInputError, SingularVarianceError, SolverFailureError
from .signal_model import SignalSpectrum, SobolevBall, frequencies, pad

log = logging.getLogger(__name__)

PROJECTION = "projection"
PINSKER = "pinsker"
CORRECTED = "corrected"
CUSTOM = "custom"
WEIGHT_KINDS = (PROJECTION, PINSKER, CORRECTED, CUSTOM)


@dataclass(frozen=True)
class WeightSequence:
    """Weights ``h_1..h_K`` in ``[0, 1]`` together with how they were built."""

    values: np.ndarray = field(repr=False)
    kind: str = CUSTOM
    params: dict = field(default_factory=dict)
    clipped: bool = False

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise InvalidInputError(f"unknown weight kind {self.kind!r}")
        arr = np.array(self.values, dtype=float).reshape(-1)
        if arr.size == 0 or not np.all(np.isfinite(arr)):
            raise InvalidInputError("weights must be a nonempty finite vector")
        clipped = self.clipped
        if np.any((arr < 0) | (arr > 1)):
            # Projecting onto [0, 1] can only lower R[f, h] coordinatewise.
            log.warning("weights outside [0, 1] were clipped")
            arr = np.clip(arr, 0.0, 1.0)
            clipped = True
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "clipped", clipped)
        object.__setattr__(self, "params", dict(self.params))

    @property
    def K_h(self) -> int:
        return int(self.values.size)

    @property
    def support(self) -> int:
        """Largest ``k`` with ``h_k > 0`` (0 if all weights vanish)."""
        nz = np.flatnonzero(self.values)
        return int(nz[-1] + 1) if nz.size else 0

    def padded(self, K: int) -> np.ndarray:
        return pad(self.values, K)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "parameters": dict(self.params), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "WeightSequence":
        return cls(np.asarray(d["values"], dtype=float), d.get("kind", CUSTOM), d.get("parameters", {}))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "h_k"])
        for k, v in enumerate(self.values, start=1):
            writer.writerow([k, repr(float(v))])
        return buf.getvalue()

    def __eq__(self, other):
        if not isinstance(other, WeightSequence):
            return NotImplemented
        return self.kind == other.kind and self.params == other.params and np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash((self.kind, self.values.tobytes()))


@dataclass(frozen=True)
class AssumptionBParams:
    rho1: float = 0.01
    c1: float = 1.0

    def __post_init__(self):
        if not self.rho1 > 0 or not self.c1 > 0:
            raise InvalidInputError("rho1 and c1 must be positive")


@dataclass(frozen=True)
class BandwidthSolution:
    W: float
    residual: float
    iterations: int


@dataclass(frozen=True)
class AssumptionReport:
    b0: bool
    b1: bool
    b2: bool
    c_ratio: float
    h_prime_norm: float
    b1_rhs: float
    b2_lhs: float

    @property
    def assumption_b(self) -> bool:
        return self.b0 and self.b1 and self.b2


def default_gamma(eps: float) -> float:
    """Head fraction ``1 / log(eps^-2)``; needs ``eps < exp(-1/2)`` to lie in (0, 1)."""
    if not 0 < eps < math.exp(-0.5):
        raise InvalidInputError(
            f"default gamma = 1/log(eps^-2) needs 0 < eps < exp(-1/2); pass gamma explicitly for eps={eps}"
        )
    return 1.0 / math.log(eps**-2)


def projection_weights(N: int, K: int) -> WeightSequence:
    """Indicator weights ``h_k = 1{k <= N}`` on ``k = 1..K``."""
    if N < 1:
        raise InvalidInputError(f"projection cutoff N must be >= 1, got {N}")
    if K < N:
        raise InvalidInputError(f"K={K} must be at least N={N}")
    values = (np.arange(1, K + 1) <= N).astype(float)
    return WeightSequence(values, PROJECTION, {"N": int(N)})


def bandwidth_equation(ball: SobolevBall, eps: float, W: float) -> float:
    """``G(W) = eps^2 sum_k [(W/k)^(beta-1) - 1]_+ (2 pi k)^(2 beta)``."""
    K = max(1, math.ceil(W))
    k = np.arange(1, K + 1, dtype=float)
    terms = np.maximum((W / k) ** (ball.beta - 1.0) - 1.0, 0.0) * (2.0 * np.pi * k) ** (2.0 * ball.beta)
    return float(eps**2 * np.sum(terms))


def solve_bandwidth(ball: SobolevBall, eps: float, tol: float = 1e-10, max_iter: int = 200) -> BandwidthSolution:
    """Solve ``G(W) = L`` by bracket doubling from ``[1, 2]`` then bisection.

    ``G`` is continuous and nondecreasing with ``G(1) = 0``, so the root is
    unique on the set where ``G`` is increasing.  Stops once
    ``|G(W) - L| <= tol * L``.
    """
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps}")
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    L = ball.L
    lo, hi = 1.0, 2.0
    iterations = 0
    while bandwidth_equation(ball, eps, hi) < L:
        lo, hi = hi, 2.0 * hi
        iterations += 1
        if iterations >= max_iter or not math.isfinite(hi):
            raise SolverFailureError("bandwidth bracket did not close", (lo, hi))
    while iterations < max_iter:
        iterations += 1
        mid = 0.5 * (lo + hi)
        residual = bandwidth_equation(ball, eps, mid) - L
        if abs(residual) <= tol * L:
            return BandwidthSolution(mid, residual, iterations)
        if residual < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 4 * np.finfo(float).eps * hi:
            break
    raise SolverFailureError(f"bisection stalled after {iterations} iterations", (lo, hi))


def bandwidth_asymptotic(ball: SobolevBall, eps: float) -> float:
    """Leading-order bandwidth ``(L (b+2)(2b+1) / (eps^2 (2 pi)^(2b) (b-1)))^(1/(2b+1))``."""
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps}")
    b, L = ball.beta, ball.L
    inner = L * (b + 2.0) * (2.0 * b + 1.0) / (eps**2 * (2.0 * np.pi) ** (2.0 * b) * (b - 1.0))
    return inner ** (1.0 / (2.0 * b + 1.0))


def _pinsker_values(beta: float, W: float, K: int) -> np.ndarray:
    k = np.arange(1, K + 1, dtype=float)
    return np.maximum(1.0 - (k / W) ** (beta - 1.0), 0.0)


def _check_support(W: float, K: int):
    if not W > 0:
        raise InvalidInputError(f"bandwidth W must be positive, got {W}")
    if K < math.ceil(W):
        raise InvalidInputError(f"K={K} would clip Pinsker weights with W={W} (need K >= ceil(W))")


def pinsker_weights(ball: SobolevBall, W: float, K: int) -> WeightSequence:
    """Pinsker weights ``q_k = [1 - (k/W)^(beta-1)]_+``."""
    _check_support(W, K)
    return WeightSequence(_pinsker_values(ball.beta, W, K), PINSKER, {"beta": ball.beta, "W": float(W)})


def head_size(gamma: float, W: float) -> int:
    """Number of leading weights raised to one: ``floor(gamma W)``."""
    return int(math.floor(gamma * W))


def corrected_weights(ball: SobolevBall, W: float, gamma: float, K: int) -> WeightSequence:
    """Pinsker weights with the head ``k <= floor(gamma W)`` set to one."""
    if not 0 < gamma < 1:
        raise InvalidInputError(f"gamma must lie in (0, 1), got {gamma}")
    _check_support(W, K)
    values = _pinsker_values(ball.beta, W, K)
    values[: min(head_size(gamma, W), K)] = 1.0
    return WeightSequence(values, CORRECTED, {"beta": ball.beta, "W": float(W), "gamma": float(gamma)})


def weights_for(kind: str, ball: SobolevBall, eps: float, K: Optional[int] = None, gamma: Optional[float] = None,
                N: Optional[int] = None, tol: float = 1e-10) -> WeightSequence:
    """Build the named weight family at noise level ``eps`` (bandwidth solved internally)."""
    if kind == PROJECTION:
        if N is None:
            raise InvalidInputError("projection weights need N")
        return projection_weights(N, max(N, K or N))
    W = solve_bandwidth(ball, eps, tol).W
    K = max(K or 0, math.ceil(W))
    if kind == PINSKER:
        return pinsker_weights(ball, W, K)
    if kind == CORRECTED:
        return corrected_weights(ball, W, default_gamma(eps) if gamma is None else gamma, K)
    raise InvalidInputError(f"cannot build weights of kind {kind!r}")


def prior_variances(weights: WeightSequence, eps: float, mode: str = "saddle",
                    gamma: Optional[float] = None, W: Optional[float] = None) -> np.ndarray:
    """Per-coefficient prior variances matching a weight sequence.

    ``mode="saddle"`` inverts ``h = s^2 / (eps^2 + s^2)``, giving
    ``s_k^2 = eps^2 h_k / (1 - h_k)``.  ``mode="truncated"`` zeroes the head
    ``k <= floor(gamma W)`` and uses ``(1 - gamma) s_k^2`` beyond it, where
    ``s_k^2`` comes from the Pinsker formula.
    """
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps}")
    h = weights.values
    if mode == "saddle":
        if np.any(h >= 1.0):
            k = int(np.flatnonzero(h >= 1.0)[0]) + 1
            raise SingularVarianceError(f"h_{k} = 1 corresponds to an infinite prior variance")
        return eps**2 * h / (1.0 - h)
    if mode == "truncated":
        if gamma is None or W is None:
            raise InvalidInputError("truncated prior variances need gamma and W")
        if not 0 < gamma < 1:
            raise InvalidInputError(f"gamma must lie in (0, 1), got {gamma}")
        head = head_size(gamma, W)
        tail = h[head:]
        if np.any(tail >= 1.0):
            k = head + int(np.flatnonzero(tail >= 1.0)[0]) + 1
            raise SingularVarianceError(f"h_{k} = 1 beyond the head corresponds to an infinite prior variance")
        out = np.zeros_like(h)
        out[head:] = (1.0 - gamma) * eps**2 * tail / (1.0 - tail)
        return out
    raise InvalidInputError(f"unknown prior-variance mode {mode!r}")


def shrinkage_from_variances(sigma2, eps: float) -> np.ndarray:
    """``lambda_k = sigma_k^2 / (eps^2 + sigma_k^2)``."""
    sigma2 = np.asarray(sigma2, dtype=float)
    return sigma2 / (eps**2 + sigma2)


def _as_array(x, K: int) -> np.ndarray:
    if isinstance(x, SignalSpectrum):
        return x.padded(K)
    if isinstance(x, WeightSequence):
        return x.padded(K)
    return pad(np.asarray(x, dtype=float), K)


def _length(x) -> int:
    if isinstance(x, SignalSpectrum):
        return x.K_f
    if isinstance(x, WeightSequence):
        return x.K_h
    return int(np.asarray(x).shape[-1])


def risk_functional(f, h, eps: float) -> float:
    """``R[f, h] = sum_k (2 pi k)^2 [(1 - h_k)^2 f_k^2 + eps^2 h_k^2]``.

    ``f`` and ``h`` may be spectra/weight sequences or plain arrays; both are
    zero-extended to a common length.
    """
    if not eps >= 0:
        raise InvalidInputError("eps must be nonnegative")
    K = max(_length(f), _length(h))
    fv, hv = _as_array(f, K), _as_array(h, K)
    w2 = frequencies(K) ** 2
    return float(np.sum(w2 * ((1.0 - hv) ** 2 * fv**2 + eps**2 * hv**2)))


def minimax_constant(ball: SobolevBall) -> float:
    """``C*(beta, L)`` in ``r = C* eps^((4 beta - 4)/(2 beta + 1)) (1 + o(1))``."""
    b, L = ball.beta, ball.L
    return (1.0 / 3.0) * ((b - 1.0) / (2.0 * np.pi * (b + 2.0))) ** ((2 * b - 2) / (2 * b + 1)) * (
        L * (2 * b + 1)) ** (3.0 / (2 * b + 1))


def minimax_value(ball: SobolevBall, eps: float, tol: float = 1e-10):
    """Return ``(r_exact, r_asym, c_star)`` for the second-order minimax problem."""
    W = solve_bandwidth(ball, eps, tol).W
    q = pinsker_weights(ball, W, math.ceil(W)).values
    r_exact = float(eps**2 * np.sum(frequencies(q.size) ** 2 * q))
    c_star = minimax_constant(ball)
    r_asym = c_star * eps ** ((4 * ball.beta - 4) / (2 * ball.beta + 1))
    return r_exact, r_asym, c_star


def saddle_signal(ball: SobolevBall, eps: float, tol: float = 1e-10) -> SignalSpectrum:
    """Least favorable coefficients ``s_k = sqrt(eps^2 [(W/k)^(beta-1) - 1]_+)``."""
    W = solve_bandwidth(ball, eps, tol).W
    q = pinsker_weights(ball, W, math.ceil(W))
    return SignalSpectrum(np.sqrt(prior_variances(q, eps, "saddle")))


def check_assumptions(h: WeightSequence, eps: float, p: AssumptionBParams, f: SignalSpectrum) -> AssumptionReport:
    """Finite-``eps`` check of the weight conditions plus the bias ratio ``(sum (1-h) w^2 f^2)^2 / sum (1-h)^2 w^2 f^2``."""
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps}")
    hv = h.values
    w = frequencies(h.K_h)
    b0 = bool(hv[0] == 1.0 and np.all((hv >= 0) & (hv <= 1)))
    h_prime = float(np.sqrt(np.sum(hv**2 * w**2)))
    b1_rhs = float(p.rho1 * math.log(eps**-2) ** 2 * np.max(hv * w))
    b2_lhs = float(eps**2 * np.sum(hv * w**4))

    K = max(h.K_h, f.K_f)
    hv, fv, w2 = h.padded(K), f.padded(K), frequencies(K) ** 2
    num = float(np.sum((1.0 - hv) * w2 * fv**2)) ** 2
    den = float(np.sum((1.0 - hv) ** 2 * w2 * fv**2))
    c_ratio = 0.0 if den == 0.0 else num / den
    return AssumptionReport(b0, h_prime >= b1_rhs, b2_lhs <= p.c1, c_ratio, h_prime, b1_rhs, b2_lhs)
