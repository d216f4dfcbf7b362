"""Signals, function classes and the Gaussian sequence model.

A symmetric 1-periodic signal is stored through its cosine coefficients
``f_k`` (``k = 1..K_f``) so that ``f(t) = sqrt(2) * sum_k f_k cos(2 pi k t)``.
Observing ``f(t - theta)`` in white noise of level ``eps`` is equivalent to
observing, for each frequency ``k``, the pair

    x_k  = f_k cos(2 pi k theta) + eps xi_k
    x*_k = f_k sin(2 pi k theta) + eps xi*_k

(the *full* model).  Linearizing around ``theta = 0`` gives the *local* model
``X_k = f_k + eps xi_k``, ``X*_k = theta (2 pi k) f_k + eps xi*_k``.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError
from .streams import RandomStream

FULL = "full"
LOCAL = "local"
KINDS = (FULL, LOCAL)


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


def frequencies(K: int) -> np.ndarray:
    """Return ``2 pi k`` for ``k = 1..K``."""
    return 2.0 * np.pi * np.arange(1, K + 1, dtype=float)


def pad(values: np.ndarray, K: int) -> np.ndarray:
    """Zero-pad (never truncate) a coefficient vector to length ``K``."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] > K:
        raise InvalidInputError(f"cannot pad length {values.shape[-1]} down to {K}")
    if values.shape[-1] == K:
        return values
    width = [(0, 0)] * (values.ndim - 1) + [(0, K - values.shape[-1])]
    return np.pad(values, width)


@dataclass(frozen=True)
class SignalSpectrum:
    """Cosine coefficients ``f_1..f_K`` of a symmetric periodic signal."""

    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.array(self.coeffs, dtype=float).reshape(-1)
        if arr.size == 0:
            raise InvalidInputError("a signal needs at least one coefficient")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("signal coefficients must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "coeffs", arr)

    @property
    def K_f(self) -> int:
        return int(self.coeffs.size)

    def padded(self, K: int) -> np.ndarray:
        return pad(self.coeffs, K)

    def to_list(self) -> list:
        return [float(c) for c in self.coeffs]

    def __eq__(self, other):
        if not isinstance(other, SignalSpectrum):
            return NotImplemented
        return np.array_equal(self.coeffs, other.coeffs)

    def __hash__(self):
        return hash(self.coeffs.tobytes())

    def __repr__(self):
        return f"SignalSpectrum(K_f={self.K_f}, coeffs={self.to_list()!r})"


@dataclass(frozen=True)
class ParamDomain:
    """The parameter interval ``[-tau0, tau0]`` with ``0 < tau0 < 1/4``."""

    tau0: float = 0.2

    def __post_init__(self):
        if not (0.0 < self.tau0 < 0.25):
            raise InvalidInputError(
                f"tau0 must satisfy 0 < tau0 < 1/4 (identifiability of the shift), got {self.tau0}"
            )

    def clamp(self, theta):
        return np.clip(theta, -self.tau0, self.tau0)

    def contains(self, theta) -> bool:
        return bool(abs(theta) <= self.tau0)


@dataclass(frozen=True)
class ClassParams:
    """Constants of the class ``F(rho, C0)``: ``f_1^2 >= rho`` and ``||f''||^2 <= C0``."""

    rho: float
    c0: float

    def __post_init__(self):
        if not self.rho > 0 or not self.c0 > 0:
            raise InvalidInputError("rho and c0 must be positive")

    @property
    def is_empty(self) -> bool:
        # ||f'||^2 >= (2 pi)^2 rho and ||f'||^2 <= ||f''||^2 force C0 >= (2 pi)^2 rho.
        return self.c0 < (2.0 * np.pi) ** 2 * self.rho


@dataclass(frozen=True)
class SobolevBall:
    """``{f : sum_k (2 pi k)^(2 beta) f_k^2 <= L}``."""

    beta: float = 2.0
    L: float = 1.0

    def __post_init__(self):
        if not self.beta > 1:
            raise InvalidInputError(f"beta must exceed 1, got {self.beta}")
        if not self.L > 0:
            raise InvalidInputError(f"L must be positive, got {self.L}")

    def energy(self, coeffs) -> float:
        coeffs = np.asarray(coeffs, dtype=float)
        w = frequencies(coeffs.shape[-1]) ** (2.0 * self.beta)
        return np.sum(w * coeffs**2, axis=-1)


@dataclass(frozen=True)
class SequenceObservation:
    """Realized pairs of the full ``(x_k, x*_k)`` or local ``(X_k, X*_k)`` model.

    ``theta_true`` is kept for oracle diagnostics only; feasible estimators
    never read it.
    """

    kind: str
    eps: float
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    theta_true: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInputError(f"unknown observation kind {self.kind!r}")
        if not self.eps >= 0:
            raise InvalidInputError("eps must be nonnegative")
        a, b = _frozen(self.a).reshape(-1), _frozen(self.b).reshape(-1)
        if a.shape != b.shape or a.size == 0:
            raise InvalidInputError("observation needs two equal-length nonempty arrays")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise InvalidInputError("observation entries must be finite")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def K(self) -> int:
        return int(self.a.size)

    @property
    def pairs(self) -> list:
        return list(zip(self.a.tolist(), self.b.tolist()))


@dataclass(frozen=True)
class ObservationBatch:
    """``R`` independent observations stacked row-wise (arrays of shape ``(R, K)``)."""

    kind: str
    eps: float
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    theta_true: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def R(self) -> int:
        return int(self.a.shape[0])

    @property
    def K(self) -> int:
        return int(self.a.shape[1])

    def row(self, i: int) -> SequenceObservation:
        theta = None if self.theta_true is None else float(self.theta_true[i])
        return SequenceObservation(self.kind, self.eps, self.a[i], self.b[i], theta)

    @classmethod
    def from_observation(cls, obs: SequenceObservation) -> "ObservationBatch":
        theta = None if obs.theta_true is None else np.array([obs.theta_true])
        return cls(obs.kind, obs.eps, obs.a[None, :], obs.b[None, :], theta)


def make_signal(coeffs: Sequence[float]) -> SignalSpectrum:
    """Build a spectrum from ``[f_1, ..., f_K]``; trailing zeros are kept."""
    return SignalSpectrum(np.asarray(coeffs, dtype=float))


def eval_signal(f: SignalSpectrum, t):
    """Evaluate ``sqrt(2) sum_k f_k cos(2 pi k t)`` at scalar or array ``t``."""
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise InvalidInputError("t must be finite")
    # Reduce to [0, 1) first so periodicity holds to rounding of the reduction only.
    tr = np.mod(t, 1.0)
    tr = np.minimum(tr, 1.0 - tr)  # cosine series is even: use distance to nearest integer
    k = np.arange(1, f.K_f + 1)
    out = math.sqrt(2.0) * np.tensordot(np.cos(2.0 * np.pi * np.multiply.outer(tr, k)), f.coeffs, axes=1)
    return float(out) if out.ndim == 0 else out


def norms(f: SignalSpectrum):
    """Return ``(||f||^2, ||f'||^2, ||f''||^2)`` computed from the coefficients."""
    c2 = f.coeffs**2
    w2 = frequencies(f.K_f) ** 2
    return float(np.sum(c2)), float(np.sum(w2 * c2)), float(np.sum(w2 * w2 * c2))


def fisher_info(f: SignalSpectrum, eps: float) -> float:
    """Fisher information ``||f'||^2 / eps^2`` about the shift when ``f`` is known."""
    if not eps > 0:
        raise InvalidInputError(f"eps must be positive, got {eps}")
    return norms(f)[1] / eps**2


def check_class_F(f: SignalSpectrum, p: ClassParams) -> bool:
    """True iff ``f_1^2 >= rho`` and ``||f''||^2 <= C0``."""
    return bool(f.coeffs[0] ** 2 >= p.rho and norms(f)[2] <= p.c0)


def check_vicinity(f: SignalSpectrum, fbar: SignalSpectrum, delta: float, ball: SobolevBall) -> bool:
    """True iff ``v = f - fbar`` has ``||v|| <= delta`` and lies in ``ball``."""
    if not delta > 0:
        raise InvalidInputError("delta must be positive")
    K = max(f.K_f, fbar.K_f)
    v = f.padded(K) - fbar.padded(K)
    return bool(np.sum(v**2) <= delta**2 and ball.energy(v) <= ball.L)


def sobolev_boundary_signal(ball: SobolevBall, K: int = 32, decay: Optional[float] = None) -> SignalSpectrum:
    """Signal with ``f_k`` proportional to ``k^-decay`` scaled onto the ball's boundary.

    The default decay ``beta + 1`` makes ``(2 pi k)^(2 beta) f_k^2`` fall off
    like ``k^-2``, so most of the energy sits at low frequencies.
    """
    if K < 1:
        raise InvalidInputError("K must be at least 1")
    decay = ball.beta + 1.0 if decay is None else decay
    shape = np.arange(1, K + 1, dtype=float) ** (-decay)
    return SignalSpectrum(shape * math.sqrt(ball.L / ball.energy(shape)))


def noiseless_pairs(coeffs: np.ndarray, theta, kind: str):
    """Mean of the observation for coefficients ``(..., K)`` and shift(s) ``theta``."""
    coeffs = np.asarray(coeffs, dtype=float)
    theta = np.asarray(theta, dtype=float)[..., None]
    w = frequencies(coeffs.shape[-1])
    if kind == FULL:
        return coeffs * np.cos(w * theta), coeffs * np.sin(w * theta)
    if kind == LOCAL:
        return np.broadcast_to(coeffs, np.broadcast_shapes(coeffs.shape, theta.shape)), theta * w * coeffs
    raise InvalidInputError(f"unknown observation kind {kind!r}")


def _check_sim_args(f: SignalSpectrum, theta, eps: float, K: int, kind: str):
    if kind not in KINDS:
        raise InvalidInputError(f"unknown observation kind {kind!r}")
    if K < f.K_f:
        raise InvalidInputError(f"truncation K={K} is below the signal support K_f={f.K_f}")
    if not eps >= 0:
        raise InvalidInputError("eps must be nonnegative")
    if kind == FULL and np.any(np.abs(theta) > 0.25):
        raise InvalidInputError("|theta| must not exceed 1/4 in the full model")


def draw_noise(stream: RandomStream, K: int) -> np.ndarray:
    """Standard normals of shape ``(K, 2)``: row ``k-1`` holds ``(xi_k, xi*_k)``."""
    return stream.generator().standard_normal((K, 2))


def simulate(f: SignalSpectrum, theta: float, eps: float, K: int, kind: str, rng: RandomStream) -> SequenceObservation:
    """Draw one observation of the full or local sequence model.

    With ``eps == 0`` the noiseless means are returned and no random numbers
    are drawn.
    """
    _check_sim_args(f, theta, eps, K, kind)
    a, b = noiseless_pairs(f.padded(K), theta, kind)
    if eps > 0:
        xi = draw_noise(rng, K)
        a = a + eps * xi[:, 0]
        b = b + eps * xi[:, 1]
    return SequenceObservation(kind, float(eps), a, b, float(theta))


def noise_block(seed: int, reps: Sequence[int], K: int, tag: int = 0) -> np.ndarray:
    """Stack the noise of replications ``reps`` into an array of shape ``(len(reps), K, 2)``."""
    out = np.empty((len(reps), K, 2))
    for i, r in enumerate(reps):
        out[i] = draw_noise(RandomStream(seed, int(r), tag), K)
    return out


def simulate_batch(coeffs, theta, eps: float, kind: str, seed: int, reps: Sequence[int], noise=None) -> ObservationBatch:
    """Simulate replications ``reps`` with per-replication streams.

    ``coeffs`` is ``(K,)`` or ``(R, K)`` (one signal per replication) and
    ``theta`` a scalar or ``(R,)``.  Row ``i`` equals ``simulate`` run with
    ``RandomStream(seed, reps[i])``.  A precomputed ``noise`` block may be
    passed to share draws between paired runs.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    K = coeffs.shape[-1]
    R = len(reps)
    theta_arr = np.broadcast_to(np.asarray(theta, dtype=float), (R,)).copy()
    if kind not in KINDS:
        raise InvalidInputError(f"unknown observation kind {kind!r}")
    if kind == FULL and np.any(np.abs(theta_arr) > 0.25):
        raise InvalidInputError("|theta| must not exceed 1/4 in the full model")
    a, b = noiseless_pairs(np.broadcast_to(coeffs, (R, K)), theta_arr, kind)
    a, b = np.array(a), np.array(b)
    if eps > 0:
        if noise is None:
            noise = noise_block(seed, reps, K)
        a += eps * noise[:, :, 0]
        b += eps * noise[:, :, 1]
    return ObservationBatch(kind, float(eps), a, b, theta_arr)
