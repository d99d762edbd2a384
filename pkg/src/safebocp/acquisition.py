"""
SafeOpt acquisition over a finite candidate set.

Index sets are returned as sorted ``int`` arrays of candidate indices. Every
argmax breaks ties towards the lowest candidate index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Union

import numpy as np
from scipy.stats import norm

from .gp import GpModel, KernelSpec

__all__ = [
    "INFINITE",
    "ScalingBeta",
    "is_infinite",
    "beta_to_json",
    "beta_from_json",
    "CandidateSet",
    "CredibleInterval",
    "SafeOptState",
    "credible_interval",
    "coverage_probability",
    "safe_set",
    "potential_optimizers",
    "expanders",
    "acquire",
    "final_decision",
    "information_beta",
    "greedy_information_gain",
    "rkhs_beta_schedule",
]


class _Infinite:
    """Maximally cautious scaling: the safe set collapses to the initial safe set."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "INFINITE"

    def __reduce__(self):
        return (_Infinite, ())


INFINITE = _Infinite()
ScalingBeta = Union[float, _Infinite]


def is_infinite(beta) -> bool:
    return beta is INFINITE


def beta_to_json(beta):
    return "INFINITE" if beta is INFINITE else float(beta)


def beta_from_json(value):
    return INFINITE if value == "INFINITE" else float(value)


def _check_beta(beta):
    if beta is INFINITE:
        return
    if not (beta >= 0 and math.isfinite(beta)):
        raise ValueError(f"scaling beta must be finite and >= 0, or INFINITE; got {beta!r}")


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Finite discretization of the domain plus the known-safe seed indices.

    Parameters
    ----------
    points : array_like, shape (n, d)
    initial_safe : sequence of int
        Indices into ``points`` known to satisfy the constraint.
    """

    points: np.ndarray
    initial_safe: tuple
    _grams: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or not len(pts):
            raise ValueError("points must be a non-empty (n, d) array")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        s0 = tuple(sorted({int(i) for i in self.initial_safe}))
        if not s0:
            raise ValueError("initial safe set must be non-empty")
        if s0[0] < 0 or s0[-1] >= len(pts):
            raise ValueError(f"initial safe indices out of range: {s0}")
        object.__setattr__(self, "initial_safe", s0)

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def s0(self) -> np.ndarray:
        return np.asarray(self.initial_safe, dtype=int)

    def gram(self, kernel: KernelSpec) -> np.ndarray:
        """Prior Gram matrix over all candidates, cached per kernel."""
        K = self._grams.get(kernel)
        if K is None:
            K = kernel(self.points, self.points)
            K.setflags(write=False)
            self._grams[kernel] = K
        return K

    def check_distinct(self, tol=1e-12):
        """Raise if two candidates are closer than ``tol``."""
        from scipy.spatial.distance import pdist

        if len(self) > 1 and pdist(self.points).min() <= tol:
            raise ValueError("candidate points are not distinct")


@dataclass(frozen=True)
class CredibleInterval:
    lower: float
    upper: float


def credible_interval(model: GpModel, x, beta: ScalingBeta) -> CredibleInterval:
    """``[mean - beta*std, mean + beta*std]``; unbounded for ``INFINITE``."""
    _check_beta(beta)
    if beta is INFINITE:
        return CredibleInterval(-math.inf, math.inf)
    mean, std = model.predict(np.atleast_1d(np.asarray(x, dtype=float))[None, :])
    return CredibleInterval(float(mean[0] - beta * std[0]), float(mean[0] + beta * std[0]))


def coverage_probability(beta: float) -> float:
    """Probability mass of a ``beta``-scaled Gaussian credible interval."""
    if not beta >= 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    return float(2.0 * norm.cdf(beta) - 1.0)


def _lower(mean, std, beta):
    if beta is INFINITE:
        return np.full_like(mean, -np.inf)
    return mean - beta * std


def _upper(mean, std, beta):
    if beta is INFINITE:
        return np.full_like(mean, np.inf)
    return mean + beta * std


def _safe_from_lower(candidates, lower):
    return np.union1d(np.flatnonzero(lower >= 0), candidates.s0)


def safe_set(candidates: CandidateSet, q_model: GpModel, beta_q: ScalingBeta) -> np.ndarray:
    """Candidates whose pessimistic constraint estimate is non-negative, plus S0."""
    _check_beta(beta_q)
    if beta_q is INFINITE:
        return candidates.s0.copy()
    mean, std = q_model.predict(candidates.points)
    return _safe_from_lower(candidates, mean - beta_q * std)


@dataclass(frozen=True)
class SafeOptState:
    """Snapshot of both surrogates and the scalings in force for one acquisition.

    ``beta_f`` scales the objective intervals and stays fixed; ``beta_q``
    scales the constraint intervals and is the quantity under control.
    """

    candidates: CandidateSet
    f_model: GpModel
    q_model: GpModel
    beta_f: float
    beta_q: ScalingBeta

    def __post_init__(self):
        _check_beta(self.beta_q)
        if not self.beta_f >= 0:
            raise ValueError(f"beta_f must be >= 0, got {self.beta_f}")
        if not np.array_equal(self.f_model.inputs, self.q_model.inputs):
            raise ValueError("objective and constraint models must share their inputs")

    @cached_property
    def _f_post(self):
        return self.f_model.predict(self.candidates.points)

    @cached_property
    def _q_post(self):
        return self.q_model.predict(self.candidates.points)

    @property
    def f_std(self):
        return self._f_post[1]

    @property
    def q_std(self):
        return self._q_post[1]

    @cached_property
    def f_lower(self):
        return _lower(*self._f_post, self.beta_f)

    @cached_property
    def f_upper(self):
        return _upper(*self._f_post, self.beta_f)

    @cached_property
    def q_lower(self):
        return _lower(*self._q_post, self.beta_q)

    @cached_property
    def q_upper(self):
        return _upper(*self._q_post, self.beta_q)

    @cached_property
    def safe(self) -> np.ndarray:
        if self.beta_q is INFINITE:
            return self.candidates.s0.copy()
        return _safe_from_lower(self.candidates, self.q_lower)


def potential_optimizers(state: SafeOptState, safe=None) -> np.ndarray:
    """Safe candidates whose optimistic objective beats the best pessimistic one."""
    safe = state.safe if safe is None else np.asarray(safe, dtype=int)
    best_lower = state.f_lower[safe].max()
    return safe[state.f_upper[safe] >= best_lower]


def expanders(state: SafeOptState, safe=None) -> np.ndarray:
    """Safe candidates whose optimistic constraint observation would grow the safe set.

    The hypothetical observation ``(x_i, q_upper(x_i))`` is folded into the
    constraint posterior with a rank-one update using the model's noise power,
    which is algebraically the same as refitting on the extended history.
    """
    safe = state.safe if safe is None else np.asarray(safe, dtype=int)
    beta = state.beta_q
    if beta is INFINITE or beta == 0:
        # INFINITE: hypothetical safe set is S0 again. Zero: lower bound = mean,
        # which an observation at the mean never moves.
        return np.empty(0, dtype=int)
    cands = state.candidates
    outside = np.setdiff1d(np.arange(len(cands)), safe, assume_unique=True)
    # A hypothetical optimistic observation never lifts a lower bound above the
    # current upper bound, so only candidates with q_upper >= 0 can join.
    targets = outside[state.q_upper[outside] >= 0]
    if not targets.size:
        return np.empty(0, dtype=int)

    model = state.q_model
    kern = model.prior.kernel
    mean, std = state._q_post
    var_s = std[safe] ** 2
    denom = var_s + model.prior.noise_power
    informative = denom > 1e-8 * kern.diag(cands.points[safe])
    if not informative.any():
        return np.empty(0, dtype=int)
    src = safe[informative]
    denom = denom[informative]

    cov = cands.gram(kern)[np.ix_(src, targets)]
    if len(model):
        W = model.whitened(cands.points)
        cov = cov - W[:, src].T @ W[:, targets]
    gain = beta * std[src] / denom
    new_mean = mean[targets][None, :] + cov * gain[:, None]
    new_var = std[targets][None, :] ** 2 - cov**2 / denom[:, None]
    new_lower = new_mean - beta * np.sqrt(np.maximum(new_var, 0.0))
    return src[(new_lower >= 0).any(axis=1)]


def acquire(state: SafeOptState) -> int:
    """Most uncertain candidate among potential optimizers and expanders."""
    pool = np.union1d(potential_optimizers(state), expanders(state))
    score = np.maximum(state.f_std[pool], state.q_std[pool])
    return int(pool[np.argmax(score)])


def final_decision(state: SafeOptState) -> int:
    """Safe candidate with the best pessimistic objective estimate."""
    safe = state.safe
    return int(safe[np.argmax(state.f_lower[safe])])


def information_beta(B, sigma_q, delta, gamma) -> float:
    """Scaling from an RKHS norm bound and an information-gain value."""
    return float(B + 4.0 * sigma_q * math.sqrt(gamma + 1.0 - math.log(delta)))


def greedy_information_gain(
    candidates: CandidateSet, kernel: KernelSpec, noise_power: float, T: int
) -> np.ndarray:
    """Greedy approximation of the maximal information gain after 1..T picks.

    Each step adds the candidate with the largest posterior variance, which is
    the point of largest marginal gain in ``0.5 * logdet(I + K / noise_power)``.
    """
    if not noise_power > 0:
        raise ValueError("information gain needs a positive noise power")
    K = candidates.gram(kernel)
    var = np.array(np.diag(K), dtype=float)
    factors = np.zeros((T, len(candidates)))
    gains = np.empty(T)
    total = 0.0
    for t in range(T):
        j = int(np.argmax(var))
        vj = max(var[j], 0.0)
        total += 0.5 * math.log1p(vj / noise_power)
        gains[t] = total
        col = K[:, j] - factors[:t].T @ factors[:t, j]
        factors[t] = col / math.sqrt(vj + noise_power)
        var = var - factors[t] ** 2
    return gains


def rkhs_beta_schedule(B, sigma_q, delta, T, candidates: CandidateSet, kernel: KernelSpec):
    """Fixed SafeOpt scalings ``[beta_2, ..., beta_{T+1}]`` built from ``gamma_1..gamma_T``.

    ``beta_1`` uses ``gamma_0 = 0``; see :func:`information_beta`.
    """
    if not B > 0:
        raise ValueError(f"B must be > 0, got {B}")
    if not 0 < delta <= 1:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    if not sigma_q >= 0:
        raise ValueError(f"sigma_q must be >= 0, got {sigma_q}")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if sigma_q == 0:
        return [float(B)] * T
    gammas = greedy_information_gain(candidates, kernel, sigma_q**2, T)
    return [information_beta(B, sigma_q, delta, g) for g in gammas]
