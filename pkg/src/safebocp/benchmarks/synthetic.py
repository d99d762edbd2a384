"""
One-dimensional synthetic benchmark: GP-sampled objective, fixed RKHS constraint.

The objective is a zero-mean GP path under ``exp(-||x - x'||^2 / 1.62)``. The
constraint is a ten-term expansion in the same RBF scaled by 2, which gives
``q(0) = 0.946`` and a squared RKHS norm of 1.70. Surrogates keep each
function's amplitude; the misspecified regime swaps the bandwidth for
1/14.58.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from ..acquisition import CandidateSet
from ..gp import RBF, jittered_cholesky

__all__ = [
    "CONSTRAINT_COEFFS",
    "CONSTRAINT_CENTERS",
    "TRUE_BANDWIDTH",
    "MISSPECIFIED_BANDWIDTH",
    "OBJECTIVE_VARIANCE",
    "CONSTRAINT_VARIANCE",
    "SyntheticSpec",
    "BlackBox",
    "grid",
    "true_kernel",
    "surrogate_kernel",
    "constraint_function",
    "build_constraint",
    "rkhs_norm",
    "sample_objective",
    "initial_safe_set",
    "candidate_set",
    "make_blackbox",
    "constrained_optimum",
]

CONSTRAINT_COEFFS = (-0.05, -0.1, 0.3, -0.3, 0.5, 0.5, -0.3, 0.3, -0.1, -0.05)
CONSTRAINT_CENTERS = (-9.6, -7.4, -5.5, -3.3, -1.1, 1.1, 3.3, 5.5, 7.4, 9.6)
TRUE_BANDWIDTH = 1 / 1.62
MISSPECIFIED_BANDWIDTH = 1 / 14.58
OBJECTIVE_VARIANCE = 1.0
CONSTRAINT_VARIANCE = 2.0

REGIMES = {"well": TRUE_BANDWIDTH, "mis": MISSPECIFIED_BANDWIDTH}


@dataclass(frozen=True)
class SyntheticSpec:
    """Benchmark geometry and noise levels.

    ``regime`` selects the surrogate bandwidth: ``"well"`` reuses the true
    bandwidth, ``"mis"`` uses the wider misspecified one.
    """

    grid_size: int = 1000
    domain: tuple = (-10.0, 10.0)
    regime: str = "well"
    sigma_f2: float = 2.5e-3
    sigma_q2: float = 0.0
    T: int = 25
    objective_variance: float = OBJECTIVE_VARIANCE
    constraint_variance: float = CONSTRAINT_VARIANCE
    coeffs: tuple = field(default=CONSTRAINT_COEFFS)
    centers: tuple = field(default=CONSTRAINT_CENTERS)

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {sorted(REGIMES)}, got {self.regime!r}")
        if self.grid_size < 2:
            raise ValueError("grid_size must be >= 2")
        lo, hi = self.domain
        if not lo < hi:
            raise ValueError(f"empty domain {self.domain}")
        if self.sigma_f2 < 0 or self.sigma_q2 < 0:
            raise ValueError("noise powers must be >= 0")
        if not (self.objective_variance > 0 and self.constraint_variance > 0):
            raise ValueError("kernel variances must be > 0")
        if len(self.coeffs) != len(self.centers):
            raise ValueError("constraint coefficients and centers differ in length")

    @property
    def surrogate_bandwidth(self) -> float:
        return REGIMES[self.regime]


def grid(spec: SyntheticSpec) -> np.ndarray:
    return np.linspace(spec.domain[0], spec.domain[1], spec.grid_size)


def _variance(spec, target):
    if target == "f":
        return spec.objective_variance
    if target == "q":
        return spec.constraint_variance
    raise ValueError(f"target must be 'f' or 'q', got {target!r}")


def true_kernel(spec: SyntheticSpec, target: str = "q") -> RBF:
    """Ground-truth kernel of the objective (``"f"``) or constraint (``"q"``)."""
    return RBF(TRUE_BANDWIDTH, _variance(spec, target))


def surrogate_kernel(spec: SyntheticSpec, target: str = "q") -> RBF:
    """Kernel the optimizer's GP uses for ``target`` under the configured regime."""
    return RBF(spec.surrogate_bandwidth, _variance(spec, target))


def constraint_function(spec: SyntheticSpec, x) -> np.ndarray:
    """``sum_i a_i k*(x, x_i)`` at arbitrary points."""
    x = np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1, 1)
    centers = np.asarray(spec.centers, dtype=float).reshape(-1, 1)
    return true_kernel(spec)(x, centers) @ np.asarray(spec.coeffs, dtype=float)


def build_constraint(spec: SyntheticSpec) -> np.ndarray:
    """Constraint values on the grid."""
    return constraint_function(spec, grid(spec))


def rkhs_norm(spec: SyntheticSpec) -> float:
    """``sqrt(a^T K* a)`` for the constraint's kernel expansion."""
    a = np.asarray(spec.coeffs, dtype=float)
    centers = np.asarray(spec.centers, dtype=float).reshape(-1, 1)
    return float(np.sqrt(a @ true_kernel(spec)(centers, centers) @ a))


@lru_cache(maxsize=8)
def _objective_factor(grid_size, domain, variance):
    spec = SyntheticSpec(grid_size=grid_size, domain=domain, objective_variance=variance)
    x = grid(spec)[:, None]
    L, _ = jittered_cholesky(true_kernel(spec, "f")(x, x))
    L.setflags(write=False)
    return L


def sample_objective(spec: SyntheticSpec, rng) -> np.ndarray:
    """One zero-mean GP path on the grid under the true kernel.

    ``rng`` is a :class:`numpy.random.Generator` or a seed.
    """
    rng = np.random.default_rng(rng)
    L = _objective_factor(spec.grid_size, tuple(spec.domain), spec.objective_variance)
    return L @ rng.standard_normal(spec.grid_size)


def initial_safe_set(spec: SyntheticSpec) -> tuple:
    """Index of the grid point nearest to the safe seed ``x0 = 0``."""
    g = grid(spec)
    i = int(np.argmin(np.abs(g)))
    half_step = 0.5 * (g[1] - g[0])
    if abs(g[i]) > half_step:
        raise ValueError(f"grid does not cover x0=0 (nearest point {g[i]:.4g})")
    return (i,)


@lru_cache(maxsize=8)
def _candidate_set(grid_size, domain):
    spec = SyntheticSpec(grid_size=grid_size, domain=domain)
    return CandidateSet(grid(spec)[:, None], initial_safe_set(spec))


def candidate_set(spec: SyntheticSpec) -> CandidateSet:
    """Shared candidate set for the configured grid; its Gram cache is reused across trials."""
    return _candidate_set(spec.grid_size, tuple(spec.domain))


@dataclass
class BlackBox:
    """Noisy oracle over grid indices; owns its random stream."""

    f_values: np.ndarray
    q_values: np.ndarray
    sigma_f2: float
    sigma_q2: float
    rng: np.random.Generator

    def query(self, index: int):
        """Return ``(y, z)`` with fresh independent Gaussian noise."""
        eps_f, eps_q = self.rng.standard_normal(2)
        y = self.f_values[index] + np.sqrt(self.sigma_f2) * eps_f
        z = self.q_values[index] + np.sqrt(self.sigma_q2) * eps_q
        return float(y), float(z)


def make_blackbox(spec: SyntheticSpec, objective_rng, noise_rng) -> BlackBox:
    return BlackBox(
        f_values=sample_objective(spec, objective_rng),
        q_values=build_constraint(spec),
        sigma_f2=spec.sigma_f2,
        sigma_q2=spec.sigma_q2,
        rng=np.random.default_rng(noise_rng),
    )


def constrained_optimum(f_values, q_values) -> float:
    """Best objective value among candidates with ``q >= 0``."""
    feasible = np.asarray(q_values) >= 0
    if not feasible.any():
        raise ValueError("no feasible candidate")
    return float(np.max(np.asarray(f_values)[feasible]))
