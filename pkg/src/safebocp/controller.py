"""
Online-conformal control of the constraint scaling.

The controller tracks an excess violation rate that drifts up by
``eta * (1 - alpha_algo)`` after each flagged error and down by
``eta * alpha_algo`` otherwise, and maps it to a scaling through the inverse
Gaussian CDF. Once the excess rate reaches 1 the scaling is ``INFINITE`` and
the next iterate is drawn from the initial safe set, which is what bounds the
number of errors over the horizon.

Two error signals are supported: ``"D"`` flags ``z < 0`` and assumes
noiseless constraint feedback; ``"P"`` flags ``z < sigma_q * omega`` with the
slope factor ``omega`` from :func:`slope_factor`.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

from scipy.stats import norm

from .acquisition import INFINITE, ScalingBeta

__all__ = [
    "ControllerConfig",
    "ControllerState",
    "alpha_algo",
    "phi",
    "slope_factor",
    "error_signal",
    "step",
    "next_beta",
    "excess_rate_bound",
    "error_rate_bound",
]

logger = logging.getLogger(__name__)

VARIANTS = ("D", "P")


def alpha_algo(alpha: float, eta: float, T: int, delta_alpha_init: float = 0.0) -> float:
    """Algorithmic target level, deflated from ``alpha`` so the worst case stays below it."""
    if T < 2:
        raise ValueError(f"the algorithmic target needs T >= 2, got T={T}")
    return (T * alpha - 1.0 - 1.0 / eta + delta_alpha_init / eta) / (T - 1)


def phi(delta_alpha: float) -> ScalingBeta:
    """Map an excess violation rate to a scaling: 0 at or below 0, INFINITE at or above 1."""
    if delta_alpha <= 0:
        return 0.0
    if delta_alpha >= 1:
        return INFINITE
    return float(norm.ppf((delta_alpha + 1.0) / 2.0))


def slope_factor(delta: float, T: int) -> float:
    """Threshold multiplier ``F^{-1}((1 - delta)^(1/T))`` for the cautious error signal.

    Non-positive values (only for very lax reliability targets) are clamped to
    0 with a warning.
    """
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    omega = float(norm.ppf((1.0 - delta) ** (1.0 / T)))
    if omega <= 0:
        logger.warning("slope factor %.4g <= 0 for delta=%g, T=%d; clamped to 0", omega, delta, T)
        return 0.0
    return omega


def error_signal(z: float, variant: str, sigma_q: float = 0.0, omega: float = 0.0) -> int:
    """1 if the constraint observation ``z`` is flagged as unsafe, else 0.

    The comparison is strict, so an observation exactly at the threshold
    counts as safe.
    """
    if variant == "D":
        if sigma_q != 0:
            raise ValueError("the D error signal assumes noiseless feedback (sigma_q = 0)")
        return int(z < 0)
    if variant == "P":
        return int(z < sigma_q * omega)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


@dataclass(frozen=True)
class ControllerConfig:
    """Targets and gains for one controller run.

    ``delta`` is only used by the P variant; ``sigma_q`` is the constraint
    observation noise standard deviation.
    """

    alpha: float
    T: int
    eta: float = 2.0
    delta_alpha_init: float = 0.0
    variant: str = "D"
    delta: float = 0.1
    sigma_q: float = 0.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if not self.delta_alpha_init < 1:
            raise ValueError(f"initial excess violation rate must be < 1, got {self.delta_alpha_init}")
        if self.T < 2:
            raise ValueError(f"T must be >= 2, got {self.T}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not self.sigma_q >= 0:
            raise ValueError(f"sigma_q must be >= 0, got {self.sigma_q}")
        if self.variant == "D" and self.sigma_q != 0:
            raise ValueError("the D variant requires noiseless constraint feedback (sigma_q = 0)")
        if self.variant == "P" and not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.alpha_algo < 0:
            # No-error steps would then raise delta_alpha past the saturation
            # point, and the worst-case average error no longer stays below alpha.
            raise ValueError(
                f"alpha={self.alpha} is unattainable over T={self.T} with eta={self.eta}: "
                f"need T*alpha >= 1 + (1 - delta_alpha_init)/eta"
            )

    @property
    def alpha_algo(self) -> float:
        return alpha_algo(self.alpha, self.eta, self.T, self.delta_alpha_init)

    @property
    def omega(self) -> float:
        return slope_factor(self.delta, self.T) if self.variant == "P" else 0.0


@dataclass(frozen=True)
class ControllerState:
    """Excess violation rate after ``step`` updates."""

    delta_alpha: float
    alpha_algo: float
    omega: float
    step: int = 0

    @classmethod
    def initial(cls, config: ControllerConfig) -> "ControllerState":
        return cls(config.delta_alpha_init, config.alpha_algo, config.omega, 0)

    def error(self, z: float, config: ControllerConfig) -> int:
        return error_signal(z, config.variant, config.sigma_q, self.omega)


def step(state: ControllerState, config: ControllerConfig, err: int) -> ControllerState:
    """One update of the excess violation rate."""
    if state.step >= config.T:
        raise RuntimeError(f"controller already consumed its horizon of T={config.T} steps")
    if err not in (0, 1):
        raise ValueError(f"error signal must be 0 or 1, got {err!r}")
    return replace(
        state,
        delta_alpha=state.delta_alpha + config.eta * (err - state.alpha_algo),
        step=state.step + 1,
    )


def next_beta(state: ControllerState) -> ScalingBeta:
    return phi(state.delta_alpha)


def excess_rate_bound(config: ControllerConfig) -> float:
    """Strict upper bound on the excess violation rate when S0 never raises an error."""
    return 1.0 + config.eta * (1.0 - config.alpha_algo)


def error_rate_bound(config: ControllerConfig) -> float:
    """Worst-case average error signal over the horizon (equals ``alpha`` by construction)."""
    return (excess_rate_bound(config) - config.delta_alpha_init) / (config.T * config.eta) + config.alpha_algo
