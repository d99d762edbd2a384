"""
Exact Gaussian-process regression over finite candidate sets.

Models are immutable: :func:`extend` returns a new :class:`GpModel` and
refactorizes the full Gram matrix. Histories here are short (tens of points),
so an O(t^3) refactorization per step costs nothing and keeps results
bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.spatial.distance import cdist

__all__ = [
    "RBF",
    "Linear",
    "KernelSpec",
    "GpPrior",
    "GpModel",
    "NumericalError",
    "JITTER_LADDER",
    "jittered_cholesky",
    "kernel_eval",
    "gram",
    "posterior",
    "extend",
]

#: Relative jitter levels tried in order, as multiples of the mean Gram diagonal.
JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)

# A factor whose smallest squared pivot falls below this fraction of the mean
# diagonal is treated as a failed factorization (exact duplicates under zero
# noise otherwise "succeed" with a round-off pivot).
_PIVOT_FLOOR = 1e-12


class NumericalError(ArithmeticError):
    """Cholesky factorization failed at every jitter level."""

    def __init__(self, message, jitters=()):
        super().__init__(message)
        self.jitters = tuple(jitters)


@dataclass(frozen=True)
class RBF:
    """Squared-exponential kernel ``variance * exp(-bandwidth * ||x - x'||^2)``.

    ``variance`` defaults to 1, which gives the unit-diagonal form.
    """

    bandwidth: float
    variance: float = 1.0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"RBF bandwidth must be > 0, got {self.bandwidth}")
        if not self.variance > 0:
            raise ValueError(f"RBF variance must be > 0, got {self.variance}")

    def __call__(self, A, B):
        return self.variance * np.exp(-self.bandwidth * cdist(A, B, "sqeuclidean"))

    def diag(self, A):
        return np.full(len(A), float(self.variance))


@dataclass(frozen=True)
class Linear:
    """Dot-product kernel ``x^T x'``."""

    def __call__(self, A, B):
        return A @ B.T

    def diag(self, A):
        return np.einsum("ij,ij->i", A, A)


KernelSpec = Union[RBF, Linear]


def _as_matrix(X, dim=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if dim == 1 else X[None, :]
    if X.ndim != 2:
        raise ValueError(f"expected a vector or a 2-D array of vectors, got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"dimension mismatch: expected d={dim}, got d={X.shape[1]}")
    return X


def kernel_eval(spec: KernelSpec, x, x_other) -> float:
    """Evaluate ``spec`` on a single pair of vectors."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x_other = np.atleast_1d(np.asarray(x_other, dtype=float))
    if x.ndim != 1 or x.shape != x_other.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x_other.shape}")
    return float(spec(x[None, :], x_other[None, :])[0, 0])


def gram(spec: KernelSpec, A, B=None) -> np.ndarray:
    """Kernel matrix between the rows of ``A`` and ``B`` (``B`` defaults to ``A``)."""
    A = _as_matrix(A)
    B = A if B is None else _as_matrix(B, A.shape[1])
    return spec(A, B)


@dataclass(frozen=True)
class GpPrior:
    """Constant mean, kernel and observation-noise power."""

    kernel: KernelSpec
    mean: float = 0.0
    noise_power: float = 0.0

    def __post_init__(self):
        if not self.noise_power >= 0:
            raise ValueError(f"noise_power must be >= 0, got {self.noise_power}")


def jittered_cholesky(K, noise_power=0.0):
    """Lower Cholesky factor of ``K + noise_power*I`` escalating through :data:`JITTER_LADDER`.

    Returns ``(L, jitter)`` where ``jitter`` is the absolute diagonal jitter used.
    """
    n = K.shape[0]
    scale = float(np.mean(np.diag(K))) + noise_power
    if scale <= 0:
        scale = 1.0
    tried = []
    for level in JITTER_LADDER:
        jitter = level * scale
        tried.append(jitter)
        A = K + (noise_power + jitter) * np.eye(n)
        try:
            L = cholesky(A, lower=True, check_finite=False)
        except LinAlgError:
            continue
        if np.min(np.diag(L)) ** 2 >= _PIVOT_FLOOR * scale:
            return L, jitter
    raise NumericalError(
        f"Cholesky failed for a {n}x{n} Gram matrix at jitter levels {tried}", tried
    )


class GpModel:
    """GP prior conditioned on a history of (input, output) pairs.

    Parameters
    ----------
    prior : GpPrior
    inputs : array_like, shape (n, d), optional
    outputs : array_like, shape (n,), optional
    dim : int, optional
        Input dimension; required when the history is empty.
    """

    __slots__ = ("prior", "inputs", "outputs", "dim", "jitter", "_L", "_alpha")

    def __init__(self, prior: GpPrior, inputs=None, outputs=None, dim=None):
        if inputs is None:
            if dim is None:
                raise ValueError("dim is required for an empty history")
            inputs = np.empty((0, dim))
            outputs = np.empty(0)
        inputs = np.array(_as_matrix(inputs, dim))
        outputs = np.array(outputs, dtype=float).reshape(-1)
        if len(inputs) != len(outputs):
            raise ValueError(f"{len(inputs)} inputs but {len(outputs)} outputs")
        self.prior = prior
        self.inputs = inputs
        self.outputs = outputs
        self.dim = inputs.shape[1]
        self.inputs.setflags(write=False)
        self.outputs.setflags(write=False)
        if len(outputs):
            K = prior.kernel(inputs, inputs)
            self._L, self.jitter = jittered_cholesky(K, prior.noise_power)
            self._alpha = solve_triangular(
                self._L.T,
                solve_triangular(self._L, outputs - prior.mean, lower=True),
                lower=False,
            )
        else:
            self._L = self._alpha = None
            self.jitter = 0.0

    def __len__(self):
        return len(self.outputs)

    def __repr__(self):
        return f"GpModel(n={len(self)}, dim={self.dim}, prior={self.prior!r})"

    def _whiten(self, X):
        # L^{-1} k(X_obs, X), shape (n, m)
        return solve_triangular(
            self._L, self.prior.kernel(self.inputs, X), lower=True, check_finite=False
        )

    def predict(self, X):
        """Posterior mean and standard deviation at the rows of ``X``."""
        X = _as_matrix(X, self.dim)
        kern = self.prior.kernel
        if not len(self):
            return np.full(len(X), float(self.prior.mean)), np.sqrt(kern.diag(X))
        mean = self.prior.mean + kern(X, self.inputs) @ self._alpha
        V = self._whiten(X)
        var = kern.diag(X) - np.einsum("ij,ij->j", V, V)
        return mean, np.sqrt(np.maximum(var, 0.0))

    def covariance(self, A, B):
        """Posterior covariance matrix between the rows of ``A`` and ``B``."""
        A = _as_matrix(A, self.dim)
        B = _as_matrix(B, self.dim)
        K = self.prior.kernel(A, B)
        if not len(self):
            return K
        return K - self._whiten(A).T @ self._whiten(B)

    def whitened(self, X):
        """``L^{-1} k(X_obs, X)`` for callers that assemble covariances themselves."""
        X = _as_matrix(X, self.dim)
        if not len(self):
            return np.empty((0, len(X)))
        return self._whiten(X)


def posterior(model: GpModel, x):
    """Posterior ``(mean, std)`` of the latent function at a single point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean, std = model.predict(x[None, :])
    return float(mean[0]), float(std[0])


def extend(model: GpModel, x, y) -> GpModel:
    """Return a new model with ``(x, y)`` appended to the history."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (model.dim,):
        raise ValueError(f"dimension mismatch: expected d={model.dim}, got {x.shape}")
    return GpModel(
        model.prior,
        np.vstack([model.inputs, x[None, :]]),
        np.append(model.outputs, float(y)),
    )
