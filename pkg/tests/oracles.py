"""Independent reference implementations shared by the unit and acceptance tests."""

import math

import numpy as np

from safebocp.acquisition import INFINITE, CandidateSet, SafeOptState
from safebocp.gp import RBF, GpModel, GpPrior, extend, posterior


def ppf_oracle(p, lo=-40.0, hi=40.0):
    """Standard normal quantile by bisection on math.erf."""
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * (1 + math.erf(mid / math.sqrt(2))) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def dense_posterior(kernel, mean0, noise, X, y, Xq):
    """GP posterior through an explicit matrix inverse."""
    K = kernel(X, X) + noise * np.eye(len(X))
    Kinv = np.linalg.inv(K)
    ks = kernel(Xq, X)
    mean = mean0 + ks @ Kinv @ (y - mean0)
    var = np.diag(kernel(Xq, Xq)) - np.einsum("ij,jk,ik->i", ks, Kinv, ks)
    return mean, var


def dense_posterior_case(rng, case):
    """One random regression problem; returns (model, oracle mean, oracle var, prior var)."""
    from safebocp.gp import Linear

    n = int(rng.integers(1, 21))
    d = int(rng.integers(1, 4))
    kern = RBF(float(rng.uniform(0.05, 2.0))) if case % 2 else Linear()
    noise = float(10 ** rng.uniform(-3, 0))
    mu0 = float(rng.normal())
    X = rng.normal(size=(n, d))
    y = rng.normal(size=n)
    Xq = rng.normal(size=(10, d))
    m = GpModel(GpPrior(kern, mu0, noise), X, y)
    mean_ref, var_ref = dense_posterior(kern, mu0, noise, X, y, Xq)
    return m, Xq, mean_ref, np.maximum(var_ref, 0.0), kern.diag(Xq)


# Brute-force set definitions: loop over candidates, one posterior() call each.

def bf_bounds(model, cands, beta):
    lo, hi = [], []
    for x in cands.points:
        m, s = posterior(model, x)
        lo.append(-math.inf if beta is INFINITE else m - beta * s)
        hi.append(math.inf if beta is INFINITE else m + beta * s)
    return np.array(lo), np.array(hi)


def bf_safe(cands, q_model, beta):
    lo, _ = bf_bounds(q_model, cands, beta)
    return sorted({i for i in range(len(cands)) if lo[i] >= 0} | set(cands.initial_safe))


def bf_optimizers(cands, f_model, beta_f, safe):
    lo, hi = bf_bounds(f_model, cands, beta_f)
    best = max(lo[i] for i in safe)
    return [i for i in safe if hi[i] >= best]


def bf_expanders(cands, q_model, beta, safe):
    """Refit with the optimistic observation and look for newly safe points."""
    if beta is INFINITE:
        return []
    _, hi = bf_bounds(q_model, cands, beta)
    out = []
    for i in safe:
        refit = extend(q_model, cands.points[i], hi[i])
        if set(bf_safe(cands, refit, beta)) - set(safe):
            out.append(i)
    return out


def bf_acquire(state, opt, exp):
    cands = state.candidates
    pool = sorted(set(opt) | set(exp))
    score = [max(posterior(state.f_model, cands.points[i])[1],
                 posterior(state.q_model, cands.points[i])[1]) for i in pool]
    return pool[score.index(max(score))]


def bf_final(state, safe):
    f_lo, _ = bf_bounds(state.f_model, state.candidates, state.beta_f)
    best = max(f_lo[i] for i in safe)
    return min(i for i in safe if f_lo[i] == best)


def random_case(rng, n=None):
    """Random SafeOpt state on at most seven grid points."""
    n = n or int(rng.integers(2, 8))
    xs = np.sort(rng.choice(np.linspace(-3, 3, 61), size=n, replace=False))
    s0 = tuple(sorted(rng.choice(n, size=int(rng.integers(1, 3)), replace=False).tolist()))
    cands = CandidateSet(xs[:, None], s0)
    kern = RBF(float(rng.uniform(0.2, 2.0)))
    noise = float(rng.choice([0.01, 0.1, 0.5]))
    n_obs = int(rng.integers(0, 4))
    idx = rng.integers(0, n, size=n_obs)
    X = cands.points[idx].reshape(n_obs, 1)
    f_model = GpModel(GpPrior(kern, noise_power=noise), X, rng.normal(size=n_obs), dim=1)
    q_model = GpModel(GpPrior(kern, mean=float(rng.uniform(-0.5, 1.0)), noise_power=noise),
                      X, rng.normal(0.3, 1.0, size=n_obs), dim=1)
    beta_q = float(rng.uniform(0.0, 3.0))
    beta_f = float(rng.uniform(0.0, 3.0))
    return SafeOptState(cands, f_model, q_model, beta_f, beta_q)


def brute_force_matches(state):
    """Compare every set operation on ``state`` against the brute-force definitions.

    Returns ``(mismatches, n_expanders)``: the names of operations that differ
    and how many expanders the reference found.
    """
    from safebocp.acquisition import acquire, expanders, final_decision, potential_optimizers, safe_set

    cands = state.candidates
    bad = []
    safe = bf_safe(cands, state.q_model, state.beta_q)
    if state.safe.tolist() != safe or safe_set(cands, state.q_model, state.beta_q).tolist() != safe:
        bad.append("safe_set")
    opt = bf_optimizers(cands, state.f_model, state.beta_f, safe)
    if potential_optimizers(state).tolist() != opt:
        bad.append("potential_optimizers")
    exp = bf_expanders(cands, state.q_model, state.beta_q, safe)
    if expanders(state).tolist() != exp:
        bad.append("expanders")
    if acquire(state) != bf_acquire(state, opt, exp):
        bad.append("acquire")
    if final_decision(state) != bf_final(state, safe):
        bad.append("final_decision")
    return bad, len(exp)
