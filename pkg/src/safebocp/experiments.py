"""
Monte-Carlo experiment runner: trials, sweeps, aggregation and persistence.

Every trial owns its random streams, seeded by hashing ``(base seed, sweep
point, replication)``, so serial and parallel sweeps give identical records.
The objective sample of the synthetic benchmark is keyed on ``(base seed,
replication)`` only, which gives common random numbers across sweep points.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import platform
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
import scipy
from scipy.stats import binomtest

from . import __version__
from .acquisition import (
    SafeOptState,
    acquire,
    beta_from_json,
    beta_to_json,
    final_decision,
    information_beta,
    rkhs_beta_schedule,
)
from .benchmarks import movielens as ml
from .benchmarks import synthetic as syn
from .config import SWEEP_AXES, ExperimentConfig, config_from_dict, config_to_dict
from .controller import ControllerConfig, ControllerState, next_beta, step
from .gp import GpModel, GpPrior, Linear, NumericalError, extend

__all__ = [
    "TrialRecord",
    "AggregateMetrics",
    "SweepResult",
    "trial_seed",
    "run_trial",
    "run_sweep",
    "aggregate",
    "nearest_rank",
    "persist",
    "load_trials",
    "load_aggregates",
    "recompute_aggregates",
    "replay_trial",
]

logger = logging.getLogger(__name__)

TRIALS_FILE = "trials.jsonl"
AGGREGATES_FILE = "aggregates.csv"
PLOT_FILE = "plot_data.csv"
HISTOGRAM_FILE = "histograms.csv"
MANIFEST_FILE = "manifest.json"


# ---------------------------------------------------------------------------
# seeding


def _hash_int(*parts) -> int:
    blob = json.dumps(parts, sort_keys=True, separators=(",", ":")).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little") >> 1


def trial_seed(base_seed: int, point: dict, replication: int) -> int:
    """Stable 63-bit seed for one ``(sweep point, replication)`` pair."""
    return _hash_int(int(base_seed), dict(point), int(replication))


def _rng(*parts) -> np.random.Generator:
    return np.random.default_rng(_hash_int(*parts))


# ---------------------------------------------------------------------------
# records


def _num(x):
    if x is None:
        return None
    x = float(x)
    return None if math.isnan(x) else x


@dataclass
class TrialRecord:
    """Full trace of one run.

    ``beta`` holds the constraint scalings ``beta_1 .. beta_{T+1}``; entries
    are floats or the string ``"INFINITE"``. ``delta_alpha`` holds the
    controller's excess violation rates ``Delta_alpha_1 .. Delta_alpha_{T+1}``
    and is empty for fixed schedules. Undefined ratios are stored as ``None``.
    """

    benchmark: str
    algorithm: str
    point: dict
    replication: int
    seed: int
    T: int
    alpha: float
    status: str = "ok"
    message: str = ""
    user_id: Optional[int] = None
    x0: Optional[int] = None
    iterates: list = field(default_factory=list)
    f_true: list = field(default_factory=list)
    q_true: list = field(default_factory=list)
    z: list = field(default_factory=list)
    err: list = field(default_factory=list)
    beta: list = field(default_factory=list)
    delta_alpha: list = field(default_factory=list)
    final: Optional[int] = None
    f_final: Optional[float] = None
    f_opt: Optional[float] = None
    violation_rate: Optional[float] = None
    error_rate: Optional[float] = None
    optimality_ratio: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        data = json.loads(line)
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})

    @property
    def betas(self) -> list:
        return [beta_from_json(b) for b in self.beta]


# ---------------------------------------------------------------------------
# benchmark problems


@dataclass
class _Problem:
    candidates: object
    query: object
    f_values: np.ndarray
    q_values: np.ndarray
    f_prior: GpPrior
    q_prior: GpPrior
    x0_rng: np.random.Generator
    user_id: Optional[int] = None


def _synthetic_spec(cfg: ExperimentConfig) -> syn.SyntheticSpec:
    s = cfg.synthetic
    return syn.SyntheticSpec(
        grid_size=s.grid_size, domain=tuple(s.domain), regime=s.regime,
        sigma_f2=s.sigma_f2, sigma_q2=s.sigma_q2, T=s.T,
    )


def _synthetic_problem(cfg, seed, replication):
    spec = _synthetic_spec(cfg)
    box = syn.make_blackbox(
        spec,
        objective_rng=_rng(cfg.seed, "objective", replication),
        noise_rng=_rng(seed, "noise"),
    )
    return _Problem(
        candidates=syn.candidate_set(spec),
        query=box.query,
        f_values=box.f_values,
        q_values=box.q_values,
        f_prior=GpPrior(syn.surrogate_kernel(spec, "f"), noise_power=spec.sigma_f2),
        q_prior=GpPrior(syn.surrogate_kernel(spec, "q"), noise_power=spec.sigma_q2),
        x0_rng=_rng(seed, "x0"),
    )


def _movielens_path(cfg: ExperimentConfig) -> Path:
    if cfg.movielens.path is not None:
        return Path(cfg.movielens.path)
    if cfg.full:
        from .datasets import ratings_path

        return ratings_path()
    return ml.bundled_table_path()


@lru_cache(maxsize=4)
def _movielens_setup(path, n_train, n_test, rank, reg, sweeps, split_seed):
    table = ml.ingest(path)
    train, test = ml.split_users(table, n_train, n_test, split_seed)
    model = ml.factorize(table, rank=rank, reg=reg, sweeps=sweeps, seed=split_seed, users=train)
    return table, model, test


def movielens_setup(cfg: ExperimentConfig):
    """``(table, factorization, test_users)`` for a config, cached per process."""
    m = cfg.movielens
    return _movielens_setup(
        str(_movielens_path(cfg)), m.n_train, m.n_test, m.rank, m.reg, m.sweeps, m.split_seed
    )


def _movielens_problem(cfg, seed, replication):
    table, model, test = movielens_setup(cfg)
    user = int(test[replication % len(test)])
    box = ml.user_blackbox(model, table, user, seed=cfg.seed, repeat=replication // len(test))
    prior = GpPrior(Linear(), noise_power=0.0)
    return _Problem(
        candidates=box.candidates,
        query=box.query,
        f_values=box.f_values,
        q_values=box.q_values,
        f_prior=prior,
        q_prior=prior,
        x0_rng=_rng(seed, "x0"),
        user_id=user,
    )


# ---------------------------------------------------------------------------
# scaling policies


class _FixedSchedule:
    def __init__(self, betas):
        self.betas = list(betas)
        self.delta_alpha = []

    def beta(self, t):
        return self.betas[t - 1]

    def observe(self, z):
        return int(z < 0)


class _Controller:
    def __init__(self, config: ControllerConfig):
        self.config = config
        self.state = ControllerState.initial(config)
        self.delta_alpha = [self.state.delta_alpha]

    def beta(self, t):
        return next_beta(self.state)

    def observe(self, z):
        err = self.state.error(z, self.config)
        self.state = step(self.state, self.config, err)
        self.delta_alpha.append(self.state.delta_alpha)
        return err


@lru_cache(maxsize=32)
def _noisy_schedule(grid_size, domain, regime, sigma_q2, T, B, delta):
    spec = syn.SyntheticSpec(grid_size=grid_size, domain=domain, regime=regime, sigma_q2=sigma_q2)
    sigma_q = math.sqrt(sigma_q2)
    later = rkhs_beta_schedule(
        B, sigma_q, delta, T, syn.candidate_set(spec), syn.surrogate_kernel(spec)
    )
    return (information_beta(B, sigma_q, delta, 0.0), *later)


def _safeopt_schedule(cfg: ExperimentConfig, T: int):
    so = cfg.safeopt
    if so.beta is not None:
        return [beta_from_json(so.beta)] * (T + 1)
    if cfg.benchmark == "movielens":
        return [float(so.B)] * (T + 1)
    spec = _synthetic_spec(cfg)
    B = so.B if so.B is not None else so.b_ratio * syn.rkhs_norm(spec)
    if spec.sigma_q2 == 0:
        return [float(B)] * (T + 1)
    return list(_noisy_schedule(
        spec.grid_size, spec.domain, spec.regime, spec.sigma_q2, T, float(B), so.delta
    ))


def _policy(cfg: ExperimentConfig):
    T = cfg.T
    if cfg.algorithm == "safeopt":
        return _FixedSchedule(_safeopt_schedule(cfg, T))
    c = cfg.controller
    sigma_q2 = cfg.synthetic.sigma_q2 if cfg.benchmark == "synthetic" else 0.0
    return _Controller(ControllerConfig(
        alpha=c.alpha, T=T, eta=c.eta, delta_alpha_init=c.delta_alpha_init,
        variant="D" if cfg.algorithm == "d-safe-bocp" else "P",
        delta=c.delta, sigma_q=math.sqrt(sigma_q2),
    ))


# ---------------------------------------------------------------------------
# trials


def run_trial(config: ExperimentConfig, sweep_point: dict, replication: int) -> TrialRecord:
    """Execute one full run at ``sweep_point``.

    Numerical failures and benchmark skips are captured in ``status`` rather
    than raised, so a sweep always returns one record per trial.
    """
    cfg = config.at(sweep_point)
    seed = trial_seed(config.seed, sweep_point, replication)
    T = cfg.T
    rec = TrialRecord(
        benchmark=cfg.benchmark, algorithm=cfg.algorithm, point=dict(sweep_point),
        replication=int(replication), seed=seed, T=T, alpha=cfg.controller.alpha,
    )
    try:
        if cfg.benchmark == "synthetic":
            prob = _synthetic_problem(cfg, seed, replication)
        else:
            prob = _movielens_problem(cfg, seed, replication)
    except ml.SkipUser as exc:
        rec.status, rec.message = "skipped", str(exc)
        return rec
    rec.user_id = prob.user_id
    try:
        _run_loop(rec, prob, _policy(cfg), cfg.beta_f, T)
    except NumericalError as exc:
        rec.status, rec.message = "failed", str(exc)
        logger.warning("trial %s rep %d failed: %s", sweep_point, replication, exc)
    return rec


def _run_loop(rec: TrialRecord, prob: _Problem, policy, beta_f: float, T: int):
    cands = prob.candidates
    pts = cands.points
    x0 = int(prob.x0_rng.choice(cands.s0))
    y0, z0 = prob.query(x0)
    f_model = GpModel(prob.f_prior, pts[[x0]], [y0])
    q_model = GpModel(prob.q_prior, pts[[x0]], [z0])
    rec.x0 = x0

    beta = policy.beta(1)
    rec.beta.append(beta_to_json(beta))
    state = SafeOptState(cands, f_model, q_model, beta_f, beta)
    x = acquire(state)
    for t in range(1, T + 1):
        y, z = prob.query(x)
        rec.iterates.append(x)
        rec.f_true.append(float(prob.f_values[x]))
        rec.q_true.append(float(prob.q_values[x]))
        rec.z.append(z)
        f_model = extend(f_model, pts[x], y)
        q_model = extend(q_model, pts[x], z)
        rec.err.append(policy.observe(z))
        beta = policy.beta(t + 1)
        rec.beta.append(beta_to_json(beta))
        state = SafeOptState(cands, f_model, q_model, beta_f, beta)
        if t < T:
            x = acquire(state)

    final = final_decision(state)
    f_opt = syn.constrained_optimum(prob.f_values, prob.q_values)
    rec.delta_alpha = [float(v) for v in policy.delta_alpha]
    rec.final = final
    rec.f_final = float(prob.f_values[final])
    rec.f_opt = f_opt
    rec.violation_rate = sum(q < 0 for q in rec.q_true) / T
    rec.error_rate = sum(rec.err) / T
    rec.optimality_ratio = _num(rec.f_final / f_opt) if f_opt != 0 else None


# ---------------------------------------------------------------------------
# aggregation


def nearest_rank(values, p: float) -> float:
    """Nearest-rank percentile: the ``ceil(p * n)``-th smallest value (1-based)."""
    v = sorted(values)
    if not v:
        return math.nan
    k = max(1, math.ceil(p * len(v)))
    return float(v[k - 1])


def _mean(values):
    return math.fsum(values) / len(values) if values else math.nan


@dataclass
class AggregateMetrics:
    """Per-sweep-point summary over replications.

    Means and envelopes exclude failed and skipped trials; the envelope is the
    nearest-rank 2.5/97.5 percentile pair. ``excess_*`` is the fraction of runs
    with violation rate above ``alpha`` with a Clopper-Pearson 95% interval.
    ``guarantee_ok`` is only set for the deterministic (D) variant.
    """

    point: dict
    algorithm: str
    alpha: float
    n_trials: int
    n_ok: int
    n_failed: int
    n_skipped: int
    violation_mean: float
    violation_lo: float
    violation_hi: float
    violation_max: float
    ratio_mean: float
    ratio_lo: float
    ratio_hi: float
    excess_prob: float
    excess_lo: float
    excess_hi: float
    error_rate_max: float
    guarantee_ok: Optional[bool]


def aggregate(records, alpha: float = None, algorithm: str = None, point: dict = None) -> AggregateMetrics:
    """Fold the records of one sweep point into :class:`AggregateMetrics`."""
    records = list(records)
    if records:
        alpha = records[0].alpha if alpha is None else alpha
        algorithm = records[0].algorithm if algorithm is None else algorithm
        point = records[0].point if point is None else point
    ok = [r for r in records if r.ok]
    viol = [r.violation_rate for r in ok]
    ratio = [r.optimality_ratio for r in ok if r.optimality_ratio is not None]
    n_excess = sum(v > alpha for v in viol)
    if ok:
        ci = binomtest(n_excess, len(ok)).proportion_ci(0.95, method="exact")
        excess = (n_excess / len(ok), float(ci.low), float(ci.high))
    else:
        excess = (math.nan, math.nan, math.nan)
    guarantee = None
    if algorithm == "d-safe-bocp":
        guarantee = all(v <= alpha for v in viol)
    return AggregateMetrics(
        point=dict(point or {}),
        algorithm=algorithm,
        alpha=alpha,
        n_trials=len(records),
        n_ok=len(ok),
        n_failed=sum(r.status == "failed" for r in records),
        n_skipped=sum(r.status == "skipped" for r in records),
        violation_mean=_mean(viol),
        violation_lo=nearest_rank(viol, 0.025),
        violation_hi=nearest_rank(viol, 0.975),
        violation_max=max(viol) if viol else math.nan,
        ratio_mean=_mean(ratio),
        ratio_lo=nearest_rank(ratio, 0.025),
        ratio_hi=nearest_rank(ratio, 0.975),
        excess_prob=excess[0],
        excess_lo=excess[1],
        excess_hi=excess[2],
        error_rate_max=max((r.error_rate for r in ok), default=math.nan),
        guarantee_ok=guarantee,
    )


# ---------------------------------------------------------------------------
# sweeps


@dataclass
class SweepResult:
    config: ExperimentConfig
    points: list
    records: list
    aggregates: list

    @property
    def n_failed(self) -> int:
        return sum(r.status == "failed" for r in self.records)

    @property
    def guarantee_violations(self) -> int:
        return sum(a.guarantee_ok is False for a in self.aggregates)

    def records_at(self, point: dict) -> list:
        return [r for r in self.records if r.point == point]


def _run_task(args):
    config, point, rep = args
    return run_trial(config, point, rep)


def run_sweep(config: ExperimentConfig, jobs: int = None) -> SweepResult:
    """Run every (sweep point, replication) pair and aggregate per point.

    Trials are folded in (point, replication) order regardless of ``jobs``.
    """
    jobs = config.jobs if jobs is None else jobs
    R = config.effective_replications
    points = config.sweep_points() if R > 0 else []
    tasks = [(config, p, r) for p in points for r in range(R)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        records = [_run_task(t) for t in tasks]
    aggregates = [_aggregate_point(config, p, records[i * R:(i + 1) * R]) for i, p in enumerate(points)]
    return SweepResult(config, points, records, aggregates)


def _aggregate_point(config, point, records):
    cfg = config.at(point)
    return aggregate(records, alpha=cfg.controller.alpha, algorithm=cfg.algorithm, point=point)


# ---------------------------------------------------------------------------
# persistence


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(x).lower()
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def _axes(points):
    return [a for a in SWEEP_AXES if any(a in p for p in points)]


def _key_columns(axes):
    # algorithm is always a column, whether or not it is swept
    return list(axes) + ([] if "algorithm" in axes else ["algorithm"])


def _key(point, algorithm, axes):
    return [_fmt(algorithm if ax == "algorithm" else point.get(ax)) for ax in _key_columns(axes)]


_AGG_FIELDS = [f.name for f in fields(AggregateMetrics) if f.name not in ("point", "algorithm")]


def _aggregate_rows(aggregates, axes):
    header = _key_columns(axes) + [("alpha_target" if k == "alpha" else k) for k in _AGG_FIELDS]
    rows = []
    for a in aggregates:
        d = asdict(a)
        rows.append(_key(a.point, a.algorithm, axes) + [_fmt(d[k]) for k in _AGG_FIELDS])
    return header, rows


def _plot_rows(aggregates, axes):
    header = _key_columns(axes) + ["metric", "mean", "lo", "hi"]
    rows = []
    for a in aggregates:
        key = _key(a.point, a.algorithm, axes)
        rows.append(key + ["violation_rate", *map(_fmt, (a.violation_mean, a.violation_lo, a.violation_hi))])
        rows.append(key + ["optimality_ratio", *map(_fmt, (a.ratio_mean, a.ratio_lo, a.ratio_hi))])
        rows.append(key + ["excess_probability", *map(_fmt, (a.excess_prob, a.excess_lo, a.excess_hi))])
    return header, rows


def _histogram_rows(result: SweepResult, axes):
    # Ratings of every recommended movie, pooled over users and replications.
    header = _key_columns(axes) + ["rating", "count"]
    rows = []
    for p in result.points:
        recs = [r for r in result.records_at(p) if r.ok]
        counts = Counter(int(round(q)) + ml.SAFE_RATING for r in recs for q in r.q_true)
        algo = result.config.at(p).algorithm
        for rating in range(1, 6):
            rows.append(_key(p, algo, axes) + [str(rating), str(counts.get(rating, 0))])
    return header, rows


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _grid_metadata(config: ExperimentConfig) -> dict:
    if config.benchmark == "synthetic":
        spec = _synthetic_spec(config)
        g = syn.grid(spec)
        return {
            "grid_size": spec.grid_size,
            "domain": list(spec.domain),
            "step": float(g[1] - g[0]),
            "initial_safe": list(syn.initial_safe_set(spec)),
            "constraint_rkhs_norm": syn.rkhs_norm(spec),
        }
    return {"ratings": str(_movielens_path(config))}


def _software() -> dict:
    return {
        "package": "safebocp",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def persist(result: SweepResult, out_dir) -> dict:
    """Write trials, aggregates, plot tables and a manifest; return the manifest.

    An empty sweep writes the manifest only.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = result.config
    files = {}
    if result.records:
        with open(out / TRIALS_FILE, "w", encoding="utf-8") as fh:
            for r in result.records:
                fh.write(r.to_json() + "\n")
        files["trials"] = TRIALS_FILE
        axes = _axes(result.points)
        _write_csv(out / AGGREGATES_FILE, *_aggregate_rows(result.aggregates, axes))
        files["aggregates"] = AGGREGATES_FILE
        _write_csv(out / PLOT_FILE, *_plot_rows(result.aggregates, axes))
        files["plot_data"] = PLOT_FILE
        if config.benchmark == "movielens":
            _write_csv(out / HISTOGRAM_FILE, *_histogram_rows(result, axes))
            files["histograms"] = HISTOGRAM_FILE
    manifest = {
        "software": _software(),
        "config": config_to_dict(config),
        "base_seed": config.seed,
        "replications": config.effective_replications,
        "grid": _grid_metadata(config),
        "sweep_points": result.points,
        "trials": [
            {"point": r.point, "replication": r.replication, "seed": r.seed, "status": r.status}
            for r in result.records
        ],
        "summary": {
            "n_trials": len(result.records),
            "n_failed": result.n_failed,
            "guarantee_violations": result.guarantee_violations,
        },
        "files": {**files, "manifest": MANIFEST_FILE},
    }
    with open(out / MANIFEST_FILE, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_trials(out_dir) -> list:
    path = Path(out_dir) / TRIALS_FILE
    with open(path, encoding="utf-8") as fh:
        return [TrialRecord.from_json(line) for line in fh if line.strip()]


def load_aggregates(out_dir) -> list:
    """Stored aggregate rows as lists of strings (header first)."""
    with open(Path(out_dir) / AGGREGATES_FILE, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


def recompute_aggregates(out_dir) -> list:
    """Aggregate rows rebuilt from the persisted trials, in the stored CSV layout."""
    manifest = json.loads((Path(out_dir) / MANIFEST_FILE).read_text(encoding="utf-8"))
    config = config_from_dict(manifest["config"])
    points = manifest["sweep_points"]
    records = load_trials(out_dir)
    aggs = [_aggregate_point(config, p, [r for r in records if r.point == p]) for p in points]
    header, rows = _aggregate_rows(aggs, _axes(points))
    return [header] + rows


def replay_trial(out_dir, index: int):
    """Re-run trial ``index`` from the manifest; return ``(replayed, stored)`` JSON lines."""
    out = Path(out_dir)
    manifest = json.loads((out / MANIFEST_FILE).read_text(encoding="utf-8"))
    config = config_from_dict(manifest["config"])
    entry = manifest["trials"][index]
    replayed = run_trial(config, entry["point"], entry["replication"]).to_json()
    with open(out / TRIALS_FILE, encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if i == index:
                return replayed, line.rstrip("\n")
    raise IndexError(f"trial {index} not in {out / TRIALS_FILE}")
