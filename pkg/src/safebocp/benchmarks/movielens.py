"""
Safe movie recommendation on MovieLens-format ratings.

Movie feature vectors come from regularized alternating least squares on the
training users' ratings. Each test user becomes a noiseless black box over the
movies they rated, with ``f = q = rating - 4`` so that anything rated below 4
is unsafe.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from ..acquisition import CandidateSet

__all__ = [
    "RatingsTable",
    "FactorizationModel",
    "UserBlackBox",
    "DataError",
    "TrainingError",
    "SkipUser",
    "ingest",
    "split_users",
    "factorize",
    "user_blackbox",
    "make_synthetic_table",
    "write_table",
    "bundled_table_path",
]

logger = logging.getLogger(__name__)

SAFE_RATING = 4


class DataError(ValueError):
    """Ratings file has no usable rows."""


class TrainingError(ArithmeticError):
    """Factorization produced non-finite values."""


class SkipUser(LookupError):
    """The user cannot host a benchmark run (e.g. no movie rated exactly 4)."""


@dataclass(frozen=True, eq=False)
class RatingsTable:
    """Canonically ordered ``(user, movie, rating)`` triples.

    Rows are sorted by user then movie, so two files holding the same ratings in
    different orders produce identical tables.
    """

    users: np.ndarray
    movies: np.ndarray
    ratings: np.ndarray
    rejected: tuple = ()
    duplicates: int = 0

    def __len__(self):
        return len(self.ratings)

    @property
    def user_ids(self) -> np.ndarray:
        return np.unique(self.users)

    @property
    def movie_ids(self) -> np.ndarray:
        return np.unique(self.movies)

    def counts(self) -> dict:
        ids, n = np.unique(self.users, return_counts=True)
        return dict(zip(ids.tolist(), n.tolist()))

    def rated_by(self, user_id):
        """Movie ids and ratings of one user, in movie-id order."""
        rows = self.users == user_id
        return self.movies[rows], self.ratings[rows]


def _parse_line(line):
    parts = line.split("\t")
    if len(parts) != 4:
        parts = line.split()
    if len(parts) != 4:
        return None, f"expected 4 fields, got {len(parts)}"
    try:
        user, movie, rating, _timestamp = (int(p) for p in parts)
    except ValueError:
        return None, "non-integer field"
    if not 1 <= rating <= 5:
        return None, f"rating {rating} outside 1..5"
    return (user, movie, rating), None


def ingest(path) -> RatingsTable:
    """Parse a ``user<TAB>item<TAB>rating<TAB>timestamp`` file.

    Malformed rows are skipped and reported in ``rejected`` as
    ``(line_number, reason)``; a repeated ``(user, movie)`` pair keeps the last
    rating seen.
    """
    entries = {}
    rejected = []
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            triple, reason = _parse_line(line)
            if triple is None:
                rejected.append((lineno, reason))
                logger.warning("%s:%d rejected: %s", path, lineno, reason)
                continue
            key = triple[:2]
            if key in entries:
                duplicates += 1
            entries[key] = triple[2]
    if not entries:
        raise DataError(f"{path}: no valid rating rows")
    keys = sorted(entries)
    users = np.array([k[0] for k in keys], dtype=np.int64)
    movies = np.array([k[1] for k in keys], dtype=np.int64)
    ratings = np.array([entries[k] for k in keys], dtype=np.int64)
    if duplicates:
        logger.info("%s: %d duplicate (user, movie) rows, last rating kept", path, duplicates)
    logger.info(
        "%s: %d ratings, %d users, %d movies, %d rejected rows",
        path, len(ratings), len(np.unique(users)), len(np.unique(movies)), len(rejected),
    )
    return RatingsTable(users, movies, ratings, tuple(rejected), duplicates)


def split_users(table: RatingsTable, n_train=200, n_test=10, seed=0):
    """Seeded random training users; test users are the most active of the rest.

    Ties in rating count go to the smaller user id.
    """
    ids = table.user_ids
    if n_train + n_test > len(ids):
        raise ValueError(f"need {n_train + n_test} users, table has {len(ids)}")
    rng = np.random.default_rng(seed)
    train = np.sort(rng.choice(ids, size=n_train, replace=False))
    counts = table.counts()
    rest = sorted(set(ids.tolist()) - set(train.tolist()), key=lambda u: (-counts[u], u))
    return train, np.array(rest[:n_test], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class FactorizationModel:
    movie_ids: np.ndarray
    movie_features: np.ndarray
    user_ids: np.ndarray
    user_features: np.ndarray
    rank: int
    reg: float
    sweeps: int
    seed: int
    rmse: float

    def features(self, movie_ids):
        """Feature rows for ``movie_ids`` plus a mask of which ids are known."""
        pos = np.searchsorted(self.movie_ids, movie_ids)
        pos = np.clip(pos, 0, len(self.movie_ids) - 1)
        known = self.movie_ids[pos] == movie_ids
        return self.movie_features[pos[known]], known


def factorize(table: RatingsTable, rank=20, reg=0.1, sweeps=50, seed=0, users=None):
    """Regularized ALS on the observed ratings of ``users`` (default: everyone).

    Minimizes ``sum (r_um - u_u . v_m)^2 + reg * (|U|^2 + |V|^2)`` by exact
    alternating ridge solves, starting from a seeded ``N(0, 0.1^2)`` movie
    factor.
    """
    rows = np.ones(len(table), dtype=bool) if users is None else np.isin(table.users, users)
    u_raw, m_raw, r = table.users[rows], table.movies[rows], table.ratings[rows].astype(float)
    user_ids, ui = np.unique(u_raw, return_inverse=True)
    movie_ids, mi = np.unique(m_raw, return_inverse=True)
    if len(user_ids) < rank or len(movie_ids) < rank:
        raise ValueError(
            f"rank {rank} needs at least {rank} users and movies; "
            f"got {len(user_ids)} users, {len(movie_ids)} movies"
        )
    by_user = [np.flatnonzero(ui == k) for k in range(len(user_ids))]
    by_movie = [np.flatnonzero(mi == k) for k in range(len(movie_ids))]

    rng = np.random.default_rng(seed)
    V = rng.normal(0.0, 0.1, size=(len(movie_ids), rank))
    U = np.zeros((len(user_ids), rank))
    ridge = reg * np.eye(rank)

    def solve(F, idx_other, obs):
        A = F[idx_other]
        return np.linalg.solve(A.T @ A + ridge, A.T @ obs)

    for _ in range(sweeps):
        for k, sel in enumerate(by_user):
            U[k] = solve(V, mi[sel], r[sel])
        for k, sel in enumerate(by_movie):
            V[k] = solve(U, ui[sel], r[sel])
        if not (np.isfinite(U).all() and np.isfinite(V).all()):
            raise TrainingError("alternating least squares diverged")

    resid = r - np.einsum("ij,ij->i", U[ui], V[mi])
    rmse = float(np.sqrt(np.mean(resid**2)))
    logger.info("ALS rank=%d reg=%g sweeps=%d: training RMSE %.4f", rank, reg, sweeps, rmse)
    return FactorizationModel(movie_ids, V, user_ids, U, rank, reg, sweeps, seed, rmse)


@dataclass(eq=False)
class UserBlackBox:
    """Noiseless recommendation oracle for one user.

    Candidate ``i`` is movie ``movie_ids[i]``; querying it returns
    ``(rating - 4, rating - 4)``.
    """

    user_id: int
    movie_ids: np.ndarray
    ratings: np.ndarray
    candidates: CandidateSet
    values: np.ndarray = field(init=False)

    def __post_init__(self):
        self.values = self.ratings.astype(float) - SAFE_RATING

    @property
    def f_values(self):
        return self.values

    @property
    def q_values(self):
        return self.values

    def query(self, index: int):
        v = float(self.values[index])
        return v, v


def user_blackbox(model: FactorizationModel, table: RatingsTable, user_id: int, seed=0, repeat=0):
    """Black box over the movies ``user_id`` rated that have learned features.

    The initial safe movie is drawn uniformly among those rated exactly 4, from
    a stream seeded by ``(seed, user_id, repeat)``.
    """
    if user_id in set(model.user_ids.tolist()):
        raise ValueError(f"user {user_id} was used for training")
    movie_ids, ratings = table.rated_by(user_id)
    feats, known = model.features(movie_ids)
    movie_ids, ratings = movie_ids[known], ratings[known]
    if len(ratings) < 2:
        raise SkipUser(f"user {user_id} has fewer than 2 rated movies with features")
    fours = np.flatnonzero(ratings == SAFE_RATING)
    if not fours.size:
        raise SkipUser(f"user {user_id} rated no movie exactly {SAFE_RATING}")
    rng = np.random.default_rng([int(seed), int(user_id), int(repeat)])
    s0 = int(rng.choice(fours))
    return UserBlackBox(int(user_id), movie_ids, ratings, CandidateSet(feats, (s0,)))


def make_synthetic_table(n_users=50, n_movies=150, rank=4, density=0.6, seed=2024):
    """Low-rank synthetic ratings in MovieLens layout (for offline tests and demos)."""
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(n_users, rank))
    Q = rng.normal(size=(n_movies, rank))
    bias = rng.normal(0.0, 0.4, size=n_movies)
    score = 3.4 + bias[None, :] + 0.9 * (P @ Q.T) / np.sqrt(rank) + rng.normal(0, 0.3, (n_users, n_movies))
    ratings = np.clip(np.rint(score), 1, 5).astype(int)
    mask = rng.random((n_users, n_movies)) < density
    rows = []
    for u in range(n_users):
        for m in np.flatnonzero(mask[u]):
            rows.append((u + 1, m + 1, int(ratings[u, m]), 880000000 + len(rows)))
    return rows


def write_table(rows, path):
    path = Path(path)
    path.write_text("".join(f"{u}\t{m}\t{r}\t{ts}\n" for u, m, r, ts in rows), encoding="utf-8")
    return path


def bundled_table_path() -> Path:
    """Path of the 50-user synthetic mini-table shipped with the package."""
    return Path(str(resources.files("safebocp") / "data" / "mini_ratings.tsv"))
