from collections import Counter

import numpy as np
import pytest

from safebocp.benchmarks import movielens as ml
from safebocp.gp import GpModel, GpPrior, Linear


def write(tmp_path, text, name="u.data"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


@pytest.fixture(scope="module")
def mini():
    return ml.ingest(ml.bundled_table_path())


@pytest.fixture(scope="module")
def mini_model(mini):
    train, _ = ml.split_users(mini, n_train=40, n_test=10, seed=0)
    return ml.factorize(mini, users=train)


@pytest.fixture(scope="module")
def rank_one(tmp_path_factory):
    rng = np.random.default_rng(0)
    a, b = rng.integers(1, 3, 60), rng.integers(1, 3, 60)
    rows = [(u + 1, m + 1, int(a[u] * b[m]), 0) for u in range(60) for m in range(60)]
    path = ml.write_table(rows, tmp_path_factory.mktemp("r1") / "u.data")
    return rows, path


class TestIngest:
    def test_well_formed_line(self, tmp_path):
        t = ml.ingest(write(tmp_path, "1\t10\t4\t881250949\n"))
        assert (t.users.tolist(), t.movies.tolist(), t.ratings.tolist()) == ([1], [10], [4])

    def test_out_of_range_rating_rejected(self, tmp_path, caplog):
        t = ml.ingest(write(tmp_path, "1\t10\t4\t0\n1\t11\t6\t0\n2\t3\t0\t0\n"))
        assert len(t) == 1
        assert [r[0] for r in t.rejected] == [2, 3]
        assert "outside 1..5" in t.rejected[0][1]
        assert "rejected" in caplog.text

    def test_malformed_fields(self, tmp_path):
        t = ml.ingest(write(tmp_path, "1\t10\t4\t0\nx\t1\t2\t0\n1\t2\t3\n"))
        assert len(t) == 1
        assert t.rejected == ((2, "non-integer field"), (3, "expected 4 fields, got 3"))

    def test_whitespace_separated_accepted(self, tmp_path):
        assert len(ml.ingest(write(tmp_path, "1 10 4 0\n"))) == 1

    def test_empty_file(self, tmp_path):
        with pytest.raises(ml.DataError, match="no valid"):
            ml.ingest(write(tmp_path, ""))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            ml.ingest(tmp_path / "nope.data")

    def test_duplicates_last_wins(self, tmp_path):
        t = ml.ingest(write(tmp_path, "1\t10\t2\t0\n1\t10\t5\t1\n"))
        assert t.ratings.tolist() == [5]
        assert t.duplicates == 1

    def test_row_order_is_canonical(self, tmp_path):
        rows = ml.make_synthetic_table(n_users=25, n_movies=30, seed=1)
        shuffled = [rows[i] for i in np.random.default_rng(0).permutation(len(rows))]
        a = ml.ingest(ml.write_table(rows, tmp_path / "a"))
        b = ml.ingest(ml.write_table(shuffled, tmp_path / "b"))
        for field in ("users", "movies", "ratings"):
            np.testing.assert_array_equal(getattr(a, field), getattr(b, field))
        ma, mb = ml.factorize(a, rank=5, sweeps=5), ml.factorize(b, rank=5, sweeps=5)
        np.testing.assert_array_equal(ma.movie_features, mb.movie_features)


class TestFactorize:
    def test_exact_rank_one_reconstruction(self, rank_one):
        _, path = rank_one
        assert ml.factorize(ml.ingest(path)).rmse < 1e-3

    def test_rmse_matches_recomputation(self, rank_one):
        rows, path = rank_one
        model = ml.factorize(ml.ingest(path), rank=1, sweeps=20)
        pred = {(u, m): model.user_features[u - 1] @ model.movie_features[m - 1] for u, m, _, _ in rows}
        resid = [r - pred[(u, m)] for u, m, r, _ in rows]
        assert model.rmse == pytest.approx(float(np.sqrt(np.mean(np.square(resid)))), rel=1e-10)

    def test_deterministic(self, mini):
        a = ml.factorize(mini, rank=8, sweeps=5, seed=3)
        b = ml.factorize(mini, rank=8, sweeps=5, seed=3)
        np.testing.assert_array_equal(a.movie_features, b.movie_features)

    def test_shape_and_sanity(self, mini_model):
        assert mini_model.movie_features.shape[1] == 20
        assert np.isfinite(mini_model.movie_features).all()
        assert np.isfinite(mini_model.user_features).all()
        assert mini_model.rmse <= 1.0

    def test_rank_too_large(self, tmp_path):
        t = ml.ingest(write(tmp_path, "1\t1\t3\t0\n2\t2\t4\t0\n"))
        with pytest.raises(ValueError, match="rank"):
            ml.factorize(t, rank=5)

    def test_features_lookup(self, mini_model):
        ids = np.array([mini_model.movie_ids[3], 10_000])
        feats, known = mini_model.features(ids)
        assert known.tolist() == [True, False]
        np.testing.assert_array_equal(feats[0], mini_model.movie_features[3])


class TestSplit:
    def test_test_users_by_count(self, mini):
        train, test = ml.split_users(mini, n_train=40, n_test=10, seed=0)
        counts = Counter(mini.users.tolist())
        rest = [u for u in counts if u not in set(train.tolist())]
        expected = sorted(rest, key=lambda u: (-counts[u], u))[:10]
        assert test.tolist() == expected
        assert len(set(train.tolist())) == 40
        assert not set(train.tolist()) & set(test.tolist())

    def test_seeded(self, mini):
        a, _ = ml.split_users(mini, n_train=40, n_test=5, seed=1)
        b, _ = ml.split_users(mini, n_train=40, n_test=5, seed=1)
        np.testing.assert_array_equal(a, b)

    def test_too_many_users(self, mini):
        with pytest.raises(ValueError, match="need"):
            ml.split_users(mini, n_train=100, n_test=10)


class TestUserBlackBox:
    def test_candidates_are_rated_movies(self, mini, mini_model):
        _, test = ml.split_users(mini, n_train=40, n_test=10, seed=0)
        box = ml.user_blackbox(mini_model, mini, int(test[0]))
        movies, ratings = mini.rated_by(int(test[0]))
        assert set(box.movie_ids.tolist()) <= set(movies.tolist())
        assert len(box.candidates) == len(box.movie_ids)
        (s0,) = box.candidates.initial_safe
        assert box.ratings[s0] == 4

    def test_queries_are_integer_offsets(self, mini, mini_model):
        _, test = ml.split_users(mini, n_train=40, n_test=10, seed=0)
        box = ml.user_blackbox(mini_model, mini, int(test[1]))
        zs = {box.query(i)[1] for i in range(len(box.candidates))}
        assert zs <= {-3.0, -2.0, -1.0, 0.0, 1.0}
        assert all(box.query(i)[0] == box.query(i)[1] for i in range(len(box.candidates)))

    def test_single_four_is_s0(self, tmp_path):
        rows = ml.make_synthetic_table(n_users=30, n_movies=40, seed=5)
        rows = [r for r in rows if r[0] != 30]
        rows += [(30, 1, 4, 0), (30, 2, 2, 0), (30, 3, 5, 0)]
        t = ml.ingest(ml.write_table(rows, tmp_path / "u.data"))
        model = ml.factorize(t, rank=5, sweeps=5, users=np.arange(1, 30))
        for rep in range(5):
            box = ml.user_blackbox(model, t, 30, seed=rep, repeat=rep)
            assert box.movie_ids[box.candidates.initial_safe[0]] == 1

    def test_no_four_skips(self, tmp_path):
        rows = ml.make_synthetic_table(n_users=30, n_movies=40, seed=5)
        rows = [r for r in rows if r[0] != 30] + [(30, 1, 3, 0), (30, 2, 5, 0)]
        t = ml.ingest(ml.write_table(rows, tmp_path / "u.data"))
        model = ml.factorize(t, rank=5, sweeps=5, users=np.arange(1, 30))
        with pytest.raises(ml.SkipUser, match="exactly 4"):
            ml.user_blackbox(model, t, 30)

    def test_training_user_rejected(self, mini, mini_model):
        with pytest.raises(ValueError, match="training"):
            ml.user_blackbox(mini_model, mini, int(mini_model.user_ids[0]))

    def test_s0_seeded(self, mini, mini_model):
        _, test = ml.split_users(mini, n_train=40, n_test=10, seed=0)
        u = int(test[0])
        a = ml.user_blackbox(mini_model, mini, u, seed=1, repeat=2)
        b = ml.user_blackbox(mini_model, mini, u, seed=1, repeat=2)
        assert a.candidates.initial_safe == b.candidates.initial_safe

    def test_linear_posterior_on_features(self, mini, mini_model):
        _, test = ml.split_users(mini, n_train=40, n_test=10, seed=0)
        box = ml.user_blackbox(mini_model, mini, int(test[0]))
        X = box.candidates.points[:5]
        y = box.values[:5]
        m = GpModel(GpPrior(Linear(), noise_power=1e-2), X, y)
        Xq = box.candidates.points[5:10]
        K = X @ X.T + 1e-2 * np.eye(5)
        mean_ref = Xq @ X.T @ np.linalg.solve(K, y)
        np.testing.assert_allclose(m.predict(Xq)[0], mean_ref, rtol=1e-8, atol=1e-10)


class TestBundledTable:
    def test_regenerates(self, tmp_path, mini):
        path = ml.write_table(ml.make_synthetic_table(), tmp_path / "regen.tsv")
        assert path.read_bytes() == ml.bundled_table_path().read_bytes()
        assert len(mini.user_ids) == 50
        assert not mini.rejected
