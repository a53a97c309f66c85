import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maxout_rf.core import (
    ProjectionBank,
    featurize,
    featurize_batch,
    hamming_distance,
    hash_code,
    hash_codes_batch,
    load_bank,
    projections,
    sample_bank,
    save_bank,
    unit_weights,
)
from maxout_rf.errors import FormatError, InvalidArgumentError
from maxout_rf.kernel import kappa_mc


@pytest.fixture
def toy_bank():
    # One unit, two projections: e1 and e2.
    return ProjectionBank(np.array([[[1.0, 0.0], [0.0, 1.0]]]))


@pytest.fixture(scope="module")
def bank():
    return sample_bank(64, 4, 10, seed=3)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


class TestSampleBank:
    def test_shape_and_determinism(self):
        a = sample_bank(1, 1, 3, seed=42)
        b = sample_bank(1, 1, 3, seed=42)
        assert a.weights.shape == (1, 1, 3)
        assert np.array_equal(a.weights, b.weights)
        assert a.fingerprint == b.fingerprint

    def test_distinct_seeds_differ(self):
        a = sample_bank(2, 2, 2, seed=1)
        b = sample_bank(2, 2, 2, seed=2)
        assert not np.array_equal(a.weights, b.weights)
        assert a.fingerprint != b.fingerprint

    def test_gaussian_moments(self):
        w = sample_bank(1000, 4, 100, seed=7).weights
        assert np.all(np.isfinite(w))
        assert -0.008 < w.mean() < 0.008
        assert 0.95 < w.var() < 1.05

    def test_units_regenerate_independently(self):
        b = sample_bank(20, 3, 5, seed=11)
        for ell in (0, 7, 19):
            assert np.array_equal(unit_weights(11, ell, 3, 5), b.weights[ell])

    def test_growing_m_keeps_prefix(self):
        # Counter-based draws: unit l does not depend on how many units follow it.
        small = sample_bank(5, 2, 4, seed=9)
        big = sample_bank(12, 2, 4, seed=9)
        assert np.array_equal(big.weights[:5], small.weights)

    def test_large_seed(self):
        b = sample_bank(2, 2, 2, seed=2**64 - 1)
        assert np.all(np.isfinite(b.weights))

    @pytest.mark.parametrize("dims", [(0, 1, 1), (1, 0, 1), (1, 1, 0), (2**20, 2**10, 2**10)])
    def test_invalid_dims(self, dims):
        with pytest.raises(InvalidArgumentError):
            sample_bank(*dims, seed=0)

    @pytest.mark.parametrize("seed", [-1, 2**64, 1.5])
    def test_invalid_seed(self, seed):
        with pytest.raises(InvalidArgumentError):
            sample_bank(1, 1, 1, seed=seed)

    def test_weights_are_read_only(self, bank):
        with pytest.raises(ValueError):
            bank.weights[0, 0, 0] = 1.0


class TestFeaturize:
    def test_toy_value(self, toy_bank):
        assert featurize(toy_bank, [0.6, 0.8]).tolist() == [0.8]

    def test_zero_input(self, toy_bank):
        assert featurize(toy_bank, [0.0, 0.0]).tolist() == [0.0]

    def test_q1_is_linear_projection(self):
        b = sample_bank(50, 1, 8, seed=5)
        x = np.random.default_rng(0).standard_normal(8)
        W = b.weights[:, 0, :]
        np.testing.assert_allclose(featurize(b, x), W @ x / np.sqrt(50), rtol=1e-13, atol=1e-15)

    def test_q1_additive(self):
        b = sample_bank(30, 1, 6, seed=8)
        rng = np.random.default_rng(1)
        x, z = rng.standard_normal((2, 6))
        np.testing.assert_allclose(featurize(b, x + z), featurize(b, x) + featurize(b, z),
                                   rtol=1e-12, atol=1e-14)

    def test_cauchy_schwarz_bound(self, bank):
        rng = np.random.default_rng(2)
        bound = np.linalg.norm(bank.weights, axis=2).max(axis=1)
        for _ in range(20):
            x = unit(rng.standard_normal(bank.d))
            raw = featurize(bank, x) * np.sqrt(bank.m)
            assert np.all(np.abs(raw) <= bound + 1e-12)

    @pytest.mark.parametrize("x", [np.ones(3), np.ones((2, 2)), [np.nan, 0.0], [np.inf, 1.0]])
    def test_rejects_bad_input(self, toy_bank, x):
        with pytest.raises(InvalidArgumentError):
            featurize(toy_bank, x)


class TestFeaturizeBatch:
    def test_batch_of_one(self, bank):
        x = np.random.default_rng(3).standard_normal(bank.d)
        assert np.array_equal(featurize_batch(bank, x[None, :])[0], featurize(bank, x))

    def test_matches_sequential_loop(self, bank):
        X = np.random.default_rng(4).standard_normal((100, bank.d))
        loop = np.stack([featurize(bank, x) for x in X])
        assert np.array_equal(featurize_batch(bank, X), loop)

    def test_chunking_and_threads_are_bitwise_stable(self, bank):
        X = np.random.default_rng(5).standard_normal((257, bank.d))
        ref = featurize_batch(bank, X)
        assert np.array_equal(featurize_batch(bank, X, chunk_rows=16), ref)
        assert np.array_equal(featurize_batch(bank, X, threads=4, chunk_rows=16), ref)
        # A trailing one-row chunk must not change the result.
        assert np.array_equal(featurize_batch(bank, X, chunk_rows=128), ref)

    def test_row_permutation(self, bank):
        rng = np.random.default_rng(6)
        X = rng.standard_normal((40, bank.d))
        perm = rng.permutation(40)
        assert np.array_equal(featurize_batch(bank, X[perm]), featurize_batch(bank, X)[perm])

    def test_rejects_wrong_columns(self, bank):
        with pytest.raises(InvalidArgumentError):
            featurize_batch(bank, np.zeros((3, bank.d + 1)))


class TestHashCode:
    def test_toy(self, toy_bank):
        assert hash_code(toy_bank, [0.6, 0.8]).indices.tolist() == [1]

    def test_tie_breaks_to_smallest_index(self, toy_bank):
        assert hash_code(toy_bank, [0.5, 0.5]).indices.tolist() == [0]

    def test_q1_all_zero(self):
        b = sample_bank(25, 1, 4, seed=1)
        assert np.all(hash_code(b, np.arange(4.0)).indices == 0)

    def test_scale_invariance(self, bank):
        x = np.random.default_rng(7).standard_normal(bank.d)
        assert hash_code(bank, x) == hash_code(bank, 3 * x)

    def test_deterministic(self, bank):
        x = np.random.default_rng(8).standard_normal(bank.d)
        assert hash_code(bank, x) == hash_code(bank, x)

    def test_consistent_with_features(self):
        # m = 64 makes sqrt(m) a power of two, so rescaling is exact.
        b = sample_bank(64, 5, 7, seed=12)
        rng = np.random.default_rng(9)
        for _ in range(10):
            x = rng.standard_normal(7)
            idx = hash_code(b, x).indices
            raw = projections(b, x[None, :])[0]
            picked = raw[np.arange(b.m), idx]
            assert np.array_equal(featurize(b, x) * np.sqrt(b.m), picked)

    def test_consistent_with_features_general_m(self, bank):
        b = sample_bank(37, 3, 5, seed=2)
        x = np.random.default_rng(10).standard_normal(5)
        idx = hash_code(b, x).indices
        picked = projections(b, x[None, :])[0][np.arange(b.m), idx]
        np.testing.assert_allclose(featurize(b, x) * np.sqrt(b.m), picked, rtol=4e-16, atol=0)

    def test_batch_matches_single(self, bank):
        X = np.random.default_rng(11).standard_normal((30, bank.d))
        codes = hash_codes_batch(bank, X)
        for row, x in zip(codes, X):
            assert np.array_equal(row, hash_code(bank, x).indices)


class TestHamming:
    def test_identity(self, bank):
        c = hash_code(bank, np.ones(bank.d))
        assert hamming_distance(c, c) == 0.0

    def test_total_mismatch(self, toy_bank):
        a = hash_code(toy_bank, [1.0, 0.0])
        b = hash_code(toy_bank, [0.0, 1.0])
        assert hamming_distance(a, b) == 1.0

    def test_length_mismatch(self, bank):
        a = hash_code(bank, np.ones(bank.d))
        b = type(a)(a.indices[:-1], a.bank_fingerprint)
        with pytest.raises(InvalidArgumentError):
            hamming_distance(a, b)

    def test_fingerprint_mismatch(self):
        a = hash_code(sample_bank(4, 2, 2, seed=1), [1.0, 0.0])
        b = hash_code(sample_bank(4, 2, 2, seed=2), [1.0, 0.0])
        with pytest.raises(InvalidArgumentError):
            hamming_distance(a, b)

    @pytest.mark.parametrize("q,theta", [(2, 0.7), (4, 1.2), (8, 0.4)])
    def test_matches_collision_probability(self, q, theta):
        m = 20000
        b = sample_bank(m, q, 3, seed=21)
        x = np.array([1.0, 0.0, 0.0])
        z = np.array([np.cos(theta), np.sin(theta), 0.0])
        kappa, _ = kappa_mc(q, np.cos(theta), 1_000_000, seed=5)
        dist = hamming_distance(hash_code(b, x), hash_code(b, z))
        assert abs(dist - (1 - kappa)) <= 3 * np.sqrt(0.25 / m)


class TestHomogeneityProperties:
    @settings(max_examples=40, deadline=None)
    @given(c=st.floats(min_value=1e-3, max_value=10.0),
           seed=st.integers(min_value=0, max_value=2**32))
    def test_positive_homogeneity(self, c, seed):
        b = sample_bank(16, 3, 4, seed=seed % 7)
        x = np.random.default_rng(seed).standard_normal(4)
        np.testing.assert_allclose(featurize(b, c * x), c * featurize(b, x), rtol=1e-12, atol=1e-12)
        assert hash_code(b, c * x) == hash_code(b, x)


class TestBankSerialization:
    def test_round_trip(self, tmp_path, bank):
        path = tmp_path / "bank.bin"
        save_bank(bank, path)
        loaded = load_bank(path)
        assert np.array_equal(loaded.weights, bank.weights)
        assert (loaded.seed, loaded.generator_id) == (bank.seed, bank.generator_id)
        assert loaded.fingerprint == bank.fingerprint

    def test_header_layout(self, tmp_path):
        b = sample_bank(2, 3, 4, seed=99)
        path = tmp_path / "bank.bin"
        save_bank(b, path)
        raw = path.read_bytes()
        assert raw[:8] == b"MAXOUTRF"
        assert int.from_bytes(raw[8:10], "little") == 1
        assert [int.from_bytes(raw[10 + 8 * i:18 + 8 * i], "little") for i in range(4)] == [2, 3, 4, 99]
        glen = int.from_bytes(raw[42:46], "little")
        assert raw[46:46 + glen].decode() == b.generator_id
        w = np.frombuffer(raw[46 + glen:], dtype="<f8")
        assert np.array_equal(w, b.weights.ravel())

    def test_bad_magic(self, tmp_path, bank):
        path = tmp_path / "bank.bin"
        save_bank(bank, path)
        raw = bytearray(path.read_bytes())
        raw[:8] = b"NOTABANK"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            load_bank(path)

    def test_bad_version(self, tmp_path, bank):
        path = tmp_path / "bank.bin"
        save_bank(bank, path)
        raw = bytearray(path.read_bytes())
        raw[8] = 7
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="version"):
            load_bank(path)

    def test_truncated(self, tmp_path, bank):
        path = tmp_path / "bank.bin"
        save_bank(bank, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError) as exc:
            load_bank(path)
        assert exc.value.offset is not None
