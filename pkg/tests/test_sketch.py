"""
Tests for composable sensitivity sketches.
"""

import pytest
import sys
from pathlib import Path

import numpy as np

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from protocols.randomness import KeyHash
from sketches.dataset import Dataset
from sketches.sketch import (
    Sketch,
    SketchParams,
    create_sketch,
    decode_key,
    decode_sketch,
    encode_key,
    encode_sketch,
    merge_sketches,
    solve_embedding,
    union_for_solve,
)
from sketches.solvers import embedding_distortion
from utils.errors import ConformingViolationError, MergeBudgetError, MergeFailure, SketchMismatchError


@pytest.fixture
def params():
    """Parameters that keep every row of small well-spread datasets."""
    return SketchParams(eps=0.5, delta=0.1)


@pytest.fixture
def identity():
    """Four orthogonal rows: every sensitivity is one."""
    return Dataset.from_matrix(np.eye(4))


def _gaussian(rows=200, d=2, seed=0, prefix="g"):
    return Dataset.from_matrix(np.random.default_rng(seed).standard_normal((rows, d)), prefix=prefix)


class TestSketchParams:
    """Tests for parameter validation and probabilities."""

    def test_rejects_bad_values(self):
        """Test eps, delta and p ranges."""
        with pytest.raises(ValueError, match=r"eps out of range \(0, 1\)"):
            SketchParams(eps=0.0, delta=0.1)
        with pytest.raises(ValueError):
            SketchParams(eps=0.5, delta=1.0)
        with pytest.raises(ValueError):
            SketchParams(eps=0.5, delta=0.1, p=0.5)

    def test_oversampling(self):
        """Test the d factor applies only away from p = 2."""
        two = SketchParams(eps=0.5, delta=0.1)
        three = SketchParams(eps=0.5, delta=0.1, p=3)
        assert two.oversampling(4) == pytest.approx(np.log(8) + np.log(10))
        assert three.oversampling(4) == pytest.approx(4 * np.log(8) + np.log(10))


class TestKeys:
    """Tests for key encoding."""

    @pytest.mark.parametrize("key", ["abc", "", 5, -3, 2 ** 70, b"\x00raw"])
    def test_decode_inverts_encode(self, key):
        """Test every supported key type."""
        assert decode_key(encode_key(key)) == key

    def test_type_tags_distinguish(self):
        """Test 1 and "1" encode differently."""
        assert encode_key(1) != encode_key("1")


class TestCreateSketch:
    """Tests for create_sketch."""

    def test_identity_keeps_everything(self, identity, params):
        """Test rows of sensitivity one are kept with probability one."""
        sk = create_sketch(identity, 3, params)
        assert sk.t == 3 and sk.gamma == 0.0
        for sample in sk.samples:
            assert list(sample.keys) == ["r0", "r1", "r2", "r3"]
            assert np.all(sample.probs == 1.0)
        assert np.array_equal(solve_embedding(sk), np.eye(4))

    def test_size_and_expected_size(self, identity, params):
        """Test row and word counts."""
        sk = create_sketch(identity, 2, params)
        assert sk.size() == (8, 8 + 2 * (1 + 4 * 6))
        assert sk.expected_size(identity) == [4.0, 4.0]

    def test_kept_rows_pass_their_hash(self, params):
        """Test every stored key satisfies h_i(key) <= p_key."""
        sk = create_sketch(_gaussian(), 2, params)
        for sample in sk.samples:
            hashes = KeyHash(params.salt, sample.hash_index).many(list(sample.keys))
            assert np.all(hashes <= sample.probs)
            assert 0 < len(sample) < 200

    def test_deterministic(self, params):
        """Test equal inputs give byte-identical sketches."""
        data = _gaussian()
        assert create_sketch(data, 2, params).to_bytes() == create_sketch(data, 2, params).to_bytes()

    def test_salt_changes_sample(self):
        """Test the salt reseeds the key hashes."""
        data = _gaussian()
        a = create_sketch(data, 1, SketchParams(eps=0.5, delta=0.1, salt=1))
        b = create_sketch(data, 1, SketchParams(eps=0.5, delta=0.1, salt=2))
        assert a.samples[0].keys != b.samples[0].keys

    def test_shared_hash_nests_samples(self, params):
        """Test a key kept for a superset dataset is also kept for the subset."""
        part = _gaussian(rows=100, seed=1, prefix="a")
        whole = part.union(_gaussian(rows=100, seed=2, prefix="b"))
        small = create_sketch(part, 1, params).samples[0]
        large = create_sketch(whole, 1, params).samples[0]
        shared = [k for k in large.keys if k in part]
        assert set(shared) <= set(small.keys)

    def test_rejects_zero_budget(self, identity, params):
        """Test t must be at least one."""
        with pytest.raises(MergeBudgetError):
            create_sketch(identity, 0, params)

    def test_zero_rows_give_empty_embedding(self, params):
        """Test an all-zero dataset sketches to nothing."""
        sk = create_sketch(Dataset.from_matrix(np.zeros((5, 3))), 1, params)
        assert solve_embedding(sk).shape == (0, 3)


class TestMergeSketches:
    """Tests for merge_sketches and union_for_solve."""

    def test_merge_with_self(self, identity, params):
        """Test merging a sketch with itself spends one hash level."""
        sk = create_sketch(identity, 3, params)
        merged = merge_sketches([sk, sk])
        assert merged.t == 2
        assert merged.gamma == pytest.approx(params.delta)
        assert list(merged.samples[0].keys) == ["r0", "r1", "r2", "r3"]

    def test_overlapping_union(self, params):
        """Test shared rows are counted once after a merge."""
        eye = np.eye(4)
        left = Dataset.from_rows(["r0", "r1"], eye[:2])
        right = Dataset.from_rows(["r1", "r2", "r3"], eye[1:])
        merged = merge_sketches([create_sketch(left, 2, params), create_sketch(right, 2, params)])
        assert merged.t == 1
        assert np.array_equal(solve_embedding(merged), eye)

    def _circle_pieces(self, eps):
        """Two overlapping pieces of unit-circle rows, sketched so creation keeps every row."""
        angles = np.random.default_rng(11).uniform(0, 2 * np.pi, 450)
        rows = np.column_stack([np.cos(angles), np.sin(angles)])
        keys = [f"u{i}" for i in range(450)]
        left = Dataset.from_rows(keys[:300], rows[:300])
        right = Dataset.from_rows(keys[150:], rows[150:])
        floor = min(left.sensitivities().min(), right.sensitivities().min())
        base = SketchParams(eps=eps, delta=0.1)
        const = 1.05 / float(base.probability((1 + eps) ** 2 * floor, 2))
        params = SketchParams(eps=eps, delta=0.1, sketch_const=const)
        return left, right, params

    def test_merge_sandwich(self):
        """Test (1+eps)^t tau <= tau_tilde <= (1+eps)^(t+1) tau against the union's own sensitivities."""
        eps = 0.5
        left, right, params = self._circle_pieces(eps)
        a, b = create_sketch(left, 2, params), create_sketch(right, 2, params)
        assert len(a.sample(2)) == len(left) and len(b.sample(2)) == len(right)

        merged = merge_sketches([a, b])
        union = left.union(right)
        tau = dict(zip(union.keys, union.sensitivities()))
        scale = float(params.probability(1.0, 2))
        sample = merged.samples[0]
        unclamped = [(key, prob) for key, prob in zip(sample.keys, sample.probs) if prob < 1]
        assert unclamped
        for key, prob in unclamped:
            tau_tilde = prob / scale
            assert (1 + eps) ** merged.t * tau[key] * (1 - 1e-9) <= tau_tilde
            assert tau_tilde <= (1 + eps) ** (merged.t + 1) * tau[key] * (1 + 1e-9)

    def test_merge_drops_follow_hash(self):
        """Test a merged-away row hashes above its lower sandwich probability and kept rows below theirs."""
        eps = 0.5
        left, right, params = self._circle_pieces(eps)
        merged = merge_sketches([create_sketch(left, 2, params), create_sketch(right, 2, params)])
        union = left.union(right)
        tau = union.sensitivities()
        hashes = KeyHash(params.salt, 1).many(union.keys)
        kept = set(merged.samples[0].keys)
        assert 0 < len(kept) < len(union)

        lower = np.minimum(params.probability((1 + eps) ** merged.t * tau, 2), 1.0)
        dropped = np.array([key not in kept for key in union.keys])
        assert np.all(hashes[dropped] > lower[dropped])
        sample = merged.samples[0]
        assert np.all(KeyHash(params.salt, 1).many(list(sample.keys)) <= sample.probs)

    def test_gamma_accumulates(self, identity, params):
        """Test gamma grows by delta plus the inputs' gammas."""
        sk = create_sketch(identity, 3, params)
        once = merge_sketches([sk, sk])
        twice = merge_sketches([once, once])
        assert twice.gamma == pytest.approx(3 * params.delta)
        assert twice.t == 1

    def test_budget_exhausted(self, identity, params):
        """Test a t = 1 sketch cannot be merged."""
        sk = create_sketch(identity, 1, params)
        with pytest.raises(MergeBudgetError):
            merge_sketches([sk, sk])

    def test_mismatch(self, identity):
        """Test sketches with different salts or widths."""
        a = create_sketch(identity, 2, SketchParams(eps=0.5, delta=0.1, salt=1))
        b = create_sketch(identity, 2, SketchParams(eps=0.5, delta=0.1, salt=2))
        with pytest.raises(SketchMismatchError):
            merge_sketches([a, b])
        c = create_sketch(Dataset.from_matrix(np.eye(3)), 2, SketchParams(eps=0.5, delta=0.1, salt=1))
        with pytest.raises(SketchMismatchError):
            merge_sketches([a, c])

    def test_conflicting_rows(self, params):
        """Test a key carrying two different rows."""
        a = create_sketch(Dataset.from_rows(["k"], [[1.0, 0.0]]), 2, params)
        b = create_sketch(Dataset.from_rows(["k"], [[0.0, 1.0]]), 2, params)
        with pytest.raises(ConformingViolationError):
            merge_sketches([a, b])

    def test_union_for_solve(self, params):
        """Test the solve-only union keeps all first-sample keys."""
        eye = np.eye(3)
        a = create_sketch(Dataset.from_rows(["r0", "r1"], eye[:2]), 1, params)
        b = create_sketch(Dataset.from_rows(["r1", "r2"], eye[1:]), 1, params)
        union = union_for_solve([a, b])
        assert union.t == 1
        assert list(union.samples[0].keys) == ["r0", "r1", "r2"]
        assert union.gamma == pytest.approx(params.delta)
        with pytest.raises(ValueError):
            union_for_solve([])


class TestSerialization:
    """Tests for the binary sketch format."""

    def test_round_trip(self, params):
        """Test decoding reproduces keys, rows and probabilities."""
        sk = create_sketch(_gaussian(), 2, params)
        decoded = Sketch.from_bytes(sk.to_bytes())
        assert decoded.t == sk.t and decoded.d == sk.d and decoded.params == sk.params
        for a, b in zip(sk.samples, decoded.samples):
            assert a.keys == b.keys
            assert np.array_equal(a.vals, b.vals)
            assert np.array_equal(a.probs, b.probs)
        assert encode_sketch(decoded) == sk.to_bytes()

    def test_int_keys(self, params):
        """Test integer keys survive the wire format."""
        sk = create_sketch(Dataset.from_rows([3, 1, 2], np.eye(3)), 1, params)
        assert decode_sketch(encode_sketch(sk)).samples[0].keys == (1, 2, 3)

    def test_bad_input(self, identity, params):
        """Test bad magic, truncation and trailing bytes."""
        data = create_sketch(identity, 1, params).to_bytes()
        with pytest.raises(ValueError):
            decode_sketch(b"XXXX" + data[4:])
        with pytest.raises(ValueError):
            decode_sketch(data[:10])
        with pytest.raises(ValueError):
            decode_sketch(data[:-3])
        with pytest.raises(ValueError):
            decode_sketch(data + b"\x00")


class TestSketchAcceptance:
    """Statistical runs of sketch quality over many salts."""

    @pytest.mark.slow
    def test_l2_embedding_over_salts(self):
        """Test a 2000 x 10 l_2 sketch within 1 +- eps in at least 95 of 100 salts."""
        data = Dataset.from_matrix(np.random.default_rng(20).standard_normal((2000, 10)))
        hits = 0
        for salt in range(100):
            sk = create_sketch(data, 1, SketchParams(eps=0.25, delta=0.01, salt=salt))
            expected = sk.expected_size(data)[0]
            assert 0.5 * expected <= len(sk.samples[0]) <= 2 * expected
            hits += embedding_distortion(solve_embedding(sk), data.values) <= 0.25
        assert hits >= 95

    @pytest.mark.slow
    def test_merge_dedup_over_salts(self):
        """Test merging two 1000 x 8 datasets sharing half their keys embeds the deduplicated union."""
        rows = np.random.default_rng(21).standard_normal((1500, 8))
        keys = [f"k{i}" for i in range(1500)]
        left = Dataset.from_rows(keys[:1000], rows[:1000])
        right = Dataset.from_rows(keys[500:], rows[500:])
        union = left.union(right)
        assert len(union) == 1500
        hits = 0
        for salt in range(100):
            params = SketchParams(eps=0.25, delta=0.01, salt=salt)
            try:
                merged = merge_sketches([create_sketch(left, 2, params), create_sketch(right, 2, params)])
            except MergeFailure:
                continue
            assert len(set(merged.samples[0].keys)) == len(merged.samples[0])
            hits += embedding_distortion(solve_embedding(merged), union.values) <= 0.25
        assert hits >= 95


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
