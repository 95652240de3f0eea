"""Key/op generators: determinism, distribution shape, analytic checks."""

from collections import Counter

import pytest

from logstore.workload import (
    KeyGenerator,
    WorkloadSpec,
    ZipfianGenerator,
    analytic_zipf_top1,
    chi_square_uniform,
    decode_key,
    encode_key,
    op_stream,
    zeta,
)


class TestKeyEncoding:
    def test_big_endian_preserves_numeric_order(self):
        keys = [encode_key(i) for i in (0, 1, 255, 256, 2**32, 2**63)]
        assert keys == sorted(keys)
        assert all(len(k) == 8 for k in keys)

    def test_roundtrip(self):
        for i in (0, 42, 2**40 + 17):
            assert decode_key(encode_key(i)) == i


class TestDeterminism:
    def test_same_seed_same_stream(self):
        spec = WorkloadSpec(op_count=2000, seed=99)
        assert list(op_stream(spec)) == list(op_stream(spec))

    def test_different_seed_different_stream(self):
        a = list(op_stream(WorkloadSpec(op_count=500, seed=1)))
        b = list(op_stream(WorkloadSpec(op_count=500, seed=2)))
        assert a != b

    def test_op_mix_matches_percentages(self):
        spec = WorkloadSpec(op_count=30_000, put_pct=50, get_pct=40,
                            delete_pct=10, seed=4)
        mix = Counter(op for op, _, _ in op_stream(spec))
        assert mix["put"] / spec.op_count == pytest.approx(0.50, abs=0.02)
        assert mix["get"] / spec.op_count == pytest.approx(0.40, abs=0.02)
        assert mix["delete"] / spec.op_count == pytest.approx(0.10, abs=0.02)

    def test_bad_spec_rejected(self):
        with pytest.raises(ValueError):
            WorkloadSpec(put_pct=60, get_pct=50, delete_pct=10)
        with pytest.raises(ValueError):
            WorkloadSpec(key_min=5, key_max=5)


class TestUniform:
    def test_uniform_keys_pass_chi_square(self):
        spec = WorkloadSpec(distribution="uniform", key_max=100, seed=7)
        gen = KeyGenerator(spec)
        counts = [0] * 100
        for _ in range(100_000):
            counts[gen.next_key_int()] += 1
        # 99 dof, p=0.001 critical value ~148.2
        assert chi_square_uniform(counts) < 148.2


class TestZipfian:
    def test_top_rank_frequency_matches_analytic_mass(self):
        n, theta = 1000, 0.99
        gen = ZipfianGenerator(n, theta)
        draws = 200_000
        counts = Counter(gen.next() for _ in range(draws))
        top_rank, top_count = counts.most_common(1)[0]
        assert top_rank == 0
        expected = analytic_zipf_top1(n, theta)
        assert top_count / draws == pytest.approx(expected, rel=0.05)

    def test_rank_probability_sums_to_one(self):
        gen = ZipfianGenerator(50, 0.99)
        assert sum(gen.rank_probability(r) for r in range(50)) == pytest.approx(1.0)

    def test_rank_probabilities_decrease(self):
        gen = ZipfianGenerator(100, 0.99)
        probs = [gen.rank_probability(r) for r in range(100)]
        assert probs == sorted(probs, reverse=True)

    def test_empirical_matches_rank_probability(self):
        gen = ZipfianGenerator(20, 0.8)
        draws = 100_000
        counts = Counter(gen.next() for _ in range(draws))
        for rank in (0, 1, 5):
            assert counts[rank] / draws == pytest.approx(
                gen.rank_probability(rank), rel=0.08)

    def test_zeta_normalizer(self):
        assert zeta(1, 0.99) == 1.0
        assert zeta(3, 1.0) == pytest.approx(1 + 0.5 + 1 / 3)

    def test_zipf_skew_shows_in_keygen(self):
        spec = WorkloadSpec(distribution="zipfian", key_max=10_000,
                            theta=0.99, seed=5)
        gen = KeyGenerator(spec)
        counts = Counter(gen.next_key_int() for _ in range(50_000))
        top100 = sum(c for _, c in counts.most_common(100))
        assert top100 / 50_000 > 0.3  # heavy head, unlike uniform (~1%)
