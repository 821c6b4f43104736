import numpy as np
import pytest

from aredit.errors import ContractViolation
from aredit.numerics import (CounterRng, FeatureMap, Image, bernoulli_sample,
                             downsample_bilinear, upsample_bilinear)

from conftest import bilinear_oracle


def fm(arr):
    return FeatureMap.from_array(np.asarray(arr, dtype=np.float32))


class TestFeatureMap:
    def test_rejects_nan(self):
        with pytest.raises(ContractViolation):
            fm(np.full((2, 2, 1), np.nan))

    def test_rejects_bad_shape(self):
        with pytest.raises(ContractViolation):
            FeatureMap(2, 2, 3, np.zeros((2, 2, 1), np.float32))

    def test_immutable(self):
        m = fm(np.zeros((2, 2, 1)))
        with pytest.raises(ValueError):
            m.data[0, 0, 0] = 1.0


class TestImage:
    def test_shape_checked(self):
        with pytest.raises(ContractViolation):
            Image(4, 4, np.zeros((4, 4), np.uint8))


class TestUpsample:
    def test_constant_1x1_to_2x2(self):
        out = upsample_bilinear(fm([[[3.5]]]), 2, 2)
        assert np.array_equal(out.data, np.full((2, 2, 1), 3.5, np.float32))

    def test_identity_at_same_shape(self):
        src = fm(np.random.default_rng(0).random((3, 4, 2)))
        out = upsample_bilinear(src, 3, 4)
        assert np.array_equal(out.data, src.data)

    def test_2x2_to_4x4_matches_oracle(self):
        src = fm(np.array([[1, 3], [5, 7]], np.float32).reshape(2, 2, 1))
        out = upsample_bilinear(src, 4, 4)
        assert np.allclose(out.data, bilinear_oracle(src.data, 4, 4), atol=0)

    def test_shrink_rejected(self):
        with pytest.raises(ContractViolation):
            upsample_bilinear(fm(np.zeros((4, 4, 1))), 2, 4)


class TestDownsample:
    def test_constant_preserved(self):
        out = downsample_bilinear(fm(np.full((4, 4, 2), 2.25)), 2, 2)
        assert np.array_equal(out.data, np.full((2, 2, 2), 2.25, np.float32))

    def test_2x2_to_1x1_average(self):
        src = fm(np.array([[1, 3], [5, 7]], np.float32).reshape(2, 2, 1))
        out = downsample_bilinear(src, 1, 1)
        assert out.data[0, 0, 0] == np.float32(4.0)

    def test_8x8_to_3x3_matches_oracle(self):
        src = fm(np.random.default_rng(5).random((8, 8, 2)))
        out = downsample_bilinear(src, 3, 3)
        assert np.array_equal(out.data, bilinear_oracle(src.data, 3, 3))

    def test_grow_rejected(self):
        with pytest.raises(ContractViolation):
            downsample_bilinear(fm(np.zeros((2, 2, 1))), 4, 4)


class TestResamplingProperties:
    def test_up_then_down_constant_roundtrip(self):
        src = fm(np.full((3, 3, 2), -1.75))
        up = upsample_bilinear(src, 9, 7)
        back = downsample_bilinear(up, 3, 3)
        assert np.array_equal(back.data, src.data)

    def test_linearity(self):
        rng = np.random.default_rng(9)
        a = fm(rng.random((5, 6, 3)))
        b = fm(rng.random((5, 6, 3)))
        alpha, beta = 0.7, -1.3
        combined = fm(alpha * a.data + beta * b.data)
        lhs = upsample_bilinear(combined, 9, 11).data
        rhs = (alpha * upsample_bilinear(a, 9, 11).data
               + beta * upsample_bilinear(b, 9, 11).data)
        assert np.allclose(lhs, rhs, rtol=1e-6, atol=1e-6)


class TestBernoulli:
    def test_degenerate(self):
        rng = CounterRng(0)
        assert bernoulli_sample(1.0, 0.5, rng) == 1
        assert bernoulli_sample(0.0, 2.0, rng) == 0

    def test_monte_carlo_frequency(self):
        rng = CounterRng(1234)
        n = 100_000
        mean = sum(bernoulli_sample(0.7, 1.0, rng) for _ in range(n)) / n
        assert abs(mean - 0.7) <= 0.01

    def test_temperature_sharpens(self):
        rng = CounterRng(7)
        n = 20_000
        cold = sum(bernoulli_sample(0.7, 0.25, CounterRng(7, 0, i)) for i in range(n)) / n
        assert cold > 0.9  # 0.7^4 / (0.7^4 + 0.3^4) ~ 0.967
        del rng

    def test_reproducible_sequence(self):
        seq1 = [bernoulli_sample(0.4, 1.0, CounterRng(5, 2, i)) for i in range(100)]
        seq2 = [bernoulli_sample(0.4, 1.0, CounterRng(5, 2, i)) for i in range(100)]
        assert seq1 == seq2

    def test_contract_errors(self):
        with pytest.raises(ContractViolation):
            bernoulli_sample(1.5, 1.0, CounterRng(0))
        with pytest.raises(ContractViolation):
            bernoulli_sample(-0.1, 1.0, CounterRng(0))
        with pytest.raises(ContractViolation):
            bernoulli_sample(0.5, 0.0, CounterRng(0))
