import numpy as np
import pytest

from aredit.errors import ContractViolation
from aredit.numerics import FeatureMap
from aredit.pyramid import (BitGrid, ScaleSchedule, accumulate, encode_pyramid,
                            quantize_bsq, quantize_grid)

from conftest import bilinear_oracle


def fm(arr):
    return FeatureMap.from_array(np.asarray(arr, dtype=np.float32))


class TestQuantizeBsq:
    def test_sign_pattern_d4(self):
        bits = quantize_bsq(np.array([3.0, -1.0, 2.0, -2.0]))
        grid = BitGrid(1, 1, 4, bits.reshape(1, 1, 4))
        assert np.array_equal(bits, [True, False, True, False])
        assert np.allclose(grid.materialize().data.reshape(-1), [0.5, -0.5, 0.5, -0.5])

    def test_idempotent_on_materialized(self):
        rng = np.random.default_rng(0)
        bits = rng.random((3, 3, 8)) < 0.5
        grid = BitGrid(3, 3, 8, bits)
        again = quantize_bsq(grid.materialize().data)
        assert np.array_equal(again, bits)

    def test_sign_zero_tiebreak(self):
        bits = quantize_bsq(np.array([0.0, -0.0, 1e-9, -1e-9]))
        assert np.array_equal(bits, [True, True, True, False])

    def test_rejects_nan(self):
        with pytest.raises(ContractViolation):
            quantize_bsq(np.array([1.0, np.nan]))

    def test_unit_norm_every_position(self):
        rng = np.random.default_rng(1)
        for d in (4, 8, 32):
            grid = quantize_grid(fm(rng.standard_normal((4, 4, d))))
            norms = np.linalg.norm(grid.materialize().data, axis=2)
            assert np.allclose(norms, 1.0, atol=1e-6)


class TestPackUnpack:
    @pytest.mark.parametrize("d", [1, 7, 8, 9, 32])
    def test_roundtrip(self, d):
        rng = np.random.default_rng(d)
        bits = rng.random((3, 5, d)) < 0.5
        grid = BitGrid(3, 5, d, bits)
        packed = grid.packed()
        assert len(packed) == 3 * 5 * ((d + 7) // 8)
        back = BitGrid.from_packed(packed, 3, 5, d)
        assert np.array_equal(back.bits, grid.bits)


class TestSchedule:
    def test_rejects_decreasing(self):
        with pytest.raises(ContractViolation):
            ScaleSchedule(((2, 2), (1, 1)), 4)

    def test_rejects_empty(self):
        with pytest.raises(ContractViolation):
            ScaleSchedule((), 4)


def oracle_pyramid(f: np.ndarray, sides, d):
    """Scalar-loop reference: residual quantize + accumulate per level."""
    full = sides[-1]
    recon = np.zeros((full, full, d), dtype=np.float32)
    grids = []
    for s in sides:
        tgt = bilinear_oracle(f, s, s)
        cur = bilinear_oracle(recon, s, s)
        bits = np.empty((s, s, d), dtype=bool)
        for i in range(s):
            for j in range(s):
                for c in range(d):
                    bits[i, j, c] = (tgt[i, j, c] - cur[i, j, c]) >= 0
        grids.append(bits)
        mat = np.where(bits, np.float32(1 / np.sqrt(d)), np.float32(-1 / np.sqrt(d)))
        recon = recon + bilinear_oracle(mat.astype(np.float32), full, full)
    return grids, recon


class TestEncodePyramid:
    def test_single_level_bsq_fixed_point(self):
        rng = np.random.default_rng(2)
        bits = rng.random((4, 4, 16)) < 0.5
        src = BitGrid(4, 4, 16, bits).materialize()
        sched = ScaleSchedule(((4, 4),), 16)
        residuals, inputs = encode_pyramid(src, sched)
        assert np.array_equal(residuals[0].bits, bits)
        assert inputs == []
        recon = accumulate(residuals, sched, 1)
        assert np.allclose(recon.data, src.data, atol=0)

    def test_constant_field_two_levels(self):
        d = 8
        v = np.linspace(-1, 1, d).astype(np.float32)
        f = fm(np.broadcast_to(v, (2, 2, d)).copy())
        sched = ScaleSchedule(((1, 1), (2, 2)), d)
        residuals, inputs = encode_pyramid(f, sched)
        r1_expect = quantize_bsq(v)
        assert np.array_equal(residuals[0].bits.reshape(-1), r1_expect)
        mat1 = np.where(r1_expect, 1 / np.sqrt(d), -1 / np.sqrt(d)).astype(np.float32)
        r2_expect = quantize_bsq(v - mat1)
        for i in range(2):
            for j in range(2):
                assert np.array_equal(residuals[1].bits[i, j], r2_expect)
        assert len(inputs) == 1 and inputs[0].shape == (2, 2, d)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(3)
        d = 8
        f = fm((rng.random((4, 4, d)) - 0.5) * 2)
        sched = ScaleSchedule(((1, 1), (2, 2), (4, 4)), d)
        residuals, _ = encode_pyramid(f, sched)
        oracle_bits, oracle_recon = oracle_pyramid(f.data, [1, 2, 4], d)
        for r, ob in zip(residuals, oracle_bits):
            assert np.array_equal(r.bits, ob)
        recon = accumulate(residuals, sched, 3)
        assert np.allclose(recon.data, oracle_recon, atol=1e-5)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ContractViolation):
            encode_pyramid(fm(np.zeros((2, 2, 4))), ScaleSchedule(((1, 1), (4, 4)), 4))

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        f = fm(rng.standard_normal((8, 8, 8)))
        sched = ScaleSchedule.from_sides((1, 2, 4, 8), 8)
        a, _ = encode_pyramid(f, sched)
        b, _ = encode_pyramid(f, sched)
        for ga, gb in zip(a, b):
            assert np.array_equal(ga.bits, gb.bits)


class TestAccumulate:
    def test_empty_sum_is_zero(self):
        sched = ScaleSchedule(((2, 2),), 4)
        out = accumulate([], sched, 0)
        assert np.array_equal(out.data, np.zeros((2, 2, 4), np.float32))

    def test_single_level_identity(self):
        rng = np.random.default_rng(5)
        bits = rng.random((4, 4, 8)) < 0.5
        grid = BitGrid(4, 4, 8, bits)
        sched = ScaleSchedule(((4, 4),), 8)
        out = accumulate([grid], sched, 1)
        assert np.array_equal(out.data, grid.materialize().data)

    def test_three_levels_matches_elementwise_oracle(self):
        rng = np.random.default_rng(6)
        d = 4
        sched = ScaleSchedule(((1, 1), (2, 2), (4, 4)), d)
        grids = [BitGrid(s, s, d, rng.random((s, s, d)) < 0.5) for s in (1, 2, 4)]
        out = accumulate(grids, sched, 3)
        expect = np.zeros((4, 4, d), np.float32)
        for g in grids:
            expect = expect + bilinear_oracle(g.materialize().data, 4, 4)
        assert np.allclose(out.data, expect, atol=1e-6)

    def test_upto_k_bounds(self):
        sched = ScaleSchedule(((1, 1),), 4)
        with pytest.raises(ContractViolation):
            accumulate([], sched, 2)


def test_residual_error_monotone_at_constant_shape():
    rng = np.random.default_rng(7)
    d = 8
    f = fm(rng.standard_normal((4, 4, d)))
    sched = ScaleSchedule(((4, 4),) * 6, d)
    residuals, _ = encode_pyramid(f, sched)
    prev = np.inf
    for k in range(1, 7):
        err = np.abs(f.data - accumulate(residuals, sched, k).data).max()
        assert err <= prev + 1e-6
        prev = err
