import numpy as np
import pytest

from aredit.codec import CodecParams, decode_feature, encode_image, make_codec
from aredit.errors import ContractViolation
from aredit.metrics import psnr
from aredit.numerics import FeatureMap, Image
from aredit.pyramid import DEFAULT_SCHEDULE, accumulate, encode_pyramid


def test_projection_semi_orthogonal(codec):
    codec.check_orthonormal(1e-5)
    q = codec.projection.astype(np.float64)
    assert np.allclose(q.T @ q, np.eye(codec.feature_dim), atol=1e-5)


def test_seed_determinism():
    a = make_codec(42)
    b = make_codec(42)
    c = make_codec(43)
    assert np.array_equal(a.projection, b.projection)
    assert not np.array_equal(a.projection, c.projection)


def test_black_image_encodes_to_zero(codec):
    img = Image.from_array(np.zeros((8, 8, 3), np.uint8))
    feat = encode_image(img, codec)
    assert np.array_equal(feat.data, np.zeros_like(feat.data))


def test_zero_feature_decodes_black(codec):
    img = decode_feature(FeatureMap.zeros(2, 2, codec.feature_dim), codec)
    assert np.array_equal(img.pixels, np.zeros((8, 8, 3), np.uint8))


def test_indivisible_dimensions_rejected(codec):
    img = Image.from_array(np.zeros((10, 8, 3), np.uint8))
    with pytest.raises(ContractViolation):
        encode_image(img, codec)


def test_channel_mismatch_rejected(codec):
    with pytest.raises(ContractViolation):
        decode_feature(FeatureMap.zeros(2, 2, 5), codec)


def test_exact_roundtrip_when_injective():
    # 3*p*p = 12 <= d = 16: the projection keeps every pixel dimension
    codec = make_codec(3, patch_size=2, feature_dim=16)
    codec.check_orthonormal()
    rng = np.random.default_rng(0)
    img = Image.from_array(rng.integers(0, 256, (6, 6, 3), dtype=np.uint8))
    back = decode_feature(encode_image(img, codec), codec)
    assert np.abs(back.pixels.astype(int) - img.pixels.astype(int)).max() <= 1


def test_single_patch_subspace_reconstruction(codec):
    # decoding an encoding reproduces the projection of the patch exactly
    rng = np.random.default_rng(1)
    img = Image.from_array(rng.integers(0, 256, (4, 4, 3), dtype=np.uint8))
    feat = encode_image(img, codec)
    q = codec.projection.astype(np.float64)
    x = img.pixels.astype(np.float64).reshape(-1) / 255.0
    expected = np.clip((x @ q) @ q.T, 0, 1)
    got = decode_feature(feat, codec).pixels.astype(np.float64).reshape(-1) / 255.0
    assert np.abs(got - expected).max() <= 0.5 / 255 + 1e-6


def test_encode_matches_per_patch_matmul_oracle(codec):
    rng = np.random.default_rng(2)
    img = Image.from_array(rng.integers(0, 256, (8, 8, 3), dtype=np.uint8))
    feat = encode_image(img, codec)
    p = codec.patch_size
    q = codec.projection.astype(np.float64)
    for gi in range(2):
        for gj in range(2):
            patch = img.pixels[gi * p:(gi + 1) * p, gj * p:(gj + 1) * p]
            vec = patch.astype(np.float64).reshape(-1) / 255.0
            assert np.allclose(feat.data[gi, gj], vec @ q, atol=1e-6)


def test_encode_linearity(codec):
    rng = np.random.default_rng(3)
    a = rng.integers(0, 128, (8, 8, 3), dtype=np.uint8)
    b = rng.integers(0, 128, (8, 8, 3), dtype=np.uint8)
    fa = encode_image(Image.from_array(a), codec).data.astype(np.float64)
    fb = encode_image(Image.from_array(b), codec).data.astype(np.float64)
    fab = encode_image(Image.from_array(a + b), codec).data.astype(np.float64)
    assert np.allclose(fab, fa + fb, atol=1e-5)


def test_psnr_vs_k_nondecreasing_on_shapes(codec, small_corpus):
    for img, _spec in small_corpus[:4]:
        feat = encode_image(img, codec)
        residuals, _ = encode_pyramid(feat, DEFAULT_SCHEDULE)
        prev = -np.inf
        for k in range(1, DEFAULT_SCHEDULE.num_levels + 1):
            dec = decode_feature(accumulate(residuals, DEFAULT_SCHEDULE, k), codec)
            val = psnr(dec, img)
            assert val >= prev - 1e-9
            prev = val


def test_bad_projection_shape_rejected():
    with pytest.raises(ContractViolation):
        CodecParams(4, 32, np.zeros((10, 32), np.float32), 0)
