import numpy as np
import pytest

from aredit.errors import ContractViolation
from aredit.numerics import Image
from aredit.shapesworld import (PALETTE, PALETTE_NAMES, SceneSpec, generate,
                                region_color_score)


def test_same_seed_identical_corpora():
    a = generate(77, 10, 64)
    b = generate(77, 10, 64)
    for (ia, sa), (ib, sb) in zip(a, b):
        assert np.array_equal(ia.pixels, ib.pixels)
        assert sa.caption == sb.caption
        assert np.array_equal(sa.object_mask, sb.object_mask)


def test_rasterized_object_on_palette_color():
    for img, spec in generate(5, 20, 64):
        target = np.array(spec.color_rgb)
        px = np.asarray(img.pixels)[spec.object_mask].astype(int)
        dist = np.abs(px - target[None, :]).max(axis=1)
        assert (dist <= 30).mean() >= 0.95
        # hard edges: interior pixels are exactly the palette color
        assert (dist == 0).all()


def test_mask_partitions_image():
    for img, spec in generate(6, 10, 64):
        bg = np.array(spec.background_rgb)
        px = np.asarray(img.pixels)[~spec.object_mask]
        assert np.array_equal(px, np.broadcast_to(bg, px.shape))


def test_caption_template():
    for _img, spec in generate(8, 10, 64):
        assert spec.caption == f"a {spec.color} {spec.shape} on a {spec.background} background"


def test_coverage_at_1000():
    corpus = generate(0, 1000, 64)
    shapes = {s.shape for _, s in corpus}
    colors = {s.color for _, s in corpus} | {s.background for _, s in corpus}
    assert shapes == {"circle", "square", "triangle"}
    assert len(colors) >= 6


def test_spec_json_roundtrip():
    [(img, spec)] = generate(3, 1, 64)
    back = SceneSpec.from_json(spec.to_json())
    assert back.caption == spec.caption
    assert back.color_rgb == spec.color_rgb
    assert np.array_equal(back.object_mask, spec.object_mask)


class TestRegionColorScore:
    def solid(self, rgb):
        arr = np.zeros((8, 8, 3), np.uint8)
        arr[:] = rgb
        return Image.from_array(arr)

    def test_solid_match_is_one(self):
        rose = PALETTE[0][1]
        img = self.solid(rose)
        assert region_color_score(img, np.ones((8, 8), bool), rose) == 1.0

    def test_solid_mismatch_is_zero(self):
        rose, jade = PALETTE[0][1], PALETTE[2][1]
        img = self.solid(rose)
        assert region_color_score(img, np.ones((8, 8), bool), jade) == 0.0

    def test_half_and_half(self):
        rose, jade = PALETTE[0][1], PALETTE[2][1]
        arr = np.zeros((8, 8, 3), np.uint8)
        arr[:, :4] = rose
        arr[:, 4:] = jade
        img = Image.from_array(arr)
        assert region_color_score(img, np.ones((8, 8), bool), rose) == 0.5

    def test_empty_mask_rejected(self):
        with pytest.raises(ContractViolation):
            region_color_score(self.solid(PALETTE[0][1]), np.zeros((8, 8), bool),
                               PALETTE[0][1])


def test_palette_names_unique_tokens():
    from aredit.textenc import hash_word

    ids = [hash_word(n) for n in PALETTE_NAMES]
    assert len(set(ids)) == len(ids)
