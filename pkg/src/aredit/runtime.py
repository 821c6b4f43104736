"""Derive the codec and scale schedule a model was built against."""

from typing import Tuple

from .codec import CodecParams, DEFAULT_CODEC_SEED, make_codec
from .predictor import PredictorModel
from .pyramid import ScaleSchedule


def model_runtime(model: PredictorModel) -> Tuple[CodecParams, ScaleSchedule]:
    cfg = model.config
    d = int(cfg["d"])
    codec = make_codec(int(cfg.get("codec_seed", DEFAULT_CODEC_SEED)), feature_dim=d)
    sides = cfg.get("schedule", [1, 2, 4, 8, 16])
    return codec, ScaleSchedule.from_sides(sides, d)
