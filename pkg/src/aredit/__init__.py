"""aredit: training-free text-guided editing on a next-scale AR backbone."""

__version__ = "0.1.0"

from .numerics import FeatureMap, Image
from .pyramid import BitGrid, ScaleSchedule, DEFAULT_SCHEDULE
from .codec import CodecParams, make_codec
from .predictor import PredictorModel, ProbGrid, AttentionMaps, make_synthetic
from .cache import EditCache, build_cache, load_cache, save_cache
from .editor import BitMask, EditConfig, EditResult, edit

__all__ = [
    "FeatureMap", "Image", "BitGrid", "ScaleSchedule", "DEFAULT_SCHEDULE",
    "CodecParams", "make_codec", "PredictorModel", "ProbGrid", "AttentionMaps",
    "make_synthetic", "EditCache", "build_cache", "load_cache", "save_cache",
    "BitMask", "EditConfig", "EditResult", "edit",
]
