"""Few-shot point-cloud semantic segmentation with stratified class-specific attention."""
from .errors import ScatError
from .fewshot import ABLATIONS, VARIANTS, Episode, RunConfig, VariantSpec, build_episode, predict
from .geometry import PointCloud
from .scat import ScatParams, stratified_forward

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS", "VARIANTS", "Episode", "PointCloud", "RunConfig", "ScatError", "ScatParams",
    "VariantSpec", "build_episode", "predict", "stratified_forward",
]
