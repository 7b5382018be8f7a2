"""A compact CNN engine built on numpy: five max-pool expansion stages
interleaved with shape-preserving double-fusion SE blocks, trained with
rectified Adam under Lookahead with gradient centralization, explained
through Grad-CAM, and benchmarked for inference throughput."""

from .model import FULL, MICRO, ModelConfig, build, count_params, load, save

__version__ = "0.1.0"

__all__ = ["FULL", "MICRO", "ModelConfig", "build", "count_params", "load",
           "save", "__version__"]
