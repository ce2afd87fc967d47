from .containers import LayerFeatureStack, ProsodyTrack

__all__ = ["LayerFeatureStack", "ProsodyTrack"]
__version__ = "0.1.0"
