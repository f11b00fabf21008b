from .export_tool import FrameExporter, load_png
from .metric_tool import ClipEvaluator
from .world_tool import SyntheticWorld

__all__ = ["ClipEvaluator", "FrameExporter", "SyntheticWorld", "load_png"]
