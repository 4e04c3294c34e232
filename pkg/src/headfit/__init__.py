"""Pin-based 3D head model fitting and benchmark evaluation."""

from . import camera, dataio, fitter, losses, metrics, morphable, rotations
from .camera import PoseParams, ProjectionMatrices, SimilarityTransform
from .fitter import FitConfig, FitParams, FitResult, FitSession, Pin, fit
from .metrics import BBox, LabelSet, MetricReport
from .morphable import HeadModel, Mesh, ShapeParams, decode, subsample, synth_model

__version__ = "0.1.0"

__all__ = [
    "camera", "dataio", "fitter", "losses", "metrics", "morphable", "rotations",
    "PoseParams", "ProjectionMatrices", "SimilarityTransform",
    "FitConfig", "FitParams", "FitResult", "FitSession", "Pin", "fit",
    "BBox", "LabelSet", "MetricReport",
    "HeadModel", "Mesh", "ShapeParams", "decode", "subsample", "synth_model",
    "__version__",
]
