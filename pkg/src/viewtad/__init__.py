"""Multi-view skeleton temporal action detection.

Two-stage pipeline: a graph-convolutional window encoder trained on
virtual-camera 2D projections of 3D skeleton windows, then a multi-view,
multi-scale selective state-space temporal encoder producing per-window
multi-label action probabilities, decoded into scored event segments.
"""

__version__ = "0.1.0"

from .tensor import GradTape, NonFiniteError, Tensor

__all__ = ["GradTape", "NonFiniteError", "Tensor", "__version__"]
