"""Multi-scale spatial-temporal graph network for video person re-id.

Pure numpy implementation: tensor autodiff core, part-graph feature
extraction over pose heatmaps, context-reinforced graph convolutions
across time windows, cross-scale feature transfer, and a training /
evaluation harness with a scikit-learn style estimator facade.
"""

from graphreid.autodiff import Tensor

__version__ = "0.1.0"

__all__ = ["Tensor", "PartGraphReid", "__version__"]


def __getattr__(name):
    # estimator pulls in sklearn; keep that import out of the hot path
    if name == "PartGraphReid":
        from graphreid.estimator import PartGraphReid
        return PartGraphReid
    raise AttributeError(f"module 'graphreid' has no attribute '{name}'")
