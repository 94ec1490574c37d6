"""Benign-only contrastive pretraining and centroid scoring for flow-based intrusion detection."""
from .numerics import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
