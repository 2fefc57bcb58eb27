"""Desk-scale K+1 "dustbin" classifier lab.

Trains naive (K-class) and augmented (K+1-class) models on a from-scratch
autodiff engine, generates dustbin training data (natural out-distribution
sets, interpolated pairs, iterative signed-gradient adversaries), ranks
out-distribution candidates by misclassification uniformity, mounts five
gradient attacks, and evaluates everything with the Acc/Rej/Err protocol.
"""

from .kernels import backend as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
