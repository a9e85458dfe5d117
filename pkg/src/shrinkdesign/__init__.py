"""Adaptive multi-armed trial engine driven by shrinkage-estimator risk.

The package assigns arriving units to treatment arms so as to minimize the
exact expected squared-error loss of a chosen shrinkage estimator (Bock,
SURE-min, or Dimmery), computes oracle risk-minimizing static designs, and
ships a simulation harness plus an HTTP service for live trials.

Risk evaluation reduces to one-dimensional integrals of Gaussian
quadratic-form moments; the hot integration kernels live in a compiled
extension with a pure-numpy fallback (see ``shrinkdesign._kernels``).
"""

from shrinkdesign._kernels import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
