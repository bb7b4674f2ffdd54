"""Image-to-graph transfer learning toolkit: losses, matching, projection and metrics."""

__version__ = "0.1.0"

from .graph import Box, SpatialGraph, canonicalize, validate  # noqa: E402
from .sampling import EdgeSampleSet, fixed_m_sample, regularized_sample  # noqa: E402

__all__ = ["Box", "SpatialGraph", "canonicalize", "validate", "EdgeSampleSet",
           "fixed_m_sample", "regularized_sample", "__version__"]
