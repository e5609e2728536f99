"""Property-conditioned graph generation with a graph VAE and latent diffusion."""

__version__ = "0.1.0"

from .graphs import Graph, GraphError, EmptyGenerationError, are_isomorphic, from_edge_list
from .properties import PROPERTY_NAMES, ConditionVector, compute_properties

__all__ = [
    "Graph",
    "GraphError",
    "EmptyGenerationError",
    "are_isomorphic",
    "from_edge_list",
    "PROPERTY_NAMES",
    "ConditionVector",
    "compute_properties",
    "__version__",
]
