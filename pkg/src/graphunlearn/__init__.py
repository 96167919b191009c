"""Corrective unlearning for graph convolutional networks."""
from .graph import Graph, SbmConfig, SplitConfig, generate_sbm, largest_connected_component, load_graph, make_splits
from .kernels import BACKEND

__all__ = ["Graph", "SbmConfig", "SplitConfig", "generate_sbm", "largest_connected_component",
           "load_graph", "make_splits", "BACKEND"]
__version__ = "0.1.0"
