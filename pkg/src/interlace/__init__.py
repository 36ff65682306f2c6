"""Simulation library for trajectory soups, frog-model spread, and
branching random walks on transient graphs, with percolation analytics
over the sampled traces."""

from .graphs import (
    Graph,
    Ball,
    EncodingError,
    ResourceError,
    parse_graph,
    lattice,
    regular_tree,
    tree_lattice_product,
    neighbors,
    distance,
    ball,
)

__version__ = "0.1.0"
