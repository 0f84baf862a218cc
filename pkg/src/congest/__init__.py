"""Synchronous-round propagation of sketches over a graph of datasets."""

from congest.graph import (
    Graph,
    diamond_edges,
    empty_dataset,
    grid_edges,
    load_graph,
    path_edges,
    star_edges,
)
from congest.propagation import (
    PropagationConfig,
    PropagationResult,
    delta_budget,
    per_node_comm_report,
    propagate,
    rows_bound,
    write_comm_report,
    write_embeddings,
)

__all__ = [
    'Graph',
    'diamond_edges',
    'empty_dataset',
    'grid_edges',
    'load_graph',
    'path_edges',
    'star_edges',
    'PropagationConfig',
    'PropagationResult',
    'delta_budget',
    'per_node_comm_report',
    'propagate',
    'rows_bound',
    'write_comm_report',
    'write_embeddings',
]
