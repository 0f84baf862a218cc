"""Instance generators and loaders."""

from data.generators import (
    load_servers,
    low_rank_dataset,
    node_datasets,
    random_dataset,
    random_row_sets,
    random_servers,
    regression_dataset,
    split_with_overlap,
    write_servers,
)

__all__ = [
    'load_servers',
    'low_rank_dataset',
    'node_datasets',
    'random_dataset',
    'random_row_sets',
    'random_servers',
    'regression_dataset',
    'split_with_overlap',
    'write_servers',
]
