"""
Undirected graphs whose nodes hold keyed datasets.

Node ids are any hashable values; graphs loaded from files use the string
tokens of the files. Adjacency lists are kept sorted so traversal order does
not depend on insertion order.
"""

import logging
from collections import deque
from pathlib import Path
from typing import Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np

from sketches.dataset import Dataset, union_all

logger = logging.getLogger(__name__)

Edge = Tuple[Hashable, Hashable]


def _sort_key(node: Hashable):
    return (type(node).__name__, node)


class Graph:
    """
    Nodes with datasets plus undirected edges.

    Every node must have a dataset (possibly empty) and all datasets must
    share a column count.
    """

    def __init__(self, datasets: Mapping[Hashable, Dataset], edges: Iterable[Edge] = ()):
        self.datasets: Dict[Hashable, Dataset] = dict(datasets)
        self.adjacency: Dict[Hashable, List[Hashable]] = {u: [] for u in self.datasets}
        for u, v in edges:
            self.add_edge(u, v)
        self._validate()
        logger.info(f"Graph with {len(self)} nodes and {self.num_edges} edges")

    def _validate(self):
        dims = {ds.d for ds in self.datasets.values() if len(ds)}
        if len(dims) > 1:
            raise ValueError(f"Node datasets have different column counts: {sorted(dims)}")

    def add_edge(self, u: Hashable, v: Hashable):
        for node in (u, v):
            if node not in self.datasets:
                raise ValueError(f"No dataset for node {node!r}")
        if u == v:
            return
        for a, b in ((u, v), (v, u)):
            if b not in self.adjacency[a]:
                self.adjacency[a].append(b)
                self.adjacency[a].sort(key=_sort_key)

    def __len__(self) -> int:
        return len(self.datasets)

    @property
    def nodes(self) -> List[Hashable]:
        return sorted(self.datasets, key=_sort_key)

    @property
    def num_edges(self) -> int:
        return sum(len(nbrs) for nbrs in self.adjacency.values()) // 2

    @property
    def d(self) -> int:
        dims = [ds.d for ds in self.datasets.values() if len(ds)]
        return dims[0] if dims else max((ds.d for ds in self.datasets.values()), default=0)

    def neighbors(self, u: Hashable) -> List[Hashable]:
        return self.adjacency[u]

    def degree(self, u: Hashable) -> int:
        return len(self.adjacency[u])

    def ball(self, u: Hashable, radius: int) -> Set[Hashable]:
        """Nodes within hop distance radius of u, u included."""
        seen = {u: 0}
        queue = deque([u])
        while queue:
            v = queue.popleft()
            if seen[v] == radius:
                continue
            for w in self.adjacency[v]:
                if w not in seen:
                    seen[w] = seen[v] + 1
                    queue.append(w)
        return set(seen)

    def ball_union(self, u: Hashable, radius: int) -> Dataset:
        """Conforming union of the datasets within distance radius of u."""
        return union_all(self.datasets[v] for v in sorted(self.ball(u, radius), key=_sort_key))

    def components(self) -> List[Set[Hashable]]:
        left = set(self.datasets)
        out = []
        for u in self.nodes:
            if u in left:
                comp = self.ball(u, len(self))
                left -= comp
                out.append(comp)
        return out

    def check_conforming(self) -> Dataset:
        """Union of all node datasets; raises ConformingViolationError on a clash."""
        return union_all(self.datasets.values())


def empty_dataset(d: int) -> Dataset:
    return Dataset.from_rows([], np.zeros((0, d)), d)


def path_edges(n: int) -> List[Edge]:
    return [(i, i + 1) for i in range(n - 1)]


def grid_edges(rows: int, cols: int) -> List[Edge]:
    """Edges of a rows x cols grid; node r * cols + c."""
    edges = []
    for r in range(rows):
        for c in range(cols):
            u = r * cols + c
            if c + 1 < cols:
                edges.append((u, u + 1))
            if r + 1 < rows:
                edges.append((u, u + cols))
    return edges


def star_edges(leaves: int) -> List[Edge]:
    """Node 0 is the center."""
    return [(0, i) for i in range(1, leaves + 1)]


def diamond_edges() -> List[Edge]:
    """Two disjoint paths 0-1-3 and 0-2-3."""
    return [(0, 1), (0, 2), (1, 3), (2, 3)]


def read_edge_list(path: Union[str, Path]) -> List[Edge]:
    """One 'u v' pair per line; blank lines and '#' comments are skipped."""
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'u v', got {line!r}")
            edges.append((parts[0], parts[1]))
    return edges


def read_manifest(path: Union[str, Path]) -> Dict[str, Path]:
    """One 'node dataset.csv' pair per line; relative paths resolve against the manifest."""
    path = Path(path)
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split(maxsplit=1)
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'node path', got {line!r}")
            csv_path = Path(parts[1])
            out[parts[0]] = csv_path if csv_path.is_absolute() else path.parent / csv_path
    return out


def load_graph(edge_path: Union[str, Path], manifest_path: Union[str, Path],
               d: Optional[int] = None) -> Graph:
    """
    Build a graph from an edge list and a dataset manifest.

    Nodes named only in the edge list get an empty dataset of width d
    (inferred from the manifest datasets when not given).
    """
    edges = read_edge_list(edge_path)
    datasets = {node: Dataset.from_csv(csv) for node, csv in read_manifest(manifest_path).items()}
    if d is None:
        dims = {ds.d for ds in datasets.values()}
        d = dims.pop() if len(dims) == 1 else None
    for u, v in edges:
        for node in (u, v):
            if node not in datasets:
                if d is None:
                    raise ValueError(f"No dataset for node {node!r} and no width to build an empty one")
                datasets[node] = empty_dataset(d)
    return Graph(datasets, edges)


def write_edge_list(edges: Sequence[Edge], path: Union[str, Path]):
    with open(path, "w") as fh:
        for u, v in edges:
            fh.write(f"{u} {v}\n")
