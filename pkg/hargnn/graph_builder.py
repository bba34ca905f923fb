# hargnn/graph_builder.py
"""
Turns segments into path graphs over their timestamps.

Every timestamp is a node, consecutive timestamps share an undirected edge,
and the channel values are node features, split per sensor. All segments of
a window length share one topology, so batches carry a single normalized
adjacency.
"""

import functools
import logging
import os
import re
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .data_pipeline import ChannelLayout, SegmentSet, channel_name, sensor_widths
from .errors import DataError, DimensionError
from .utils import write_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ActivityGraph:
    """A segment as a path graph with per-sensor node-feature matrices."""
    n_nodes: int
    adjacency: np.ndarray
    norm_adjacency: np.ndarray
    sensor_features: Tuple[np.ndarray, ...]
    label: int
    provenance: Tuple[int, int, int]
    channel_layout: ChannelLayout

    @property
    def features(self) -> np.ndarray:
        """Full t x D node-feature matrix."""
        return np.concatenate(self.sensor_features, axis=1)

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(np.int64)


def path_adjacency(n_nodes: int) -> np.ndarray:
    """Binary adjacency of the path 0 - 1 - ... - (n-1)."""
    a = np.zeros((n_nodes, n_nodes))
    idx = np.arange(n_nodes - 1)
    a[idx, idx + 1] = 1.0
    a[idx + 1, idx] = 1.0
    return a


def normalize_adjacency(adjacency: np.ndarray, add_self_loops: bool = True) -> np.ndarray:
    """
    Symmetric degree normalisation D^-1/2 A D^-1/2.

    With self-loops the identity is added first and the degrees are those of
    A + I. Isolated nodes (only possible without self-loops) get zero rows.
    """
    a = np.asarray(adjacency, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError("normalize_adjacency", a.shape, detail="adjacency must be square")
    if not np.array_equal(a, a.T):
        raise DataError("adjacency matrix is not symmetric")
    if add_self_loops:
        a = a + np.eye(a.shape[0])
    deg = a.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    nz = deg > 0
    inv_sqrt[nz] = deg[nz] ** -0.5
    return inv_sqrt[:, None] * a * inv_sqrt[None, :]


@functools.lru_cache(maxsize=32)
def shared_norm_adjacency(n_nodes: int, self_loops: bool) -> np.ndarray:
    out = normalize_adjacency(path_adjacency(n_nodes), self_loops)
    out.flags.writeable = False
    return out


def split_sensor_features(node_features: np.ndarray, layout: ChannelLayout) -> Tuple[np.ndarray, ...]:
    """Slices the trailing channel axis into one block per sensor."""
    blocks = []
    start = 0
    for _, width in sensor_widths(layout):
        blocks.append(node_features[..., start:start + width])
        start += width
    return tuple(blocks)


def build_path_graph(segment: np.ndarray, layout: ChannelLayout, label: int,
                     provenance: Tuple[int, int, int] = (0, 0, 0), self_loops: bool = True) -> ActivityGraph:
    """Builds the path graph of one D x T segment; node j's features are column j."""
    segment = np.asarray(segment, dtype=np.float64)
    if segment.ndim != 2 or segment.shape[0] != len(layout):
        raise DimensionError("build_path_graph", segment.shape, (len(layout),), detail="expected D x T")
    t = segment.shape[1]
    if t < 2:
        raise DimensionError("build_path_graph", segment.shape, detail="a path graph needs T >= 2")
    nodes = np.ascontiguousarray(segment.T)
    return ActivityGraph(
        n_nodes=t,
        adjacency=path_adjacency(t),
        norm_adjacency=shared_norm_adjacency(t, self_loops),
        sensor_features=split_sensor_features(nodes, layout),
        label=int(label),
        provenance=tuple(int(v) for v in provenance),
        channel_layout=layout,
    )


def graphs_from_segments(segs: SegmentSet, self_loops: bool = True) -> List[ActivityGraph]:
    return [build_path_graph(segs.segments[i], segs.channel_layout, int(segs.labels[i]),
                             tuple(segs.provenance[i]), self_loops) for i in range(len(segs))]


@dataclass(frozen=True, eq=False)
class GraphBatch:
    """
    B graphs sharing one topology.

    `sensor_features[i]` is B x t x d_i; the adjacency matrices are stored once.
    """
    adjacency: np.ndarray
    norm_adjacency: np.ndarray
    sensor_features: Tuple[np.ndarray, ...]
    labels: np.ndarray
    channel_layout: ChannelLayout

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_nodes(self) -> int:
        return int(self.adjacency.shape[0])

    @property
    def n_sensors(self) -> int:
        return len(self.sensor_features)

    @property
    def features(self) -> np.ndarray:
        """B x t x D with all sensors concatenated."""
        return np.concatenate(self.sensor_features, axis=2)

    def graph(self, index: int) -> ActivityGraph:
        return ActivityGraph(self.n_nodes, self.adjacency, self.norm_adjacency,
                             tuple(f[index] for f in self.sensor_features), int(self.labels[index]),
                             (0, 0, 0), self.channel_layout)


def graph_batch(graphs: Sequence[ActivityGraph]) -> GraphBatch:
    """Stacks graphs of identical topology and layout into one batch."""
    if not graphs:
        raise DimensionError("graph_batch", (), detail="empty batch")
    first = graphs[0]
    for g in graphs[1:]:
        if g.n_nodes != first.n_nodes or g.channel_layout != first.channel_layout:
            raise DimensionError("graph_batch", (first.n_nodes, len(first.channel_layout)),
                                 (g.n_nodes, len(g.channel_layout)), detail="heterogeneous graphs")
        if g.norm_adjacency is not first.norm_adjacency and not np.array_equal(g.norm_adjacency,
                                                                              first.norm_adjacency):
            raise DimensionError("graph_batch", first.norm_adjacency.shape, g.norm_adjacency.shape,
                                 detail="graphs use different adjacency normalisation")
    features = tuple(np.stack([g.sensor_features[i] for g in graphs]) for i in range(len(first.sensor_features)))
    return GraphBatch(first.adjacency, first.norm_adjacency, features,
                      np.array([g.label for g in graphs], dtype=np.int64), first.channel_layout)


def batch_segments(segs: SegmentSet, indices: Optional[Sequence[int]] = None,
                   self_loops: bool = True) -> GraphBatch:
    """Builds a batch straight from a SegmentSet; equals graph_batch of the built graphs."""
    idx = np.arange(len(segs)) if indices is None else np.asarray(indices, dtype=np.int64)
    nodes = np.transpose(segs.segments[idx], (0, 2, 1))
    return batch_windows(nodes, segs.channel_layout, segs.labels[idx].copy(), self_loops)


def batch_windows(windows: np.ndarray, layout: ChannelLayout, labels: Optional[np.ndarray] = None,
                  self_loops: bool = True) -> GraphBatch:
    """Batch of B x T x D raw windows (timestamps first); unlabeled windows get label 0."""
    windows = np.asarray(windows, dtype=np.float64)
    if windows.ndim != 3 or windows.shape[2] != len(layout):
        raise DimensionError("batch_windows", windows.shape, (len(layout),), detail="expected B x T x D")
    t = windows.shape[1]
    if t < 2:
        raise DimensionError("batch_windows", windows.shape, detail="a path graph needs T >= 2")
    if labels is None:
        labels = np.zeros(windows.shape[0], dtype=np.int64)
    return GraphBatch(path_adjacency(t), shared_norm_adjacency(t, self_loops),
                      split_sensor_features(np.ascontiguousarray(windows), layout), labels, layout)


# --- Export ---

def dump_graph_json(graph: ActivityGraph, class_names: Sequence[str]) -> dict:
    """Node list, edge list and per-node feature vectors of one graph."""
    names = [channel_name(s, a) for s, a in graph.channel_layout]
    feats = graph.features
    edges = np.argwhere(np.triu(graph.adjacency) > 0)
    return {
        "label": graph.label,
        "label_name": class_names[graph.label],
        "provenance": {"subject_id": graph.provenance[0], "run_id": graph.provenance[1],
                       "start_index": graph.provenance[2]},
        "channels": names,
        "nodes": [{"id": j, "features": [float(v) for v in feats[j]]} for j in range(graph.n_nodes)],
        "edges": [[int(i), int(j)] for i, j in edges],
    }


def slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_").lower() or "class"


def export_graphs(segs: SegmentSet, out_dir: str, per_class: int = 1, self_loops: bool = True) -> List[str]:
    """Writes the first `per_class` graphs of every class as JSON files."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for cls, name in enumerate(segs.class_names):
        members = np.flatnonzero(segs.labels == cls)[:per_class]
        for k, i in enumerate(members):
            graph = build_path_graph(segs.segments[i], segs.channel_layout, cls, tuple(segs.provenance[i]),
                                     self_loops)
            path = os.path.join(out_dir, f"graph_{slug(name)}_{k}.json")
            write_json(path, dump_graph_json(graph, segs.class_names))
            written.append(path)
    logger.info(f"Exported {len(written)} graph(s) to {out_dir}")
    return written
