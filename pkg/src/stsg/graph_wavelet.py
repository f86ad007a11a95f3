"""Multiscale folder decompositions of sensor graphs and the graph-Haar transform.

A folder decomposition groups the vertices of an undirected sensor graph into a
hierarchy of nested "folders": level 0 holds one singleton folder per vertex,
and each folder at level k >= 1 merges two folders from level k-1 (or carries a
single leftover folder upward when the count is odd).  Every two-child folder
contributes two analysis channels:

* a scaling channel, the sum of its children's scaling coefficients, and
* a wavelet channel, their difference,

which for a non-overlapping decomposition equal the inner products of the
signal with the folder's membership indicator and with the +1/-1 split
function over its two children.  Overlapping ("center") decompositions let a
folder feed two parents, producing a redundant channel set.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from io import StringIO

import numpy as np

__all__ = [
    "SensorGraph",
    "Folder",
    "FolderDecomposition",
    "HaarChannelSet",
    "build_decomposition",
    "haar_analyze",
    "haar_analyze_series",
    "haar_synthesize",
]


class GraphError(ValueError):
    """Invalid graph or decomposition input."""


class OverlapUnsupportedError(GraphError):
    """Operation requires a non-overlapping decomposition."""


@dataclass(frozen=True)
class SensorGraph:
    """Undirected, unweighted graph over sensor locations.

    positions holds one 2D coordinate (meters) per vertex; edges are unordered
    vertex-id pairs with no self-loops.
    """

    vertex_count: int
    positions: np.ndarray
    edges: frozenset[tuple[int, int]]

    def __post_init__(self):
        if self.vertex_count < 1:
            raise GraphError("graph must have at least one vertex")
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape != (self.vertex_count, 2):
            raise GraphError(
                f"positions must be ({self.vertex_count}, 2), got {pos.shape}"
            )
        if not np.all(np.isfinite(pos)):
            raise GraphError("positions must be finite")
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        norm = set()
        for u, v in self.edges:
            if u == v:
                raise GraphError(f"self-loop at vertex {u}")
            if not (0 <= u < self.vertex_count and 0 <= v < self.vertex_count):
                raise GraphError(f"edge ({u}, {v}) out of range")
            norm.add((min(u, v), max(u, v)))
        object.__setattr__(self, "edges", frozenset(norm))

    def adjacency(self) -> list[set[int]]:
        adj = [set() for _ in range(self.vertex_count)]
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return adj


def path_graph(n: int, spacing: float = 1.0) -> SensorGraph:
    """Chain of n vertices spaced along the x axis."""
    pos = np.stack([np.arange(n) * spacing, np.zeros(n)], axis=1)
    edges = frozenset((i, i + 1) for i in range(n - 1))
    return SensorGraph(n, pos, edges)


@dataclass(frozen=True)
class Folder:
    """One node of the decomposition hierarchy.

    children indexes folders of the previous level: empty at level 0, one
    entry for a carried folder, two (alpha, beta) for a merged pair.
    """

    level: int
    members: frozenset[int]
    children: tuple[int, ...]

    @property
    def lowest_member(self) -> int:
        return min(self.members)


@dataclass(frozen=True)
class FolderDecomposition:
    """Hierarchy of folder levels 0..max_level over a fixed graph."""

    graph: SensorGraph
    levels: tuple[tuple[Folder, ...], ...]
    overlap: bool
    max_level: int
    # (level, folder index, j) per channel; j=0 scaling, j=1 wavelet.
    channel_index: tuple[tuple[int, int, int], ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "channel_index", self._enumerate_channels())

    def _enumerate_channels(self) -> tuple[tuple[int, int, int], ...]:
        if self.max_level == 0:
            # Trivial decomposition: pass the raw vertex values through as
            # level-0 scaling channels.
            return tuple((0, i, 0) for i in range(len(self.levels[0])))
        out = []
        for k in range(1, self.max_level + 1):
            for i, folder in enumerate(self.levels[k]):
                out.append((k, i, 0))
                if len(folder.children) == 2:
                    out.append((k, i, 1))
        return tuple(out)

    @property
    def channel_count(self) -> int:
        return len(self.channel_index)

    def folders(self, level: int) -> tuple[Folder, ...]:
        return self.levels[level]

    def to_text(self) -> str:
        """One folder per line: level, id, member ids, child ids."""
        buf = StringIO()
        buf.write(f"# folder-decomposition v1 overlap={int(self.overlap)} "
                  f"max_level={self.max_level} n={self.graph.vertex_count}\n")
        for k, level in enumerate(self.levels):
            for i, f in enumerate(level):
                members = ",".join(str(m) for m in sorted(f.members))
                children = ",".join(str(c) for c in f.children) or "-"
                buf.write(f"{k} {i} {members} {children}\n")
        return buf.getvalue()


def decomposition_from_text(text: str, graph: SensorGraph) -> FolderDecomposition:
    """Parse the to_text format back against its graph."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0]
    if not header.startswith("# folder-decomposition v1"):
        raise GraphError("not a folder-decomposition document")
    fields = dict(part.split("=") for part in header.split()[3:])
    overlap = bool(int(fields["overlap"]))
    max_level = int(fields["max_level"])
    levels: list[list[Folder]] = [[] for _ in range(max_level + 1)]
    for ln in lines[1:]:
        lvl_s, idx_s, members_s, children_s = ln.split()
        members = frozenset(int(m) for m in members_s.split(","))
        children = () if children_s == "-" else tuple(
            int(c) for c in children_s.split(","))
        levels[int(lvl_s)].append(Folder(int(lvl_s), members, children))
    return FolderDecomposition(
        graph, tuple(tuple(lv) for lv in levels), overlap, max_level)


@dataclass(frozen=True)
class HaarChannelSet:
    """Channel values keyed by (level, folder index, j).

    values has shape (C,) for a vertex signal or (C, T) for a time series.
    """

    values: np.ndarray
    index: tuple[tuple[int, int, int], ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape[0] != len(self.index):
            raise GraphError("channel values do not match the index")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def channel(self, level: int, folder: int, j: int) -> np.ndarray | float:
        pos = self.index.index((level, folder, j))
        return self.values[pos]


def _folder_centroids(graph: SensorGraph, folders: tuple[Folder, ...]) -> np.ndarray:
    return np.array([
        graph.positions[sorted(f.members)].mean(axis=0) for f in folders
    ])


def _folder_adjacency(graph: SensorGraph, folders: tuple[Folder, ...]) -> list[set[int]]:
    """Folder i and j are adjacent iff some graph edge joins their members."""
    owner = {}
    for i, f in enumerate(folders):
        for v in f.members:
            owner.setdefault(v, set()).add(i)
    adj = [set() for _ in folders]
    for u, v in graph.edges:
        for iu in owner.get(u, ()):
            for iv in owner.get(v, ()):
                if iu != iv:
                    adj[iu].add(iv)
                    adj[iv].add(iu)
    return adj


def _pair_level(graph: SensorGraph, folders: tuple[Folder, ...],
                level: int) -> tuple[Folder, ...]:
    """Greedy matching: scan in ascending lowest-member-id order, pair each
    unmatched folder with its nearest unmatched graph-adjacent folder
    (centroid distance, lowest member id breaking ties); leftover carried."""
    order = sorted(range(len(folders)), key=lambda i: folders[i].lowest_member)
    centroids = _folder_centroids(graph, folders)
    adj = _folder_adjacency(graph, folders)
    matched = [False] * len(folders)
    out: list[Folder] = []
    for i in order:
        if matched[i]:
            continue
        matched[i] = True
        candidates = [j for j in adj[i] if not matched[j]]
        if not candidates:
            candidates = [j for j in range(len(folders)) if not matched[j]]
            if candidates:
                warnings.warn(
                    f"level {level}: folder with members "
                    f"{sorted(folders[i].members)} has no unmatched adjacent "
                    "folder; pairing by position distance instead",
                    stacklevel=3,
                )
        if not candidates:
            out.append(Folder(level, folders[i].members, (i,)))
            continue
        dists = np.linalg.norm(centroids[candidates] - centroids[i], axis=1)
        best = min(
            zip(dists, (folders[j].lowest_member for j in candidates), candidates)
        )[2]
        matched[best] = True
        a, b = (i, best) if folders[i].lowest_member < folders[best].lowest_member \
            else (best, i)
        out.append(
            Folder(level, folders[a].members | folders[b].members, (a, b)))
    return tuple(out)


def _pair_level_center(graph: SensorGraph, folders: tuple[Folder, ...],
                       level: int) -> tuple[Folder, ...]:
    """Center-overlap pairing: sort folders spatially and merge every
    consecutive pair, so each interior folder feeds two parents."""
    centroids = _folder_centroids(graph, folders)
    order = sorted(
        range(len(folders)),
        key=lambda i: (centroids[i][0], centroids[i][1], folders[i].lowest_member),
    )
    if len(order) == 1:
        i = order[0]
        return (Folder(level, folders[i].members, (i,)),)
    out = []
    for a, b in zip(order[:-1], order[1:]):
        out.append(Folder(level, folders[a].members | folders[b].members, (a, b)))
    return tuple(out)


def build_decomposition(graph: SensorGraph, max_level: int,
                        overlap: str = "none") -> FolderDecomposition:
    """Build a folder decomposition of depth max_level.

    overlap is "none" (disjoint folders via greedy adjacency matching) or
    "center" (sliding-window merge that shares interior folders between two
    parents).  max_level must not exceed floor(log2 N); max_level=0 yields
    the trivial single-level decomposition.
    """
    if overlap not in ("none", "center"):
        raise GraphError(f"unknown overlap policy {overlap!r}")
    n = graph.vertex_count
    k_max = int(np.floor(np.log2(n))) if n > 1 else 0
    if max_level < 0 or max_level > k_max:
        raise GraphError(
            f"max_level must be in [0, {k_max}] for {n} vertices, got {max_level}")
    level0 = tuple(Folder(0, frozenset([v]), ()) for v in range(n))
    levels = [level0]
    for k in range(1, max_level + 1):
        if overlap == "center":
            levels.append(_pair_level_center(graph, levels[-1], k))
        else:
            levels.append(_pair_level(graph, levels[-1], k))
    return FolderDecomposition(graph, tuple(levels), overlap == "center", max_level)


def _check_signal(dec: FolderDecomposition, signal: np.ndarray,
                  series: bool) -> np.ndarray:
    x = np.asarray(signal, dtype=float)
    want = 2 if series else 1
    if x.ndim != want:
        raise GraphError(f"expected a {want}-d array, got shape {x.shape}")
    if x.shape[-1] != dec.graph.vertex_count:
        raise GraphError(
            f"signal width {x.shape[-1]} does not match "
            f"{dec.graph.vertex_count} vertices")
    if not np.all(np.isfinite(x)):
        raise GraphError("signal must be finite")
    return x


def _analyze(dec: FolderDecomposition, x: np.ndarray) -> np.ndarray:
    """Shared recursion; x has shape (..., N), returns (..., C)."""
    # Scaling coefficients per level; level 0 in vertex order.
    scal = x
    chans = []
    if dec.max_level == 0:
        return np.moveaxis(scal, -1, 0) if scal.ndim == 2 else scal
    for k in range(1, dec.max_level + 1):
        nxt = np.empty(x.shape[:-1] + (len(dec.levels[k]),))
        for i, folder in enumerate(dec.levels[k]):
            if len(folder.children) == 1:
                nxt[..., i] = scal[..., folder.children[0]]
            else:
                a, b = folder.children
                nxt[..., i] = scal[..., a] + scal[..., b]
                chans.append((k, i, 1, scal[..., a] - scal[..., b]))
            chans.append((k, i, 0, nxt[..., i]))
        scal = nxt
    chans.sort(key=lambda c: c[:3])
    stacked = np.stack([c[3] for c in chans], axis=0)
    return stacked


def haar_analyze(dec: FolderDecomposition, signal) -> HaarChannelSet:
    """Graph-Haar transform of a per-vertex signal.

    Channel (k, i, 0) is the scaling coefficient of folder i at level k and
    (k, i, 1) the wavelet coefficient (difference of the children's scaling
    coefficients); carried folders emit no wavelet channel.
    """
    x = _check_signal(dec, np.asarray(signal, dtype=float), series=False)
    return HaarChannelSet(_analyze(dec, x), dec.channel_index)


def haar_analyze_series(dec: FolderDecomposition, recording) -> HaarChannelSet:
    """Per-sample graph-Haar transform of a (T, N) recording -> (C, T) channels."""
    x = _check_signal(dec, np.asarray(recording, dtype=float), series=True)
    return HaarChannelSet(_analyze(dec, x), dec.channel_index)


def haar_synthesize(dec: FolderDecomposition, channels: HaarChannelSet) -> np.ndarray:
    """Invert haar_analyze for a non-overlapping decomposition.

    Walks the hierarchy top-down: a folder's scaling value splits into its
    children's scaling values via (s + w) / 2 and (s - w) / 2.
    """
    if dec.overlap:
        raise OverlapUnsupportedError(
            "synthesis is only defined for non-overlapping decompositions")
    if channels.index != dec.channel_index:
        raise GraphError("channel set does not match the decomposition")
    lookup = {key: channels.values[pos]
              for pos, key in enumerate(channels.index)}
    n = dec.graph.vertex_count
    if dec.max_level == 0:
        return np.array([lookup[(0, i, 0)] for i in range(n)], dtype=float)
    # Scaling values at the top level, then descend.
    scal = {(dec.max_level, i): lookup[(dec.max_level, i, 0)]
            for i in range(len(dec.levels[dec.max_level]))}
    for k in range(dec.max_level, 0, -1):
        for i, folder in enumerate(dec.levels[k]):
            s = scal[(k, i)]
            if len(folder.children) == 1:
                scal[(k - 1, folder.children[0])] = s
            else:
                a, b = folder.children
                w = lookup[(k, i, 1)]
                scal[(k - 1, a)] = (s + w) / 2.0
                scal[(k - 1, b)] = (s - w) / 2.0
    return np.array([scal[(0, v)] for v in range(n)], dtype=float)
