"""Dynamic interdependency graphs from windowed series via self-attention.

Each channel of a window is a node whose feature is its length-T series.
Queries and keys are learned T x T projections of the channel series; the
row-softmax of the scaled query-key products is the window's adjacency
matrix, so the graph rewires itself with the data and gradients reach the
projection matrices.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class AttentionParams:
    w_query: Tensor  # (T, T)
    w_key: Tensor  # (T, T)

    @property
    def window(self):
        return self.w_query.data.shape[0]


def init_attention(window, rng, scale=None):
    """Seeded init; scale keeps the pre-softmax logits near unit variance."""
    if scale is None:
        scale = float(window) ** -0.75
    return AttentionParams(
        w_query=Tensor(rng.normal(0.0, scale, size=(window, window)), requires_grad=True),
        w_key=Tensor(rng.normal(0.0, scale, size=(window, window)), requires_grad=True),
    )


@dataclass
class DynGraph:
    node_features: np.ndarray  # (N, T): channel series as rows
    adjacency: Tensor  # (N, N) row-stochastic
    embeddings: Tensor | None = None  # (N, d), filled by the encoder
    start: int = 0


def attention_adjacency(node_features, params, key_index="j", dropout=0.0, rng=None):
    """Row-stochastic attention matrices for a stack of windows.

    ``node_features`` is (B, N, T) (or (N, T) for one window). Logit (i, j)
    is the scaled product of node i's query with node j's key; ``key_index
    = 'i'`` instead pairs each query with its own key, which makes every
    logit constant along j and therefore every row uniform. Dropout, when
    active, is applied to the logits.
    """
    feats = ad.as_tensor(node_features)
    squeeze = feats.ndim == 2
    if squeeze:
        feats = ad.reshape(feats, (1,) + feats.shape)
    if feats.shape[-1] != params.window:
        raise ValueError(
            f"window length {feats.shape[-1]} does not match attention params {params.window}"
        )
    queries = ad.matmul(feats, ad.transpose(params.w_query))
    keys = ad.matmul(feats, ad.transpose(params.w_key))
    scale = 1.0 / np.sqrt(params.window)
    if key_index == "j":
        logits = ad.matmul(queries, ad.transpose(keys)) * scale
    elif key_index == "i":
        diag = ad.sum_(queries * keys, axis=-1, keepdims=True) * scale
        logits = diag + Tensor(np.zeros((1, 1, feats.shape[1])))
    else:
        raise ValueError(f"key_index must be 'i' or 'j', got {key_index!r}")
    if dropout > 0.0:
        if rng is None:
            raise ValueError("dropout requires an rng")
        logits = ad.dropout(logits, dropout, rng)
    adjacency = ad.softmax_rows(logits)
    return ad.reshape(adjacency, adjacency.shape[1:]) if squeeze else adjacency


def build_graph(window, params, key_index="j", dropout=0.0, rng=None, start=0):
    """One window (T, N) -> DynGraph with node features (N, T) and adjacency."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise ValueError("window must be 2-D (T, N)")
    feats = window.T.copy()
    adjacency = attention_adjacency(feats, params, key_index=key_index, dropout=dropout, rng=rng)
    return DynGraph(node_features=feats, adjacency=adjacency, start=start)


def build_graphs(windows, starts, params, key_index="j", dropout=0.0, rng=None):
    """Batched variant: (B, T, N) windows -> list of DynGraph sharing one tape."""
    windows = np.asarray(windows, dtype=np.float64)
    feats = np.swapaxes(windows, 1, 2).copy()  # (B, N, T)
    adjacency = attention_adjacency(feats, params, key_index=key_index, dropout=dropout, rng=rng)
    return [
        DynGraph(node_features=feats[b], adjacency=adjacency[b], start=int(starts[b]))
        for b in range(windows.shape[0])
    ], adjacency


def adjacency_export(graphs, path):
    """Write per-window adjacency entries as (window_start, i, j, a_ij) rows."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("adjacency_export needs at least one graph")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_start", "i", "j", "a_ij"])
        for g in graphs:
            a = g.adjacency.data
            n = a.shape[0]
            for i in range(n):
                for j in range(n):
                    writer.writerow([g.start, i, j, repr(float(a[i, j]))])


def read_adjacency_export(path):
    """Inverse of ``adjacency_export``: {window_start: (N, N) matrix}."""
    entries = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            start, i, j, val = int(row[0]), int(row[1]), int(row[2]), float(row[3])
            entries.setdefault(start, {})[(i, j)] = val
    out = {}
    for start, cells in entries.items():
        n = max(i for i, _ in cells) + 1
        a = np.zeros((n, n))
        for (i, j), val in cells.items():
            a[i, j] = val
        out[start] = a
    return out
