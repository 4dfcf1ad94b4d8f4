"""Fill-reducing ordering for the condensed system.

METIS nested dissection on the interior-edge graph (two edges are adjacent
when they bound a common cell); each edge carries all of its velocity
unknowns.  A cell's constant pressure is placed right after the last of its
edges, so it is eliminated only once it has picked up a nonzero pivot.
"""

from __future__ import annotations

import numpy as np
import pymetis
import scipy.sparse as sp


def edge_graph(mesh, edges_mask: np.ndarray) -> sp.csr_matrix:
    """Adjacency (no self loops) between the edges selected by ``edges_mask``."""
    rows, cols = [], []
    for ce in mesh.cell_edges:
        ce = np.asarray(ce)[edges_mask[ce]]
        rows.append(np.repeat(ce, len(ce)))
        cols.append(np.tile(ce, len(ce)))
    r, c = np.concatenate(rows), np.concatenate(cols)
    off = r != c
    n = mesh.n_edges
    G = sp.coo_matrix((np.ones(int(off.sum())), (r[off], c[off])), shape=(n, n)).tocsr()
    G.sum_duplicates()
    return G


def edge_order(mesh, interior: np.ndarray) -> np.ndarray:
    """Interior edges in METIS nested-dissection order."""
    nodes = np.flatnonzero(interior)
    if len(nodes) < 2:
        return nodes
    sub = edge_graph(mesh, interior)[nodes][:, nodes].tocsr()
    perm, _ = pymetis.nested_dissection(adjacency=pymetis.CSRAdjacency(sub.indptr, sub.indices))
    return nodes[np.asarray(perm, dtype=np.int64)]


def condensed_ordering(mesh, edge_index: np.ndarray, block: int) -> np.ndarray:
    """Permutation of [edge blocks of size ``block``, cell pressures, multiplier]."""
    interior = edge_index >= 0
    order = edge_order(mesh, interior)
    rank = np.full(mesh.n_edges, -1, dtype=np.int64)
    rank[order] = np.arange(len(order))
    nb = len(order) * block
    last = np.array([rank[np.asarray(ce)].max() for ce in mesh.cell_edges])
    # slot j holds the cells whose last edge is order[j-1]; slot 0 has none
    slots = [[] for _ in range(len(order) + 1)]
    for c in np.argsort(last, kind="stable"):
        slots[last[c] + 1].append(c)
    perm = list(nb + np.asarray(slots[0], dtype=np.int64))
    for j, e in enumerate(order):
        perm.extend(edge_index[e] * block + np.arange(block))
        perm.extend(nb + c for c in slots[j + 1])
    perm.append(nb + mesh.n_cells)
    return np.asarray(perm, dtype=np.int64)
