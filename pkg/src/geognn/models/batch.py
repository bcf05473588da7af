from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class GraphBatch:
    """Disjoint union of ego subgraphs with the edge index sets every layer needs.

    ``nbr_*`` are distinct undirected neighbor pairs without self pairs;
    ``loop_*`` are the same pairs plus one self pair per node. Messages flow
    ``src -> dst``.
    """

    x: np.ndarray
    nbr_src: np.ndarray
    nbr_dst: np.ndarray
    loop_src: np.ndarray
    loop_dst: np.ndarray
    gcn_weight: np.ndarray
    seed_rows: np.ndarray
    labels: np.ndarray
    offsets: np.ndarray

    @property
    def num_nodes(self) -> int:
        return int(self.x.shape[0])

    @property
    def num_graphs(self) -> int:
        return int(self.seed_rows.size)

    @classmethod
    def from_subgraphs(cls, subgraphs) -> "GraphBatch":
        if not subgraphs:
            raise ValueError("cannot batch zero subgraphs")
        xs, srcs, dsts, seeds, labels, offsets = [], [], [], [], [], []
        off = 0
        for sg in subgraphs:
            pairs = sg.neighbor_pairs
            srcs.append(pairs[:, 0] + off)
            dsts.append(pairs[:, 1] + off)
            xs.append(sg.features)
            seeds.append(off)
            labels.append(sg.label)
            offsets.append(off)
            off += sg.num_nodes
        n = off
        nbr_src = np.concatenate(srcs).astype(np.int64)
        nbr_dst = np.concatenate(dsts).astype(np.int64)
        selfs = np.arange(n, dtype=np.int64)
        loop_src = np.concatenate([nbr_src, selfs])
        loop_dst = np.concatenate([nbr_dst, selfs])
        deg = np.bincount(loop_dst, minlength=n).astype(np.float64)
        gcn_weight = 1.0 / np.sqrt(deg[loop_src] * deg[loop_dst])
        return cls(np.concatenate(xs).astype(np.float64), nbr_src, nbr_dst, loop_src, loop_dst,
                   gcn_weight, np.asarray(seeds, dtype=np.int64), np.asarray(labels, dtype=np.int64),
                   np.asarray(offsets, dtype=np.int64))
