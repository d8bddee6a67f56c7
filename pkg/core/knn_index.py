# core/knn_index.py
"""
HNSW graph over unit-normalised vectors, cosine distance d = 1 - u.v.

Queries fall back to an exhaustive scan when k covers the whole index or
the graph walk returns fewer than k results.
"""
import heapq
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from utils.errors import RefdbError

ZERO_NORM = 1e-12


def unit_rows(matrix: np.ndarray) -> np.ndarray:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    return np.divide(matrix, norms, out=np.zeros_like(matrix), where=norms > ZERO_NORM)


def cosine_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na <= ZERO_NORM or nb <= ZERO_NORM:
        raise RefdbError("cosine distance is undefined for a zero vector")
    return float(1.0 - np.dot(a, b) / (na * nb))


class KnnIndex:
    """Hierarchical navigable small-world index; node i is row i of `vectors`."""

    def __init__(self, dim: int, m: int = 16, ef_construction: int = 200,
                 ef_search: int = 64, seed: int = 0):
        self.dim = dim
        self.m = m
        self.m0 = 2 * m
        self.ef_construction = ef_construction
        self.ef_search = ef_search
        self.seed = seed
        self.ml = 1.0 / math.log(max(m, 2))
        self.rng = np.random.default_rng(seed)

        self.vectors = np.zeros((0, dim))
        self.levels: List[int] = []
        # graph[layer][node] -> neighbour list
        self.graph: List[Dict[int, List[int]]] = []
        self.entry: Optional[int] = None

    def __len__(self):
        return len(self.levels)

    # ---------- build ----------
    @classmethod
    def build(cls, vectors: np.ndarray, m=16, ef_construction=200, ef_search=64, seed=0) -> "KnnIndex":
        vectors = unit_rows(vectors)
        index = cls(vectors.shape[1], m, ef_construction, ef_search, seed)
        index.vectors = vectors
        for i in range(vectors.shape[0]):
            index._insert(i)
        logging.info(f"[KnnIndex] Built HNSW over {len(index)} vectors "
                     f"(M={m}, ef_construction={ef_construction}, layers={len(index.graph)})")
        return index

    def _random_level(self) -> int:
        return int(-math.log(1.0 - self.rng.random()) * self.ml)

    def _dists(self, q: np.ndarray, nodes: Sequence[int]) -> np.ndarray:
        return 1.0 - self.vectors[list(nodes)] @ q

    def _search_layer(self, q, entry_points: Sequence[int], ef: int, layer: int) -> List[Tuple[float, int]]:
        visited = set(entry_points)
        d0 = self._dists(q, entry_points)
        candidates = [(float(d), n) for d, n in zip(d0, entry_points)]
        heapq.heapify(candidates)
        best = [(-float(d), n) for d, n in zip(d0, entry_points)]
        heapq.heapify(best)
        while len(best) > ef:
            heapq.heappop(best)
        adjacency = self.graph[layer]
        while candidates:
            d, n = heapq.heappop(candidates)
            if d > -best[0][0] and len(best) >= ef:
                break
            fresh = [nb for nb in adjacency.get(n, ()) if nb not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            for dn, nb in zip(self._dists(q, fresh), fresh):
                dn = float(dn)
                if len(best) < ef or dn < -best[0][0]:
                    heapq.heappush(candidates, (dn, nb))
                    heapq.heappush(best, (-dn, nb))
                    if len(best) > ef:
                        heapq.heappop(best)
        return sorted((-d, n) for d, n in best)

    def _select_neighbors(self, candidates: List[Tuple[float, int]], m: int) -> List[int]:
        """Diversity heuristic: keep e if it is closer to the query than to any kept neighbour."""
        if len(candidates) <= m:
            return [n for _, n in candidates]
        kept: List[int] = []
        pruned: List[int] = []
        for d, e in candidates:
            if len(kept) >= m:
                break
            if not kept or d < float(np.min(self._dists(self.vectors[e], kept))):
                kept.append(e)
            else:
                pruned.append(e)
        for e in pruned:
            if len(kept) >= m:
                break
            kept.append(e)
        return kept

    def _insert(self, node: int):
        level = self._random_level()
        self.levels.append(level)
        while len(self.graph) <= level:
            self.graph.append({})
        for layer in range(level + 1):
            self.graph[layer][node] = []

        if self.entry is None:
            self.entry = node
            return

        q = self.vectors[node]
        top = self.levels[self.entry]
        ep = [self.entry]
        for layer in range(top, level, -1):
            ep = [self._search_layer(q, ep, 1, layer)[0][1]]

        for layer in range(min(level, top), -1, -1):
            found = self._search_layer(q, ep, self.ef_construction, layer)
            cap = self.m0 if layer == 0 else self.m
            neighbours = self._select_neighbors(found, self.m)
            self.graph[layer][node] = neighbours
            for nb in neighbours:
                links = self.graph[layer][nb]
                links.append(node)
                if len(links) > cap:
                    v = self.vectors[nb]
                    scored = sorted(zip(self._dists(v, links).tolist(), links))
                    self.graph[layer][nb] = self._select_neighbors(scored, cap)
            ep = [n for _, n in found]

        if level > top:
            self.entry = node

    # ---------- query ----------
    def brute_force(self, q: np.ndarray, k: int) -> List[Tuple[int, float]]:
        d = 1.0 - self.vectors @ q
        order = np.lexsort((np.arange(d.shape[0]), d))[:k]
        return [(int(i), max(0.0, float(d[i]))) for i in order]

    def search(self, vector, k: int, ef: Optional[int] = None) -> List[Tuple[int, float]]:
        """k nearest rows as (row, distance), distance non-decreasing."""
        n = len(self)
        if n == 0:
            raise RefdbError("query on an empty index")
        if k < 1 or k > n:
            raise RefdbError(f"k={k} outside [1, {n}]")
        q = np.asarray(vector, dtype=np.float64)
        norm = np.linalg.norm(q)
        if norm <= ZERO_NORM:
            raise RefdbError("zero-vector query")
        q = q / norm
        if k >= n:
            return self.brute_force(q, k)

        ep = [self.entry]
        for layer in range(self.levels[self.entry], 0, -1):
            ep = [self._search_layer(q, ep, 1, layer)[0][1]]
        found = self._search_layer(q, ep, max(ef or self.ef_search, k), 0)
        if len(found) < k:
            return self.brute_force(q, k)
        return [(n_, max(0.0, d)) for d, n_ in found[:k]]

    # ---------- persistence ----------
    def to_arrays(self) -> Dict[str, np.ndarray]:
        adj_node, adj_layer, offsets, flat = [], [], [0], []
        for layer, adjacency in enumerate(self.graph):
            for node in sorted(adjacency):
                adj_node.append(node)
                adj_layer.append(layer)
                flat.extend(adjacency[node])
                offsets.append(len(flat))
        return {
            "params": np.array([self.dim, self.m, self.ef_construction, self.ef_search, self.seed,
                                -1 if self.entry is None else self.entry], dtype=np.int64),
            "vectors": self.vectors,
            "levels": np.array(self.levels, dtype=np.int64),
            "adj_node": np.array(adj_node, dtype=np.int64),
            "adj_layer": np.array(adj_layer, dtype=np.int64),
            "adj_offsets": np.array(offsets, dtype=np.int64),
            "adj_flat": np.array(flat, dtype=np.int64),
        }

    @classmethod
    def from_arrays(cls, arrays) -> "KnnIndex":
        dim, m, efc, efs, seed, entry = (int(x) for x in arrays["params"])
        index = cls(dim, m, efc, efs, seed)
        index.vectors = np.asarray(arrays["vectors"], dtype=np.float64)
        index.levels = [int(x) for x in arrays["levels"]]
        index.entry = None if entry < 0 else entry
        layers = int(arrays["adj_layer"].max()) + 1 if len(arrays["adj_layer"]) else 0
        index.graph = [{} for _ in range(layers)]
        offsets = arrays["adj_offsets"]
        flat = arrays["adj_flat"]
        for i, (node, layer) in enumerate(zip(arrays["adj_node"], arrays["adj_layer"])):
            index.graph[int(layer)][int(node)] = [int(x) for x in flat[offsets[i]:offsets[i + 1]]]
        return index

    def save(self, path):
        with open(path, "wb") as f:
            np.savez(f, **self.to_arrays())

    @classmethod
    def load(cls, path) -> "KnnIndex":
        with np.load(path) as arrays:
            return cls.from_arrays({k: arrays[k] for k in arrays.files})
