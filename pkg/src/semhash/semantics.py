"""Semantic target distances: Wu-Palmer over a label tree, or L1 over
precomputed caption/sentence embeddings."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import DataError

ROOT_PARENT = "-"


class TaxonomyError(DataError):
    pass


@dataclass(frozen=True)
class Taxonomy:
    parent: dict[str, str | None]
    root: str
    _depth: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        depth = {self.root: 1}

        def resolve(node):
            chain = []
            while node not in depth:
                chain.append(node)
                node = self.parent[node]
            d = depth[node]
            for n in reversed(chain):
                d += 1
                depth[n] = d

        for node in self.parent:
            resolve(node)
        object.__setattr__(self, "_depth", depth)

    @property
    def nodes(self) -> list[str]:
        return list(self.parent)

    def __contains__(self, label) -> bool:
        return label in self.parent

    def depth(self, label: str) -> int:
        try:
            return self._depth[label]
        except KeyError:
            raise KeyError(f"unknown label {label!r}") from None

    def ancestors(self, label: str) -> list[str]:
        """Path from ``label`` up to the root, both included."""
        self.depth(label)
        path = [label]
        while self.parent[path[-1]] is not None:
            path.append(self.parent[path[-1]])
        return path

    def lcs(self, u: str, v: str) -> str:
        seen = set(self.ancestors(u))
        for node in self.ancestors(v):
            if node in seen:
                return node
        raise AssertionError("tree without common root")

    def leaves(self) -> list[str]:
        inner = {p for p in self.parent.values() if p is not None}
        return [n for n in self.parent if n not in inner]

    def children(self, label: str) -> list[str]:
        return [n for n, p in self.parent.items() if p == label]


def load_taxonomy(source: str | Iterable[str]) -> Taxonomy:
    """Parse ``child<TAB>parent`` lines; the root has parent ``-``.

    Blank lines and lines starting with ``#`` are ignored.
    """
    lines = source.splitlines() if isinstance(source, str) else list(source)
    parent: dict[str, str | None] = {}
    lineno_of: dict[str, int] = {}
    roots = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise TaxonomyError(f"line {lineno}: expected 'child<TAB>parent', got {line!r}")
        child, par = parts[0].strip(), parts[1].strip()
        if child in parent:
            raise TaxonomyError(f"line {lineno}: node {child!r} declared twice")
        if par == ROOT_PARENT:
            roots.append((lineno, child))
            parent[child] = None
        else:
            parent[child] = par
        lineno_of[child] = lineno
    if not parent:
        raise TaxonomyError("empty taxonomy")
    if len(roots) > 1:
        raise TaxonomyError(f"line {roots[1][0]}: multiple roots ({roots[0][1]!r}, {roots[1][1]!r})")
    for child, par in parent.items():
        if par is not None and par not in parent:
            raise TaxonomyError(f"line {lineno_of[child]}: parent {par!r} of {child!r} is not declared")
    # every walk upward must reach the root
    for start in parent:
        node, steps = start, 0
        while parent[node] is not None:
            node = parent[node]
            steps += 1
            if steps > len(parent):
                raise TaxonomyError(f"line {lineno_of[start]}: cycle through {start!r}")
    if not roots:
        raise TaxonomyError("no root declared (a line with parent '-')")
    return Taxonomy(parent=parent, root=roots[0][1])


def dump_taxonomy(t: Taxonomy) -> str:
    out = []
    for node, par in t.parent.items():
        out.append(f"{node}\t{ROOT_PARENT if par is None else par}")
    return "\n".join(out) + "\n"


def wup_similarity(t: Taxonomy, u: str, v: str) -> float:
    """Wu-Palmer similarity ``2 depth(lcs) / (depth(u) + depth(v))``."""
    du, dv = t.depth(u), t.depth(v)
    if u == v:
        return 1.0
    return 2.0 * t.depth(t.lcs(u, v)) / (du + dv)


def wup_distance(t: Taxonomy, u: str, v: str) -> float:
    return 1.0 - wup_similarity(t, u, v)


def _check_distance_matrix(d: np.ndarray) -> np.ndarray:
    assert d.ndim == 2 and d.shape[0] == d.shape[1]
    assert np.all(np.isfinite(d)) and np.all(d >= 0)
    return d


def wup_matrix(t: Taxonomy, labels: Sequence[str]) -> np.ndarray:
    """Pairwise WUP similarity between ``labels`` (distinct labels only
    evaluated once)."""
    uniq, inv = np.unique(np.asarray(labels, dtype=object).astype(str), return_inverse=True)
    small = np.empty((len(uniq), len(uniq)))
    for i, u in enumerate(uniq):
        for j in range(i, len(uniq)):
            small[i, j] = small[j, i] = wup_similarity(t, u, uniq[j])
    return small[np.ix_(inv, inv)]


def label_distance_matrix(t: Taxonomy, labels: Sequence[str]) -> np.ndarray:
    d = 1.0 - wup_matrix(t, labels)
    np.fill_diagonal(d, 0.0)
    return _check_distance_matrix(d)


def binary_distance_matrix(labels: Sequence) -> np.ndarray:
    lab = np.asarray(labels, dtype=object)
    return (lab[:, None] != lab[None, :]).astype(float)


@dataclass
class EmbeddingTable:
    vectors: np.ndarray
    ids: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DataError(f"embedding table must be a non-empty 2-D matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DataError("embedding table contains non-finite values")
        self.vectors = v
        if self.ids is None:
            self.ids = np.arange(v.shape[0], dtype=np.int64)

    def __len__(self):
        return self.vectors.shape[0]


def manhattan_matrix(a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    b = a if b is None else b
    out = np.zeros((a.shape[0], b.shape[0]))
    for k in range(a.shape[1]):
        out += np.abs(a[:, k, None] - b[None, :, k])
    return out


def embedding_distance_matrix(e: EmbeddingTable, rows: Sequence[int]) -> np.ndarray:
    """Manhattan distances between the selected embedding rows."""
    sel = e.vectors[np.asarray(rows, dtype=np.int64)]
    return _check_distance_matrix(manhattan_matrix(sel))


class LabelDistances:
    """Batch distance provider backed by a taxonomy: ``provider(rows)``
    returns the WUP distance matrix of those records' labels."""

    def __init__(self, taxonomy: Taxonomy, labels: Sequence[str], binary: bool = False):
        self.labels = np.asarray(labels, dtype=str)
        uniq, self._codes = np.unique(self.labels, return_inverse=True)
        if binary:
            self._table = binary_distance_matrix(uniq)
        else:
            self._table = label_distance_matrix(taxonomy, list(uniq))

    def __call__(self, rows):
        c = self._codes[np.asarray(rows)]
        return self._table[np.ix_(c, c)]


class EmbeddingDistances:
    def __init__(self, table: EmbeddingTable):
        self.table = table

    def __call__(self, rows):
        return embedding_distance_matrix(self.table, rows)
