"""Retrieval evaluation: AP/mAP@k, hierarchical precision and mAHP@k,
Kendall-Tau distance, flat hit@K and the binary-code entropy."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .index import HashCode, HashCodeSet, MihIndex, linear_scan_knn
from .losses import entropy_estimate
from .semantics import Taxonomy, manhattan_matrix, wup_matrix


def ap_at_k(ranking: Sequence, relevant, k: int) -> float:
    """Average precision over the first ``k`` results, normalised by
    ``min(k, |relevant|)``; 0 when nothing is relevant."""
    relevant = set(relevant)
    if not relevant or k <= 0:
        return 0.0
    hits, total = 0, 0.0
    for i, item in enumerate(list(ranking)[:k], 1):
        if item in relevant:
            hits += 1
            total += hits / i
    return total / min(k, len(relevant))


def hp_at_k(ranking: Sequence, sims: dict, k: int, ideal: Sequence[float] | None = None) -> float:
    """Achieved top-k similarity mass over the ideal top-k mass.

    ``sims`` maps every candidate id (query excluded) to its similarity to
    the query; ``ideal`` optionally supplies the candidate similarities
    already sorted in descending order.
    """
    got = sum(sims[r] for r in list(ranking)[:k])
    if ideal is None:
        ideal = sorted(sims.values(), reverse=True)
    best = float(np.sum(np.asarray(ideal, dtype=float)[:k]))
    if best <= 0.0:
        return 1.0
    return got / best


def kendall_tau_distance(r1: Sequence, r2: Sequence) -> float:
    """Fraction of item pairs ordered differently by the two rankings."""
    r1, r2 = list(r1), list(r2)
    if set(r1) != set(r2) or len(set(r1)) != len(r1):
        raise ValueError("rankings must be permutations of the same distinct ids")
    n = len(r1)
    if n < 2:
        return 0.0
    pos = {item: i for i, item in enumerate(r2)}
    p = np.array([pos[item] for item in r1])
    discordant = np.count_nonzero(np.triu(p[:, None] > p[None, :], 1))
    return discordant / (n * (n - 1) / 2)


@dataclass
class RetrievalRun:
    """Ranked results for a set of queries drawn from the database.

    ``rankings[i]`` lists database ids retrieved for ``queries[i]`` (the
    query itself never appears). Exactly one of ``labels`` or
    ``embeddings`` (aligned with ``ids``) supplies the semantics.
    """
    queries: np.ndarray
    rankings: list[np.ndarray]
    ids: np.ndarray
    labels: np.ndarray | None = None
    taxonomy: Taxonomy | None = None
    embeddings: np.ndarray | None = None
    _row_of: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.queries = np.asarray(self.queries, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self._row_of = {int(i): r for r, i in enumerate(self.ids)}
        if len(self._row_of) != len(self.ids):
            raise ValueError("database ids must be unique")
        if len(self.rankings) != len(self.queries):
            raise ValueError("one ranking per query required")
        for q, rk in zip(self.queries, self.rankings):
            if len(set(rk.tolist())) != len(rk):
                raise ValueError(f"ranking of query {q} contains duplicates")
            if int(q) in set(rk.tolist()):
                raise ValueError(f"query {q} retrieved itself")
        if self.labels is None and self.embeddings is None:
            raise ValueError("a run needs labels or embeddings")
        if self.labels is not None:
            self.labels = np.asarray(self.labels).astype(str)
        self._sim_table = None
        if self.labels is not None:
            uniq, self._label_codes = np.unique(self.labels, return_inverse=True)
            if self.taxonomy is not None:
                self._sim_table = wup_matrix(self.taxonomy, list(uniq))
            else:
                self._sim_table = np.eye(len(uniq))

    def rows(self, ids) -> np.ndarray:
        return np.array([self._row_of[int(i)] for i in ids], dtype=np.int64)

    def similarities(self, query_id) -> np.ndarray:
        """Similarity of every database row to the query."""
        q = self._row_of[int(query_id)]
        if self._sim_table is not None and self.embeddings is None:
            return self._sim_table[self._label_codes[q], self._label_codes]
        d = manhattan_matrix(self.embeddings[q:q + 1], self.embeddings)[0]
        return 1.0 / (1.0 + d)

    def hp_curve_of(self, i: int, k: int) -> np.ndarray:
        """HP@1..k for query ``i``."""
        q = self.queries[i]
        sims = self.similarities(q)
        qrow = self._row_of[int(q)]
        others = np.delete(sims, qrow)
        k = min(k, len(others))
        if k == 0:
            return np.ones(0)
        ideal = np.cumsum(-np.sort(-others)[:k])
        got = np.zeros(k)
        rk = self.rows(self.rankings[i][:k])
        got[:len(rk)] = sims[rk]
        got = np.cumsum(got)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(ideal > 0, got / np.where(ideal > 0, ideal, 1.0), 1.0)


def map_at_k(run: RetrievalRun, k: int = 250) -> float:
    if run.labels is None:
        raise ValueError("mAP needs class labels")
    out = []
    for q, rk in zip(run.queries, run.rankings):
        qrow = run._row_of[int(q)]
        same = np.flatnonzero(run.labels == run.labels[qrow])
        relevant = set(run.ids[same].tolist()) - {int(q)}
        out.append(ap_at_k(rk.tolist(), relevant, k))
    return float(np.mean(out)) if out else 0.0


def hp_curve(run: RetrievalRun, k: int = 250) -> np.ndarray:
    """Mean HP@j over queries, j = 1..k."""
    curves = [run.hp_curve_of(i, k) for i in range(len(run.queries))]
    k = min(len(c) for c in curves)
    return np.mean([c[:k] for c in curves], axis=0)


def mahp_at_k(run: RetrievalRun, k: int = 250) -> float:
    """Mean over queries of the average of HP@1..k."""
    vals = [run.hp_curve_of(i, k).mean() for i in range(len(run.queries))]
    return float(np.mean(vals)) if vals else 0.0


def mean_kendall_tau(run: RetrievalRun, k: int = 250) -> float:
    """Kendall-Tau distance between each retrieved top-k list and the same
    items re-ranked by L1 embedding distance to the query (ties by id)."""
    if run.embeddings is None:
        raise ValueError("Kendall-Tau needs reference embeddings")
    vals = []
    for q, rk in zip(run.queries, run.rankings):
        rk = np.asarray(rk[:k])
        if len(rk) < 2:
            continue
        qrow = run._row_of[int(q)]
        d = manhattan_matrix(run.embeddings[qrow:qrow + 1], run.embeddings[run.rows(rk)])[0]
        ref = rk[np.lexsort((rk, d))]
        vals.append(kendall_tau_distance(rk, ref))
    return float(np.mean(vals)) if vals else 0.0


def flat_hit_at_k(run: RetrievalRun, K: int) -> float:
    """Percentage of queries with the true label among the top-K results."""
    if run.labels is None:
        raise ValueError("flat hit@K needs class labels")
    hits = 0
    for q, rk in zip(run.queries, run.rankings):
        lab = run.labels[run._row_of[int(q)]]
        top = run.rows(rk[:K])
        hits += bool(np.any(run.labels[top] == lab))
    return 100.0 * hits / max(len(run.queries), 1)


def binary_entropy(codes: HashCodeSet, sample_size: int | None = None, seed=0) -> float:
    """Nearest-neighbor entropy estimate of a seeded code subsample cast to +-1."""
    x = codes.signs()
    if sample_size is not None and sample_size < len(x):
        rows = np.sort(np.random.default_rng(seed).choice(len(x), size=sample_size, replace=False))
        x = x[rows]
    return entropy_estimate(x)


def _knn_excluding(search, ids, q_id, k):
    got, dist = search(k + 1)
    keep = got != q_id
    return got[keep][:k], dist[keep][:k]


def build_run(database, k: int, queries=None, labels=None, taxonomy=None, embeddings=None,
              method: str = "mih", m: int | None = None) -> RetrievalRun:
    """Retrieve the top-k neighbors of each query item from ``database``.

    ``database`` is a :class:`HashCodeSet` (Hamming search, through MIH or a
    linear scan) or a float matrix (L1 search, ids = row numbers). Queries
    are database ids; every query is excluded from its own results.
    """
    if isinstance(database, HashCodeSet):
        ids = database.ids
        queries = ids if queries is None else np.asarray(queries, dtype=np.int64)
        if method == "mih":
            idx = MihIndex(database, m)
            search = idx.query_knn
        elif method == "linear":
            search = lambda q, kk: linear_scan_knn(database, q, kk)
        else:
            raise ValueError(f"unknown search method {method!r}")
        pos = {int(i): r for r, i in enumerate(ids)}
        rankings = []
        for qid in queries:
            q = database[pos[int(qid)]]
            got, _ = _knn_excluding(lambda kk: search(q, kk), ids, int(qid), k)
            rankings.append(got)
    else:
        z = np.asarray(database, dtype=float)
        ids = np.arange(len(z), dtype=np.int64)
        queries = ids if queries is None else np.asarray(queries, dtype=np.int64)
        rankings = []
        for s in range(0, len(queries), 256):
            qs = queries[s:s + 256]
            d = manhattan_matrix(z[qs], z)
            d[np.arange(len(qs)), qs] = np.inf
            for row in d:
                order = np.lexsort((ids, row))[:min(k, len(ids) - 1)]
                rankings.append(ids[order])
    return RetrievalRun(queries, rankings, ids, labels=labels, taxonomy=taxonomy, embeddings=embeddings)


@dataclass
class MetricReport:
    """Rows of (name, k, value); ``k`` is empty for cutoff-free metrics."""
    rows: list[tuple[str, int | None, float]] = field(default_factory=list)

    def add(self, name: str, k: int | None, value: float):
        self.rows.append((name, k, float(value)))

    def get(self, name: str, k: int | None = None) -> float:
        for n, kk, v in self.rows:
            if n == name and (k is None or kk == k):
                return v
        raise KeyError(name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "k", "value"])
        for n, k, v in self.rows:
            w.writerow([n, "" if k is None else k, repr(v)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MetricReport":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["name", "k", "value"]:
            raise ValueError("metric CSV must start with the header 'name,k,value'")
        rep = cls()
        for r in rows[1:]:
            if not r:
                continue
            if len(r) != 3:
                raise ValueError(f"bad metric row {r}")
            rep.add(r[0], int(r[1]) if r[1] else None, float(r[2]))
        return rep

    def pretty(self) -> str:
        width = max([len(n) for n, _, _ in self.rows] + [6])
        lines = [f"{'metric':<{width}}  {'k':>5}  value"]
        for n, k, v in self.rows:
            lines.append(f"{n:<{width}}  {'' if k is None else k:>5}  {v:.6f}")
        return "\n".join(lines)
