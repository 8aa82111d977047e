"""Exact Hamming-space search over packed binary codes.

Bit ``j`` of a code lives in word ``j // 64`` at position ``j % 64``.
:class:`MihIndex` implements Multi-Index Hashing: codes are cut into ``m``
disjoint substrings, each indexed in its own table, and a code within
distance ``r`` of the query must match some substring within ``r // m``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import DataError, SemhashError


@dataclass(frozen=True)
class HashCode:
    words: np.ndarray
    code_dim: int
    id: int = -1

    @classmethod
    def from_bits(cls, bits, id=-1) -> "HashCode":
        s = HashCodeSet.from_bits(np.atleast_2d(np.asarray(bits, dtype=bool)), [id])
        return s[0]

    @classmethod
    def from_string(cls, text: str, id=-1) -> "HashCode":
        """Parse ``"10110"``; character ``j`` is bit ``j``."""
        text = text.strip()
        if not text or set(text) - {"0", "1"}:
            raise ValueError(f"not a bit string: {text!r}")
        return cls.from_bits([c == "1" for c in text], id)

    def bits(self) -> np.ndarray:
        return _unpack(self.words[None, :], self.code_dim)[0]

    def __str__(self):
        return "".join("1" if b else "0" for b in self.bits())


def _pack(bits: np.ndarray) -> np.ndarray:
    n, dim = bits.shape
    n_words = max(1, math.ceil(dim / 64))
    padded = np.zeros((n, n_words * 64), dtype=bool)
    padded[:, :dim] = bits
    as_bytes = np.packbits(padded, axis=1, bitorder="little")
    return np.ascontiguousarray(as_bytes).view("<u8").astype(np.uint64).reshape(n, n_words)


def _unpack(words: np.ndarray, dim: int) -> np.ndarray:
    as_bytes = np.ascontiguousarray(words.astype("<u8")).view(np.uint8)
    return np.unpackbits(as_bytes, axis=1, bitorder="little")[:, :dim].astype(bool)


class HashCodeSet:
    """``N`` packed codes of ``code_dim`` bits with unique integer ids."""

    def __init__(self, words, code_dim: int, ids=None):
        words = np.asarray(words, dtype=np.uint64)
        if words.ndim != 2:
            raise DataError("packed codes must be a 2-D word array")
        if code_dim < 1 or words.shape[1] != max(1, math.ceil(code_dim / 64)):
            raise DataError(f"word count {words.shape[1]} does not fit code_dim {code_dim}")
        self.words = words
        self.code_dim = int(code_dim)
        self.ids = np.arange(len(words), dtype=np.int64) if ids is None else np.asarray(ids, dtype=np.int64)
        if self.ids.shape != (len(words),):
            raise DataError("one id per code required")
        if len(np.unique(self.ids)) != len(self.ids):
            raise DataError("code ids must be unique")

    @classmethod
    def from_bits(cls, bits, ids=None) -> "HashCodeSet":
        bits = np.asarray(bits, dtype=bool)
        if bits.ndim != 2:
            raise DataError("bits must be an N x code_dim matrix")
        return cls(_pack(bits), bits.shape[1], ids)

    def bits(self) -> np.ndarray:
        return _unpack(self.words, self.code_dim)

    def signs(self) -> np.ndarray:
        """Codes as +-1 floats."""
        return np.where(self.bits(), 1.0, -1.0)

    def __len__(self):
        return len(self.words)

    def __getitem__(self, i) -> HashCode:
        return HashCode(self.words[i].copy(), self.code_dim, int(self.ids[i]))

    def subset(self, rows) -> "HashCodeSet":
        rows = np.asarray(rows)
        return HashCodeSet(self.words[rows], self.code_dim, self.ids[rows])

    def position_of(self, id_) -> int:
        hit = np.flatnonzero(self.ids == id_)
        if not len(hit):
            raise KeyError(f"no code with id {id_}")
        return int(hit[0])

    def distances(self, q: HashCode) -> np.ndarray:
        """Hamming distance from ``q`` to every code."""
        if q.code_dim != self.code_dim:
            raise DataError(f"query has {q.code_dim} bits, codes have {self.code_dim}")
        return np.bitwise_count(self.words ^ q.words[None, :]).sum(axis=1).astype(np.int64)


def hamming(a: HashCode, b: HashCode) -> int:
    if a.code_dim != b.code_dim:
        raise DataError("codes differ in length")
    return int(np.bitwise_count(a.words ^ b.words).sum())


def linear_scan_knn(codes: HashCodeSet, q: HashCode, k: int):
    """Oracle k-NN: ids and distances of the ``k`` nearest codes, ties by id."""
    dist = codes.distances(q)
    order = np.lexsort((codes.ids, dist))[:max(int(k), 0)]
    return codes.ids[order], dist[order]


def linear_scan_radius(codes: HashCodeSet, q: HashCode, r: int):
    dist = codes.distances(q)
    rows = np.flatnonzero(dist <= r)
    order = rows[np.lexsort((codes.ids[rows], dist[rows]))]
    return codes.ids[order], dist[order]


@lru_cache(maxsize=None)
def _flip_masks(width: int, s: int) -> np.ndarray:
    """All ``width``-bit values with exactly ``s`` bits set."""
    out = [sum(1 << i for i in c) for c in itertools.combinations(range(width), s)]
    return np.array(out, dtype=np.uint64)


@dataclass
class _Table:
    keys: np.ndarray      # sorted unique substring values
    offsets: np.ndarray   # postings for keys[i] are postings[offsets[i]:offsets[i+1]]
    postings: np.ndarray
    direct: np.ndarray | None = None  # substring value -> slot in keys, -1 if absent


DIRECT_TABLE_BITS = 20


def default_m(code_dim: int, n: int) -> int:
    m = max(1, round(code_dim / math.log2(max(n, 2))))
    return min(max(m, math.ceil(code_dim / 64)), code_dim)


class MihIndex:
    """Multi-Index Hashing over a :class:`HashCodeSet`. Immutable after build."""

    def __init__(self, codes: HashCodeSet, m: int | None = None):
        dim = codes.code_dim
        if m is None:
            m = default_m(dim, len(codes))
        m = int(m)
        if m < 1 or m > dim:
            raise SemhashError(f"number of substrings m={m} must lie in [1, code_dim={dim}]")
        base, extra = divmod(dim, m)
        widths = [base + (1 if i < extra else 0) for i in range(m)]
        if max(widths) > 64:
            raise SemhashError(f"m={m} gives substrings wider than 64 bits; use m >= {math.ceil(dim / 64)}")
        self.codes = codes
        self.m = m
        self.widths = widths
        self.bounds = np.concatenate([[0], np.cumsum(widths)]).astype(int)
        subs = self._substrings(codes.bits())
        self.tables = []
        for i in range(m):
            order = np.argsort(subs[:, i], kind="stable")
            keys, starts = np.unique(subs[order, i], return_index=True)
            offsets = np.append(starts, len(order)).astype(np.int64)
            direct = None
            if widths[i] <= DIRECT_TABLE_BITS:
                direct = np.full(1 << widths[i], -1, dtype=np.int64)
                direct[keys.astype(np.int64)] = np.arange(len(keys))
            self.tables.append(_Table(keys, offsets, order.astype(np.int64), direct))

    def _substrings(self, bits: np.ndarray) -> np.ndarray:
        out = np.zeros((bits.shape[0], self.m), dtype=np.uint64)
        for i in range(self.m):
            lo, hi = self.bounds[i], self.bounds[i + 1]
            weights = np.left_shift(np.uint64(1), np.arange(hi - lo, dtype=np.uint64))
            out[:, i] = (bits[:, lo:hi].astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)
        return out

    def __len__(self):
        return len(self.codes)

    def _probe(self, i: int, q_sub: np.uint64, s: int) -> np.ndarray:
        """Rows whose substring ``i`` lies at Hamming distance exactly ``s``."""
        t = self.tables[i]
        width = self.widths[i]
        if s > width:
            return np.empty(0, dtype=np.int64)
        if t.direct is not None and math.comb(width, s) <= len(t.keys):
            slots = t.direct[(_flip_masks(width, s) ^ q_sub).astype(np.int64)]
            slots = slots[slots >= 0]
        elif math.comb(width, s) <= len(t.keys):
            probes = np.sort(_flip_masks(width, s) ^ q_sub)
            lo = np.searchsorted(t.keys, probes, side="left")
            hit = lo < len(t.keys)
            hit[hit] = t.keys[lo[hit]] == probes[hit]
            slots = lo[hit]
        else:
            slots = np.flatnonzero(np.bitwise_count(t.keys ^ q_sub) == s)
        starts = t.offsets[slots]
        lengths = t.offsets[slots + 1] - starts
        total = int(lengths.sum())
        if not total:
            return np.empty(0, dtype=np.int64)
        # flattened ranges starts[j] .. starts[j] + lengths[j]
        shift = np.repeat(starts - np.cumsum(lengths) + lengths, lengths)
        return t.postings[shift + np.arange(total)]

    def _search(self, q: HashCode, stop):
        """Grow the search radius until ``stop(found_rows, found_dist, r)``."""
        if q.code_dim != self.codes.code_dim:
            raise DataError(f"query has {q.code_dim} bits, codes have {self.codes.code_dim}")
        q_subs = self._substrings(q.bits()[None, :])[0]
        seen = np.zeros(len(self.codes), dtype=bool)
        rows = np.empty(0, dtype=np.int64)
        dist = np.empty(0, dtype=np.int64)
        s_done = -1
        for r in range(self.codes.code_dim + 1):
            s = r // self.m
            while s_done < s:
                s_done += 1
                new = [self._probe(i, q_subs[i], s_done) for i in range(self.m)]
                new = np.unique(np.concatenate(new)) if new else np.empty(0, dtype=np.int64)
                new = new[~seen[new]]
                seen[new] = True
                if len(new):
                    d = np.bitwise_count(self.codes.words[new] ^ q.words[None, :]).sum(axis=1).astype(np.int64)
                    rows = np.concatenate([rows, new])
                    dist = np.concatenate([dist, d])
            if stop(rows, dist, r):
                return rows, dist, r
        return rows, dist, self.codes.code_dim

    def query_radius(self, q: HashCode, r: int):
        """Ids (and distances) of all codes within Hamming distance ``r``,
        sorted by (distance, id)."""
        r = int(r)
        if r < 0:
            raise ValueError("radius must be nonnegative")
        r = min(r, self.codes.code_dim)
        rows, dist, _ = self._search(q, lambda rows, dist, rr: rr >= r)
        keep = dist <= r
        rows, dist = rows[keep], dist[keep]
        order = np.lexsort((self.codes.ids[rows], dist))
        return self.codes.ids[rows[order]], dist[order]

    def query_knn(self, q: HashCode, k: int):
        """The ``k`` nearest codes (clamped to N), ties broken by ascending id."""
        k = min(int(k), len(self.codes))
        if k <= 0:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        # every code within r has been seen once r is reached, so k hits at <= r are exact
        rows, dist, r = self._search(q, lambda rows, dist, rr: np.count_nonzero(dist <= rr) >= k)
        keep = dist <= r
        rows, dist = rows[keep], dist[keep]
        order = np.lexsort((self.codes.ids[rows], dist))[:k]
        return self.codes.ids[rows[order]], dist[order]


def build_mih(codes: HashCodeSet, m: int | None = None) -> MihIndex:
    return MihIndex(codes, m)
