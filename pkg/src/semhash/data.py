"""Synthetic hierarchical data and the on-disk formats.

Binary formats share a header: 4-byte magic, u16 format version (1),
then format-specific little-endian fields.

========  ==========================================================
SEMB      u32 N, u32 E, N*E f32 row-major            (feature tables)
SHSH      u32 N, u32 code_dim, N * (u64 id + ceil(code_dim/8) bytes)
SMLP      u32 n, n * u32 layer sizes, f32 params (W0, b0, W1, b1, ...)
========  ==========================================================
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import DataError
from .encoder import Mlp
from .index import HashCodeSet
from .semantics import EmbeddingTable, Taxonomy, dump_taxonomy, load_taxonomy

VERSION = 1
TABLE_MAGIC = b"SEMB"
CODES_MAGIC = b"SHSH"
MODEL_MAGIC = b"SMLP"


class FormatError(DataError):
    pass


@dataclass
class SyntheticSpec:
    n_super: int = 3
    leaves_per_super: int = 4
    points_per_leaf: int = 200
    feature_dim: int = 16
    noise: float = 1.0
    super_sep: float = 8.0
    leaf_sep: float = 3.7
    caption_noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.n_super, self.leaves_per_super, self.points_per_leaf, self.feature_dim) < 1:
            raise ValueError("counts and dimensions must be positive")
        if self.n_super > self.feature_dim:
            raise ValueError("need feature_dim >= n_super to place superclass centers")
        if self.noise < 0 or self.caption_noise < 0:
            raise ValueError("noise levels must be nonnegative")
        if not (self.super_sep > 0 and self.leaf_sep > 0):
            raise ValueError("separations must be positive")

    @classmethod
    def keys(cls):
        return [f.name for f in fields(cls)]


@dataclass
class SyntheticData:
    features: np.ndarray
    labels: np.ndarray
    taxonomy: Taxonomy
    captions: EmbeddingTable
    leaf_means: dict

    @property
    def ids(self):
        return np.arange(len(self.features), dtype=np.int64)

    def class_ids(self) -> np.ndarray:
        leaves = sorted(self.leaf_means)
        lookup = {lab: i for i, lab in enumerate(leaves)}
        return np.array([lookup[l] for l in self.labels], dtype=np.int64)


def generate_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> SyntheticData:
    """Gaussian clusters on a two-level tree.

    Superclass centers sit on scaled coordinate axes (a simplex), leaf
    centers at distance ``leaf_sep`` from their superclass center in a
    random direction, points at ``noise`` standard deviation around their
    leaf. Record order is shuffled; ids are row numbers.
    """
    rng = np.random.default_rng(spec.seed)
    lines = ["root\t-"]
    means = {}
    for s in range(spec.n_super):
        sup = f"s{s}"
        lines.append(f"{sup}\troot")
        center = np.zeros(spec.feature_dim)
        center[s] = spec.super_sep / math.sqrt(2.0)
        for l in range(spec.leaves_per_super):
            leaf = f"{sup}_l{l}"
            lines.append(f"{leaf}\t{sup}")
            direction = rng.standard_normal(spec.feature_dim)
            means[leaf] = center + spec.leaf_sep * direction / np.linalg.norm(direction)
    taxonomy = load_taxonomy("\n".join(lines))

    leaves = list(means)
    labels = np.repeat(np.array(leaves), spec.points_per_leaf)
    centers = np.stack([means[l] for l in labels])
    features = centers + spec.noise * rng.standard_normal(centers.shape)
    captions = centers + spec.caption_noise * rng.standard_normal(centers.shape)
    order = rng.permutation(len(labels))
    return SyntheticData(features[order], labels[order], taxonomy,
                         EmbeddingTable(captions[order]), means)


def _header(f, magic: bytes):
    head = f.read(6)
    if len(head) == 0:
        raise FormatError("empty file")
    if len(head) < 6 or head[:4] != magic:
        raise FormatError(f"bad magic: expected {magic!r}, found {head[:4]!r}")
    (version,) = struct.unpack("<H", head[4:])
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated payload while reading {what}: wanted {n} bytes, got {len(buf)}")
    return buf


def _expect_eof(f):
    if f.read(1):
        raise FormatError("trailing bytes after payload")


def write_table(path, vectors) -> None:
    v = np.asarray(vectors, dtype="<f4")
    if v.ndim != 2:
        raise DataError("table must be 2-D")
    with open(path, "wb") as f:
        f.write(TABLE_MAGIC + struct.pack("<HII", VERSION, *v.shape))
        f.write(np.ascontiguousarray(v).tobytes())


def read_table(path) -> EmbeddingTable:
    """Read a SEMB table, or a comma-separated text table as fallback."""
    raw = Path(path).read_bytes()
    if not raw:
        raise FormatError(f"{path}: empty file")
    if raw[:4] != TABLE_MAGIC:
        return _read_csv_table(raw, path)
    import io
    f = io.BytesIO(raw)
    _header(f, TABLE_MAGIC)
    n, e = struct.unpack("<II", _read_exact(f, 8, "table shape"))
    data = np.frombuffer(_read_exact(f, 4 * n * e, "table values"), dtype="<f4")
    _expect_eof(f)
    if n < 1 or e < 1:
        raise FormatError(f"{path}: table shape {n}x{e} is empty")
    return EmbeddingTable(data.reshape(n, e).astype(float))


def _read_csv_table(raw: bytes, path) -> EmbeddingTable:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError(f"{path}: neither a SEMB table nor UTF-8 CSV") from None
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric CSV field") from None
        if len(rows[-1]) != len(rows[0]):
            raise FormatError(f"{path}:{lineno}: expected {len(rows[0])} columns, got {len(rows[-1])}")
    if not rows:
        raise FormatError(f"{path}: no rows")
    try:
        return EmbeddingTable(np.array(rows))
    except DataError as exc:
        raise FormatError(f"{path}: {exc}") from None


def write_labels(path, labels) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for lab in labels:
            lab = str(lab)
            if not lab or "\n" in lab:
                raise DataError(f"invalid label {lab!r}")
            f.write(lab + "\n")


def read_labels(path) -> np.ndarray:
    text = Path(path).read_text(encoding="utf-8")
    labels = [l.strip() for l in text.splitlines()]
    if not labels:
        raise FormatError(f"{path}: no labels")
    for i, lab in enumerate(labels, 1):
        if not lab:
            raise FormatError(f"{path}:{i}: empty label")
    return np.array(labels)


def write_taxonomy(path, t: Taxonomy) -> None:
    Path(path).write_text(dump_taxonomy(t), encoding="utf-8")


def read_taxonomy(path) -> Taxonomy:
    return load_taxonomy(Path(path).read_text(encoding="utf-8"))


def write_codes(path, codes: HashCodeSet) -> None:
    nbytes = math.ceil(codes.code_dim / 8)
    packed = np.ascontiguousarray(codes.words.astype("<u8")).view(np.uint8)[:, :nbytes]
    rec = np.zeros(len(codes), dtype=[("id", "<u8"), ("bits", np.uint8, (nbytes,))])
    rec["id"] = codes.ids.astype(np.uint64)
    rec["bits"] = packed
    with open(path, "wb") as f:
        f.write(CODES_MAGIC + struct.pack("<HII", VERSION, len(codes), codes.code_dim))
        f.write(rec.tobytes())


def read_codes(path) -> HashCodeSet:
    with open(path, "rb") as f:
        _header(f, CODES_MAGIC)
        n, dim = struct.unpack("<II", _read_exact(f, 8, "code header"))
        if dim < 1:
            raise FormatError(f"{path}: code_dim must be positive")
        nbytes = math.ceil(dim / 8)
        dt = np.dtype([("id", "<u8"), ("bits", np.uint8, (nbytes,))])
        rec = np.frombuffer(_read_exact(f, n * dt.itemsize, "codes"), dtype=dt)
        _expect_eof(f)
    n_words = max(1, math.ceil(dim / 64))
    buf = np.zeros((n, n_words * 8), dtype=np.uint8)
    buf[:, :nbytes] = rec["bits"]
    if dim % 8:
        if np.any(buf[:, nbytes - 1] >> (dim % 8)):
            raise FormatError(f"{path}: padding bits beyond code_dim are set")
    words = buf.view("<u8").astype(np.uint64)
    return HashCodeSet(words, dim, rec["id"].astype(np.int64))


def write_model(path, m: Mlp) -> None:
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC + struct.pack("<HI", VERSION, len(m.sizes)))
        f.write(struct.pack(f"<{len(m.sizes)}I", *m.sizes))
        for p in m.params:
            f.write(np.ascontiguousarray(p, dtype="<f4").tobytes())


def read_model(path) -> Mlp:
    with open(path, "rb") as f:
        _header(f, MODEL_MAGIC)
        (n,) = struct.unpack("<I", _read_exact(f, 4, "layer count"))
        if n < 2:
            raise FormatError(f"{path}: a model needs at least two layer sizes, got {n}")
        sizes = list(struct.unpack(f"<{n}I", _read_exact(f, 4 * n, "layer sizes")))
        if min(sizes) < 1:
            raise FormatError(f"{path}: zero layer size")
        ws, bs = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            ws.append(np.frombuffer(_read_exact(f, 4 * a * b, "weights"), dtype="<f4").reshape(a, b).astype(float))
            bs.append(np.frombuffer(_read_exact(f, 4 * b, "biases"), dtype="<f4").astype(float))
        _expect_eof(f)
    return Mlp(sizes, ws, bs)


def parse_config(text: str, allowed) -> dict[str, str]:
    """``key = value`` lines with ``#`` comments; unknown keys are errors."""
    allowed = set(allowed)
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in allowed:
            raise FormatError(f"config line {lineno}: unknown key {key!r}")
        if key in out:
            raise FormatError(f"config line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config(path, allowed) -> dict[str, str]:
    return parse_config(Path(path).read_text(encoding="utf-8"), allowed)


def write_config(path, values: dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for k, v in values.items():
            if isinstance(v, (tuple, list)):
                v = ",".join(str(x) for x in v)
            f.write(f"{k} = {v}\n")
