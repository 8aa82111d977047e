import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semhash import DataError
from semhash.data import (FormatError, SyntheticSpec, generate_synthetic, parse_config, read_codes,
                          read_config, read_labels, read_model, read_table, read_taxonomy,
                          write_codes, write_config, write_labels, write_model, write_table,
                          write_taxonomy)
from semhash.encoder import Mlp, forward
from semhash.index import HashCodeSet
from semhash.semantics import wup_distance

SMALL = SyntheticSpec(n_super=2, leaves_per_super=2, points_per_leaf=10, feature_dim=4)


def test_table_roundtrip(tmp_path, rng):
    v = rng.standard_normal((7, 3)).astype(np.float32)
    write_table(tmp_path / "t.semb", v)
    assert np.array_equal(read_table(tmp_path / "t.semb").vectors, v)


def test_table_header_layout(tmp_path):
    write_table(tmp_path / "t.semb", np.ones((2, 3)))
    raw = (tmp_path / "t.semb").read_bytes()
    assert raw[:4] == b"SEMB"
    assert struct.unpack("<HII", raw[4:14]) == (1, 2, 3)
    assert len(raw) == 14 + 2 * 3 * 4


def test_csv_fallback_matches_binary(tmp_path, rng):
    v = rng.standard_normal((5, 4)).astype(np.float32)
    write_table(tmp_path / "t.semb", v)
    (tmp_path / "t.csv").write_text("\n".join(",".join(repr(float(x)) for x in row) for row in v))
    assert np.array_equal(read_table(tmp_path / "t.csv").vectors, read_table(tmp_path / "t.semb").vectors)


@pytest.mark.parametrize("payload", [b"", b"SEMB", b"XXXX\x01\x00", b"SEMB\x02\x00\x01\x00\x00\x00\x01\x00\x00\x00"])
def test_table_bad_files(tmp_path, payload):
    (tmp_path / "bad").write_bytes(payload)
    with pytest.raises(DataError):
        read_table(tmp_path / "bad")


def test_table_truncated_and_trailing(tmp_path):
    write_table(tmp_path / "t.semb", np.ones((3, 2)))
    raw = (tmp_path / "t.semb").read_bytes()
    (tmp_path / "a").write_bytes(raw[:-1])
    (tmp_path / "b").write_bytes(raw + b"\0")
    for name in "ab":
        with pytest.raises(FormatError):
            read_table(tmp_path / name)


def test_csv_ragged_rejected(tmp_path):
    (tmp_path / "r.csv").write_text("1,2\n3\n")
    with pytest.raises(FormatError):
        read_table(tmp_path / "r.csv")


def test_codes_roundtrip(tmp_path, rng):
    for dim in (1, 13, 64, 100):
        codes = HashCodeSet.from_bits(rng.random((9, dim)) < 0.5, ids=rng.permutation(1000)[:9])
        write_codes(tmp_path / "c.shsh", codes)
        back = read_codes(tmp_path / "c.shsh")
        assert back.code_dim == dim
        assert np.array_equal(back.ids, codes.ids)
        assert np.array_equal(back.bits(), codes.bits())


def test_codes_wrong_magic_and_padding(tmp_path):
    write_table(tmp_path / "t.semb", np.ones((1, 1)))
    with pytest.raises(FormatError, match="magic"):
        read_codes(tmp_path / "t.semb")
    codes = HashCodeSet.from_bits(np.zeros((1, 3), bool))
    write_codes(tmp_path / "c.shsh", codes)
    raw = bytearray((tmp_path / "c.shsh").read_bytes())
    raw[-1] |= 0x80
    (tmp_path / "c.shsh").write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="padding"):
        read_codes(tmp_path / "c.shsh")


def test_model_roundtrip(tmp_path):
    m = Mlp.init([5, 7, 3], 0)
    write_model(tmp_path / "m.smlp", m)
    back = read_model(tmp_path / "m.smlp")
    assert back.sizes == [5, 7, 3]
    for a, b in zip(m.params, back.params):
        assert np.array_equal(a.astype(np.float32), b)
    x = np.ones((2, 5))
    assert np.allclose(forward(m, x)[0], forward(back, x)[0], atol=1e-5)
    raw = (tmp_path / "m.smlp").read_bytes()
    (tmp_path / "t").write_bytes(raw[:-4])
    with pytest.raises(FormatError, match="truncated"):
        read_model(tmp_path / "t")


def test_labels_and_taxonomy_roundtrip(tmp_path, five_node):
    write_labels(tmp_path / "l.txt", ["a", "b", "a"])
    assert list(read_labels(tmp_path / "l.txt")) == ["a", "b", "a"]
    write_taxonomy(tmp_path / "t.tsv", five_node)
    assert read_taxonomy(tmp_path / "t.tsv").parent == five_node.parent
    (tmp_path / "e.txt").write_text("")
    with pytest.raises(FormatError):
        read_labels(tmp_path / "e.txt")


def test_config_parsing(tmp_path):
    text = "# comment\nepochs = 3\n\nlosses = sim,kl\n"
    assert parse_config(text, ["epochs", "losses"]) == {"epochs": "3", "losses": "sim,kl"}
    with pytest.raises(FormatError, match="unknown key"):
        parse_config("epoch = 3", ["epochs"])
    with pytest.raises(FormatError, match="duplicate"):
        parse_config("epochs = 3\nepochs = 4", ["epochs"])
    with pytest.raises(FormatError):
        parse_config("epochs 3", ["epochs"])
    write_config(tmp_path / "c.cfg", {"epochs": 3})
    assert read_config(tmp_path / "c.cfg", ["epochs"]) == {"epochs": "3"}


def test_synthetic_shape_and_determinism():
    a, b = generate_synthetic(SMALL), generate_synthetic(SMALL)
    assert a.features.shape == (40, 4)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    assert sorted(a.taxonomy.leaves()) == sorted(a.leaf_means)
    assert np.bincount(a.class_ids()).tolist() == [10] * 4
    c = generate_synthetic(SyntheticSpec(**{**SMALL.__dict__, "seed": 1}))
    assert not np.array_equal(a.features, c.features)


def test_default_dataset_size():
    d = generate_synthetic()
    assert d.features.shape[0] == 2400 and len(d.leaf_means) == 12


def test_synthetic_geometry_follows_hierarchy():
    d = generate_synthetic(SyntheticSpec(seed=3))
    t = d.taxonomy
    leaves = sorted(d.leaf_means)
    same, cross = [], []
    for i, u in enumerate(leaves):
        for v in leaves[i + 1:]:
            gap = np.linalg.norm(d.leaf_means[u] - d.leaf_means[v])
            (same if wup_distance(t, u, v) < 0.5 else cross).append(gap)
    assert max(same) < min(cross)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 80))
def test_codes_roundtrip_property(tmp_path_factory, n, dim):
    rng = np.random.default_rng(n * 100 + dim)
    codes = HashCodeSet.from_bits(rng.random((n, dim)) < 0.5)
    path = tmp_path_factory.mktemp("c") / "c.shsh"
    write_codes(path, codes)
    assert np.array_equal(read_codes(path).words, codes.words)


def test_synthetic_settings_validated():
    with pytest.raises(ValueError):
        SyntheticSpec(n_super=5, feature_dim=4)
