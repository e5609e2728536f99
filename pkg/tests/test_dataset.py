import json

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condgraph.dataset import (
    FAMILIES,
    PAPER_COUNTS,
    DatasetManifest,
    DatasetRecord,
    allocate_counts,
    build_dataset,
    extended_barabasi_albert,
    forge,
    generate_records,
    normalization_stats,
    ood_split,
    ood_test_range,
    paper_proportions,
    read_records,
    resolve_proportions,
    sample_graph,
    split_dataset,
    uniform_proportions,
)
from condgraph.properties import compute_properties


def _rec(rid, family="path", n=4, props=None):
    return DatasetRecord(rid, family, n, [0, 1], list(props or [0.0] * 15))


def test_seventeen_families():
    assert len(FAMILIES) == 17 and len(set(FAMILIES)) == 17
    assert set(PAPER_COUNTS) == set(FAMILIES)


def test_paper_proportions_match_table():
    p = paper_proportions()
    assert sum(p.values()) == pytest.approx(1.0)
    # the published counts sum to 1,367,703, so shares are counts over that total
    total = sum(PAPER_COUNTS.values())
    assert total == 1_367_703
    assert p["barabasi_albert"] == pytest.approx(250_136 / total)
    assert p["barabasi_albert"] > p["watts_strogatz"] > p["stochastic_block_model"] > p["erdos_renyi"]
    assert p["ladder"] == pytest.approx(p["path"] / 2, rel=0.02)


def test_resolve_proportions_rejects_unknown():
    with pytest.raises(ValueError):
        resolve_proportions("zipf")
    with pytest.raises(ValueError):
        resolve_proportions({"tree": 1.0})


def test_allocation_examples():
    assert allocate_counts(1000, paper_proportions())["barabasi_albert"] == 183
    assert set(allocate_counts(17, uniform_proportions()).values()) == {1}
    assert sum(allocate_counts(0, paper_proportions()).values()) == 0


@given(st.integers(0, 50_000))
def test_allocation_sums_to_total(total):
    counts = allocate_counts(total, paper_proportions())
    assert sum(counts.values()) == total
    for f, c in counts.items():
        assert abs(c - total * paper_proportions()[f]) < 1


def test_allocation_rejects_bad_proportions():
    with pytest.raises(ValueError):
        allocate_counts(10, {"path": 0.5})


# --- single graphs ----------------------------------------------------------


def test_sample_examples():
    rng = np.random.default_rng(0)
    assert sample_graph("path", rng, (4, 4)) == sample_graph("path", rng, (4, 4))
    p4 = sample_graph("path", rng, (4, 4))
    assert p4.n == 4 and p4.m == 3 and p4.degrees.max() == 2
    star = sample_graph("star", rng, (5, 5))
    assert star.n == 5 and star.degrees.max() == 4
    k20 = sample_graph("erdos_renyi", rng, (20, 20), params={"p": 1.0})
    assert k20.m == 190


def test_unknown_and_infeasible_family():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        sample_graph("tree", rng, (5, 5))
    with pytest.raises(ValueError):
        sample_graph("wheel", rng, (2, 3))


def _signature(family, g):
    deg = g.degrees
    if family == "path":
        return g.m == g.n - 1 and deg.max() <= 2
    if family == "cycle":
        return g.m == g.n and np.all(deg == 2)
    if family == "star":
        return deg.max() == g.n - 1 and g.m == g.n - 1
    if family == "random_regular":
        return np.all(deg == deg[0])
    if family == "ladder":
        return g.n == 4 and np.all(deg == 2) or (np.sum(deg == 2) == 4 and np.sum(deg == 3) == g.n - 4)
    if family == "wheel":
        return deg.max() == g.n - 1 and g.m == 2 * (g.n - 1)
    return True


@pytest.mark.parametrize("family", FAMILIES)
def test_family_samples_are_clean(family):
    rng = np.random.default_rng([7, FAMILIES.index(family)])
    for _ in range(100):
        g = sample_graph(family, rng, (4, 24))
        assert 2 <= g.n <= 24
        assert g.degrees.min() > 0
        assert all(u < v for u, v in g.edges) and len(set(g.edges)) == g.m
        assert _signature(family, g), family


def test_extended_ba_valid_and_seeded():
    a = extended_barabasi_albert(30, 2, 0.2, 0.3, seed=5)
    b = extended_barabasi_albert(30, 2, 0.2, 0.3, seed=5)
    assert sorted(a.edges()) == sorted(b.edges())
    assert a.number_of_nodes() == 30 and nx.number_of_selfloops(a) == 0
    with pytest.raises(nx.NetworkXError):
        extended_barabasi_albert(10, 2, 0.6, 0.5, seed=0)


# --- corpus ---------------------------------------------------------------


def test_records_satisfy_invariants():
    for rec in generate_records(120, uniform_proportions(), seed=3, n_max=20):
        g = rec.graph
        assert 2 <= rec.n <= 20 and g.degrees.min() > 0
        assert rec.properties == list(compute_properties(g).values)


def test_deterministic_families_enumerate_sizes():
    props = {f: 0.0 for f in FAMILIES}
    props["cycle"] = 1.0
    sizes = [r.n for r in generate_records(23, props, seed=0, n_max=32)]
    assert sorted(sizes) == list(range(10, 33))


def test_workers_do_not_change_output():
    a = [r.to_json() for r in generate_records(80, paper_proportions(), 11, n_max=16)]
    b = [r.to_json() for r in generate_records(80, paper_proportions(), 11, n_max=16, workers=2)]
    assert a == b


def test_build_dataset_byte_identical(tmp_path):
    build_dataset(tmp_path / "a", 150, seed=4, n_max=20)
    build_dataset(tmp_path / "b", 150, seed=4, n_max=20)
    build_dataset(tmp_path / "c", 150, seed=5, n_max=20)
    a = (tmp_path / "a" / "dataset.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "dataset.jsonl").read_bytes()
    assert a != (tmp_path / "c" / "dataset.jsonl").read_bytes()
    assert not list((tmp_path / "a").glob("*.partial"))


def test_forge_empty_corpus(tmp_path):
    m = forge(tmp_path, 0, n_max=20)
    assert m.total == 0 and sum(m.counts.values()) == 0
    loaded = DatasetManifest.load(tmp_path / "manifest.json")
    assert loaded.split_counts == {"train": 0, "val": 0, "test": 0}
    assert read_records(tmp_path / "train.jsonl") == []


def test_forge_writes_manifest_and_splits(tmp_path):
    m = forge(tmp_path, 200, n_max=40, ood=True, config_hash="abc")
    files = {p.name for p in tmp_path.iterdir()}
    assert {"dataset.jsonl", "train.jsonl", "val.jsonl", "test.jsonl", "ood_train.jsonl", "ood_test.jsonl",
            "manifest.json"} <= files
    d = json.loads((tmp_path / "manifest.json").read_text())
    assert d["seed"] == 0 and d["n_max"] == 40 and d["config_hash"] == "abc"
    assert sum(d["split_ratios"]) == pytest.approx(1.0)
    assert "erdos_renyi" in d["param_ranges"]
    assert sum(d["split_counts"].values()) == 200
    assert d["ood"]["test_range"] == list(ood_test_range(40))
    assert len(m.normalization["mean"]) == 15


def test_record_json_roundtrip():
    rec = DatasetRecord(3, "cycle", 3, [0, 1, 1, 2, 0, 2], [1.5] * 15)
    assert DatasetRecord.from_json(rec.to_json()) == rec


# --- splits and statistics ----------------------------------------------------


def test_split_sizes_and_disjointness():
    recs = [_rec(i, FAMILIES[i % 2]) for i in range(1000)]
    train, val, test = split_dataset(recs)
    assert abs(len(train) - 800) <= 2 and abs(len(val) - 100) <= 2 and abs(len(test) - 100) <= 2
    ids = [r.id for r in train + val + test]
    assert sorted(ids) == list(range(1000))
    for part in (train, val, test):
        a = sum(r.family == FAMILIES[0] for r in part)
        assert abs(a - (len(part) - a)) <= 2


def test_split_all_train_and_rejection():
    recs = [_rec(i) for i in range(10)]
    train, val, test = split_dataset(recs, (1.0, 0.0, 0.0))
    assert len(train) == 10 and not val and not test
    with pytest.raises(ValueError):
        split_dataset(recs, (0.5, 0.2, 0.2))


def test_ood_boundaries():
    recs = [_rec(i, n=n) for i, n in enumerate([40, 41, 59, 60, 61])]
    train, test = ood_split(recs)
    assert [r.n for r in train] == [40, 61]
    assert [r.n for r in test] == [41, 59, 60]
    assert ood_test_range(100) == (41, 60)


def test_normalization_examples():
    rows = [[0.0] * 15, [2.0] * 15]
    rows[0][3] = rows[1][3] = 5.0
    stats = normalization_stats([_rec(0, props=rows[0]), _rec(1, props=rows[1])])
    assert stats.mean[0] == 1.0 and stats.std[0] == 1.0
    assert stats.degenerate[3] and stats.std[3] == 1.0
    assert np.allclose(stats.normalize(rows[1])[0], 1.0)


def test_normalization_density_mean_in_range():
    stats = normalization_stats(generate_records(60, paper_proportions(), 1, n_max=20))
    assert 0 <= stats.mean[2] <= 1
