import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condgraph.dataset import DatasetRecord, generate_records, normalization_stats, uniform_proportions
from condgraph.evaluation import (
    PAIR,
    ImportanceRow,
    MetricReport,
    OracleGenerator,
    evaluate,
    format_table,
    importance_table,
    mae,
    mask_protocol,
    nonvalid_percentage,
    ordering_table,
    property_importance,
    score,
    smape,
    triplet_protocol,
    uniqueness_check,
)
from condgraph.graphs import from_edge_list, from_networkx
from condgraph.properties import MASK_SENTINEL, N_PROPERTIES, PROPERTY_INDEX, ConditionVector

RECORDS = list(generate_records(60, uniform_proportions(), seed=5, n_max=16))
STATS = normalization_stats(RECORDS)
finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_smape_examples():
    assert smape(5, 5) == 0
    assert smape(0, 0) == 0
    assert smape(0, 7) == 100
    assert smape(-3, 3) == 100
    assert smape(1, 3) == pytest.approx(50.0)
    assert np.allclose(smape([1, 0], [3, 0]), [50.0, 0.0])


@given(finite, finite)
def test_metric_symmetry_and_bounds(a, b):
    assert smape(a, b) == smape(b, a)
    assert mae(a, b) == mae(b, a)
    assert 0 <= smape(a, b) <= 100 and mae(a, b) >= 0
    assert (smape(a, b) == 0) == (a == b)


def test_mask_protocol_examples():
    c = ConditionVector.observed(RECORDS[0].properties)
    counts = set()
    rng = np.random.default_rng(0)
    for _ in range(400):
        m = mask_protocol(c, rng)
        hidden = N_PROPERTIES - m.n_observed
        counts.add(hidden)
        ser = m.serialize()
        assert all(ser[i] == MASK_SENTINEL for i in range(N_PROPERTIES) if not m.mask[i])
        assert all(ser[i] == c.values[i] for i in range(N_PROPERTIES) if m.mask[i])
    assert counts == set(range(1, 9))


def test_triplet_protocol_examples():
    c = ConditionVector.observed(RECORDS[0].properties)
    vec, flag = triplet_protocol(c, PROPERTY_INDEX["density"])
    assert vec.n_observed == 3 and not flag
    assert vec.mask[PAIR[0]] and vec.mask[PAIR[1]] and vec.mask[PROPERTY_INDEX["density"]]
    vec, flag = triplet_protocol(c, PROPERTY_INDEX["nodes"])
    assert vec.n_observed == 2 and flag


@pytest.mark.parametrize("protocol", ["within", "ood", "masked"])
def test_oracle_generator_scores_zero(protocol):
    rep = evaluate(OracleGenerator(RECORDS), RECORDS, STATS, protocol, seed=1)
    assert rep.all_mae == 0 and rep.all_smape == 0
    assert all(v in (0, None) for v in rep.mae + rep.smape)
    assert rep.samples == len(RECORDS) and rep.failures == 0


def test_oracle_triplet_scores_zero():
    rep = evaluate(OracleGenerator(RECORDS), RECORDS, STATS, "triplet", keep=PROPERTY_INDEX["density"])
    assert rep.all_smape == 0 and rep.counts == [len(RECORDS)] * N_PROPERTIES


def test_triplet_requires_keep_and_protocol_validated():
    with pytest.raises(ValueError):
        evaluate(OracleGenerator(RECORDS), RECORDS, STATS, "triplet")
    with pytest.raises(ValueError):
        evaluate(OracleGenerator(RECORDS), RECORDS, STATS, "zero-shot")


class SpyGenerator:
    """Records every condition it receives and answers with a fixed graph."""

    def __init__(self, graph):
        self.graph = graph
        self.seen = []

    def generate(self, conds, seed=0, start_index=0):
        self.seen.extend(conds)
        return [self.graph for _ in conds]


def test_masked_evaluation_counts_only_observed():
    spy = SpyGenerator(from_networkx(nx.cycle_graph(8)))
    rep = evaluate(spy, RECORDS, STATS, "masked", seed=3)
    assert sum(rep.counts) == sum(c.n_observed for c in spy.seen)
    for c in spy.seen:
        ser = c.serialize()
        # the generator only ever sees the sentinel where an entry is hidden
        assert all(ser[i] == MASK_SENTINEL for i in range(N_PROPERTIES) if not c.mask[i])
    per_sample = [c.n_observed for c in spy.seen]
    assert min(per_sample) >= 7 and max(per_sample) <= 14


def test_three_hidden_entries_give_twelve_contributions():
    c = ConditionVector.observed(RECORDS[0].properties).masked([1, 4, 9])
    rep = evaluate(OracleGenerator(RECORDS), RECORDS[:1], STATS, "masked", conditions=[c])
    assert sum(rep.counts) == 12 and rep.counts[4] == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_score_never_reads_masked_entries(seed):
    rng = np.random.default_rng(seed)
    truths = rng.normal(size=(6, N_PROPERTIES))
    preds = rng.normal(size=(6, N_PROPERTIES))
    masks = rng.random((6, N_PROPERTIES)) < 0.6
    masks[0, 0] = True
    base = score(truths, preds, masks, STATS, "masked")
    poisoned_t, poisoned_p = truths.copy(), preds.copy()
    poisoned_t[~masks] = np.nan
    poisoned_p[~masks] = np.inf
    with np.errstate(invalid="ignore"):
        again = score(poisoned_t, poisoned_p, masks, STATS, "masked")
    assert again.all_smape == pytest.approx(base.all_smape) and again.all_mae == pytest.approx(base.all_mae)
    assert again.smape == pytest.approx(base.smape) and again.mae == pytest.approx(base.mae)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 14), st.floats(0.1, 50), st.floats(-20, 20), st.booleans())
def test_all_row_invariant_to_affine_column_rescaling(col, a, b, flip):
    a = -a if flip else a
    rng = np.random.default_rng(col)
    truths = rng.normal(3, 2, size=(40, N_PROPERTIES))
    preds = truths + rng.normal(0, 0.5, size=truths.shape)
    masks = np.ones_like(truths, dtype=bool)
    recs = [DatasetRecord(i, "path", 2, [0, 1], list(t)) for i, t in enumerate(truths)]
    base = score(truths, preds, masks, normalization_stats(recs), "within")
    t2, p2 = truths.copy(), preds.copy()
    t2[:, col] = a * t2[:, col] + b
    p2[:, col] = a * p2[:, col] + b
    recs2 = [DatasetRecord(i, "path", 2, [0, 1], list(t)) for i, t in enumerate(t2)]
    moved = score(t2, p2, masks, normalization_stats(recs2), "within")
    assert moved.all_smape == pytest.approx(base.all_smape, rel=1e-9)
    assert moved.all_mae == pytest.approx(base.all_mae, rel=1e-9)


def test_failures_are_counted_and_excluded():
    class Flaky:
        def generate(self, conds, seed=0, start_index=0):
            return [None if i % 3 == 0 else RECORDS[i].graph for i, _ in enumerate(conds)]

    rep = evaluate(Flaky(), RECORDS, STATS, "within")
    assert rep.failures == 20 and rep.samples == 60
    assert rep.failure_rate == pytest.approx(1 / 3)
    assert rep.counts == [40] * N_PROPERTIES and rep.all_smape == 0


def test_report_table_and_json():
    rep = evaluate(OracleGenerator(RECORDS), RECORDS, STATS, "within", label="oracle")
    text = format_table([rep, rep])
    assert "All" in text and "# nodes" in text and "Density" in text and text.count("oracle") == 2
    d = rep.to_dict()
    assert d["protocol"] == "within" and len(d["properties"]) == 15 and d["failure_rate"] == 0
    assert MetricReport(**{k: v for k, v in d.items() if k not in ("failure_rate", "properties")}) == rep


def test_uniqueness_worst_and_best_cases():
    k3 = from_edge_list([(0, 1), (1, 2), (0, 2)], 3)
    rep = uniqueness_check(SpyGenerator(k3), RECORDS, codes=4, samples=6)
    assert rep.isomorphic_pairs == rep.total_pairs == 4 * 15 and rep.fraction == 1.0

    class Paths:
        def generate(self, conds, seed=0, start_index=0):
            return [from_networkx(nx.path_graph(start_index + i + 2)) for i in range(len(conds))]

    rep = uniqueness_check(Paths(), RECORDS, codes=5, samples=7)
    assert rep.isomorphic_pairs == 0 and rep.total_pairs == 5 * 21
    assert "isomorphic fraction" in rep.to_text()


def test_uniqueness_counts_failures_as_distinct():
    class Empty:
        def generate(self, conds, seed=0, start_index=0):
            return [None] * len(conds)

    rep = uniqueness_check(Empty(), RECORDS, codes=2, samples=3)
    assert rep.failures == 6 and rep.isomorphic_pairs == 0 and rep.total_pairs == 6


def test_uniqueness_is_deterministic():
    class Seeded:
        def generate(self, conds, seed=0, start_index=0):
            rng = np.random.default_rng([seed, start_index])
            return [from_networkx(nx.gnp_random_graph(5, 0.5, seed=int(rng.integers(1e6)))) for _ in conds]

    a = uniqueness_check(Seeded(), RECORDS, codes=3, samples=5, seed=2)
    b = uniqueness_check(Seeded(), RECORDS, codes=3, samples=5, seed=2)
    assert a == b


def test_nonvalid_and_ordering_table():
    assert nonvalid_percentage([None, RECORDS[0].graph, None, RECORDS[1].graph]) == 50.0
    assert nonvalid_percentage([]) == 0.0
    rep = evaluate(OracleGenerator(RECORDS), RECORDS, STATS, "within")
    text = ordering_table([("bfs_degree", rep, 0.0), ("degree", rep, 12.5)])
    assert "bfs_degree" in text and "12.50" in text


def test_property_importance_shape():
    rows = property_importance(OracleGenerator(RECORDS), RECORDS[:10], STATS, seeds=(0, 1))
    assert len(rows) == 13
    assert all(r.smape_mean == 0 and len(r.smape_runs) == 2 for r in rows)
    assert "nodes" not in {r.property for r in rows}
    text = importance_table(rows + [ImportanceRow("density", 3.0, [3.0])])
    assert "Density" in text
