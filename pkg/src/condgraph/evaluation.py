"""Property-matching metrics, masking protocols, uniqueness and ablation reports."""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .dataset import DatasetRecord, NormalizationStats
from .graphs import Graph, are_isomorphic
from .properties import N_PROPERTIES, PROPERTY_INDEX, PROPERTY_LABELS, PROPERTY_NAMES, ConditionVector, compute_properties

PROTOCOLS = ("within", "ood", "masked", "triplet", "unconditional")
MAX_MASKED = 8
PAIR = (PROPERTY_INDEX["nodes"], PROPERTY_INDEX["edges"])


def smape(pred, truth):
    """Symmetric percentage error in [0, 100]; 0 when both values are 0. Vectorized."""
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(truth, dtype=np.float64)
    den = np.abs(a) + np.abs(b)
    out = np.divide(100.0 * np.abs(a - b), den, out=np.zeros(np.broadcast(a, b).shape), where=den > 0)
    out = np.minimum(out, 100.0)  # rounding can land a hair above the bound
    return out if out.ndim else float(out)


def mae(pred, truth):
    out = np.abs(np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64))
    return out if out.ndim else float(out)


class Generator(Protocol):
    def generate(self, conds: Sequence[ConditionVector], seed: int = 0, start_index: int = 0) -> list: ...


# --- protocols ----------------------------------------------------------------


def mask_protocol(c: ConditionVector, rng: np.random.Generator, max_masked: int = MAX_MASKED) -> ConditionVector:
    """Hide i distinct entries, i uniform in 1..max_masked."""
    i = int(rng.integers(1, max_masked + 1))
    return c.masked(rng.choice(N_PROPERTIES, size=i, replace=False))


def triplet_protocol(c: ConditionVector, keep: int) -> tuple[ConditionVector, bool]:
    """Keep nodes, edges and ``keep``; the flag is True when ``keep`` is already one of the pair."""
    observed = set(PAIR) | {int(keep)}
    vec = c.masked([i for i in range(N_PROPERTIES) if i not in observed])
    return vec, int(keep) in PAIR


def fully_masked(c: ConditionVector) -> ConditionVector:
    return c.masked(range(N_PROPERTIES))


# --- reports ------------------------------------------------------------------


@dataclass
class MetricReport:
    protocol: str
    mae: list[float | None]
    smape: list[float | None]
    counts: list[int]
    all_mae: float | None
    all_smape: float | None
    samples: int
    failures: int
    label: str = ""

    @property
    def failure_rate(self) -> float:
        return self.failures / self.samples if self.samples else 0.0

    def row(self, name: str) -> tuple[float | None, float | None]:
        i = PROPERTY_INDEX[name]
        return self.mae[i], self.smape[i]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["failure_rate"] = self.failure_rate
        d["properties"] = list(PROPERTY_NAMES)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_text(self) -> str:
        return format_table([self])


def _fmt(v: float | None, width: int) -> str:
    return f"{v:>{width}.2f}" if v is not None else f"{'-':>{width}}"


def format_table(reports: Sequence[MetricReport], names: Sequence[str] | None = None) -> str:
    """Property rows plus an All row; one MAE/SMAPE column pair per report."""
    names = names or [r.label or r.protocol for r in reports]
    head = f"{'Property':<36}" + "".join(f"{n[:19]:>20}{'':>1}" for n in names)
    sub = f"{'':<36}" + "".join(f"{'MAE':>10}{'SMAPE':>10} " for _ in names)
    lines = [head, sub, "-" * len(sub)]
    for i, label in enumerate(PROPERTY_LABELS):
        lines.append(f"{label:<36}" + "".join(_fmt(r.mae[i], 10) + _fmt(r.smape[i], 10) + " " for r in reports))
    lines.append("-" * len(sub))
    lines.append(f"{'All':<36}" + "".join(_fmt(r.all_mae, 10) + _fmt(r.all_smape, 10) + " " for r in reports))
    lines.append(
        f"{'samples / failures':<36}" + "".join(f"{r.samples:>10}{r.failures:>10} " for r in reports)
    )
    return "\n".join(lines) + "\n"


def score(
    truths: np.ndarray,
    preds: np.ndarray,
    masks: np.ndarray,
    stats: NormalizationStats,
    protocol: str,
    failures: int = 0,
    label: str = "",
) -> MetricReport:
    """Reduce per-sample property vectors to a report, reading only entries where ``masks`` is True.

    Rows of ``preds`` for failed generations must already be removed.
    """
    truths = np.asarray(truths, dtype=np.float64).reshape(-1, N_PROPERTIES)
    preds = np.asarray(preds, dtype=np.float64).reshape(-1, N_PROPERTIES)
    masks = np.asarray(masks, dtype=bool).reshape(-1, N_PROPERTIES)
    counts = masks.sum(axis=0)
    e_mae = np.where(masks, mae(preds, truths), 0.0)
    e_smape = np.where(masks, smape(preds, truths), 0.0)
    per_mae = [float(e_mae[:, i].sum() / counts[i]) if counts[i] else None for i in range(N_PROPERTIES)]
    per_smape = [float(e_smape[:, i].sum() / counts[i]) if counts[i] else None for i in range(N_PROPERTIES)]
    all_mae = all_smape = None
    total = int(counts.sum())
    if total:
        zt, zp = stats.normalize(truths), stats.normalize(preds)
        all_mae = float(np.where(masks, mae(zp, zt), 0.0).sum() / total)
        all_smape = float(np.where(masks, smape(zp, zt), 0.0).sum() / total)
    return MetricReport(
        protocol, per_mae, per_smape, counts.astype(int).tolist(), all_mae, all_smape,
        len(truths) + failures, failures, label,
    )


def evaluate(
    generator: Generator,
    records: Sequence[DatasetRecord],
    stats: NormalizationStats,
    protocol: str = "within",
    seed: int = 0,
    keep: int | None = None,
    label: str = "",
    conditions: Sequence[ConditionVector] | None = None,
) -> MetricReport:
    """Generate one graph per record from its (possibly masked) properties and score it.

    ``within``/``ood`` condition on all 15 values; ``masked`` hides 1..8 entries per
    record and scores only the observed ones; ``triplet`` keeps nodes, edges and
    ``keep`` but scores all 15; ``unconditional`` hides everything and scores all 15.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    rng = np.random.default_rng([seed, 0xE7A1])
    truth_vecs = [ConditionVector.observed(r.properties) for r in records]
    if conditions is None:
        if protocol == "masked":
            conditions = [mask_protocol(c, rng) for c in truth_vecs]
        elif protocol == "triplet":
            if keep is None:
                raise ValueError("triplet protocol needs a property to keep")
            conditions = [triplet_protocol(c, keep)[0] for c in truth_vecs]
        elif protocol == "unconditional":
            conditions = [fully_masked(c) for c in truth_vecs]
        else:
            conditions = truth_vecs
    results = generator.generate(list(conditions), seed=seed)
    truths, preds, masks, failures = [], [], [], 0
    for truth, cond, res in zip(truth_vecs, conditions, results):
        graph = res.graph if hasattr(res, "graph") else res
        if graph is None:
            failures += 1
            continue
        truths.append(truth.values)
        preds.append(compute_properties(graph).values)
        masks.append(cond.mask if protocol == "masked" else (True,) * N_PROPERTIES)
    return score(truths, preds, masks, stats, protocol, failures, label)


class OracleGenerator:
    """Returns the graph whose properties were requested; for testing the harness."""

    def __init__(self, records: Sequence[DatasetRecord]):
        self.lookup = {tuple(r.properties): r.graph for r in records}

    def generate(self, conds, seed=0, start_index=0):
        return [self.lookup[tuple(c.values)] if c.n_observed else None for c in conds]


# --- uniqueness -------------------------------------------------------------


@dataclass
class UniquenessReport:
    codes: int
    samples_per_code: int
    isomorphic_pairs: int
    total_pairs: int
    failures: int = 0
    per_code: list[int] = field(default_factory=list)

    @property
    def fraction(self) -> float:
        return self.isomorphic_pairs / self.total_pairs if self.total_pairs else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fraction"] = self.fraction
        return d

    def to_text(self) -> str:
        return (
            f"condition codes      {self.codes}\n"
            f"samples per code     {self.samples_per_code}\n"
            f"failed generations   {self.failures}\n"
            f"isomorphic pairs     {self.isomorphic_pairs} / {self.total_pairs}\n"
            f"isomorphic fraction  {self.fraction:.6f}\n"
        )


def uniqueness_check(
    generator: Generator,
    records: Sequence[DatasetRecord],
    codes: int = 50,
    samples: int = 100,
    seed: int = 0,
) -> UniquenessReport:
    """Pairwise isomorphism counts among ``samples`` graphs for each of ``codes`` conditions.

    Failed generations count as distinct from everything; total pairs stay
    ``codes * C(samples, 2)``.
    """
    rng = np.random.default_rng([seed, 0x1505])
    chosen = rng.choice(len(records), size=min(codes, len(records)), replace=False)
    iso_total, fails, per_code = 0, 0, []
    for k, ri in enumerate(sorted(chosen.tolist())):
        cond = ConditionVector.observed(records[ri].properties)
        res = generator.generate([cond] * samples, seed=seed, start_index=k * samples)
        graphs: list[Graph | None] = [r.graph if hasattr(r, "graph") else r for r in res]
        fails += sum(g is None for g in graphs)
        iso = sum(
            1 for a, b in itertools.combinations(graphs, 2) if a is not None and b is not None and are_isomorphic(a, b)
        )
        per_code.append(iso)
        iso_total += iso
    n_codes = len(per_code)
    return UniquenessReport(n_codes, samples, iso_total, n_codes * samples * (samples - 1) // 2, fails, per_code)


# --- ablations ----------------------------------------------------------------


def ordering_table(rows: Sequence[tuple[str, MetricReport, float]]) -> str:
    """rows: (ordering, report, non-valid percentage)."""
    lines = [f"{'Ordering':<14}{'All MAE':>10}{'All SMAPE':>12}{'Non-valid %':>14}", "-" * 50]
    for name, rep, nonvalid in rows:
        lines.append(f"{name:<14}{_fmt(rep.all_mae, 10)}{_fmt(rep.all_smape, 12)}{nonvalid:>14.2f}")
    return "\n".join(lines) + "\n"


def nonvalid_percentage(results: Sequence) -> float:
    if not results:
        return 0.0
    bad = sum((r.graph if hasattr(r, "graph") else r) is None for r in results)
    return 100.0 * bad / len(results)


@dataclass
class ImportanceRow:
    property: str
    smape_mean: float
    smape_runs: list[float]
    degenerate: bool = False


def property_importance(
    generator: Generator,
    records: Sequence[DatasetRecord],
    stats: NormalizationStats,
    seeds: Sequence[int] = (0, 1, 2),
    on_row: Callable[[ImportanceRow], None] | None = None,
) -> list[ImportanceRow]:
    """All-row SMAPE when conditioning on nodes, edges and one further property."""
    rows = []
    for keep in range(N_PROPERTIES):
        if keep in PAIR:
            continue
        runs = []
        for s in seeds:
            rep = evaluate(generator, records, stats, "triplet", seed=s, keep=keep)
            runs.append(rep.all_smape if rep.all_smape is not None else float("nan"))
        row = ImportanceRow(PROPERTY_NAMES[keep], float(np.mean(runs)), runs)
        rows.append(row)
        if on_row:
            on_row(row)
    return rows


def importance_table(rows: Sequence[ImportanceRow]) -> str:
    lines = [f"{'Third property':<36}{'SMAPE (mean)':>14}  runs", "-" * 70]
    for r in sorted(rows, key=lambda r: r.smape_mean):
        label = PROPERTY_LABELS[PROPERTY_INDEX[r.property]]
        lines.append(f"{label:<36}{r.smape_mean:>14.2f}  " + ", ".join(f"{v:.2f}" for v in r.smape_runs))
    return "\n".join(lines) + "\n"
