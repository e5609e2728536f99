"""Synthetic labelled corpus: seventeen generator families, stratified and
out-of-distribution splits, and z-score statistics."""

from __future__ import annotations

import json
import logging
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import networkx as nx
import numpy as np

from .graphs import Graph, drop_isolated, from_edge_list, from_networkx
from .properties import N_PROPERTIES, PROPERTY_NAMES, compute_properties

log = logging.getLogger(__name__)

FAMILIES = (
    "path",
    "cycle",
    "wheel",
    "star",
    "ladder",
    "lollipop",
    "erdos_renyi",
    "newman_watts_strogatz",
    "watts_strogatz",
    "random_regular",
    "barabasi_albert",
    "dual_barabasi_albert",
    "extended_barabasi_albert",
    "holme_kim",
    "random_lobster",
    "stochastic_block_model",
    "random_partition",
)
DETERMINISTIC_FAMILIES = ("path", "cycle", "wheel", "star", "ladder")

# sample counts per family in the reference 1M corpus
PAPER_COUNTS = {
    "barabasi_albert": 250_136,
    "watts_strogatz": 204_280,
    "stochastic_block_model": 125_468,
    "erdos_renyi": 122_568,
    "dual_barabasi_albert": 122_568,
    "extended_barabasi_albert": 122_568,
    "newman_watts_strogatz": 122_567,
    "holme_kim": 122_567,
    "random_lobster": 81_713,
    "random_partition": 81_713,
    "random_regular": 7_000,
    "lollipop": 4_145,
    "path": 91,
    "cycle": 91,
    "star": 91,
    "wheel": 91,
    "ladder": 46,
}

# smallest node count each family can produce
FAMILY_MIN_NODES = {
    "path": 2,
    "cycle": 3,
    "wheel": 4,
    "star": 2,
    "ladder": 4,
    "lollipop": 4,
    "newman_watts_strogatz": 5,
    "watts_strogatz": 5,
    "random_regular": 3,
    "barabasi_albert": 2,
    "dual_barabasi_albert": 3,
    "extended_barabasi_albert": 3,
    "holme_kim": 2,
    "stochastic_block_model": 4,
    "random_partition": 4,
}

PARAM_RANGES = {
    "erdos_renyi": {"p": [0.05, 0.9]},
    "watts_strogatz": {"k": [2, 4, 6], "p": [0.05, 0.5]},
    "newman_watts_strogatz": {"k": [2, 4, 6], "p": [0.05, 0.5]},
    "barabasi_albert": {"m": [1, 5]},
    "dual_barabasi_albert": {"m1": [1, 5], "m2": [1, 5], "p": [0.0, 1.0]},
    "extended_barabasi_albert": {"m": [1, 5], "p": [0.0, 0.5], "q": [0.0, 0.5], "p+q": "< 1"},
    "holme_kim": {"m": [1, 5], "p": [0.1, 0.9]},
    "random_regular": {"d": [2, 8], "n*d": "even"},
    "random_lobster": {"backbone": "n/2", "p1": [0.2, 0.7], "p2": [0.2, 0.7]},
    "stochastic_block_model": {"blocks": [2, 5], "p_in": [0.3, 0.9], "p_out": [0.01, 0.2]},
    "random_partition": {"blocks": [2, 5], "p_in": [0.3, 0.9], "p_out": [0.01, 0.2]},
    "lollipop": {"clique": [3, "n-1"], "path": "n - clique"},
}

ISOLATED_RETRIES = 20


def paper_proportions() -> dict[str, float]:
    total = sum(PAPER_COUNTS.values())
    return {f: PAPER_COUNTS[f] / total for f in FAMILIES}


def uniform_proportions() -> dict[str, float]:
    return {f: 1.0 / len(FAMILIES) for f in FAMILIES}


def resolve_proportions(choice: str | Mapping[str, float]) -> dict[str, float]:
    if isinstance(choice, str) and choice.lstrip().startswith("{"):
        choice = json.loads(choice)
    if isinstance(choice, str):
        if choice == "paper":
            return paper_proportions()
        if choice == "uniform":
            return uniform_proportions()
        raise ValueError(f"unknown proportion preset {choice!r}")
    unknown = set(choice) - set(FAMILIES)
    if unknown:
        raise ValueError(f"unknown families: {sorted(unknown)}")
    return {f: float(choice.get(f, 0.0)) for f in FAMILIES}


# --- single-graph sampling ------------------------------------------------


def _block_sizes(rng: np.random.Generator, n: int) -> list[int]:
    k = int(rng.integers(2, min(5, n // 2) + 1))
    cuts = np.sort(rng.choice(np.arange(1, n), size=k - 1, replace=False))
    return np.diff(np.concatenate([[0], cuts, [n]])).astype(int).tolist()


def _random_subset(seq, m, rng):
    targets: set = set()
    while len(targets) < m:
        targets.add(rng.choice(seq))
    return targets


def _choice_excluding(rng: random.Random, seq: list, banned: set):
    for _ in range(32):
        x = seq[rng.randrange(len(seq))]
        if x not in banned:
            return x
    # raises IndexError when everything is banned, like the reference generator
    return rng.choice([v for v in seq if v not in banned])


def extended_barabasi_albert(n: int, m: int, p: float, q: float, seed: int):
    """Extended Barabasi-Albert growth (Albert & Barabasi 2000).

    Follows ``networkx.extended_barabasi_albert_graph`` step for step, but
    draws preferential-attachment targets by rejection instead of rebuilding
    the filtered attachment list for every new edge.
    """
    if m < 1 or m >= n:
        raise nx.NetworkXError(f"extended Barabasi-Albert needs 1 <= m < n, got m={m}, n={n}")
    if p + q >= 1:
        raise nx.NetworkXError(f"extended Barabasi-Albert needs p + q < 1, got p={p}, q={q}")
    rnd = random.Random(seed)
    g = nx.empty_graph(m)
    pref = list(range(m))
    new_node = m
    while new_node < n:
        a_prob = rnd.random()
        clique_degree = len(g) - 1
        clique_size = (len(g) * clique_degree) / 2
        if a_prob < p and g.size() <= clique_size - m:
            eligible = [v for v, deg in g.degree() if deg < clique_degree]
            for _ in range(m):
                src = rnd.choice(eligible)
                banned = set(g[src])
                banned.add(src)
                dst = _choice_excluding(rnd, pref, banned)
                g.add_edge(src, dst)
                pref.append(src)
                pref.append(dst)
                if g.degree(src) == clique_degree:
                    eligible.remove(src)
                if g.degree(dst) == clique_degree and dst in eligible:
                    eligible.remove(dst)
        elif p <= a_prob < p + q and m <= g.size() < clique_size:
            eligible = [v for v, deg in g.degree() if 0 < deg < clique_degree]
            for _ in range(m):
                node = rnd.choice(eligible)
                nbrs = list(g[node])
                src = rnd.choice(nbrs)
                banned = set(nbrs)
                banned.add(node)
                dst = _choice_excluding(rnd, pref, banned)
                g.remove_edge(node, src)
                g.add_edge(node, dst)
                pref.remove(src)
                pref.append(dst)
                if g.degree(src) == 0 and src in eligible:
                    eligible.remove(src)
                if dst in eligible:
                    if g.degree(dst) == clique_degree:
                        eligible.remove(dst)
                elif g.degree(dst) == 1:
                    eligible.append(dst)
        else:
            targets = _random_subset(pref, m, rnd)
            g.add_edges_from(zip([new_node] * m, targets))
            pref.extend(targets)
            pref.extend([new_node] * (m + 1))
            new_node += 1
    return g


def _draw(family: str, n: int, rng: np.random.Generator, params: Mapping | None = None):
    seed = int(rng.integers(2**31 - 1))
    params = params or {}

    def u(lo, hi, key="p"):
        return float(params[key]) if key in params else rng.uniform(lo, hi)

    if family == "path":
        return nx.path_graph(n)
    if family == "cycle":
        return nx.cycle_graph(n)
    if family == "wheel":
        return nx.wheel_graph(n)
    if family == "star":
        return nx.star_graph(n - 1)
    if family == "ladder":
        return nx.ladder_graph(n // 2)
    if family == "lollipop":
        clique = int(rng.integers(3, n))
        return nx.lollipop_graph(clique, n - clique)
    if family == "erdos_renyi":
        return nx.gnp_random_graph(n, u(0.05, 0.9), seed=seed)
    if family in ("watts_strogatz", "newman_watts_strogatz"):
        ks = [k for k in (2, 4, 6) if k < n]
        k = int(params["k"]) if "k" in params else ks[int(rng.integers(len(ks)))]
        gen = nx.watts_strogatz_graph if family == "watts_strogatz" else nx.newman_watts_strogatz_graph
        return gen(n, k, u(0.05, 0.5), seed=seed)
    if family == "random_regular":
        ds = [d for d in range(2, min(8, n - 1) + 1) if (n * d) % 2 == 0]
        d = int(params["d"]) if "d" in params else ds[int(rng.integers(len(ds)))]
        return nx.random_regular_graph(d, n, seed=seed)
    m_hi = min(5, n - 1)
    if family == "barabasi_albert":
        return nx.barabasi_albert_graph(n, int(rng.integers(1, m_hi + 1)), seed=seed)
    if family == "dual_barabasi_albert":
        m1, m2 = (int(x) for x in rng.integers(1, m_hi + 1, size=2))
        m1, m2 = int(params.get("m1", m1)), int(params.get("m2", m2))
        return nx.dual_barabasi_albert_graph(n, m1, m2, u(0.0, 1.0), seed=seed)
    if family == "extended_barabasi_albert":
        p = u(0.0, 0.5)
        q = u(0.0, min(0.5, 0.99 - p), "q")
        return extended_barabasi_albert(n, int(rng.integers(1, m_hi + 1)), p, q, seed=seed)
    if family == "holme_kim":
        return nx.powerlaw_cluster_graph(n, int(rng.integers(1, m_hi + 1)), u(0.1, 0.9), seed=seed)
    if family == "random_lobster":
        return nx.random_lobster(max(1, n // 2), u(0.2, 0.7, "p1"), u(0.2, 0.7, "p2"), seed=seed)
    if family == "stochastic_block_model":
        sizes = _block_sizes(rng, n)
        k = len(sizes)
        probs = rng.uniform(0.01, 0.2, size=(k, k))
        probs = np.triu(probs) + np.triu(probs, 1).T
        np.fill_diagonal(probs, rng.uniform(0.3, 0.9, size=k))
        return nx.stochastic_block_model(sizes, probs.tolist(), seed=seed)
    if family == "random_partition":
        return nx.random_partition_graph(_block_sizes(rng, n), u(0.3, 0.9, "p_in"), u(0.01, 0.2, "p_out"), seed=seed)
    raise ValueError(f"unknown family {family!r}")


def _feasible_range(family: str, n_range: Sequence[int]) -> tuple[int, int]:
    lo, hi = int(n_range[0]), int(n_range[1])
    lo = max(lo, FAMILY_MIN_NODES.get(family, 2))
    if family == "ladder":
        lo += lo % 2
        hi -= hi % 2
    if lo > hi:
        raise ValueError(f"family {family} cannot produce graphs with n in {list(n_range)}")
    return lo, hi


def sample_graph(
    family: str,
    rng: np.random.Generator,
    n_range: Sequence[int],
    n: int | None = None,
    params: Mapping | None = None,
) -> Graph:
    """Draw one graph of ``family`` with node count in ``n_range``.

    Outcomes with isolated nodes are redrawn up to 20 times; after that the
    isolated nodes are dropped. ``n`` pins the node count (used to enumerate
    the deterministic families); ``params`` pins generator parameters such
    as ``p`` or ``k`` instead of drawing them.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    lo, hi = _feasible_range(family, n_range)
    last = None
    for attempt in range(4 * ISOLATED_RETRIES):
        size = n if n is not None else int(rng.integers(lo, hi + 1))
        try:
            raw = _draw(family, size, rng, params)
            g = from_networkx(raw)
        except (nx.NetworkXError, ValueError, IndexError):
            continue
        if g.m == 0:
            continue
        if family == "random_lobster" and not (lo <= g.n <= hi):
            continue
        if g.degrees.min() > 0:
            return g
        last = g
        if attempt + 1 >= ISOLATED_RETRIES:
            return drop_isolated(last)
    if last is not None:
        return drop_isolated(last)
    raise RuntimeError(f"could not sample a valid {family} graph in range {list(n_range)}")


# --- records and corpus ---------------------------------------------------


@dataclass
class DatasetRecord:
    id: int
    family: str
    n: int
    edges: list[int]  # flat u0, v0, u1, v1, ...
    properties: list[float]

    @property
    def graph(self) -> Graph:
        e = self.edges
        return from_edge_list(zip(e[0::2], e[1::2]), self.n)

    def to_json(self) -> str:
        return json.dumps(
            {"id": self.id, "family": self.family, "n": self.n, "edges": self.edges, "properties": self.properties},
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "DatasetRecord":
        d = json.loads(line)
        return cls(int(d["id"]), d["family"], int(d["n"]), [int(x) for x in d["edges"]], [float(x) for x in d["properties"]])

    @classmethod
    def from_graph(cls, rid: int, family: str, g: Graph) -> "DatasetRecord":
        flat = [x for e in g.edges for x in e]
        return cls(rid, family, g.n, flat, list(compute_properties(g).values))


@dataclass
class DatasetManifest:
    seed: int
    n_min: int
    n_max: int
    total: int
    proportions: dict[str, float]
    counts: dict[str, int]
    param_ranges: dict = field(default_factory=lambda: PARAM_RANGES)
    split_ratios: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    split_counts: dict[str, int] = field(default_factory=dict)
    ood: dict | None = None
    property_names: list[str] = field(default_factory=lambda: list(PROPERTY_NAMES))
    normalization: dict | None = None
    config_hash: str | None = None
    format_version: int = 1

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls(**json.loads(Path(path).read_text()))


def allocate_counts(total: int, proportions: Mapping[str, float]) -> dict[str, int]:
    """Largest-remainder rounding of ``total * proportion`` per family."""
    s = sum(proportions.values())
    if total > 0 and not abs(s - 1.0) < 1e-6:
        raise ValueError(f"family proportions must sum to 1, got {s}")
    raw = {f: total * proportions.get(f, 0.0) for f in FAMILIES}
    counts = {f: int(np.floor(v)) for f, v in raw.items()}
    short = total - sum(counts.values())
    by_remainder = sorted(FAMILIES, key=lambda f: (-(raw[f] - counts[f]), FAMILIES.index(f)))
    for f in by_remainder[:short]:
        counts[f] += 1
    return counts


def family_schedule(total: int, proportions: Mapping[str, float], seed: int) -> list[tuple[str, int]]:
    """Family and within-family index for every record id."""
    counts = allocate_counts(total, proportions)
    families = [f for f in FAMILIES for _ in range(counts[f])]
    perm = np.random.default_rng([seed, 0x5EED]).permutation(total)
    families = [families[i] for i in perm]
    seen: dict[str, int] = {}
    out = []
    for f in families:
        out.append((f, seen.get(f, 0)))
        seen[f] = seen.get(f, 0) + 1
    return out


def _record_task(args) -> DatasetRecord:
    rid, family, k, seed, n_min, n_max = args
    rng = np.random.default_rng([seed, rid])
    n = None
    if family in DETERMINISTIC_FAMILIES:
        lo, hi = _feasible_range(family, (n_min, n_max))
        step = 2 if family == "ladder" else 1
        n = lo + step * (k % ((hi - lo) // step + 1))
    g = sample_graph(family, rng, (n_min, n_max), n=n)
    return DatasetRecord.from_graph(rid, family, g)


def generate_records(
    total: int,
    proportions: Mapping[str, float],
    seed: int,
    n_max: int,
    n_min: int = 10,
    workers: int = 1,
) -> Iterator[DatasetRecord]:
    schedule = family_schedule(total, proportions, seed)
    tasks = ((rid, f, k, seed, n_min, n_max) for rid, (f, k) in enumerate(schedule))
    if workers <= 1:
        yield from map(_record_task, tasks)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            yield from pool.map(_record_task, tasks, chunksize=64)


def write_records(records: Iterable[DatasetRecord], path: str | Path) -> int:
    """Stream records to ``path`` via a ``.partial`` file renamed on success."""
    path = Path(path)
    partial = path.with_name(path.name + ".partial")
    count = 0
    with open(partial, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
            count += 1
    os.replace(partial, path)
    return count


def read_records(path: str | Path) -> list[DatasetRecord]:
    with open(path, encoding="utf-8") as fh:
        return [DatasetRecord.from_json(line) for line in fh if line.strip()]


def build_dataset(
    out_dir: str | Path,
    total: int,
    proportions: str | Mapping[str, float] = "paper",
    seed: int = 0,
    n_max: int = 100,
    n_min: int = 10,
    workers: int = 1,
) -> tuple[list[DatasetRecord], DatasetManifest]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    props = resolve_proportions(proportions)
    counts = allocate_counts(total, props)
    records: list[DatasetRecord] = []

    def tee():
        for rec in generate_records(total, props, seed, n_max, n_min, workers):
            records.append(rec)
            yield rec

    write_records(tee(), out_dir / "dataset.jsonl")
    manifest = DatasetManifest(seed=seed, n_min=n_min, n_max=n_max, total=total, proportions=props, counts=counts)
    return records, manifest


def split_dataset(
    records: Sequence[DatasetRecord], ratios: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0
) -> tuple[list[DatasetRecord], list[DatasetRecord], list[DatasetRecord]]:
    """Family-stratified train/validation/test split."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {list(ratios)}")
    by_family: dict[str, list[DatasetRecord]] = {}
    for rec in records:
        by_family.setdefault(rec.family, []).append(rec)
    rng = np.random.default_rng([seed, 0x5B1])
    parts: tuple[list, list, list] = ([], [], [])
    for family in sorted(by_family):
        group = sorted(by_family[family], key=lambda r: r.id)
        group = [group[i] for i in rng.permutation(len(group))]
        n_train = int(round(ratios[0] * len(group)))
        n_val = min(int(round(ratios[1] * len(group))), len(group) - n_train)
        parts[0].extend(group[:n_train])
        parts[1].extend(group[n_train : n_train + n_val])
        parts[2].extend(group[n_train + n_val :])
    return tuple(sorted(p, key=lambda r: r.id) for p in parts)  # type: ignore[return-value]


OOD_TEST_RANGE = (41, 60)


def ood_test_range(n_max: int) -> tuple[int, int]:
    """Held-out size band: 41..60 at n_max 100, scaled proportionally otherwise."""
    return int(round(0.4 * n_max)) + 1, int(round(0.6 * n_max))


def ood_split(
    records: Iterable[DatasetRecord], test_range: tuple[int, int] = OOD_TEST_RANGE
) -> tuple[list[DatasetRecord], list[DatasetRecord]]:
    """Train on sizes outside ``test_range``, test on sizes inside it (41..60 by default)."""
    train, test = [], []
    lo, hi = test_range
    for rec in records:
        (test if lo <= rec.n <= hi else train).append(rec)
    return train, test


@dataclass
class NormalizationStats:
    mean: list[float]
    std: list[float]
    degenerate: list[bool]

    def normalize(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - np.asarray(self.mean)) / np.asarray(self.std)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "NormalizationStats":
        return cls(list(d["mean"]), list(d["std"]), list(d["degenerate"]))


def normalization_stats(records: Iterable[DatasetRecord]) -> NormalizationStats:
    """Per-property mean and population std; zero-variance columns get std 1."""
    rows = np.array([r.properties for r in records], dtype=np.float64).reshape(-1, N_PROPERTIES)
    if len(rows) == 0:
        return NormalizationStats([0.0] * N_PROPERTIES, [1.0] * N_PROPERTIES, [True] * N_PROPERTIES)
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)
    degenerate = std < 1e-12
    std = np.where(degenerate, 1.0, std)
    return NormalizationStats(mean.tolist(), std.tolist(), degenerate.tolist())


def forge(
    out_dir: str | Path,
    total: int,
    proportions: str | Mapping[str, float] = "paper",
    seed: int = 0,
    n_max: int = 100,
    n_min: int = 10,
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    ood: bool = False,
    workers: int = 1,
    config_hash: str | None = None,
) -> DatasetManifest:
    """Build the corpus, write split files and the manifest into ``out_dir``."""
    out_dir = Path(out_dir)
    records, manifest = build_dataset(out_dir, total, proportions, seed, n_max, n_min, workers)
    train, val, test = split_dataset(records, ratios, seed)
    for name, part in (("train", train), ("val", val), ("test", test)):
        write_records(part, out_dir / f"{name}.jsonl")
    manifest.split_ratios = [float(r) for r in ratios]
    manifest.split_counts = {"train": len(train), "val": len(val), "test": len(test)}
    manifest.normalization = normalization_stats(train).to_dict()
    if ood:
        lo, hi = ood_test_range(n_max)
        ood_train, ood_test = ood_split(records, (lo, hi))
        write_records(ood_train, out_dir / "ood_train.jsonl")
        write_records(ood_test, out_dir / "ood_test.jsonl")
        manifest.ood = {
            "test_range": [lo, hi],
            "train": len(ood_train),
            "test": len(ood_test),
            "normalization": normalization_stats(ood_train).to_dict(),
        }
    manifest.config_hash = config_hash
    (out_dir / "manifest.json").write_text(manifest.to_json())
    log.info("forged %d records into %s", total, out_dir)
    return manifest
