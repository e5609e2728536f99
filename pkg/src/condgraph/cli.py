"""Command-line entry point: ``condgraph <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from . import __version__
from .config import RunConfig, load_config
from .dataset import DatasetManifest, NormalizationStats, forge, read_records, split_dataset
from .evaluation import (
    PROTOCOLS,
    MetricReport,
    evaluate,
    format_table,
    importance_table,
    ordering_table,
    property_importance,
    uniqueness_check,
)
from .graphs import ORDERINGS, GraphError, to_dot, write_edge_list
from .nn import DivergenceError
from .pipeline import (
    ConditionalVAEGenerator,
    MissingEncoderError,
    NGGGenerator,
    check_hash,
    fit_ldm,
    fit_vae,
    load_cvae,
    load_ldm,
    load_ngg,
    load_vae,
    save_ldm,
    save_vae,
)
from .properties import N_PROPERTIES, PROPERTY_INDEX, PROPERTY_LABELS, ConditionVector, compute_properties

log = logging.getLogger("condgraph")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- data access ----------------------------------------------------------------


def _manifest(cfg: RunConfig) -> DatasetManifest:
    path = cfg.data_dir / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no dataset at {cfg.data_dir}; run `condgraph forge` first")
    man = DatasetManifest.load(path)
    check_hash("dataset", man.config_hash, cfg.hash("dataset"))
    return man


def load_split(cfg: RunConfig, split: str = "within"):
    """(train, val, test, normalization stats) for the within or ood split."""
    man = _manifest(cfg)
    d = cfg.data_dir
    if split == "ood":
        if not man.ood:
            raise FileNotFoundError("dataset has no out-of-distribution split; forge with --ood")
        pool = read_records(d / "ood_train.jsonl")
        train, val, _ = split_dataset(pool, (0.9, 0.1, 0.0), cfg.seed)
        return train, val, read_records(d / "ood_test.jsonl"), NormalizationStats.from_dict(man.ood["normalization"])
    parts = [read_records(d / f"{name}.jsonl") for name in ("train", "val", "test")]
    return (*parts, NormalizationStats.from_dict(man.normalization))


def _variant(split: str, masked: bool) -> str:
    return ("_ood" if split == "ood" else "") + ("_masked" if masked else "")


def _write_log(path: Path, history, cfg: RunConfig) -> None:
    smoothed, acc = [], None
    for v in history.train:
        acc = v if acc is None else 0.8 * acc + 0.2 * v
        smoothed.append(acc)
    payload = {**history.to_dict(), "train_smoothed": smoothed, "config_hash": cfg.hash()}
    path.write_text(json.dumps(payload, indent=2) + "\n")


def _epoch_logger(stage: str):
    def report(epoch, train, val):
        extra = f" val {val:.4f}" if val is not None else ""
        log.info("%s epoch %d train %.4f%s", stage, epoch, train, extra)

    return report


# --- subcommands ------------------------------------------------------------------


def cmd_forge(cfg: RunConfig, args) -> int:
    t0 = time.time()
    out = cfg.data_dir
    man = forge(
        out, cfg.total, cfg.proportions, cfg.seed, cfg.n_max, cfg.n_min, cfg.split, cfg.ood, cfg.workers, cfg.hash("dataset")
    )
    print(f"wrote {man.total} graphs to {out} in {time.time() - t0:.1f}s (config {cfg.hash('dataset')})")
    width = max(len(f) for f in man.counts)
    for fam, count in sorted(man.counts.items(), key=lambda kv: -kv[1]):
        share = 100.0 * count / man.total if man.total else 0.0
        print(f"  {fam:<{width}} {count:>8} {share:6.2f}%")
    print("splits: " + ", ".join(f"{k} {v}" for k, v in man.split_counts.items()))
    if man.ood:
        print(f"ood: test sizes {man.ood['test_range']}, train {man.ood['train']}, test {man.ood['test']}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, args) -> int:
    stage = args.stage
    variant = _variant(args.split, args.masked)
    if stage == "ldm":
        vae_path = cfg.checkpoint("vae", _variant(args.split, False))
        if not vae_path.exists():
            raise MissingEncoderError(f"missing encoder: train the VAE first (expected {vae_path})")
    train, val, _, stats = load_split(cfg, args.split)
    if not train:
        raise ValueError("training split is empty")
    Path(cfg.workdir).mkdir(parents=True, exist_ok=True)
    mask_prob = 1.0 if args.masked else 0.0
    t0 = time.time()
    if stage == "vae":
        if args.masked:
            raise UsageError("--masked applies to the conditional stages (ldm, cvae)")
        model, hist = fit_vae(train, val, cfg.vae_config(), cfg.vae_train(), on_epoch=_epoch_logger("vae"))
        path = cfg.checkpoint("vae", variant)
        save_vae(path, model, stats, cfg.hash("vae"), {"split": args.split})
    elif stage == "cvae":
        model, hist = fit_vae(
            train, val, cfg.vae_config(conditional=True), cfg.vae_train(), stats, mask_prob, _epoch_logger("cvae")
        )
        path = cfg.checkpoint("cvae", variant)
        save_vae(path, model, stats, cfg.hash("vae"), {"split": args.split, "masked": args.masked})
    else:
        vae, vman = load_vae(vae_path)
        check_hash("VAE checkpoint", vman.get("config_hash"), cfg.hash("vae"))
        ldm, hist = fit_ldm(
            vae, train, val, stats, cfg.diffusion_config(), cfg.diffusion_train(mask_prob), _epoch_logger("ldm")
        )
        path = cfg.checkpoint("ldm", variant)
        save_ldm(path, ldm, stats, vman.get("digest"), cfg.hash(), {"split": args.split, "masked": args.masked})
    _write_log(path.with_suffix(".log.json"), hist, cfg)
    first, last = hist.train[0], hist.train[-1]
    print(f"{stage}: {len(hist.train)} epochs in {time.time() - t0:.1f}s, loss {first:.4f} -> {last:.4f}")
    if hist.best_epoch:
        print(f"best validation loss {min(hist.val):.4f} at epoch {hist.best_epoch}")
    print(f"checkpoint {path}")
    return EXIT_OK


def _ngg(cfg: RunConfig, split: str = "within", masked: bool = False, retries: int | None = None) -> NGGGenerator:
    vae_path = cfg.checkpoint("vae", _variant(split, False))
    ldm_path = cfg.checkpoint("ldm", _variant(split, masked))
    if masked and not ldm_path.exists():
        warnings.warn(f"{ldm_path} not found, falling back to the model trained on full conditions", stacklevel=2)
        ldm_path = cfg.checkpoint("ldm", _variant(split, False))
    if not vae_path.exists():
        raise MissingEncoderError(f"missing encoder: no VAE checkpoint at {vae_path}")
    if not ldm_path.exists():
        raise FileNotFoundError(f"no diffusion checkpoint at {ldm_path}; run `condgraph train ldm`")
    gen = load_ngg(vae_path, ldm_path, cfg.discretization)
    if retries is not None:
        gen.retries = retries
    _, lman = load_ldm(ldm_path)
    check_hash("diffusion checkpoint", lman.get("config_hash"), cfg.hash())
    return gen


def cmd_sample(cfg: RunConfig, args) -> int:
    try:
        cond = ConditionVector.parse(args.c)
    except ValueError as exc:
        raise UsageError(f"--c: {exc}") from exc
    gen = _ngg(cfg)
    results = gen.generate([cond] * args.count, seed=cfg.seed)
    out = Path(args.out or Path(cfg.workdir) / "samples")
    out.mkdir(parents=True, exist_ok=True)
    realized = []
    for i, res in enumerate(results):
        if res.graph is None:
            realized.append(None)
            continue
        write_edge_list(res.graph, out / f"graph_{i:03d}.edges")
        (out / f"graph_{i:03d}.dot").write_text(to_dot(res.graph, name=f"sample_{i}"))
        realized.append(compute_properties(res.graph).values)
    table = comparison_table(cond, realized)
    (out / "comparison.txt").write_text(table)
    print(table, end="")
    failed = sum(r is None for r in realized)
    print(f"{len(results) - failed} graph(s) written to {out}" + (f", {failed} failed" if failed else ""))
    return EXIT_OK if failed < len(results) else EXIT_DATA


def comparison_table(cond: ConditionVector, realized: Sequence[Sequence[float] | None]) -> str:
    cols = [f"g{i}" for i in range(len(realized))]
    show_req = cond.n_observed > 0
    head = f"{'Property':<36}" + (f"{'requested':>11}" if show_req else "") + "".join(f"{c:>10}" for c in cols)
    lines = [head, "-" * len(head)]
    for k, label in enumerate(PROPERTY_LABELS):
        req = ""
        if show_req:
            req = f"{cond.values[k]:>11.3f}" if cond.mask[k] else f"{'_':>11}"
        vals = "".join(f"{r[k]:>10.3f}" if r is not None else f"{'failed':>10}" for r in realized)
        lines.append(f"{label:<36}{req}{vals}")
    return "\n".join(lines) + "\n"


def _save_report(cfg: RunConfig, name: str, text: str, payload) -> Path:
    out = Path(cfg.workdir) / "reports"
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.txt").write_text(text + f"config {cfg.hash()}, seed {cfg.seed}\n")
    doc = {"config_hash": cfg.hash(), "seed": cfg.seed, "report": payload}
    (out / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")
    return out / f"{name}.txt"


def cmd_eval(cfg: RunConfig, args) -> int:
    protocol = args.protocol or cfg.protocol
    if protocol not in PROTOCOLS:
        raise UsageError(f"unknown protocol {protocol!r}")
    split = "ood" if protocol == "ood" else "within"
    _, _, test, stats = load_split(cfg, split)
    if args.limit:
        test = test[: args.limit]
    reports: list[MetricReport] = []
    keep = None
    if protocol == "triplet":
        if not args.keep or args.keep not in PROPERTY_INDEX:
            raise UsageError("--keep must name a property for the triplet protocol")
        keep = PROPERTY_INDEX[args.keep]
    masked_model = protocol in ("masked", "triplet")
    if protocol == "masked":
        reports.append(evaluate(_ngg(cfg), test, stats, "within", cfg.seed, label="NGG within"))
    ngg = _ngg(cfg, split, masked=masked_model)
    reports.append(evaluate(ngg, test, stats, protocol, cfg.seed, keep=keep, label=f"NGG {protocol}"))
    cvae_path = cfg.checkpoint("cvae", _variant(split, masked_model))
    if cvae_path.exists() and protocol != "unconditional":
        cg = load_cvae(cvae_path, cfg.discretization)
        reports.append(evaluate(cg, test, stats, protocol, cfg.seed, keep=keep, label=f"VGAE {protocol}"))
    text = format_table(reports)
    path = _save_report(cfg, f"eval_{protocol}", text, [r.to_dict() for r in reports])
    print(text, end="")
    print(f"report {path}")
    return EXIT_OK


def cmd_unique(cfg: RunConfig, args) -> int:
    _, _, test, _ = load_split(cfg)
    rep = uniqueness_check(_ngg(cfg), test, args.codes, args.samples, cfg.seed)
    path = _save_report(cfg, "uniqueness", rep.to_text(), rep.to_dict())
    print(rep.to_text(), end="")
    print(f"report {path}")
    return EXIT_OK


def cmd_ablate(cfg: RunConfig, args) -> int:
    train, val, test, stats = load_split(cfg)
    if args.limit:
        test = test[: args.limit]
    if args.target == "ordering":
        rows = []
        for ordering in ORDERINGS:
            sub = cfg.updated(workdir=str(Path(cfg.workdir) / "ablation" / ordering), ordering=ordering)
            Path(sub.workdir).mkdir(parents=True, exist_ok=True)
            vae, _ = fit_vae(train, val, sub.vae_config(), sub.vae_train(), on_epoch=_epoch_logger(f"vae[{ordering}]"))
            ldm, _ = fit_ldm(
                vae, train, val, stats, sub.diffusion_config(), sub.diffusion_train(), _epoch_logger(f"ldm[{ordering}]")
            )
            save_vae(sub.checkpoint("vae"), vae, stats, sub.hash("vae"))
            save_ldm(sub.checkpoint("ldm"), ldm, stats, None, sub.hash())
            # no retries: an empty decode counts as a non-valid graph
            gen = NGGGenerator(vae, ldm, stats, cfg.discretization, retries=0)
            rep = evaluate(gen, test, stats, "within", cfg.seed, label=ordering)
            rows.append((ordering, rep, 100.0 * rep.failure_rate))
            log.info("ordering %s done", ordering)
        text = ordering_table(rows)
        payload = [{"ordering": o, "non_valid_pct": nv, **rep.to_dict()} for o, rep, nv in rows]
        path = _save_report(cfg, "ablation_ordering", text, payload)
    else:
        gen = _ngg(cfg, masked=True)
        rows = property_importance(gen, test, stats, seeds=[cfg.seed + k for k in range(3)])
        text = importance_table(rows)
        path = _save_report(cfg, "ablation_properties", text, [r.__dict__ for r in rows])
    print(text, end="")
    print(f"report {path}")
    return EXIT_OK


# --- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON config file (default: $CONDGRAPH_CONFIG)")
    common.add_argument("--profile", choices=["desk", "paper"])
    common.add_argument("--seed", type=int)
    common.add_argument("--workdir", help="directory for dataset, checkpoints and reports")
    common.add_argument("--dataset", help="dataset directory (default: WORKDIR/data)")
    common.add_argument("--workers", type=int)
    common.add_argument("--discretization", choices=["gumbel", "threshold"])
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="condgraph", description="Property-conditioned graph generation by latent diffusion.")
    p.add_argument("--version", action="version", version=f"condgraph {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("forge", parents=[common], help="build the synthetic graph corpus")
    f.add_argument("--total", type=int)
    f.add_argument("--proportions", help="paper, uniform, or a JSON mapping family -> share")
    f.add_argument("--n-max", type=int, dest="n_max")
    f.add_argument("--n-min", type=int, dest="n_min")
    f.add_argument("--ood", action="store_true", default=None, help="also write the size-based OOD split")

    t = sub.add_parser("train", parents=[common], help="train a model stage")
    t.add_argument("stage", choices=["vae", "ldm", "cvae"])
    t.add_argument("--ordering", choices=ORDERINGS)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--lr", type=float)
    t.add_argument("--split", choices=["within", "ood"], default="within")
    t.add_argument("--masked", action="store_true", help="train with randomly masked conditions")

    s = sub.add_parser("sample", parents=[common], help="generate graphs for one condition vector")
    s.add_argument("--c", required=True, help=f"{N_PROPERTIES} comma-separated values, _ for masked")
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--out", help="output directory (default: WORKDIR/samples)")

    e = sub.add_parser("eval", parents=[common], help="score generated graphs against the test split")
    e.add_argument("--protocol", choices=PROTOCOLS)
    e.add_argument("--keep", help="third property for the triplet protocol")
    e.add_argument("--limit", type=int, help="evaluate only the first N test records")

    u = sub.add_parser("unique", parents=[common], help="isomorphism-based uniqueness check")
    u.add_argument("--codes", type=int, default=50)
    u.add_argument("--samples", type=int, default=100)

    a = sub.add_parser("ablate", parents=[common], help="ordering or property-importance ablation")
    a.add_argument("--target", choices=["ordering", "properties"], required=True)
    a.add_argument("--limit", type=int, help="evaluate only the first N test records")
    return p


STAGE_KEYS = {"vae": ("vae_epochs", "vae_batch", "vae_lr"), "cvae": ("vae_epochs", "vae_batch", "vae_lr"),
              "ldm": ("ldm_epochs", "ldm_batch", "ldm_lr")}


def config_from_args(args) -> RunConfig:
    overrides = {k: getattr(args, k, None) for k in
                 ("seed", "workdir", "dataset", "workers", "discretization", "total", "proportions", "n_max", "n_min",
                  "ood", "ordering")}
    if args.command == "train":
        epochs, batch, lr = STAGE_KEYS[args.stage]
        overrides.update({epochs: args.epochs, batch: args.batch_size, lr: args.lr})
    if args.command == "eval":
        overrides["protocol"] = args.protocol
    return load_config(args.config, overrides, args.profile)


COMMANDS = {
    "forge": cmd_forge,
    "train": cmd_train,
    "sample": cmd_sample,
    "eval": cmd_eval,
    "unique": cmd_unique,
    "ablate": cmd_ablate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        cfg = config_from_args(args)
        torch.manual_seed(cfg.seed)
        np.random.seed(cfg.seed % 2**32)
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"condgraph: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"condgraph: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except MissingEncoderError as exc:
        print(f"condgraph: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FileNotFoundError, GraphError, KeyError, json.JSONDecodeError) as exc:
        print(f"condgraph: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"condgraph: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
