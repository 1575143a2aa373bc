"""Command-line driver: ``wsground gen | train | eval | ablate | heatmap``.

Exit status is 0 on success, 1 on usage errors and 2 on data or
configuration errors.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fileio
from .config import ConfigError, ExperimentConfig, defaults_help, parse_config
from .dataset import GroundingDataset, training_vocabulary
from .evaluate import ablate, evaluate, heatmap
from .losses import NoDistillSignal
from .model import PHRASE_PARAMS, REGION_PARAMS, ParamStore
from .synthcorpus import generate
from .trainer import FeatureStats, TrainConfig, train

log = logging.getLogger("wsground")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
VARIANT_CHOICES = ("margin", "nce", "distill", "nce+distill")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- checkpoint payload ----------------------------------------------------------

def config_digest(cfg: TrainConfig) -> str:
    return hashlib.blake2b(repr(cfg).encode("utf-8"), digest_size=8).hexdigest()


def checkpoint_tensors(params: ParamStore, stats: FeatureStats, cfg: TrainConfig) -> dict[str, np.ndarray]:
    out = dict(params)
    out["feat_mean"] = stats.mean
    out["feat_std"] = stats.std
    out["feat_floored"] = stats.floored.astype(np.float64)
    out["meta_seed"] = np.array([float(cfg.seed)])
    out["meta_config"] = np.frombuffer(bytes.fromhex(config_digest(cfg)), dtype=np.uint8).astype(np.float64)
    return out


def split_checkpoint(tensors: dict[str, np.ndarray]) -> tuple[ParamStore, FeatureStats, dict[str, str]]:
    try:
        params = ParamStore({k: tensors[k] for k in REGION_PARAMS + PHRASE_PARAMS})
        params.check()
        stats = FeatureStats(tensors["feat_mean"], tensors["feat_std"], tensors["feat_floored"] > 0)
        meta = {"seed": str(int(tensors["meta_seed"][0])),
                "config": bytes(tensors["meta_config"].astype(np.uint8)).hex()}
    except KeyError as exc:
        raise DataError(f"checkpoint lacks tensor {exc}") from None
    except ValueError as exc:
        raise DataError(f"checkpoint is inconsistent: {exc}") from None
    return params, stats, meta


def load_trained(path):
    data = Path(path).read_bytes()
    params, stats, meta = split_checkpoint(fileio.parse_checkpoint(data))
    meta["checkpoint"] = hashlib.blake2b(data, digest_size=8).hexdigest()
    return params, stats, meta


def _load_dataset(path) -> tuple[GroundingDataset, bytes]:
    data = Path(path).read_bytes()
    return fileio.parse_dataset(data), data


# -- subcommands -------------------------------------------------------------------

def cmd_gen(args, cfg: ExperimentConfig) -> int:
    seed = args.seed if args.seed is not None else cfg.train.seed
    dataset, taxonomy = generate(cfg.world, seed)
    out = Path(args.out)
    fileio.save_dataset(dataset, out)
    fileio.atomic_write(out.with_name(out.name + ".taxonomy.txt"), taxonomy.dumps().encode("utf-8"))
    print(f"wrote {out}: {len(dataset.images)} images, {len(dataset.sentences)} sentences")
    return EXIT_OK


def cmd_train(args, cfg: ExperimentConfig) -> int:
    tcfg = cfg.train
    if args.variant:
        tcfg = replace(tcfg, loss=replace(tcfg.loss, variant=args.variant))
    dataset, _ = _load_dataset(args.data)
    if tcfg.loss.uses_distill and not dataset.has_posteriors:
        raise DataError(f"variant {tcfg.loss.variant} needs detector posteriors; {args.data} has none")
    result = train(dataset, tcfg)
    out = Path(args.out)
    fileio.save_checkpoint(checkpoint_tensors(result.params, result.stats, tcfg), out)
    fileio.atomic_write(out.with_name(out.name + ".log.csv"), result.log_csv().encode("ascii"))
    print(f"wrote {out} after {len(result.log)} steps")
    return EXIT_OK


def cmd_eval(args, cfg=None) -> int:
    params, stats, meta = load_trained(args.ckpt)
    dataset, raw = _load_dataset(args.data)
    if dataset.hidden is None:
        raise DataError(f"{args.data} carries no ground-truth boxes")
    vocab = training_vocabulary(dataset)
    report = evaluate(params, stats, vocab, dataset, per_category=args.per_category)
    report.meta.update(meta)
    report.meta["data"] = fileio.fingerprint(raw)
    report_path = Path(args.report)
    fileio.atomic_write(report_path, report.to_csv().encode("ascii"))
    fileio.atomic_write(report_path.with_name(report_path.name + ".json"), (report.summary_json() + "\n").encode("ascii"))
    print(f"accuracy={report.accuracy:.6f}")
    return EXIT_OK


def cmd_ablate(args, cfg: ExperimentConfig) -> int:
    dataset, _ = _load_dataset(args.data)
    if not dataset.has_posteriors:
        raise DataError(f"{args.data} has no detector posteriors; the distill variants cannot run")
    if dataset.hidden is None:
        raise DataError(f"{args.data} carries no ground-truth boxes")
    table = ablate(dataset, cfg.train)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fileio.atomic_write(out / "ablation.csv", table.to_csv().encode("ascii"))
    sys.stdout.write(table.to_csv())
    return EXIT_OK


def _grid(text: str) -> tuple[int, int]:
    try:
        h, w = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("grid sides must be >= 1")
    return h, w


def cmd_heatmap(args, cfg=None) -> int:
    params, stats, _ = load_trained(args.ckpt)
    dataset, _ = _load_dataset(args.data)
    if not 0 <= args.image < len(dataset.images):
        raise DataError(f"image {args.image} out of range (0..{len(dataset.images) - 1})")
    if not 0 <= args.sentence < len(dataset.sentences):
        raise DataError(f"sentence {args.sentence} out of range (0..{len(dataset.sentences) - 1})")
    vocab = training_vocabulary(dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, phrase in enumerate(dataset.sentences[args.sentence].phrases):
        hm = heatmap(params, stats, vocab, dataset, args.image, phrase, args.grid)
        name = f"image{args.image}_sentence{args.sentence}_phrase{k}.pgm"
        fileio.atomic_write(out / name, hm.to_pgm())
        print(f"{name}: {' '.join(phrase)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wsground", description="Weakly supervised phrase grounding experiments.",
                epilog="configuration keys and defaults:\n" + defaults_help(),
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, help="world seed (default: [train] seed or WSG_SEED)")
    g.set_defaults(func=cmd_gen, needs_config=True)

    t = sub.add_parser("train", help="train a checkpoint")
    t.add_argument("--data", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--variant", choices=VARIANT_CHOICES, type=lambda s: s.lower())
    t.set_defaults(func=cmd_train, needs_config=True)

    e = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", required=True, help="CSV path; a JSON summary goes next to it")
    e.add_argument("--per-category", action="store_true")
    e.set_defaults(func=cmd_eval, needs_config=False)

    a = sub.add_parser("ablate", help="train and evaluate all four loss variants")
    a.add_argument("--data", required=True)
    a.add_argument("--config", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate, needs_config=True)

    h = sub.add_parser("heatmap", help="write one PGM heatmap per phrase")
    h.add_argument("--data", required=True)
    h.add_argument("--ckpt", required=True)
    h.add_argument("--image", type=int, required=True)
    h.add_argument("--sentence", type=int, required=True)
    h.add_argument("--out", required=True)
    h.add_argument("--grid", type=_grid, default=(32, 32))
    h.set_defaults(func=cmd_heatmap, needs_config=False)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = parse_config(args.config) if args.needs_config else None
        return args.func(args, cfg)
    except (ConfigError, DataError, NoDistillSignal, OSError, ValueError, KeyError) as exc:
        print(f"wsground {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
