"""
Command-line entry point: python -m cli.main <train|evaluate|preview|report|selfcheck> ...

Exit codes: 0 success, 1 selfcheck failure, 2 config or input error,
3 training abort, 4 checkpoint error.
"""

import argparse
import json
import logging
import os
import sys
from multiprocessing import Pool
from typing import List, Optional, Sequence, Tuple

from dotenv import load_dotenv

from dataset.cifar import CifarFormatError
from dataset.synthetic import InvalidSyntheticSpec
from metrics.records import augment_epochs_of, export_records, read_records, write_curve
from metrics.report import RunSummary, gap_report
from network.checkpoint import CheckpointError, load_checkpoint
from training.refine import RunResult, TrainingAbort, evaluate, fixed_budget_sweep, refined_training

from .config import ConfigError, RunConfig, load_datasets, load_run_config, parse_run_config
from .preview import preview_augmentations
from .selfcheck import run_selfcheck

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_SELFCHECK_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_TRAINING_ABORT = 3
EXIT_CHECKPOINT_ERROR = 4

ERROR_LOG_NAME = "run_errors.log"


def setup_logging(log_dir: Optional[str] = None) -> None:
    root = logging.getLogger()
    root.setLevel(logging.INFO)
    for handler in list(root.handlers):
        root.removeHandler(handler)
        handler.close()

    console = logging.StreamHandler()
    console.setLevel(logging.INFO)
    console.setFormatter(logging.Formatter("%(asctime)s [%(levelname)s] %(message)s"))
    root.addHandler(console)

    if log_dir is None:
        return
    log_file_path = os.path.join(log_dir, ERROR_LOG_NAME)
    try:
        os.makedirs(log_dir, exist_ok=True)
        fh = logging.FileHandler(log_file_path, mode="w")
        fh.setLevel(logging.WARNING)
        fh.setFormatter(logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s"))
        root.addHandler(fh)
    except OSError as e:
        logger.error(f"Failed to configure file logger at '{log_file_path}': {e}")


def _write_json(path: str, data) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def write_run(run_dir: str, config: RunConfig, result: RunResult) -> None:
    """metrics.csv / metrics.jsonl, manifest.json and the config that reproduces this run."""
    os.makedirs(run_dir, exist_ok=True)
    export_records(result.records, os.path.join(run_dir, "metrics.csv"))
    export_records(result.records, os.path.join(run_dir, "metrics.jsonl"))
    manifest = dict(result.manifest)
    manifest.update(
        run_name=config.name,
        config_seeds=config.seeds,
        dataset={"source": config.dataset.source, "path": config.dataset.path, "seed": config.dataset.synthetic_seed},
        eval_every_note="epochs between measurements repeat the most recent measured values",
    )
    _write_json(os.path.join(run_dir, "manifest.json"), manifest)
    raw = dict(config.raw)
    raw["seeds"] = [result.manifest["seed"]]
    _write_json(os.path.join(run_dir, "config.json"), raw)


def _seed_dir(out_dir: str, seeds: Sequence[int], seed: int) -> str:
    return out_dir if len(seeds) == 1 else os.path.join(out_dir, f"seed_{seed}")


def train_seed(config: RunConfig, seed: int, run_dir: str, resume: bool, sweep: Optional[List[int]], progress: bool) -> None:
    splits = load_datasets(config.dataset)
    spec = config.model_spec(splits)
    stage = config.stage_for(seed)
    os.makedirs(run_dir, exist_ok=True)
    if sweep:
        results = fixed_budget_sweep(stage, splits, spec, stage.total_epochs, sweep, out_dir=run_dir, progress=progress)
        for m, result in results.items():
            write_run(os.path.join(run_dir, f"refine_{m}"), config, result)
        return
    resume_from = os.path.join(run_dir, "last.npz") if resume else None
    result = refined_training(stage, splits, spec, out_dir=run_dir, resume_from=resume_from, progress=progress)
    write_run(run_dir, config, result)
    last = result.records[-1]
    logger.info(
        f"seed {seed} done: test_acc={last.test_acc:.4f} test_loss={last.test_loss:.4f} "
        f"best_epoch={result.best_epoch} -> {run_dir}"
    )


def _train_worker(task: Tuple) -> None:
    raw, data_root, source_path, seed, run_dir, resume, sweep = task
    config = parse_run_config(raw, data_root, source_path)
    train_seed(config, seed, run_dir, resume, sweep, progress=False)


def _parse_sweep(text: Optional[str]) -> Optional[List[int]]:
    if not text:
        return None
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"--sweep-refine expects comma-separated integers, got {text!r}") from e


def cmd_train(args) -> int:
    config = load_run_config(args.config, args.override, args.data_root, args.seed)
    out_dir = args.out or config.output_dir
    setup_logging(out_dir)
    sweep = _parse_sweep(args.sweep_refine)
    logger.info(f"training '{config.name}' ({config.stage.stage1_pipeline.method}) seeds={config.seeds} -> {out_dir}")

    run_dirs = {seed: _seed_dir(out_dir, config.seeds, seed) for seed in config.seeds}
    if args.workers > 1 and len(config.seeds) > 1:
        tasks = [
            (config.raw, args.data_root, config.source_path, seed, run_dirs[seed], args.resume, sweep)
            for seed in config.seeds
        ]
        with Pool(min(args.workers, len(tasks))) as pool:
            pool.map(_train_worker, tasks)
    else:
        for seed in config.seeds:
            train_seed(config, seed, run_dirs[seed], args.resume, sweep, progress=not args.no_progress)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    config = load_run_config(args.config, args.override, args.data_root)
    setup_logging()
    splits = load_datasets(config.dataset)
    dataset = splits.test if args.split == "test" else splits.train
    if dataset.image_shape != checkpoint.model.spec.input_shape:
        raise ConfigError(
            f"dataset images {dataset.image_shape} do not fit model input {checkpoint.model.spec.input_shape}",
            field="dataset",
        )
    result = evaluate(checkpoint.model, dataset)
    print(json.dumps({"loss": result.loss, "top1_accuracy": result.top1_accuracy, "split": args.split}))
    return EXIT_OK


def cmd_preview(args) -> int:
    config = load_run_config(args.config, args.override, args.data_root)
    setup_logging()
    splits = load_datasets(config.dataset)
    seed = args.seed if args.seed is not None else config.seeds[0]
    entries = preview_augmentations(config.stage.stage1_pipeline, splits.train, args.count, args.out, seed)
    print(f"wrote {len(entries)} images to {args.out}")
    return EXIT_OK


def collect_run_dirs(paths: Sequence[str]) -> Tuple[List[Tuple[str, str]], List[str]]:
    """(name, dir) for every directory holding metrics.csv, looking one level down for seed/sweep subdirs."""
    found, missing = [], []
    for path in paths:
        if os.path.isfile(os.path.join(path, "metrics.csv")):
            found.append((os.path.basename(os.path.normpath(path)), path))
            continue
        subdirs = []
        if os.path.isdir(path):
            for name in sorted(os.listdir(path)):
                sub = os.path.join(path, name)
                if os.path.isfile(os.path.join(sub, "metrics.csv")):
                    subdirs.append((f"{os.path.basename(os.path.normpath(path))}/{name}", sub))
        if subdirs:
            found.extend(subdirs)
        else:
            missing.append(path)
    return _disambiguate(found), missing


def _disambiguate(found: List[Tuple[str, str]]) -> List[Tuple[str, str]]:
    """Clashing names become paths relative to the runs' common parent."""
    names = [name for name, _ in found]
    if len(set(names)) == len(names):
        return found
    dirs = [os.path.abspath(d) for _, d in found]
    parent = os.path.dirname(os.path.commonpath(dirs)) if len(set(dirs)) == 1 else os.path.commonpath(dirs)
    return [
        (name if names.count(name) == 1 else os.path.relpath(d, parent).replace(os.sep, "/"), run_dir)
        for (name, run_dir), d in zip(found, dirs)
    ]


def _curve_file_name(name: str) -> str:
    return name.replace("/", "_") + ".csv"


def cmd_report(args) -> int:
    setup_logging()
    found, missing = collect_run_dirs(args.run_dirs)
    if missing:
        logger.error(f"no metrics.csv in: {', '.join(missing)}")
        return EXIT_INPUT_ERROR
    curve_names = [_curve_file_name(name) for name, _ in found]
    clashes = sorted({n for n in curve_names if curve_names.count(n) > 1})
    if clashes:
        logger.error(f"runs would share curve files {clashes}; pass each run directory once")
        return EXIT_INPUT_ERROR
    summaries = []
    for name, run_dir in found:
        records = read_records(os.path.join(run_dir, "metrics.csv"))
        method = "unknown"
        manifest_path = os.path.join(run_dir, "manifest.json")
        if os.path.exists(manifest_path):
            with open(manifest_path, "r", encoding="utf-8") as f:
                method = json.load(f).get("method", method)
        summaries.append(RunSummary(name, method, tuple(records)))
    report = gap_report(summaries)

    curves_dir = os.path.join(args.out, "curves")
    os.makedirs(curves_dir, exist_ok=True)
    with open(os.path.join(args.out, "gap_report.txt"), "w", encoding="utf-8") as f:
        f.write(report.to_text())
    report.write_csv(os.path.join(args.out, "gap_report.csv"))
    for summary in summaries:
        write_curve(
            summary.records, augment_epochs_of(summary.records), os.path.join(curves_dir, _curve_file_name(summary.name))
        )
    print(report.to_text(), end="")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    setup_logging()
    return EXIT_OK if run_selfcheck() else EXIT_SELFCHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Refined data augmentation training lab.")
    sub = parser.add_subparsers(dest="command", required=True)

    def config_flags(p, out_required=False):
        p.add_argument("--config", type=str, required=True, help="Run config JSON (see configs/README.md).")
        p.add_argument(
            "--override", action="append", default=[], metavar="KEY=VALUE",
            help="Set a config field by dotted path, e.g. stage.refine_epochs=5. VALUE is parsed as JSON.",
        )
        p.add_argument("--data-root", type=str, default=None, help="Dataset root; falls back to $DATA_ROOT.")
        p.add_argument("--seed", type=int, default=None, help="Run this single seed instead of the config's list.")
        p.add_argument("--out", type=str, required=out_required, default=None, help="Output directory.")

    p = sub.add_parser("train", help="Run refined training for every configured seed.")
    config_flags(p)
    p.add_argument("--workers", type=int, default=1, help="Seeds trained in parallel worker processes.")
    p.add_argument("--resume", action="store_true", help="Continue each seed from its last.npz.")
    p.add_argument("--sweep-refine", type=str, default=None, metavar="M1,M2,...",
                   help="Fixed-budget sweep: N + M stays at the config total for each listed M.")
    p.add_argument("--no-progress", action="store_true", help="Hide progress bars.")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="Loss and top-1 accuracy of a checkpoint.")
    p.add_argument("--checkpoint", type=str, required=True)
    p.add_argument("--config", type=str, required=True, help="Config whose dataset section to evaluate on.")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--data-root", type=str, default=None)
    p.add_argument("--split", choices=("test", "train"), default="test")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("preview", help="Write augmented images as PPM with a JSONL sidecar.")
    config_flags(p, out_required=True)
    p.add_argument("--count", type=int, default=16)
    p.set_defaults(func=cmd_preview)

    p = sub.add_parser("report", help="Gap report and loss curves from run directories.")
    p.add_argument("run_dirs", nargs="+")
    p.add_argument("--out", type=str, required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("selfcheck", help="Fast verification suite.")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CheckpointError as e:
        logger.error(f"checkpoint error: {e}")
        return EXIT_CHECKPOINT_ERROR
    except TrainingAbort as e:
        logger.error(f"training aborted at epoch {e.epoch}, batch {e.batch_index}, lr={e.lr}")
        return EXIT_TRAINING_ABORT
    except (ConfigError, CifarFormatError, InvalidSyntheticSpec, FileNotFoundError, ValueError) as e:
        logger.error(f"invalid input: {e}")
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
