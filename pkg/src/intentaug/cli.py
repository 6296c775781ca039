"""Experiment runner: single runs, ablations, lambda/tau sweeps and reports.

Run ``intentaug --help`` for the verbs.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import adjacency, augment, corpus, encoder, seqprep
from .errors import ConfigError, DataError, IntentAugError
from .evaluator import DEFAULT_KS, MetricsReport, evaluate
from .trainer import ABLATIONS, TrainConfig, fit

log = logging.getLogger("intentaug")

DEFAULT_LAMBDA_GRID = (0.05, 0.1, 0.2, 0.5, 1.0)
DEFAULT_TAU_GRID = (0.1, 0.5, 1.0, 2.0)


@dataclass
class ExperimentSpec:
    train: TrainConfig = field(default_factory=TrainConfig)
    data_path: str | None = None
    synth: corpus.SynthSpec | None = None
    out_dir: str = "runs/experiment"
    delimiter: str = ","
    skip_header: bool = False
    min_count: int = 5
    lambda_grid: tuple[float, ...] = DEFAULT_LAMBDA_GRID
    tau_grid: tuple[float, ...] = DEFAULT_TAU_GRID
    K_grid: tuple[int, ...] = (1,)

    def validate(self):
        if (self.data_path is None) == (self.synth is None):
            raise ConfigError("exactly one data source (data_path or synth) is required")
        if self.data_path is not None and not Path(self.data_path).is_file():
            raise DataError(f"data file not found: {self.data_path}")
        if self.synth is not None:
            self.synth.validate()
        self.train.validate()

    def to_dict(self) -> dict:
        return {
            "train": self.train.to_dict(),
            "data_path": self.data_path,
            "synth": dataclasses.asdict(self.synth) if self.synth else None,
            "out_dir": self.out_dir, "delimiter": self.delimiter,
            "skip_header": self.skip_header, "min_count": self.min_count,
            "lambda_grid": list(self.lambda_grid), "tau_grid": list(self.tau_grid),
            "K_grid": list(self.K_grid),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        train = TrainConfig.from_dict(d.pop("train", {}))
        synth = d.pop("synth", None)
        synth = corpus.SynthSpec.from_dict(synth) if synth is not None else None
        for key in ("lambda_grid", "tau_grid", "K_grid"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            return cls(train=train, synth=synth, **d)
        except TypeError as exc:
            raise ConfigError(f"bad experiment spec: {exc}") from None


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n", encoding="utf-8")


class StageError(IntentAugError):
    """Wraps a foreign exception (OSError, ...) raised inside a pipeline stage."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{type(cause).__name__}: {cause}")
        self.stage = stage
        self.exit_code = getattr(cause, "exit_code", 1)


class _stage:
    """Tags errors with the stage name and leaves error.json in the run dir.
    Domain errors keep their type; anything else becomes a StageError."""

    def __init__(self, name: str, run_dir: Path | None = None):
        self.name, self.run_dir = name, run_dir

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is None or getattr(exc, "stage", None) is not None:
            return False
        if not isinstance(exc, Exception):
            return False
        if self.run_dir is not None and self.run_dir.is_dir():
            _write_json(self.run_dir / "error.json", {"stage": self.name, "error": str(exc),
                                                      "type": exc_type.__name__})
        if isinstance(exc, IntentAugError):
            exc.stage = self.name
            return False
        raise StageError(self.name, exc) from exc


# --------------------------------------------------------------------------
# pipeline stages


def load_log(spec: ExperimentSpec) -> corpus.InteractionLog:
    if spec.synth is not None:
        return corpus.synth_generate(spec.synth, spec.train.seed)
    return corpus.read_interactions(spec.data_path, spec.delimiter, spec.skip_header)


def prepare_splits(spec: ExperimentSpec, directory: Path) -> dict[str, str]:
    """corpus -> 5-core -> index -> sequences -> frozen split files."""
    directory.mkdir(parents=True, exist_ok=True)
    with _stage("corpus", directory):
        raw = load_log(spec)
        filtered = corpus.kcore_filter(raw, spec.min_count)
        index = corpus.build_index(filtered)
        seqs = corpus.user_sequences(filtered, index)
        if filtered:
            (directory / "stats.json").write_text(
                corpus.dataset_stats(filtered).to_record() + "\n", encoding="utf-8")
    with _stage("seqprep", directory):
        splits = seqprep.chrono_split(seqs, spec.train.max_len, index.n_items)
        if not splits.train:
            raise DataError("no training instances after filtering and splitting")
        return seqprep.save_splits(splits, directory)


def train_and_evaluate(config: TrainConfig, splits_dir: Path, run_dir: Path,
                       extra: dict | None = None) -> dict[str, MetricsReport]:
    """Fit on frozen splits and persist every artifact into ``run_dir``."""
    run_dir.mkdir(parents=True, exist_ok=True)
    checksums = seqprep.split_checksums(splits_dir)
    snapshot = {"train": config.to_dict(), "splits_dir": str(splits_dir),
                "split_checksums": checksums, **(extra or {})}
    _write_json(run_dir / "config.json", snapshot)
    with _stage("load_splits", run_dir):
        splits = seqprep.load_splits(splits_dir)

    history_path = run_dir / "history.jsonl"
    history_path.write_text("", encoding="utf-8")

    def on_epoch(record):
        with open(history_path, "a", encoding="utf-8") as fh:
            fh.write(record.to_record() + "\n")

    with _stage("fit", run_dir):
        result = fit(config, splits, on_epoch=on_epoch)
    with _stage("persist", run_dir):
        if result.index is not None:
            adjacency.save_index(result.index, run_dir / "successors.txt")
        if result.augmentation is not None:
            augment.save_augmentation(result.augmentation, run_dir / "augmentation")
        encoder.save_checkpoint(result.model, run_dir / "checkpoint.bin")
        _write_json(run_dir / "training.json", {"best_epoch": result.history.best_epoch,
                                                "stopped_early": result.history.stopped_early,
                                                "epochs_run": len(result.history.epochs)})
    with _stage("evaluate", run_dir):
        mask = splits.histories if config.mask_history else None
        reports = {name: evaluate(result.model, getattr(splits, name), DEFAULT_KS, name,
                                  config.eval_batch_size, mask)
                   for name in ("validation", "test")}
        (run_dir / "metrics.jsonl").write_text(
            "".join(r.to_jsonl() for r in reports.values()), encoding="utf-8")
    return reports


def run_experiment(spec: ExperimentSpec, run_dir: str | Path | None = None) -> Path:
    with _stage("validate"):
        spec.validate()
    run_dir = Path(run_dir or spec.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_json(run_dir / "experiment.json", spec.to_dict())
    prepare_splits(spec, run_dir / "splits")
    train_and_evaluate(spec.train, run_dir / "splits", run_dir)
    return run_dir


def run_ablation(spec: ExperimentSpec, variants=ABLATIONS) -> tuple[dict, str]:
    """One run per variant on shared frozen splits and the same seed."""
    with _stage("validate"):
        spec.validate()
        bad = set(variants) - set(ABLATIONS)
        if bad or not variants:
            raise ConfigError(f"unknown ablation variants: {sorted(bad)}")
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "experiment.json", spec.to_dict())
    splits_dir = out / "splits"
    prepare_splits(spec, splits_dir)
    reports = {}
    for variant in variants:
        config = dataclasses.replace(spec.train, ablation=variant)
        reports[variant] = train_and_evaluate(config, splits_dir, out / variant)["test"]
    table = ablation_table(reports)
    (out / "ablation.tsv").write_text(table, encoding="utf-8")
    return reports, table


def ablation_table(reports: dict[str, MetricsReport], dataset: str = "synthetic") -> str:
    lines = [f"variant\t{dataset} HR@20\t{dataset} NDCG@20\t{dataset} HR@10"]
    for variant, r in reports.items():
        lines.append(f"{variant}\t{r.hr[20]:.4f}\t{r.ndcg[20]:.4f}\t{r.hr[10]:.4f}")
    return "\n".join(lines) + "\n"


def run_sweep(spec: ExperimentSpec, lambda_grid=None, tau_grid=None) -> tuple[dict, str]:
    """Cartesian lambda x tau grid on shared frozen splits."""
    lambda_grid = tuple(lambda_grid or spec.lambda_grid)
    tau_grid = tuple(tau_grid or spec.tau_grid)
    with _stage("validate"):
        spec.validate()
        if not lambda_grid or not tau_grid:
            raise ConfigError("sweep grids must be non-empty")
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "experiment.json", spec.to_dict())
    splits_dir = out / "splits"
    prepare_splits(spec, splits_dir)
    grid = {}
    for lam, tau in itertools.product(lambda_grid, tau_grid):
        config = dataclasses.replace(spec.train, lam=lam, tau=tau)
        cell = out / f"lam{lam:g}_tau{tau:g}"
        grid[(lam, tau)] = train_and_evaluate(config, splits_dir, cell)["test"]
    lines = ["lambda\ttau\tHR@20\tNDCG@20"]
    lines += [f"{lam:g}\t{tau:g}\t{r.hr[20]:.4f}\t{r.ndcg[20]:.4f}" for (lam, tau), r in grid.items()]
    table = "\n".join(lines) + "\n"
    (out / "sweep.tsv").write_text(table, encoding="utf-8")
    return grid, table


REQUIRED_ARTIFACTS = ("config.json", "history.jsonl", "checkpoint.bin", "metrics.jsonl",
                      "training.json")


def emit_report(run_dir: str | Path) -> tuple[str, list[dict]]:
    """Summarise a run directory without modifying it."""
    run_dir = Path(run_dir)
    missing = [a for a in REQUIRED_ARTIFACTS if not (run_dir / a).is_file()]
    records: list[dict] = []
    lines = [f"run: {run_dir}"]
    metrics_path = run_dir / "metrics.jsonl"
    if metrics_path.is_file():
        records = [json.loads(line) for line in metrics_path.read_text().splitlines() if line]
        for split in ("validation", "test"):
            rows = [r for r in records if r["split"] == split]
            if not rows:
                continue
            lines.append(f"[{split}]")
            lines.append("  K    HR@K    NDCG@K")
            for r in rows:
                if "k" in r:
                    lines.append(f"  {r['k']:<4} {r['hr']:.4f}  {r['ndcg']:.4f}")
            lines += [f"  MRR  {r['mrr']:.4f}" for r in rows if "mrr" in r]
    coverage = run_dir / "augmentation" / "coverage.json"
    if coverage.is_file():
        cov = json.loads(coverage.read_text())
        lines.append(f"augmentation coverage: positive {cov['positive_rate']:.3f}, "
                     f"negative {cov['negative_rate']:.3f} over {cov['n_instances']} instances")
        records.append({"coverage": cov})
    training = run_dir / "training.json"
    if training.is_file():
        t = json.loads(training.read_text())
        lines.append(f"best epoch: {t['best_epoch']}  epochs run: {t['epochs_run']}  "
                     f"stopped early: {t['stopped_early']}")
        records.append({"training": t})
    if missing:
        lines.append("missing artifacts: " + ", ".join(missing))
        records.append({"missing": missing})
    return "\n".join(lines) + "\n", records


# --------------------------------------------------------------------------
# argument parsing


def _add_dataclass_flags(parser, cls, prefix=""):
    group = parser.add_argument_group(cls.__name__)
    for f in dataclasses.fields(cls):
        flag = "--" + prefix + f.name.replace("_", "-")
        dest = prefix.replace("-", "_") + f.name
        if f.type in ("bool", bool):
            group.add_argument(flag, dest=dest, default=None,
                               type=lambda s: s.lower() in ("1", "true", "yes"))
        elif "tuple" in str(f.type):
            group.add_argument(flag, dest=dest, default=None, type=int, nargs=2)
        else:
            kind = {"int": int, "float": float}.get(str(f.type), str)
            group.add_argument(flag, dest=dest, default=None, type=kind)


def _overrides(args, cls, prefix=""):
    out = {}
    for f in dataclasses.fields(cls):
        v = getattr(args, prefix + f.name, None)
        if v is not None:
            out[f.name] = tuple(v) if isinstance(v, list) else v
    return out


def spec_from_args(args) -> ExperimentSpec:
    base = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            base = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"bad config file {path}: {exc}") from None
    spec = ExperimentSpec.from_dict(base)
    train = dataclasses.replace(spec.train, **_overrides(args, TrainConfig))
    synth_over = _overrides(args, corpus.SynthSpec, "synth_")
    synth = spec.synth
    if args.synth or synth_over:
        synth = dataclasses.replace(synth or corpus.SynthSpec(), **synth_over)
    data_path = args.data if args.data is not None else spec.data_path
    if args.data is not None:
        synth = None
    spec = dataclasses.replace(spec, train=train, synth=synth, data_path=data_path)
    for name in ("out_dir", "delimiter", "min_count"):
        if getattr(args, name, None) is not None:
            spec = dataclasses.replace(spec, **{name: getattr(args, name)})
    if args.header:
        spec = dataclasses.replace(spec, skip_header=True)
    if getattr(args, "lambda_grid", None):
        spec = dataclasses.replace(spec, lambda_grid=tuple(args.lambda_grid))
    if getattr(args, "tau_grid", None):
        spec = dataclasses.replace(spec, tau_grid=tuple(args.tau_grid))
    return spec


def _experiment_parser(sub, name, help_):
    p = sub.add_parser(name, help=help_)
    p.add_argument("--config", help="JSON experiment spec")
    p.add_argument("--data", help="delimited interaction file")
    p.add_argument("--synth", action="store_true", help="use a synthetic corpus")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--delimiter")
    p.add_argument("--header", action="store_true", help="skip the first input line")
    p.add_argument("--min-count", dest="min_count", type=int)
    _add_dataclass_flags(p, TrainConfig)
    _add_dataclass_flags(p, corpus.SynthSpec, "synth-")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intentaug")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("ingest", help="parse and 5-core filter an interaction file")
    p.add_argument("input")
    p.add_argument("--out", required=True, help="filtered interaction file")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--header", action="store_true")
    p.add_argument("--min-count", type=int, default=5)

    p = sub.add_parser("synth", help="write a synthetic planted-intent corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_dataclass_flags(p, corpus.SynthSpec, "synth-")

    p = sub.add_parser("split", help="freeze train/validation/test splits")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--delimiter", default=",")
    p.add_argument("--header", action="store_true")
    p.add_argument("--min-count", type=int, default=5)
    p.add_argument("--max-len", type=int, default=50)

    p = sub.add_parser("augment", help="build successor index and augmented samples")
    p.add_argument("--splits", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--K", type=int, default=1)
    p.add_argument("--retry-budget", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--successor-mode", default="immediate", choices=adjacency.MODES)

    p = _experiment_parser(sub, "train", "train on frozen splits")
    p.add_argument("--splits", required=True)
    p = sub.add_parser("eval", help="evaluate a checkpoint on frozen splits")
    p.add_argument("--run", required=True)
    p.add_argument("--splits", required=True)
    p.add_argument("--split", default="test", choices=("validation", "test"))

    _experiment_parser(sub, "run", "full pipeline in one run directory")
    p = _experiment_parser(sub, "ablate", "run ablation variants")
    p.add_argument("--variants", nargs="+", default=list(ABLATIONS), choices=ABLATIONS)
    p = _experiment_parser(sub, "sweep", "lambda x tau grid")
    p.add_argument("--lambda-grid", dest="lambda_grid", type=float, nargs="+")
    p.add_argument("--tau-grid", dest="tau_grid", type=float, nargs="+")

    p = sub.add_parser("report", help="summarise a run directory")
    p.add_argument("run")
    p.add_argument("--json", action="store_true", help="print machine-readable records")
    return parser


def _dispatch(args) -> None:
    if args.verb == "ingest":
        log_ = corpus.kcore_filter(corpus.read_interactions(args.input, args.delimiter, args.header),
                                   args.min_count)
        corpus.write_interactions(log_, args.out, args.delimiter)
        print(corpus.dataset_stats(log_).to_record())
    elif args.verb == "synth":
        spec = dataclasses.replace(corpus.SynthSpec(), **_overrides(args, corpus.SynthSpec, "synth_"))
        spec.validate()
        corpus.write_interactions(corpus.synth_generate(spec, args.seed), args.out)
    elif args.verb == "split":
        log_ = corpus.kcore_filter(corpus.read_interactions(args.input, args.delimiter, args.header),
                                   args.min_count)
        index = corpus.build_index(log_)
        splits = seqprep.chrono_split(corpus.user_sequences(log_, index), args.max_len, index.n_items)
        sums = seqprep.save_splits(splits, args.out)
        print(json.dumps({"train": len(splits.train), "validation": len(splits.validation),
                          "test": len(splits.test), "dropped_users": splits.dropped_users,
                          "checksums": sums}, sort_keys=True))
    elif args.verb == "augment":
        splits = seqprep.load_splits(args.splits)
        index = adjacency.build_successor_index(splits.train, args.successor_mode)
        result = augment.augment_dataset(splits.train, index, args.K, args.seed, args.retry_budget)
        Path(args.out).mkdir(parents=True, exist_ok=True)
        adjacency.save_index(index, Path(args.out) / "successors.txt")
        augment.save_augmentation(result, args.out)
        print(json.dumps(result.coverage.to_dict(), sort_keys=True))
    elif args.verb == "train":
        spec = spec_from_args(args)
        spec.train.validate()
        reports = train_and_evaluate(spec.train, Path(args.splits), Path(spec.out_dir))
        print(emit_report(spec.out_dir)[0], end="")
        del reports
    elif args.verb == "eval":
        model = encoder.load_checkpoint(Path(args.run) / "checkpoint.bin")
        splits = seqprep.load_splits(args.splits)
        print(evaluate(model, getattr(splits, args.split), split=args.split).to_jsonl(), end="")
    elif args.verb == "run":
        run_dir = run_experiment(spec_from_args(args))
        print(emit_report(run_dir)[0], end="")
    elif args.verb == "ablate":
        _, table = run_ablation(spec_from_args(args), tuple(args.variants))
        print(table, end="")
    elif args.verb == "sweep":
        spec = spec_from_args(args)
        _, table = run_sweep(spec, spec.lambda_grid, spec.tau_grid)
        print(table, end="")
    elif args.verb == "report":
        text, records = emit_report(args.run)
        if args.json:
            print("".join(json.dumps(r, sort_keys=True) + "\n" for r in records), end="")
        else:
            print(text, end="")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        _dispatch(args)
    except IntentAugError as exc:
        stage = getattr(exc, "stage", None)
        print(f"error: [{stage}] {exc}" if stage else f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
