"""Command-line front end: ``synth``, ``featurize``, ``crossval`` and ``report``.

Exit status is 0 on success, 1 for runtime or data failures and 2 for usage
errors (bad flags, unknown architectures, invalid configuration values).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .audio_io import SynthSpec, generate_synthetic_corpus, scan_dataset, write_manifest
from .errors import IsowordError, UnknownArchitecture
from .features import extract_features, load_cache, save_cache
from .fsutil import atomic_write
from .mfcc import MfccConfig
from .models import ARCHITECTURES, ModelSpec, canonical_architecture, save_checkpoint
from .training import CrossValReport, TrainConfig, confusion_csv, cross_validate, default_train_config, format_table

log = logging.getLogger("isoword")

SMOKE = dict(classes=4, per_class=10, epochs=5)


class UsageError(Exception):
    """Bad flag values or configuration; maps to exit status 2."""


@dataclass
class CliConfig:
    """Everything a run needs; loaded from ``--config`` and then overridden by flags."""

    data_dir: Optional[str] = None
    cache: Optional[str] = None
    out: Optional[str] = None
    seed: int = 7
    mfcc: Dict = field(default_factory=dict)
    model: Dict = field(default_factory=dict)
    train: Dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "CliConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**raw)

    def mfcc_config(self) -> MfccConfig:
        return _build(MfccConfig, self.mfcc, "mfcc")

    def validate(self) -> None:
        # fail before any work starts
        self.mfcc_config()
        _build(TrainConfig, self.train, "train")
        extra = set(self.model) - {"dropout_rate", "standardize"}
        if extra:
            raise UsageError(f"model config accepts dropout_rate and standardize, not {sorted(extra)}")
        _build(ModelSpec, dict(self.model, architecture="mlp"), "model")


def _build(cls, values, what):
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {what} config: {exc}") from exc


def parse_epochs(text: str) -> Dict[str, int]:
    """``"20"`` or ``"20,cnn+lstm=30"``: a bare number applies to every model not named."""
    out: Dict[str, int] = {}
    try:
        for part in filter(None, (p.strip() for p in text.split(","))):
            if "=" in part:
                name, n = part.split("=", 1)
                out[canonical_architecture(name)] = int(n)
            else:
                out["*"] = int(part)
    except (ValueError, UnknownArchitecture) as exc:
        raise UsageError(f"bad --epochs value {text!r}: {exc}") from exc
    if any(n < 1 for n in out.values()):
        raise UsageError("epochs must be >= 1")
    return out


def _file_stem(arch: str) -> str:
    return arch.replace("+", "_")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg: CliConfig) -> int:
    spec = _build(SynthSpec, dict(
        class_count=args.classes, clips_per_class=args.per_class, sample_rate=args.rate,
        duration_seconds=args.duration, noise_level=args.noise, seed=cfg.seed), "synth")
    manifest = generate_synthetic_corpus(spec, args.out)
    if args.manifest:
        write_manifest(manifest, args.manifest)
    print(f"wrote {len(manifest)} clips in {manifest.class_count} classes to {args.out}")
    return 0


def cmd_featurize(args, cfg: CliConfig) -> int:
    data_dir = args.data or cfg.data_dir
    cache = args.cache or cfg.cache
    if not data_dir or not cache:
        raise UsageError("featurize needs --data and --cache (or data_dir/cache in --config)")
    mfcc_values = dict(cfg.mfcc)
    if args.target_frames is not None:
        mfcc_values["target_frames"] = args.target_frames
    mcfg = _build(MfccConfig, mfcc_values, "mfcc")
    manifest = scan_dataset(data_dir)
    fs = extract_features(manifest, mcfg, target_seconds=args.seconds)
    save_cache(fs, cache)
    n, c, t = fs.matrices.shape
    print(f"cached {n} feature matrices of shape ({c}, {t}) to {cache}")
    return 0


def _train_config(arch: str, epochs: Dict[str, int], cfg: CliConfig, batch_size: Optional[int]) -> TrainConfig:
    overrides = dict(cfg.train, seed=cfg.seed)
    if arch in epochs:
        overrides["epochs"] = epochs[arch]
    elif "*" in epochs:
        overrides["epochs"] = epochs["*"]
    if batch_size is not None:
        overrides["batch_size"] = batch_size
    try:
        return default_train_config(arch, **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid train config: {exc}") from exc


def run_crossval(cache: str, models: Sequence[str], folds: int, epochs: Dict[str, int], cfg: CliConfig,
                 out: Optional[Path], batch_size: Optional[int] = None, workers: int = 1,
                 save_models: bool = False, record_time: bool = False) -> List[CrossValReport]:
    fs = load_cache(cache)
    reports = []
    for arch in models:
        x = fs.model_inputs(arch)
        spec = ModelSpec(arch, fs.class_count, x.shape[1:], seed=cfg.seed, **cfg.model)
        tcfg = _train_config(arch, epochs, cfg, batch_size)
        log.info("%s: %d folds, %d epochs, batch %d", arch, folds, tcfg.epochs, tcfg.batch_size)
        start = time.perf_counter()
        result = cross_validate(spec, x, fs.labels, folds, tcfg, workers=workers, keep_models=save_models)
        report, trained = result if save_models else (result, [])
        if record_time:
            report.wall_time_seconds = round(time.perf_counter() - start, 3)
        reports.append(report)
        if out is not None:
            stem = _file_stem(arch)
            atomic_write(out / f"{stem}.json", report.to_json())
            atomic_write(out / f"{stem}_confusion.csv", confusion_csv(report.summed_confusion, report.model))
            if save_models:
                for f, model in enumerate(trained):
                    save_checkpoint(model, out / f"{stem}_fold{f}.ckpt")
        a = report.averages
        print(f"{arch}: test acc {a['test_acc']:.4f}  test loss {a['test_loss']:.4f}", file=sys.stderr)
    table = format_table(reports)
    if out is not None:
        atomic_write(out / "table.txt", table + "\n")
    print(table)
    return reports


def _smoke(args, cfg: CliConfig) -> int:
    epochs = parse_epochs(args.epochs) if args.epochs else {"*": SMOKE["epochs"]}
    with tempfile.TemporaryDirectory(prefix="isoword-smoke-") as tmp:
        work = Path(tmp)
        spec = SynthSpec(class_count=SMOKE["classes"], clips_per_class=SMOKE["per_class"], seed=cfg.seed)
        manifest = generate_synthetic_corpus(spec, work / "corpus")
        fs = extract_features(manifest, cfg.mfcc_config())
        save_cache(fs, work / "features.cache")
        run_crossval(str(work / "features.cache"), _models(args.model), args.folds, epochs, cfg,
                     _out_dir(args, cfg), args.batch_size, args.workers, args.save_models, args.record_time)
    return 0


def _models(choice: str) -> List[str]:
    return list(ARCHITECTURES) if choice == "all" else [canonical_architecture(choice)]


def _out_dir(args, cfg: CliConfig) -> Optional[Path]:
    out = args.out or cfg.out
    if out is None:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_crossval(args, cfg: CliConfig) -> int:
    if args.folds < 2:
        raise UsageError("--folds must be >= 2")
    if args.smoke:
        return _smoke(args, cfg)
    cache = args.cache or cfg.cache
    if not cache:
        raise UsageError("crossval needs --cache (or cache in --config), or --smoke")
    epochs = parse_epochs(args.epochs) if args.epochs else {}
    run_crossval(cache, _models(args.model), args.folds, epochs, cfg, _out_dir(args, cfg),
                 args.batch_size, args.workers, args.save_models, args.record_time)
    return 0


def cmd_report(args, cfg: CliConfig) -> int:
    reports = []
    for path in args.reports:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise IsowordError(f"cannot read report {path}: {exc}") from exc
        try:
            reports.append(CrossValReport.from_json(text))
        except IsowordError as exc:
            raise type(exc)(f"{path}: {exc}") from exc
    print(format_table(reports))
    if args.csv_dir:
        d = Path(args.csv_dir)
        d.mkdir(parents=True, exist_ok=True)
        for r in reports:
            atomic_write(d / f"{_file_stem(r.model)}_confusion.csv", confusion_csv(r.summed_confusion, r.model))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="isoword", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="master seed (default 7)")
    p.add_argument("--config", help="JSON file with data_dir, cache, out, seed, mfcc, model, train")
    p.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for per-epoch logs")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write the deterministic formant-tone corpus")
    s.add_argument("--out", required=True, help="corpus root directory")
    s.add_argument("--classes", type=int, default=20)
    s.add_argument("--per-class", type=int, default=50)
    s.add_argument("--rate", type=int, default=22050)
    s.add_argument("--duration", type=float, default=1.0, help="seconds per clip")
    s.add_argument("--noise", type=float, default=0.05, help="white-noise standard deviation")
    s.add_argument("--manifest", help="also write the manifest JSON here")
    s.set_defaults(func=cmd_synth)

    f = sub.add_parser("featurize", help="extract MFCC matrices into a feature cache")
    f.add_argument("--data", help="dataset root: one subdirectory of WAV files per class")
    f.add_argument("--cache", help="output cache path; a .json sidecar is written next to it")
    f.add_argument("--target-frames", type=int, default=None)
    f.add_argument("--seconds", type=float, default=1.0, help="clip length after padding or trimming")
    f.set_defaults(func=cmd_featurize)

    c = sub.add_parser("crossval", help="k-fold cross-validation of one or all architectures")
    c.add_argument("--cache", help="feature cache written by featurize")
    c.add_argument("--model", default="all", choices=list(ARCHITECTURES) + ["all"])
    c.add_argument("--folds", type=int, default=10)
    c.add_argument("--epochs", help="N, or per-model overrides such as 20,cnn+lstm=30")
    c.add_argument("--batch-size", type=int, default=None)
    c.add_argument("--workers", type=int, default=1, help="processes for parallel folds")
    c.add_argument("--out", help="directory for JSON reports, confusion CSVs and table.txt")
    c.add_argument("--save-models", action="store_true", help="write one checkpoint per fold into --out")
    c.add_argument("--record-time", action="store_true",
                   help="store wall-clock seconds in the report (makes reports run-dependent)")
    c.add_argument("--smoke", action="store_true",
                   help="self-contained run on a 4-class x 10-clip corpus at 5 epochs")
    c.set_defaults(func=cmd_crossval)

    r = sub.add_parser("report", help="render the comparison table from JSON reports")
    r.add_argument("reports", nargs="+")
    r.add_argument("--csv-dir", help="write each summed confusion matrix as CSV here")
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = CliConfig.from_file(args.config) if args.config else CliConfig()
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        cfg.validate()
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"isoword: usage error: {exc}", file=sys.stderr)
        return 2
    except (IsowordError, OSError) as exc:
        print(f"isoword: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
