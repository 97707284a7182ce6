"""Synthesize a corpus, cache its features and cross-validate all five models.

    python scripts/compare_models.py --work runs/clean --noise 0 --epochs 20,mlp=100,lstm=15,cnn+lstm=30

Everything lands under --work: the corpus, the feature cache and the reports.
Steps whose outputs already exist are skipped.
"""
import argparse
import sys
from pathlib import Path

from isoword.cli import main


def run(argv):
    code = main(argv)
    if code:
        sys.exit(code)


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--work", default="runs/compare")
    p.add_argument("--seed", default="7")
    p.add_argument("--noise", default="0.05")
    p.add_argument("--epochs", default=None, help="passed to crossval; default is each model's full schedule")
    p.add_argument("--folds", default="10")
    p.add_argument("--workers", default="1")
    args = p.parse_args()

    work = Path(args.work)
    corpus, cache = work / "corpus", work / "features.cache"
    if not corpus.exists():
        run(["--seed", args.seed, "synth", "--out", str(corpus), "--noise", args.noise])
    if not cache.exists():
        run(["featurize", "--data", str(corpus), "--cache", str(cache)])
    cv = ["-v", "--seed", args.seed, "crossval", "--cache", str(cache), "--model", "all",
          "--folds", args.folds, "--workers", args.workers, "--out", str(work / "reports"), "--record-time"]
    if args.epochs:
        cv += ["--epochs", args.epochs]
    run(cv)
