"""Train one architecture on one fold of a feature cache and print the epoch history.

    python scripts/train_curve.py runs/clean/features.cache cnn+lstm --epochs 30 --fold 0

Handy for checking how many epochs a model needs before committing to a
full ten-fold run.
"""
import argparse
import time

from isoword.features import load_cache
from isoword.models import ModelSpec
from isoword.training import default_train_config, evaluate, stratified_kfold, train_fold

p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
p.add_argument("cache")
p.add_argument("model")
p.add_argument("--epochs", type=int, default=None)
p.add_argument("--fold", type=int, default=0)
p.add_argument("--folds", type=int, default=10)
p.add_argument("--seed", type=int, default=7)
args = p.parse_args()

fs = load_cache(args.cache)
x, y = fs.model_inputs(args.model), fs.labels
train_idx, test_idx = stratified_kfold(y, args.folds, args.seed)[args.fold]
spec = ModelSpec(args.model, fs.class_count, x.shape[1:], seed=args.seed + args.fold)
overrides = {"seed": args.seed + args.fold}
if args.epochs:
    overrides["epochs"] = args.epochs
cfg = default_train_config(args.model, **overrides)

start = time.perf_counter()
model, history = train_fold(spec, (x[train_idx], y[train_idx]), cfg)
for h in history:
    print(f"epoch {h['epoch']:3d}  loss {h['loss']:.4f}  acc {h['accuracy']:.4f}")
ev = evaluate(model, (x[test_idx], y[test_idx]))
print(f"fold {args.fold}: test acc {ev.accuracy:.4f}  loss {ev.loss:.4f}  ({time.perf_counter() - start:.0f}s)")
