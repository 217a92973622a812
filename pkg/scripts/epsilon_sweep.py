"""Accuracy of a trained checkpoint on the test split across attack strengths.

    python scripts/epsilon_sweep.py runs/desk --eps 0 0.01 0.02 0.05 0.1 0.2

Writes <run>/epsilon_sweep.csv (epsilon,accuracy,linf). Reads the run's
config_used.json so the split matches training.
"""

import argparse
import json
from pathlib import Path

from fgsmkit.attack import FgsmConfig, attack_dataset, perturbation_stats
from fgsmkit.checkpoint import load_checkpoint
from fgsmkit.config import SPLIT_STREAM, ExperimentConfig
from fgsmkit.cli import load_data
from fgsmkit.data import stratified_split
from fgsmkit.evaluation import accuracy, confusion


def sweep(run: Path, epsilons, checkpoint=None):
    cfg = ExperimentConfig.from_dict(json.loads((run / "config_used.json").read_text()))
    model = load_checkpoint(checkpoint or run / "checkpoint.bin").model(cfg.dtype)
    _, test = stratified_split(load_data(cfg), cfg.train_fraction, cfg.rng(SPLIT_STREAM))
    rows = []
    for eps in epsilons:
        adv = attack_dataset(model, test, FgsmConfig(eps, cfg.clip_min, cfg.clip_max))
        rows.append((eps, accuracy(confusion(model, adv)), perturbation_stats(test.images, adv.images)["linf"]))
    return rows


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("run", type=Path)
    p.add_argument("--eps", type=float, nargs="+", default=[0.0, 0.01, 0.02, 0.05, 0.1, 0.2])
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("-o", "--output", type=Path)
    a = p.parse_args()
    rows = sweep(a.run, a.eps, a.checkpoint)
    lines = ["epsilon,accuracy,linf"] + [f"{e:g},{acc:.6f},{linf:.6f}" for e, acc, linf in rows]
    out = a.output or a.run / "epsilon_sweep.csv"
    out.write_text("\n".join(lines) + "\n")
    for line in lines:
        print(line)
