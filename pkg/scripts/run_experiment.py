"""Full pipeline in one output directory: train, attack, defend, compare.

    python scripts/run_experiment.py --out runs/desk [--data-dir DIR] [--epsilon 0.1]
"""

import argparse
import sys
from pathlib import Path

from fgsmkit.cli import main


def step(*args):
    code = main([str(a) for a in args])
    if code:
        sys.exit(code)


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--data-dir")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--mix-alpha", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=7)
    a = p.parse_args()
    out = Path(a.out)
    common = ["--out", out, "--seed", a.seed, "--epsilon", a.epsilon]
    if a.data_dir:
        common += ["--data-dir", a.data_dir]
    step("train", *common)
    step("attack", *common)
    step("defend", *common, "--mix-alpha", a.mix_alpha)
    # defended model under the same attack, next to the plain model's numbers
    step("evaluate", *common, "--checkpoint", out / "checkpoint_robust.bin", "--attacked", "--name", "robust_adv")
    step("compare", out / "report_adv.json", out / "report_robust_adv.json", "-o", out / "comparison_defense.json")
