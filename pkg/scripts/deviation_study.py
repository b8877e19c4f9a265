"""Write the perturbation study (deviation.csv + deviation.svg) into a directory.

    python scripts/deviation_study.py runs/deviation --seed 3
"""

import argparse
from pathlib import Path

from sandplanner.experiments import deviation_study
from sandplanner.plotting import plot_results

p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
p.add_argument("out", type=Path)
p.add_argument("--seed", type=int, default=0)
p.add_argument("--draws", type=int, default=10)
p.add_argument("--s-max", type=float, default=3.0)
a = p.parse_args()

csv_path = deviation_study(a.out, a.seed, a.s_max, a.draws)
print(csv_path)
for svg in plot_results(a.out):
    print(svg)
