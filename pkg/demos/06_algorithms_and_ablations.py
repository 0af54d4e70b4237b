"""Comparing the full method against its baselines and single-removal variants.

Desk-scale illustration: fewer rounds than the benchmark configuration, one
seed, so treat the numbers as a demo rather than a measurement. The acceptance
suite (tests/test_acceptance.py) runs the real seed-suite comparison.

Run with:  python demos/06_algorithms_and_ablations.py   (about a minute)
"""

import dataclasses

from mixfed.config import AblationFlags, preset
from mixfed.federation import Experiment

VARIANTS = [
    ("mdm (full)", dict(algo="mdm")),
    ("fedavg", dict(algo="fedavg")),
    ("fedprox", dict(algo="fedprox")),
    ("no-tailored", dict(algo="mdm", ablation=AblationFlags(no_tailored_updating=True))),
    ("no-memory", dict(algo="mdm", ablation=AblationFlags(no_memory=True))),
    ("no-triplet", dict(algo="mdm", ablation=AblationFlags(no_triplet=True))),
    ("no-cls", dict(algo="mdm", ablation=AblationFlags(no_cls=True))),
]

base = dataclasses.replace(preset("reference", seed=1), rounds=12, threads=1)
print(f"{'variant':<12} {'avg mDice':>9}   per-client")
for name, changes in VARIANTS:
    cfg = dataclasses.replace(base, **changes)
    exp = Experiment(cfg)
    exp.run()
    final = exp.reports[-1]
    per_client = " ".join(f"{c.mdice:.2f}" for c in final.clients)
    print(f"{name:<12} {final.average_mdice:9.3f}   {per_client}")
