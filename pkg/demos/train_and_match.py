"""
Training the matching network
=============================

Train on desk-sized synthetic problems, compare single runs with the
agreement-based selection over several relabelings, and match the solar
system against the atom.

With a cached desk run (see ``structmap.experiments``) the trained model
is reused; otherwise a short run of ``STEPS`` steps is trained here, which
is enough to see the loss fall but not to reach the desk-scale numbers.
"""

import sys

import numpy as np

from structmap import experiments, fixtures
from structmap.amn import AMN, AmnConfig, Trainer, sem_select
from structmap.evaluate import evaluate, model_predictor
from structmap.synth import desk_params, generate

STEPS = int(sys.argv[1]) if len(sys.argv) > 1 else 300

run = experiments.DeskRun(model={"gold_order": "top_down"})
if experiments.checkpoint_path(run).exists():
    model, meta = experiments.trained(run)
    print("cached model: %d steps, %.2f cpu hours" % (meta["steps"], meta["cpu_seconds"] / 3600))
else:
    model = AMN(AmnConfig(gold_order="top_down"))
    trainer = Trainer(model, seed=0)
    train = generate(500, desk_params(), seed=1)
    log = trainer.fit(train, STEPS)
    for k in range(0, STEPS, 50):
        print("steps %4d-%4d  loss %.2f" % (k, k + 50, np.mean(log.loss_corr[k:k + 50])))

###############################################################################
# Held-out problems
# -----------------
# Each run relabels the problem at random; with r > 1 the run that agrees
# most with the others (Jaccard overlap of correspondences) is kept.

test = generate(40, desk_params(), seed=2)
for r in (1, 8):
    print(evaluate(model_predictor(model, r), test, r).summary())

###############################################################################
# The solar system and the atom
# -----------------------------

solar, atom = fixtures.solar_atom()
m = sem_select(solar, atom, model, 16, np.random.default_rng(0))
for b, t in m.sorted_pairs():
    print(f"{solar[b].label:>16} [{b:2d}]  <->  [{t}] {atom[t].label}")
print("score", m.score, " inferences", sorted(m.inferences))
