"""
Synthetic analogy problems
==========================

Generate base/target pairs that share a random sub-DAG, look at one of
them, and check that the gold correspondences are what the exact matcher
finds.
"""

import numpy as np

from structmap import synth
from structmap.ir import to_sexpr
from structmap.matcher import solve_exact
from structmap.smt import check_mapping, structural_score

# desk-sized problems: at most four layers and twelve gold correspondences
params = synth.desk_params()
examples = synth.generate(200, params, seed=7)

ex = examples[0]
print(to_sexpr(ex.base))
print(to_sexpr(ex.target))
print("gold correspondences:", sorted(ex.gold_m))
print("gold inferences:", sorted(ex.gold_ci))

###############################################################################
# Size statistics
# ---------------

sizes = np.array([(len(e.base.expressions()), len(e.base.entities()), len(e.gold_m)) for e in examples])
print("mean expressions / entities / correspondences:", sizes.mean(axis=0).round(1))

# the full-size setting generates the large training corpus
full = synth.generate(200, synth.GenParams(), seed=7)
print("full-size means:", np.mean([[len(e.base.expressions()), len(e.base.entities()), len(e.gold_m)]
                                   for e in full], axis=0).round(1))

###############################################################################
# Gold versus the exact matcher
# -----------------------------
# Gold sets are always valid; the matcher can only tie or beat them.

ratios = []
for e in examples[:40]:
    assert check_mapping(e.base, e.target, e.gold_m).error_free
    best = solve_exact(e.base, e.target)
    ratios.append(best.score / max(structural_score(e.base, e.target, e.gold_m), 1))
print("matcher / gold score: min %.2f  mean %.2f" % (min(ratios), np.mean(ratios)))
