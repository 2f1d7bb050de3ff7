"""
Solar system and Rutherford atom
================================

Walk through the classic analogy with the symbolic tools: constraint
checks on hand-picked correspondences, the exact matcher, and the
inferences it projects from the solar system onto the atom.
"""

from structmap import fixtures, matcher, smt
from structmap.ir import to_dot

solar, atom = fixtures.solar_atom()
print(solar, atom)

# ids follow the order of statements in the bundled files
for node in solar:
    print(node.id, node.label, node.args)

###############################################################################
# Constraint checks
# -----------------
# Solar GREATER over MASS (id 7) may map to atom GREATER (id 6) only if the
# MASS expressions and then the entities line up as well.

lonely = {(7, 6)}
print("parallel connectivity violations:", smt.check_parallel_connectivity(solar, atom, lonely))

closed = {(7, 6), (2, 2), (3, 3), (0, 0), (1, 1)}
print("error free:", smt.check_mapping(solar, atom, closed).error_free)
print("score:", smt.structural_score(solar, atom, closed))

# an entity pair on its own is degenerate: no higher structure supports it
print("degenerate:", smt.find_degenerate(solar, atom, {(0, 0)}))

###############################################################################
# Best mapping
# ------------

best = matcher.solve_exact(solar, atom)
print("correspondences:", best.sorted_pairs())
print("score:", best.score)

for v in sorted(best.inferences):
    term = smt.project_inference(solar, atom, best, v)
    print(f"infer [{v}] {solar[v].label}:", smt.render_term(term, atom))

# the dot text renders with graphviz, e.g. `dot -Tpng -o analogy.png`
dot = to_dot(solar, atom, best)
print(dot.splitlines()[0], "...", len(dot.splitlines()), "lines")
