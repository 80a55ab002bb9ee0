"""Whitney cubes of the unit square, their Whitney-Besicovitch enlargement and
the partition of unity built on it."""
import numpy as np

from pqgrowth import covering as C

wh = C.whitney("unit-square", depth=7)
cov = C.wb_enlarge(wh)
a = cov.audit
print(f"{wh.count} cubes, sides {wh.sides.min():g}..{wh.sides.max():g}")
print(f"multiplicity {a.multiplicity} (bound {a.multiplicity_bound})")
print(f"overlap ratio {a.overlap_min:.4g} (bound {a.overlap_bound:.4g})")
print(f"dist/side >= {a.distance_ratio_min:.3g}; the enlarged-cube distance bound "
      f"asks for {a.distance_required:.3g} and fails on {a.distance_violations} cubes")

pou = C.partition_of_unity(cov)
X = C.covered_samples("unit-square", 7, 2000, seed=1)
print("max |sum psi - 1| at 2000 points:", np.abs(pou.sum_at(X) - 1).max())
print("gradient constant c:", round(pou.gradient_constant(), 3))

# cover.csv style output for plotting elsewhere
print(cov.to_csv().splitlines()[:3])
