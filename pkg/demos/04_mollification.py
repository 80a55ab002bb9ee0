"""Two-parameter mollification of a field with a point gradient singularity,
and the Theta scaling of the correction term A_2."""
import numpy as np

from pqgrowth import covering as C
from pqgrowth import mesh as M
from pqgrowth import mollify as Mo
from pqgrowth.solver import below_threshold_example

F = below_threshold_example()
cfg = Mo.ApproximantConfig(2, F.params.p, F.params.q)
print(f"Theta={cfg.Theta:.4f} m={cfg.m:.3f}")

mesh = M.Mesh([[0, 1], [0, 1]], 128)
u = Mo.point_singularity_field(mesh, (0.3, 0.6), 0.5)
cov = C.wb_enlarge(C.whitney("unit-square", 8), cfg.m)
target = M.energy(F, u)
for row in Mo.convergence_study(F, u, cov, cfg, [2.0 ** -k for k in range(2, 6)]):
    print(f"eps={row['epsilon']:<8g} W1p error={row['w1p_error']:.4f} "
          f"energy defect={(row['energy'] - target) / target:+.4f}")

d = Mo.h4_commutation_defect(F, u, 1 / 32)
print(f"H4 commutation: fitted C={d.C:.4f}, p95 defect={d.percentile():g}")

cfg = Mo.ApproximantConfig(2, 2, 2.2)
cov = C.wb_enlarge(C.whitney("unit-square", 8), cfg.m)
r = Mo.theta_scaling_study(cov, cfg, 2.2, (0.25 - 1 / 192, 0.3125))
print(f"||A_2||_q ~ eps^{r['slope']:.3f} (Theta = {r['Theta']:.3f})")
