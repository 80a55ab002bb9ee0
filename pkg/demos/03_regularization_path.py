"""Regularised minimisers F + eps |z|^q along a decreasing eps ladder for the
double-phase example below the (n + alpha) p / n threshold."""
from pqgrowth import mesh as M
from pqgrowth import solver as S

F = S.below_threshold_example()
print("q =", F.params.q, "threshold", F.params.threshold)
mesh = M.Mesh([[0, 1], [0, 1]], 64)
path = S.regularization_path(F, mesh, "x1", epsilons=[2.0 ** -k for k in range(3, 9)])
for (eps, rep), d in zip(path.entries, [None] + path.cauchy_defects):
    ratio = S.dual_norm_check(F, rep.field, None, "x1")["ratio"]
    print(f"eps={eps:<10.6g} energy={rep.energy:.8f} residual={rep.el_residual:.1e} "
          f"dual ratio={ratio:.4f} cauchy={'' if d is None else f'{d:.2e}'}")
print("extrapolated limit:", path.limit_energy_estimate)
