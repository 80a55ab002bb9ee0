"""Two-class minimisation: no gap for an autonomous density, a growing gap for
the checkerboard double-phase weight above the threshold."""
from pqgrowth import integrand as I
from pqgrowth import lavrentiev as L

box = [[0, 1], [0, 1]]
rep = L.estimate_gap(I.example_library("p-power", {"p": 3}), L.mesh_ladder(box, [16, 32, 64]),
                     "x1^2 + 0.5*x2")
print("p-power, p=3:", rep.verdict, [round(e["gap"], 8) for e in rep.path])

rows, reps = L.gap_sweep([3.2, 3.5, 3.8], [16, 32, 64])
for q, r in zip([3.2, 3.5, 3.8], reps):
    print(f"checkerboard q={q}: {r.verdict:12s} gaps "
          + " ".join(f"{e['gap']:.4g}" for e in r.path)
          + f"  extrapolated {r.extrapolated_gap:.4g}")
print(L.sweep_csv(rows).splitlines()[0])
