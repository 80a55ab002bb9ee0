"""Integrand library tour: evaluate a few densities, audit their structural
hypotheses and check the Fenchel extremal identity on a radial example."""
import numpy as np

from pqgrowth import integrand as I

spec = I.SampleSpec(count=5000, seed=0)
for name in ("p-power", "double-phase", "F2", "log-growth", "F7-max"):
    F = I.example_library(name)
    verdicts = {h: I.check_hypothesis(F, h, spec).passed for h in F.hypotheses}
    print(f"{name:14s} {F.flavor:18s} p={F.params.p:g} q={F.params.q:g} {verdicts}")

# a double-phase density at one point
F = I.example_library("double-phase", {"p": 2, "q": 3, "a": "0.5"})
z = np.array([[0.6], [0.8]])
print("F(x, z) with |z| = 1:", F(np.array([0.3, 0.3]), z))
print("grad_z:", I.grad_z(F, np.array([0.3, 0.3]), z).ravel())

# swapping p for q on the ellipticity side breaks H1
from dataclasses import replace
broken = replace(F, params=replace(F.params, p=F.params.q))
rep = I.check_hypothesis(broken, "H1", spec)
print("broken integrand, H1 violations:", rep.details["violation_count"])

print("Fenchel defect, |z|^3:",
      I.fenchel_identity_check(I.example_library("p-power", {"p": 3}), np.zeros(2), 2 * z))
