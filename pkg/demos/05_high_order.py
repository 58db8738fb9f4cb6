"""
Fourth order in space and time
==============================

Fourth-order stencils with BDF4 or the three-stage Crouzeix DIRK.  The
rounding tolerance has to shrink to ``h^5`` to keep the low-rank error
below the discretisation error.  DIRK stages reuse the matching stage of
the previous step as their initial guess.
"""

# %%
import numpy as np

from lrbug import fdm
from lrbug import timestep as ts
from lrbug.reference import dense_integration

grids = (15, 31, 63)

for name, scheme in (("ex55_bdf", ts.bdf(4)), ("ex56_dirk", ts.crouzeix_dirk4())):
    problem = fdm.preset(name)
    errs, ref = [], []
    for n in grids:
        spec = problem.at(n)
        errs.append(ts.run_integration(spec, scheme, "bug").final_error)
        ref.append(dense_integration(spec, scheme).final_error)
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    print(f"{name}: low rank {['%.3e' % e for e in errs]}")
    print(f"{' ' * len(name)}  full rank {['%.3e' % e for e in ref]}  orders {np.round(orders, 2)}")

# %%
# Loosening the tolerance to h^3 is harmless for BUG but not for ES.
problem = fdm.preset("ex55_bdf")
for pc in ("bug", "es"):
    errs = []
    for n in (63, 127):
        spec = problem.at(n)
        policy = ts.TolerancePolicy(eps=spec.h**3, eps2=spec.h**4, delta=spec.h**3)
        errs.append(ts.run_integration(spec, ts.bdf(4), pc, policy).final_error)
    print(f"BDF4 {pc}, eps = h^3: errors {['%.3e' % e for e in errs]}, order {np.log2(errs[0] / errs[1]):.2f}")
