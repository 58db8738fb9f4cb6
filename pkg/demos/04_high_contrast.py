"""
Strongly anisotropic diffusion
==============================

With diffusion 100 times stronger in y than in x, the ES preconditioner
built from averaged coefficients is a poor approximate inverse.  At
``eps = h^3`` its solves stop early enough that the error stagnates;
tightening the tolerance by ``eta^2`` restores second order.  BUG needs
no such adjustment.
"""

# %%
import numpy as np

from lrbug import fdm
from lrbug import timestep as ts

problem = fdm.preset("ex_highcontrast")
eta = problem.contrast_eta
grids = (63, 127, 255)


def study(precond, eps_scale=1.0):
    errs = []
    for n in grids:
        spec = problem.at(n)
        policy = ts.tolerance_for(spec.h, 2, eps_scale=eps_scale)
        errs.append(ts.run_integration(spec, ts.midpoint(), precond, policy).final_error)
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    return errs, orders


for label, pc, scale in (("ES, eps = h^3", "es", 1.0), ("ES, eps = eta^2 h^3", "es", eta**2),
                         ("BUG, eps = h^3", "bug", 1.0)):
    errs, orders = study(pc, scale)
    print(f"{label:<20} errors {['%.2e' % e for e in errs]}  orders {np.round(orders, 2)}")
