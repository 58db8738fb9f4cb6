"""
Second-order convergence with the BUG preconditioner
====================================================

Implicit midpoint on a variable-coefficient diffusion problem with a
Gaussian manufactured solution.  Tolerances follow ``eps = delta = h^3``
and ``eps2 = h^2``; the final-time error should drop by about 4 per
grid halving.
"""

# %%
import os
from pathlib import Path

import numpy as np

from lrbug import fdm
from lrbug import timestep as ts
from lrbug.cli import write_plots

out = Path(os.environ.get("LRBUG_OUTPUT_ROOT", "results")) / "demos" / "parameter_study"
out.mkdir(parents=True, exist_ok=True)

problem = fdm.preset("ex51_parameter")
histories = {}
errors = []
for n in (63, 127, 255):
    hist = ts.run_integration(problem.at(n), ts.midpoint(), "bug")
    histories[f"n={n}"] = hist
    errors.append(hist.final_error)
    its = hist.column("iterations")
    print(f"n = {n:3d}  h = {hist.h:.2e}  error = {hist.final_error:.3e}  "
          f"iterations: first {its[0]}, then max {its[1:].max()}")

print("observed orders:", np.round(np.log2(np.array(errors[:-1]) / np.array(errors[1:])), 2))

# %%
# After the first step the previous solution is already an excellent
# anchor, so one preconditioned iteration is usually enough.
for path in write_plots(histories, out, "BUG, implicit midpoint"):
    print("wrote", path)
