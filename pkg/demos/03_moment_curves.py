"""Conditional moment curves of simulated body-weight / strength style data.

With correlated random slopes the conditional covariance of (X, Y) is a
quadratic function of z; without slope covariance it is a straight line.
"""

import tempfile

import numpy as np

from covariability import (
    TABLE3_FULL,
    WEIGHT_LEVELS,
    conditional_moments,
    moment_curve,
    overlay,
    simulate,
    uniform_levels,
    write_panels,
)

zs = np.array(WEIGHT_LEVELS, dtype=float)
m = conditional_moments(TABLE3_FULL, zs)
print("closed-form cov(X, Y | z):", np.round(m.cov_xy, 1))
print("second differences:      ", np.round(np.diff(m.cov_xy, 2), 3))

# %% the same curve estimated from 175000 simulated rows
d = simulate(TABLE3_FULL, uniform_levels(WEIGHT_LEVELS, 175_000, 0), 0)
curve = moment_curve(d, n_boot=100, seed=0)
for z, est, lo, hi in zip(curve.z, curve.estimate["cov_xy"], curve.lower["cov_xy"], curve.upper["cov_xy"]):
    print(f"z={z:.0f}  cov={est:8.1f}  95% band ({lo:.1f}, {hi:.1f})")

# %% plot-ready tables, one per panel
panels = overlay(TABLE3_FULL, TABLE3_FULL.to_reduced(), curve)
with tempfile.TemporaryDirectory() as out:
    for path in write_panels(panels, out):
        print("wrote", path.name)
