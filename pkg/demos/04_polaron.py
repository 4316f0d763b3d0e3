"""
The polaron variational problems
================================

P_3 and P_5 maximise a Coulomb-type self-attraction against kinetic energy
over normalised radial profiles.  The solver maximises the scale-free ratio
a^2/(4b), then rescales to the optimiser of a - b.
"""

# %%
import math

import numpy as np

from catalytic_pam import functional_value, gaussian_profile, scale_free_value, solve_variational, theta_estimate

for d in (3, 5):
    res = solve_variational(d)
    fine = solve_variational(d, N=800)
    print(f"P_{d} = {res.value:.6e}  (N=800: {fine.value:.6e}, {res.sweeps} sweeps, converged={res.converged})")
    a, b, value = functional_value(res.profile, tol=1e-8)
    print(f"    at the optimum a = 2b: a={a:.4e} b={b:.4e} a-b={value:.4e}")
    best_gauss = max(scale_free_value(gaussian_profile(d, s, N=1600, r_max=20.0)) for s in np.linspace(0.5, 3, 11))
    print(f"    best Gaussian trial reaches {best_gauss / res.value:.4f} of P_{d}")

# %%
# The optimal profile: positive and radially non-increasing.
prof = solve_variational(3).profile
for r, f in list(zip(prof.r, prof.values))[::40]:
    print(f"r={r:7.2f}  f={f:.4e}")

# %%
# The Brownian functional theta(t; alpha) approaches 4 sqrt(pi) P_3 only in
# a double limit.  At moderate t and alpha = 1 it is far from it.
est = theta_estimate(2.0, 1.0, 2000, seed=1)
print(f"theta(2; 1) = {est.value:.4f} +- {est.stderr:.4f}; 4 sqrt(pi) P_3 = {4 * math.sqrt(math.pi) * solve_variational(3).value:.5f}")
