"""
Green constants and the frozen-catalyst exponent
================================================

With immobile reactant (kappa = 0) and independent random-walk catalysts,
the annealed exponent has a closed form in terms of the lattice Green
function at the origin.  This script computes G_d two ways, compares the
closed form with the exact finite-torus oracle, and shows what happens when
p * gamma crosses 1 / G_d.
"""

# %%
# Green function at the origin: Fourier quadrature against time integration.
import numpy as np

from catalytic_pam import LatticeSpec, ModelParams, closed_form_lambda0, green_function, isrw_lambda0_series

for d in (3, 4, 5):
    f, t = green_function(d), green_function(d, method="time")
    print(f"G_{d}: fourier {float(f):.10f}  time {float(t):.10f}  tolerance {f.tolerance:.1e}")
print("d = 1, 2 are recurrent:", green_function(1), green_function(2))

# %%
# Closed form versus the torus oracle.  Lambda_p(t) creeps up to the limit;
# in d = 3 the gap closes like t^(-1/2), so even t = 400 is a few percent short.
G3 = green_function(3)
t = np.array([25.0, 50.0, 100.0, 200.0, 400.0])
lattice = LatticeSpec(3, 21)
for p in (1, 2):
    params = ModelParams(gamma=0.2, rho=1.0, p=p)
    lam = isrw_lambda0_series(params, lattice, t) / (p * t)
    closed = float(closed_form_lambda0(params, G3))
    print(f"p={p}: closed form {closed:.5f}")
    for ti, li in zip(t, lam):
        print(f"    t={ti:5.0f}  Lambda={li:.5f}  shortfall {1 - li / closed:6.2%}")

# %%
# Crossing the threshold: above 1/G_3 the exponent is infinite, and the
# oracle's Lambda(t) keeps climbing instead of levelling off.
print(f"1/G_3 = {1 / float(G3):.4f}")
for gamma in (0.2, 0.5, 0.7):
    params = ModelParams(gamma=gamma, rho=1.0)
    lam = isrw_lambda0_series(params, lattice, [200.0, 400.0]) / np.array([200.0, 400.0])
    print(f"gamma={gamma}: Lambda(200)={lam[0]:.4f}  Lambda(400)={lam[1]:.4f}  closed form {closed_form_lambda0(params, G3)}")
