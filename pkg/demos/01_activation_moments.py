"""Gaussian moments of each activation and the positivity constant rho.

Run: python3 demos/01_activation_moments.py
"""
# %%
import math

from cnn_recover.activation import KINDS, check_properties, moment_profile, table_closed_form

# %% [markdown]
# rho(sigma) decides whether the population Hessian at the planted weights is
# positive definite.  ReLU gives a constant, squared ReLU grows like sigma^2.

# %%
print(f"{'activation':>13} " + " ".join(f"rho({s:g})".rjust(11) for s in (0.5, 1, 2)))
for kind in KINDS:
    vals = [moment_profile(kind, s).rho for s in (0.5, 1.0, 2.0)]
    print(f"{kind:>13} " + " ".join(f"{v:11.6f}" for v in vals))

# %%
print("\nReLU constant 1/4 - 1/(2 pi) =", 0.25 - 1 / (2 * math.pi))
print("squared ReLU rho / sigma^2 =", moment_profile("squared_relu", 1.0).rho, "= 4/pi - 1 =", 4 / math.pi - 1)

# %% [markdown]
# Closed forms exist for a few kinds; quadrature covers the rest and is
# cross-checked against them.

# %%
prof = moment_profile("erf", 1.0)
print("\nerf at sigma=1, closed-form cells:", prof.closed_form)
for name, v in table_closed_form("erf", 1.0).items():
    print(f"  {name}: {v:.10f}")

# %%
for kind in ("relu", "sigmoid", "quadratic", "linear"):
    rep = check_properties(kind, [0.5, 1.0, 2.0])
    print(f"{kind:>10}: properties {rep.property1}, {rep.property2}, {rep.property3}", rep.failures or "")
