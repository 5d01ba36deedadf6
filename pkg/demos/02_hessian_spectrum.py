"""Smallest Hessian eigenvalue at the planted weights as the sample size grows.

Run: python3 demos/02_hessian_spectrum.py
"""
# %%
import numpy as np

from cnn_recover import ProblemConfig, make_ground_truth, sample_dataset
from cnn_recover.risk import hessian, population_hessian_mc, spectrum

Wstar = make_ground_truth(k=5, t=2, kappa_target=2.0, seed=0)
print("singular values of W*:", np.linalg.svd(Wstar, compute_uv=False))

# %%
for act in ("relu", "squared_relu", "sigmoid", "quadratic"):
    cfg = ProblemConfig(k=5, r=2, t=2, activation=act)
    H_pop, se = population_hessian_mc(Wstar, cfg, n_mc=200_000, seed=1)
    pop = spectrum(H_pop, Wstar, act, r=2, mc_stderr=se)
    line = []
    for n in (100, 1000, 10_000):
        S = sample_dataset(Wstar, cfg, n, seed=n)
        line.append(f"n={n}: {spectrum(hessian(Wstar, S, cfg), Wstar, act, r=2).lambda_min:.4g}")
    print(f"{act:>13}  " + "  ".join(line) + f"  population: {pop.lambda_min:.4g} (+-{se:.1g})")

# %% [markdown]
# Quadratic activations leave a flat direction: rotating the kernels inside
# their span, W* A with A antisymmetric, does not change W W^T and so not
# the network either.

# %%
cfg = ProblemConfig(k=5, r=2, t=2, activation="quadratic")
S = sample_dataset(Wstar, cfg, 5000, seed=3)
H = hessian(Wstar, S, cfg)
v = (Wstar @ np.array([[0.0, 1.0], [-1.0, 0.0]])).flatten(order="F")
print("Rayleigh quotient along the rotation:", v @ H @ v / (v @ v), " lambda_max:", np.linalg.eigvalsh(H)[-1])
