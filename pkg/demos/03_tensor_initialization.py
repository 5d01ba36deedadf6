"""Moment-based initialization: estimate M2 and M3, whiten, decompose, rescale.

Run: python3 demos/03_tensor_initialization.py
"""
# %%
import numpy as np

from cnn_recover import ProblemConfig, make_ground_truth, matching_error, sample_dataset
from cnn_recover.tensor_init import (
    TensorInitOptions, decompose, estimate_moments, m2_sign, recover_magnitudes, tensor_initialize, whiten,
)

Wstar = make_ground_truth(k=5, t=2, kappa_target=2.0, seed=0)
cfg = ProblemConfig(k=5, r=2, t=2, activation="squared_relu")

# %% step by step on one sample set
S = sample_dataset(Wstar, cfg, 100_000, seed=7)
mom = estimate_moments(S, cfg)
print("top eigenvalues of M2:", np.round(np.linalg.eigvalsh(mom.m2)[::-1][:3], 4))
Wh, _ = whiten(mom.m2, cfg.t)
dec = decompose(mom.m3, Wh, cfg.t, seed=0, sign=m2_sign(mom.m2, cfg.t))
print("relative CP residual:", round(dec.residual, 4))
norms, signs = recover_magnitudes(dec, cfg.activation)
print("recovered norms:", np.round(norms, 4), " true:", np.round(np.linalg.norm(Wstar, axis=0), 4))

# %% accuracy against sample size
for n in (10_000, 40_000, 160_000):
    errs = []
    for seed in range(5):
        W0 = tensor_initialize(sample_dataset(Wstar, cfg, n, seed=seed), cfg, TensorInitOptions(seed=seed))
        errs.append(matching_error(W0, Wstar))
    print(f"n={n:>7}: median relative error {np.median(errs):.4f}")
