"""Gradient descent from random starts, then the full recovery pipeline.

Run: python3 demos/04_gradient_descent.py
"""
# %%
import numpy as np

from cnn_recover import ProblemConfig, TrainConfig, learn_cnn, make_ground_truth, matching_error, sample_dataset
from cnn_recover.train import contraction_check

Wstar = make_ground_truth(k=5, t=2, kappa_target=2.0, seed=0)
cfg = ProblemConfig(k=5, r=2, t=2, activation="squared_relu")
S = sample_dataset(Wstar, cfg, 1000, seed=100)

# %% random Gaussian starts, fixed step 0.01
for seed in range(3):
    tc = TrainConfig(step_size=0.01, max_iters=10_000, init="gaussian", seed=seed)
    rep = learn_cnn(S, 10_000, cfg, tc, Wstar=Wstar)
    print(f"seed {seed}: loss {rep.trace[-1].loss:.2e} after {rep.iterations} steps, "
          f"per-step rate {rep.rate_estimate:.4f} (R^2 {rep.tail_r2:.5f})")

# %% one step of size 1/M0 close to the truth contracts the distance
D = np.random.default_rng(0).standard_normal(Wstar.shape)
ratio, bound = contraction_check(Wstar + 1e-3 * D / np.linalg.norm(D), Wstar,
                                 sample_dataset(Wstar, cfg, 10_000, seed=5), cfg)
print(f"\ncontraction ratio {ratio:.3f} (nominal factor {bound:.4f})")

# %% tensor initialization followed by gradient descent
big = sample_dataset(Wstar, cfg, 200_000, seed=11)
for resample in (True, False):
    rep = learn_cnn(big, 500, cfg, TrainConfig(max_iters=500, resample=resample, seed=3), Wstar=Wstar)
    print(f"resample={resample}: init error {matching_error(rep.init_W, Wstar):.3f} -> "
          f"final {matching_error(rep.final_W, Wstar):.2e} in {rep.iterations} steps")
