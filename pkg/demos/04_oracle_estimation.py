"""The moving horizon estimator on the exact lifting: convergence and noise.

Runs the estimator with the closed-form oracle lifting, once from a wrong
initial guess with clean measurements (exponential error decay) and once
with output noise at two levels (error scales with the noise).
"""

import numpy as np

from koopmhe.mhe import MheConfig, build_hankel_stack, run_estimation
from koopmhe.plants import generate_dataset, make_poly2
from koopmhe.surrogate import make_exact_benchmark

plant = make_poly2()
surr, _ = make_exact_benchmark()

offline = generate_dataset(plant, length=200, seed=1, hold=1,
                           input_noise_scale=0.0).clean
stack = build_hankel_stack(offline, surr, N=4)

# exact lifting and clean data: the residual bounds are all zero, which
# switches the combination-vector penalty off entirely
cfg = MheConfig(N=4, eps_x_bar=0.0, eps_y_bar=0.0,
                delta_z_bar=0.0, delta_y_bar=0.0)

online = generate_dataset(plant, length=120, seed=2, input_noise_scale=0.0)
records, metrics = run_estimation(surr, stack, cfg, online.clean.u,
                                  online.clean.y,
                                  x0_guess=1.05 * plant.x0,
                                  x_true=online.clean.x)
errs = np.array([np.linalg.norm(r.x_hat_phys - online.clean.x[:, r.k])
                 for r in records])
print("error decay from a 5% prior offset (clean measurements):")
for k in (0, 4, 10, 20, 40, 80):
    print(f"  k={k:3d}: ||x - x_hat|| = {errs[k]:.3e}")
print(f"mean QP iterations: {metrics.mean_iterations:.0f}, "
      f"failures: {metrics.failure_count}")

print("\noutput noise scaling (steady-state RMSE over k in [60, 120]):")
for sigma in (1e-3, 2e-3):
    noisy = generate_dataset(plant, length=120, seed=2,
                             input_noise_scale=0.0, output_noise_std=sigma)
    recs, _ = run_estimation(surr, stack, cfg, noisy.clean.u, noisy.noisy.y,
                             x0_guess=plant.x0, x_true=noisy.clean.x)
    X_hat = np.stack([r.x_hat_phys for r in recs], axis=1)
    err = X_hat[:, 60:] - noisy.clean.x[:, 60:121]
    rmse = np.sqrt(np.mean(np.sum(err ** 2, axis=0) / 2))
    print(f"  sigma={sigma:.0e}: RMSE = {rmse:.3e}")
