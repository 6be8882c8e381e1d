"""A short desk-scale training run of the lifting networks on poly2.

Trains psi, lambda, and D for a few dozen epochs (enough to watch the loss
fall, not enough for estimation-grade accuracy; the acceptance suite runs
the full schedule) and shows the learned reconstruction on held-out states.
"""

import numpy as np

from koopmhe.lifting import TrainConfig, train
from koopmhe.plants import default_noise_std, generate_dataset, make_poly2

plant = make_poly2()
sx, sy = default_noise_std(plant)
train_traj = generate_dataset(plant, length=1200, seed=11, hold=40,
                              state_noise_std=sx, output_noise_std=sy).noisy
val_traj = generate_dataset(plant, length=300, seed=12, hold=40,
                            state_noise_std=sx, output_noise_std=sy).noisy

cfg = TrainConfig(n_x=2, n_u=1, n_z=3, n_p=1, horizon=4,
                  epochs=60, windows_per_batch=32, batches_per_epoch=6,
                  lr=3e-3, lr_final=1e-5, offline_slice=120, val_windows=48,
                  seed=0)
model, hist = train(cfg, [train_traj], [val_traj])

print("epoch   L1        L2        val_L1    val_L2")
for e in range(0, cfg.epochs, 10):
    print(f"{hist.epochs[e]:5d}  {hist.l1[e]:.5f}  {hist.l2[e]:.5f}  "
          f"{hist.val_l1[e]:.5f}  {hist.val_l2[e]:.5f}")
print(f"best validation L1+L2: "
      f"{min(a + b for a, b in zip(hist.val_l1, hist.val_l2)):.5f}")

# reconstruction quality on fresh states: x ~= D psi(x)
fresh = generate_dataset(plant, length=200, seed=13, hold=10,
                         input_noise_scale=0.0).clean
Z = model.lift(fresh.x)
X_rec = model.decode_state(model.D @ Z)
err = np.linalg.norm(X_rec - fresh.x, axis=0)
print(f"held-out reconstruction error: mean {err.mean():.4f}, "
      f"max {err.max():.4f} (physical units)")
