"""Trajectory containers, Hankel matrices, and persistency of excitation.

Everything downstream rests on one convention: sequences are stored with
samples as columns, and stacked windows are time-major. This script builds a
few Hankel matrices by hand and shows how the excitation of an input signal
shows up as the rank of its Hankel matrix.
"""

import numpy as np

from koopmhe.plants import excitation_signal
from koopmhe.trajectory import (
    Trajectory,
    hankel,
    is_persistently_exciting,
    kron_input,
    window,
)

# a scalar sequence and its depth-2 Hankel matrix: columns are windows
seq = np.array([1.0, 2.0, 3.0, 4.0])
print("H_2 of (1,2,3,4):")
print(hankel(seq, 2))

# Hankel columns and stacked windows are the same object
traj = Trajectory(dt=1.0, u=np.zeros((1, 3)), x=[[1.0, 2.0, 3.0, 4.0]])
print("\nwindow [1,2] of x:", window(traj, "x", 1, 2).values)
print("column 1 of H_2:  ", hankel(traj.x, 2)[:, 1])

# the Kronecker-augmented input that makes the lifted dynamics LTI
p = np.array([2.0, 3.0])
u = np.array([1.0, -1.0])
print("\np (x) u =", kron_input(p, u))

# persistency of excitation: a constant input spans nothing
const = np.ones(40)
ok, rank = is_persistently_exciting(const, order=3)
print(f"\nconstant input:  PE(3)? {ok} (rank {rank}, needs 3)")

# an excitation signal held for a few steps spans more the shorter the hold
for hold in (20, 5, 1):
    sig = excitation_signal([-1.0], [1.0], hold=hold, length=120, seed=0)
    ok, rank = is_persistently_exciting(sig, order=8)
    print(f"hold={hold:2d}: PE(8)? {str(ok):5s} (rank {rank} of 8)")
