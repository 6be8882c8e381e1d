"""Koopman-surrogate utilities and the exact LPV benchmark oracle.

The benchmark plant

    x1+ = a*x1 + b*u,   x2+ = c*x2 + d*x1^2,   y = x1

admits an exact finite-dimensional Koopman lifting psi(x) = (x1, x2, x1^2):
the algebraic identity (a*x1 + b*u)^2 = a^2*x1^2 + (2ab*x1 + b^2*u)*u makes
the lifted dynamics linear parameter-varying with scalar scheduling parameter
p = 2ab*z1 + b^2*u. That closed form provides ground truth for the rank and
implicit-representation checks and for the estimator end to end.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import netgrad as ng
from .errors import (
    DimensionMismatch,
    InsufficientData,
    NonFiniteResult,
    UnstableParameters,
)
from .trajectory import (
    DEFAULT_RANK_TOL,
    Trajectory,
    hankel,
    kron_input_cols,
    numerical_rank,
)


@dataclass(frozen=True)
class LiftedTrajectory:
    """A source trajectory pushed through a lifting model.

    z holds all lifted states (n_z, T_x); p and v are defined where inputs
    exist (n_p, T_u) and (n_p*n_u, T_u); u_enc and x_enc are the input/state
    sequences in the model's working coordinates (identical to the raw data
    for the exact oracle and the identity baseline).
    """

    z: np.ndarray
    p: np.ndarray
    v: np.ndarray
    u_enc: np.ndarray
    x_enc: np.ndarray
    source: Trajectory


def lift_trajectory(model, traj: Trajectory) -> LiftedTrajectory:
    """Apply psi, lambda, and the Kronecker augmentation sample-wise."""
    if traj.x is None:
        raise DimensionMismatch("lifting needs state samples")
    if traj.x.shape[0] != model.n_x or traj.u.shape[0] != model.n_u:
        raise DimensionMismatch(
            f"trajectory dims (n_x={traj.x.shape[0]}, n_u={traj.u.shape[0]}) "
            f"do not match model (n_x={model.n_x}, n_u={model.n_u})")
    Z = model.lift(traj.x)
    T_u = traj.u.shape[1]
    U_enc = model.encode_input(traj.u)
    P = model.schedule(Z[:, :T_u], traj.u)
    V = kron_input_cols(P, U_enc) if model.n_p > 0 else np.zeros((0, T_u))
    return LiftedTrajectory(z=Z, p=P, v=V, u_enc=U_enc,
                            x_enc=model.encode_state(traj.x), source=traj)


@dataclass(frozen=True)
class RankCheck:
    passed: bool
    observed: int
    target: int


def check_rank_condition(lifted: LiftedTrajectory, N: int,
                         rank_tol: float = DEFAULT_RANK_TOL) -> RankCheck:
    """Full-rank test of [H_1(z_[0,T-N]); H_N(u); H_N(v)].

    Target rank is n_z + N*n_u*(1 + n_p). Raises InsufficientData when the
    matrix cannot reach the target for want of columns.
    """
    n_z = lifted.z.shape[0]
    n_u = lifted.u_enc.shape[0]
    n_p = lifted.p.shape[0]
    T_u = lifted.u_enc.shape[1]
    target = n_z + N * n_u * (1 + n_p)
    cols = T_u - N + 1
    if cols < target:
        raise InsufficientData(
            f"{cols} Hankel columns cannot reach target rank {target}")
    blocks = [hankel(lifted.z[:, :T_u - N + 1], 1),
              hankel(lifted.u_enc, N)]
    if n_p > 0:
        blocks.append(hankel(lifted.v, N))
    M = np.vstack(blocks)
    observed = numerical_rank(M, rank_tol)
    return RankCheck(passed=observed == target, observed=observed, target=target)


def _stack(win: np.ndarray) -> np.ndarray:
    """Time-major stacked vector of a (dim, L) window."""
    return np.asarray(win, dtype=float).T.reshape(-1)


def implicit_consistency_residual(lifted: LiftedTrajectory,
                                  u_win, v_win, y_win) -> float:
    """Relative least-squares residual of the implicit-representation test.

    Checks whether [u_win; v_win; y_win] (inputs/scheduling over N samples,
    outputs over N samples) lies in the column span of the offline Hankel
    stack [H_N(u); H_N(v); H_N(y)]. Near zero certifies the window as a
    trajectory of the lifted surrogate. Residual is measured in the 2-norm
    relative to the stacked window norm + 1.
    """
    u_win = np.atleast_2d(np.asarray(u_win, dtype=float))
    v_win = np.atleast_2d(np.asarray(v_win, dtype=float))
    y_win = np.atleast_2d(np.asarray(y_win, dtype=float))
    N = u_win.shape[1]
    if v_win.shape[1] != N or y_win.shape[1] != N:
        raise DimensionMismatch("u, v, y windows must share the same length")
    if lifted.source.y is None:
        raise DimensionMismatch("offline trajectory has no outputs")
    blocks = [hankel(lifted.u_enc, N)]
    if lifted.v.shape[0] > 0:
        blocks.append(hankel(lifted.v, N))
    blocks.append(hankel(lifted.source.y[:, :lifted.u_enc.shape[1]], N))
    cols = min(b.shape[1] for b in blocks)
    M = np.vstack([b[:, :cols] for b in blocks])
    w = np.concatenate([_stack(u_win), _stack(v_win), _stack(y_win)])
    if M.shape[0] != w.size:
        raise DimensionMismatch(
            f"stack has {M.shape[0]} rows but window has {w.size} entries")
    sol = np.linalg.lstsq(M, w, rcond=None)[0]
    fit = np.linalg.norm(M @ sol - w)
    return float(fit / (np.linalg.norm(w) + 1.0))


def implicit_predict(model, lifted: LiftedTrajectory,
                     u_win, v_win, x_win, mu: float = 1e-8) -> np.ndarray:
    """Predict the state window through the implicit representation.

    Fits alpha by ridge least squares on [H_N(u); H_N(v); H_{N+1}(x)] against
    the stacked [u_win; v_win; x_win], then reconstructs
    x_hat = D applied blockwise to H_{N+1}(z) alpha. Windows are (dim, L)
    arrays with L = N for u, v and L = N+1 for x; returns (n_x, N+1).
    """
    u_win = np.atleast_2d(np.asarray(u_win, dtype=float))
    v_win = np.atleast_2d(np.asarray(v_win, dtype=float))
    x_win = np.atleast_2d(np.asarray(x_win, dtype=float))
    N = x_win.shape[1] - 1
    if u_win.shape[1] != N or (v_win.size and v_win.shape[1] != N):
        raise DimensionMismatch("input windows must have N samples for N+1 states")
    blocks, parts = [], []
    if N > 0:
        blocks.append(hankel(lifted.u_enc, N))
        parts.append(_stack(u_win))
        if lifted.v.shape[0] > 0:
            blocks.append(hankel(lifted.v, N))
            parts.append(_stack(v_win))
    blocks.append(hankel(lifted.x_enc, N + 1))
    parts.append(_stack(x_win))
    cols = min(b.shape[1] for b in blocks)
    M = np.vstack([b[:, :cols] for b in blocks])
    w = np.concatenate(parts)
    alpha = ng.ridge_lstsq(M, w, mu).value
    z_stacked = hankel(lifted.z, N + 1)[:, :cols] @ alpha
    x_hat = model.D @ z_stacked.reshape(N + 1, model.n_z).T
    if not np.all(np.isfinite(x_hat)):
        raise NonFiniteResult("implicit prediction produced non-finite values")
    return x_hat


# ---------------------------------------------------------------------------
# exact benchmark
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Poly2Dynamics:
    """The benchmark plant map; shared verbatim with the plant catalogue."""

    a: float
    b: float
    c: float
    d: float

    n_x = 2
    n_u = 1

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        u0 = float(np.asarray(u).reshape(-1)[0])
        return np.array([self.a * x[0] + self.b * u0,
                         self.c * x[1] + self.d * x[0] ** 2])

    def rollout(self, x0, U) -> np.ndarray:
        """States (2, T+1) under inputs (1, T) or (T,)."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        T = U.shape[1]
        X = np.empty((2, T + 1))
        X[:, 0] = np.asarray(x0, dtype=float)
        for k in range(T):
            X[:, k + 1] = self.step(X[:, k], U[:, k])
        return X


class ExactLpvSurrogate:
    """Closed-form exact Koopman LPV representation of the benchmark plant."""

    def __init__(self, a: float, b: float, c: float, d: float):
        self.params = dict(a=a, b=b, c=c, d=d)
        self.A = np.array([[a, 0.0, 0.0],
                           [0.0, c, d],
                           [0.0, 0.0, a * a]])
        self.B0 = np.array([[b], [0.0], [0.0]])
        self.B_tilde = np.array([[0.0], [0.0], [1.0]])
        self.C = np.array([[1.0, 0.0]])           # plant output: measure x1
        self.D = np.array([[1.0, 0.0, 0.0],
                           [0.0, 1.0, 0.0]])
        self.n_x, self.n_z, self.n_u, self.n_p = 2, 3, 1, 1

    # -- model interface (numpy) --------------------------------------------
    def lift(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[0] != 2:
            raise DimensionMismatch(f"expected 2 state rows, got {X.shape[0]}")
        return np.vstack([X[0], X[1], X[0] ** 2])

    def schedule(self, Z, U) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        U = np.atleast_2d(np.asarray(U, dtype=float))
        a, b = self.params["a"], self.params["b"]
        return 2.0 * a * b * Z[0:1, :] + b * b * U

    def encode_input(self, U) -> np.ndarray:
        return np.atleast_2d(np.asarray(U, dtype=float))

    def encode_state(self, X) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float))

    def decode_state(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float)

    # -- model interface (graph, for the training losses) --------------------
    def lift_graph(self, X: ng.Tensor) -> ng.Tensor:
        x1 = ng.take_rows(X, [0])
        return ng.concat_rows([X, ng.mul(x1, x1)])

    def schedule_graph(self, Z: ng.Tensor, U: ng.Tensor) -> ng.Tensor:
        a, b = self.params["a"], self.params["b"]
        return ng.add(ng.scale(ng.take_rows(Z, [0]), 2.0 * a * b),
                      ng.scale(U, b * b))

    def d_graph(self) -> ng.Tensor:
        return ng.constant(self.D)

    def encode_input_graph(self, U: ng.Tensor) -> ng.Tensor:
        return U

    def encode_state_graph(self, X: ng.Tensor) -> ng.Tensor:
        return X

    # -- surrogate dynamics ---------------------------------------------------
    def lifted_step(self, z, u, p) -> np.ndarray:
        z = np.asarray(z, dtype=float).reshape(3)
        u = np.asarray(u, dtype=float).reshape(1)
        p = np.asarray(p, dtype=float).reshape(1)
        return (self.A @ z + self.B0[:, 0] * u[0]
                + self.B_tilde[:, 0] * (p[0] * u[0]))

    def to_dict(self) -> dict:
        return {
            "kind": "exact_lpv_benchmark",
            "params": dict(self.params),
            "A": self.A.tolist(),
            "B0": self.B0.tolist(),
            "B_tilde": self.B_tilde.tolist(),
            "C": self.C.tolist(),
            "D": self.D.tolist(),
            "dims": {"n_x": self.n_x, "n_z": self.n_z,
                     "n_u": self.n_u, "n_p": self.n_p},
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)


def make_exact_benchmark(a: float = 0.9, b: float = 0.5,
                         c: float = 0.8, d: float = 0.4):
    """Exact surrogate plus the matching plant dynamics handle.

    Requires |a| < 1 and |c| < 1 (which also bounds the unobserved a^2 mode)
    so that (A, C D) is detectable.
    """
    if not (abs(a) < 1.0 and abs(c) < 1.0 and a * a < 1.0):
        raise UnstableParameters(
            f"need |a|<1 and |c|<1 for a detectable benchmark, got a={a}, c={c}")
    return ExactLpvSurrogate(a, b, c, d), Poly2Dynamics(a, b, c, d)


def lpv_one_step_residuals(surr: ExactLpvSurrogate,
                           lifted: LiftedTrajectory) -> np.ndarray:
    """Per-step norm of z_{k+1} - A z_k - B0 u_k - B~ v_k on a lifted rollout."""
    Z, U, V = lifted.z, lifted.u_enc, lifted.v
    T = U.shape[1]
    pred = surr.A @ Z[:, :T] + surr.B0 @ U + surr.B_tilde @ V
    return np.linalg.norm(Z[:, 1:T + 1] - pred, axis=0)


class IdentityLifting:
    """Identity (or zero-padded) lifting: z embeds x, D = [I 0], no scheduling.

    With n_z = n_x this is the linear data-enabled baseline's model; with
    n_z > n_x it is the forced-identity test mode of the training losses.
    """

    def __init__(self, n_x: int, n_u: int, n_z: int | None = None):
        self.n_x, self.n_u = int(n_x), int(n_u)
        self.n_z = self.n_x if n_z is None else int(n_z)
        if self.n_z < self.n_x:
            raise DimensionMismatch("lifting cannot reduce the state dimension")
        self.n_p = 0
        self.D = np.hstack([np.eye(self.n_x),
                            np.zeros((self.n_x, self.n_z - self.n_x))])
        self._embed = self.D.T

    def lift(self, X) -> np.ndarray:
        return self._embed @ np.atleast_2d(np.asarray(X, dtype=float))

    def schedule(self, Z, U) -> np.ndarray:
        U = np.atleast_2d(np.asarray(U, dtype=float))
        return np.zeros((0, U.shape[1]))

    def encode_input(self, U) -> np.ndarray:
        return np.atleast_2d(np.asarray(U, dtype=float))

    def encode_state(self, X) -> np.ndarray:
        return np.atleast_2d(np.asarray(X, dtype=float))

    def decode_state(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float)

    def lift_graph(self, X: ng.Tensor) -> ng.Tensor:
        return ng.matmul(ng.constant(self._embed), X)

    def schedule_graph(self, Z: ng.Tensor, U: ng.Tensor) -> ng.Tensor:
        return ng.constant(np.zeros((0, U.value.shape[1])))

    def d_graph(self) -> ng.Tensor:
        return ng.constant(self.D)

    def encode_input_graph(self, U: ng.Tensor) -> ng.Tensor:
        return U

    def encode_state_graph(self, X: ng.Tensor) -> ng.Tensor:
        return X
