"""Data-enabled moving horizon estimation in the lifted space.

Offline, one noisy trajectory is lifted and packed into four Hankel blocks
(inputs, Kronecker-augmented inputs, outputs, lifted states). Online, each
step solves a convex QP over the window [k-N, k]:

    min  lambda_z ||z0 - prior||^2_P + sum ||pi_z||^2_Q + sum ||pi_y||^2_R
         + lambda_alpha (eps_x + eps_y + delta_z + delta_y) ||alpha||^2
    s.t. Hu alpha = u window
         Hv alpha = v window
         Hy alpha = y window - pi_y
         Hz alpha = z window + pi_z
         D z_j in X for all window samples

For k < N the same program runs with N replaced by k (full information).
Scheduling parameters are causal: p_j = lambda(z_hat_{j|j}, u_j) is computed
once u_j is known and stored forward, never recomputed from smoothed
estimates. State estimates are reconstructed linearly: x_hat = D z_hat.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigInvalid,
    DimensionMismatch,
    TrajectoryTooShort,
)
from .qpsolve import STATUS_SOLVED, QpProblem, QpSolution, solve_qp
from .surrogate import IdentityLifting, lift_trajectory
from .trajectory import Trajectory, hankel, kron_input

ESTIMATE_CSV_HEADER = ("k,t,{x_cols},z_norm,V_opt,pi_y_norm,pi_z_norm,"
                       "alpha_norm,iterations,status")


# ---------------------------------------------------------------------------
# offline stack
# ---------------------------------------------------------------------------

@dataclass
class HankelStack:
    """Hankel blocks of the offline data plus the raw sequences.

    The stored blocks are at the configured horizon; shallower depths (the
    full-information steps k < N) are derived from the kept sequences and
    cached. All blocks share exactly T - N + 1 columns.
    """

    Hu: np.ndarray
    Hv: np.ndarray
    Hy: np.ndarray
    Hz: np.ndarray
    N: int
    T: int
    dims: dict
    u_seq: np.ndarray          # (n_u, T) encoded inputs
    v_seq: np.ndarray          # (n_p*n_u, T)
    y_seq: np.ndarray          # (n_y, T+1) raw outputs
    z_seq: np.ndarray          # (n_z, T+1) lifted (noisy) states
    _depth_cache: dict = field(default_factory=dict, repr=False)

    def blocks_for_depth(self, h: int):
        """(Hu_h, Hv_h, Hy_{h+1}, Hz_{h+1}); h = 0 yields empty input blocks."""
        if h == self.N:
            return self.Hu, self.Hv, self.Hy, self.Hz
        if h not in self._depth_cache:
            if h == 0:
                cols = self.T + 1
                hu = np.zeros((0, cols))
                hv = np.zeros((0, cols))
            else:
                hu = hankel(self.u_seq, h)[:, :self.T - h + 1]
                hv = (hankel(self.v_seq, h)[:, :self.T - h + 1]
                      if self.v_seq.shape[0] else np.zeros((0, self.T - h + 1)))
            self._depth_cache[h] = (hu, hv,
                                    hankel(self.y_seq, h + 1),
                                    hankel(self.z_seq, h + 1))
        return self._depth_cache[h]

    def to_dict(self) -> dict:
        return {"N": self.N, "T": self.T, "dims": dict(self.dims),
                "u_seq": self.u_seq.tolist(), "v_seq": self.v_seq.tolist(),
                "y_seq": self.y_seq.tolist(), "z_seq": self.z_seq.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "HankelStack":
        u = np.array(d["u_seq"], dtype=float)
        v = np.array(d["v_seq"], dtype=float)
        y = np.array(d["y_seq"], dtype=float)
        z = np.array(d["z_seq"], dtype=float)
        N = int(d["N"])
        return cls(Hu=hankel(u, N),
                   Hv=hankel(v, N) if v.shape[0] else np.zeros((0, u.shape[1] - N + 1)),
                   Hy=hankel(y, N + 1), Hz=hankel(z, N + 1),
                   N=N, T=int(d["T"]), dims=dict(d["dims"]),
                   u_seq=u, v_seq=v, y_seq=y, z_seq=z)


def build_hankel_stack(offline: Trajectory, model, N: int) -> HankelStack:
    """Lift the noisy offline trajectory and pack the four Hankel blocks."""
    if offline.y is None or offline.x is None:
        raise DimensionMismatch("offline trajectory needs states and outputs")
    T = offline.u.shape[1]
    if T < N + 1:
        raise TrajectoryTooShort(f"offline length {T} cannot host depth {N}")
    lifted = lift_trajectory(model, offline)
    if lifted.z.shape[1] != T + 1:
        raise DimensionMismatch(
            f"protocol expects {T + 1} states for {T} inputs, got {lifted.z.shape[1]}")
    Hu = hankel(lifted.u_enc, N)
    Hv = (hankel(lifted.v, N) if lifted.v.shape[0]
          else np.zeros((0, T - N + 1)))
    Hy = hankel(offline.y, N + 1)
    Hz = hankel(lifted.z, N + 1)
    cols = {b.shape[1] for b in (Hu, Hy, Hz)} | ({Hv.shape[1]} if Hv.size else set())
    if cols != {T - N + 1}:
        raise DimensionMismatch(f"inconsistent Hankel column counts: {cols}")
    dims = {"n_u": model.n_u, "n_p": model.n_p, "n_y": offline.y.shape[0],
            "n_z": model.n_z, "n_x": model.n_x}
    return HankelStack(Hu=Hu, Hv=Hv, Hy=Hy, Hz=Hz, N=N, T=T, dims=dims,
                       u_seq=lifted.u_enc, v_seq=lifted.v,
                       y_seq=offline.y.copy(), z_seq=lifted.z)


def make_baseline(offline: Trajectory, N: int):
    """Identity-lifting model and stack: the linear data-enabled baseline.

    z = x (noisy states), D = I, no scheduling rows; the lifted-state block
    becomes the Hankel matrix of the noisy offline states.
    """
    ident = IdentityLifting(n_x=offline.x.shape[0], n_u=offline.u.shape[0])
    return ident, build_hankel_stack(offline, ident, N)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _expand_weight(w, dim: int, name: str) -> np.ndarray:
    W = np.asarray(w, dtype=float)
    if W.ndim == 0:
        W = float(W) * np.eye(dim)
    if W.shape != (dim, dim):
        raise ConfigInvalid(f"{name} must be scalar or ({dim},{dim}), got {W.shape}")
    try:
        np.linalg.cholesky(W)
    except np.linalg.LinAlgError:
        raise ConfigInvalid(f"{name} is not positive definite") from None
    return W


@dataclass
class MheConfig:
    """Horizon, weights, residual bounds, state box, and solver knobs."""

    N: int = 4
    P: object = 1.0               # prior weight (scalar => scalar * identity)
    Q: object = 1.0               # pi_z weight
    R: object = 1.0               # pi_y weight
    lambda_z: float = 1.0
    lambda_alpha: float = 1.0
    eps_x_bar: float = 0.0        # offline state-noise bound
    eps_y_bar: float = 0.0        # offline output-noise bound
    delta_z_bar: float = 0.003    # lifted-state modeling-residual bound
    delta_y_bar: float = 0.003    # output modeling-residual bound
    x_box: tuple | None = None    # (lower, upper) physical-unit arrays on D z
    baseline_mode: bool = False
    tol_primal: float = 1e-8
    tol_dual: float = 1e-8
    max_iter: int = 20000

    def validate(self, n_z: int, n_y: int):
        if self.N < 0:
            raise ConfigInvalid("horizon must be nonnegative")
        if self.lambda_z <= 0 or self.lambda_alpha <= 0:
            raise ConfigInvalid("lambda_z and lambda_alpha must be positive")
        for b in (self.eps_x_bar, self.eps_y_bar,
                  self.delta_z_bar, self.delta_y_bar):
            if b < 0:
                raise ConfigInvalid("residual bounds must be nonnegative")
        _expand_weight(self.P, n_z, "P")
        _expand_weight(self.Q, n_z, "Q")
        _expand_weight(self.R, n_y, "R")
        if self.x_box is not None:
            lo, hi = (np.asarray(b, dtype=float) for b in self.x_box)
            if lo.shape != hi.shape or np.any(lo > hi):
                raise ConfigInvalid("state box must satisfy lower <= upper")

    @property
    def alpha_weight(self) -> float:
        return self.lambda_alpha * (self.eps_x_bar + self.eps_y_bar
                                    + self.delta_z_bar + self.delta_y_bar)


@dataclass
class QpLayout:
    """Decision-vector offsets for one assembled window."""

    h: int
    n_z: int
    n_y: int
    n_x: int
    M: int
    with_aux: bool

    @property
    def nz1(self) -> int:
        return (self.h + 1) * self.n_z

    @property
    def ny1(self) -> int:
        return (self.h + 1) * self.n_y

    @property
    def off_py(self) -> int:
        return self.nz1

    @property
    def off_pz(self) -> int:
        return self.nz1 + self.ny1

    @property
    def off_alpha(self) -> int:
        return self.nz1 + self.ny1 + self.nz1

    @property
    def n(self) -> int:
        base = self.off_alpha + self.M
        return base + (self.h + 1) * self.n_x if self.with_aux else base

    def z_block(self, j: int) -> slice:
        return slice(j * self.n_z, (j + 1) * self.n_z)


def _stacked(win: np.ndarray) -> np.ndarray:
    return np.asarray(win, dtype=float).T.reshape(-1)


def assemble_qp(blocks, u_win, v_win, y_win, prior_z, config: MheConfig,
                model) -> tuple[QpProblem, QpLayout, float]:
    """Build the window QP. Returns (problem, layout, cost constant).

    blocks = (Hu_h, Hv_h, Hy_{h+1}, Hz_{h+1}); windows are (dim, h) arrays
    for u/v and (n_y, h+1) for y; prior_z is the (n_z,) prior for the
    window's first lifted state. The cost constant restores the prior term's
    dropped constant so V = 0.5 x'Hc x + g'x + const.
    """
    Hu, Hv, Hy, Hz = blocks
    n_z, n_x = model.n_z, model.n_x
    h = Hz.shape[0] // n_z - 1
    n_y = Hy.shape[0] // (h + 1)
    M = Hz.shape[1]
    u_win = np.atleast_2d(np.asarray(u_win, dtype=float))
    v_win = np.atleast_2d(np.asarray(v_win, dtype=float))
    y_win = np.atleast_2d(np.asarray(y_win, dtype=float))
    if y_win.shape[1] != h + 1 or (h > 0 and u_win.shape[1] != h):
        raise DimensionMismatch(
            f"window lengths ({u_win.shape[1]} inputs, {y_win.shape[1]} outputs) "
            f"do not match depth {h}")
    if Hu.shape[0] != h * u_win.shape[0] or (Hv.shape[0] and h > 0
                                             and Hv.shape[0] != h * v_win.shape[0]):
        raise DimensionMismatch("Hankel row counts do not match the window dims")

    D = np.asarray(model.D, dtype=float)
    identity_D = D.shape == (n_x, n_z) and n_x == n_z and np.array_equal(D, np.eye(n_x))
    boxed = config.x_box is not None and np.any(
        np.isfinite(np.asarray(config.x_box, dtype=float)))
    with_aux = boxed and not identity_D
    layout = QpLayout(h=h, n_z=n_z, n_y=n_y, n_x=n_x, M=M, with_aux=with_aux)
    n = layout.n

    P = _expand_weight(config.P, n_z, "P")
    Q = _expand_weight(config.Q, n_z, "Q")
    R = _expand_weight(config.R, n_y, "R")
    prior_z = np.asarray(prior_z, dtype=float).reshape(n_z)

    Hc = np.zeros((n, n))
    g = np.zeros(n)
    Hc[:n_z, :n_z] = 2.0 * config.lambda_z * P
    g[:n_z] = -2.0 * config.lambda_z * (P @ prior_z)
    const = config.lambda_z * float(prior_z @ P @ prior_z)
    for j in range(h + 1):
        o = layout.off_py + j * n_y
        Hc[o:o + n_y, o:o + n_y] = 2.0 * R
        o = layout.off_pz + j * n_z
        Hc[o:o + n_z, o:o + n_z] = 2.0 * Q
    a0 = layout.off_alpha
    w_alpha = config.alpha_weight
    if w_alpha > 0:
        Hc[a0:a0 + M, a0:a0 + M] = 2.0 * w_alpha * np.eye(M)

    rows_u = Hu.shape[0]
    rows_v = Hv.shape[0]
    ny1, nz1 = layout.ny1, layout.nz1
    aux_rows = (h + 1) * n_x if with_aux else 0
    m_eq = rows_u + rows_v + ny1 + nz1 + aux_rows
    Aeq = np.zeros((m_eq, n))
    beq = np.zeros(m_eq)
    r = 0
    if rows_u:
        Aeq[r:r + rows_u, a0:a0 + M] = Hu
        beq[r:r + rows_u] = _stacked(u_win)
        r += rows_u
    if rows_v:
        Aeq[r:r + rows_v, a0:a0 + M] = Hv
        beq[r:r + rows_v] = _stacked(v_win)
        r += rows_v
    Aeq[r:r + ny1, layout.off_py:layout.off_py + ny1] = np.eye(ny1)
    Aeq[r:r + ny1, a0:a0 + M] = Hy
    beq[r:r + ny1] = _stacked(y_win)
    r += ny1
    Aeq[r:r + nz1, :nz1] = -np.eye(nz1)
    Aeq[r:r + nz1, layout.off_pz:layout.off_pz + nz1] = -np.eye(nz1)
    Aeq[r:r + nz1, a0:a0 + M] = Hz
    r += nz1

    lb = ub = None
    if boxed:
        lo_phys, hi_phys = (np.asarray(b, dtype=float) for b in config.x_box)
        lo = model.encode_state(lo_phys[:, None])[:, 0]
        hi = model.encode_state(hi_phys[:, None])[:, 0]
        lb = np.full(n, -np.inf)
        ub = np.full(n, np.inf)
        if identity_D:
            for j in range(h + 1):
                blk = layout.z_block(j)
                lb[blk], ub[blk] = lo, hi
        else:
            s0 = a0 + M
            for j in range(h + 1):
                o = s0 + j * n_x
                Aeq[r:r + n_x, layout.z_block(j)] = D
                Aeq[r:r + n_x, o:o + n_x] = -np.eye(n_x)
                lb[o:o + n_x], ub[o:o + n_x] = lo, hi
                r += n_x
    return QpProblem(Hc=Hc, g=g, Aeq=Aeq, beq=beq, lb=lb, ub=ub), layout, const


def _refresh_qp(prob, layout: QpLayout, u_win, v_win, y_win, prior_z,
                config: MheConfig, model) -> float:
    """Rewrite g and beq of a previously assembled QP (fixed structure).

    Valid only when the window depth and all weights/bounds are unchanged;
    the cost matrix, equality matrix, and box stay as assembled.
    """
    n_z = layout.n_z
    P = _expand_weight(config.P, n_z, "P")
    prior_z = np.asarray(prior_z, dtype=float).reshape(n_z)
    prob.g[:n_z] = -2.0 * config.lambda_z * (P @ prior_z)
    rows_u = layout.h * model.n_u
    rows_v = layout.h * model.n_p * model.n_u
    r = 0
    if rows_u:
        prob.beq[r:r + rows_u] = _stacked(np.atleast_2d(u_win))
        r += rows_u
    if rows_v:
        prob.beq[r:r + rows_v] = _stacked(np.atleast_2d(v_win))
        r += rows_v
    prob.beq[r:r + layout.ny1] = _stacked(np.atleast_2d(y_win))
    return config.lambda_z * float(prior_z @ P @ prior_z)


# ---------------------------------------------------------------------------
# online state
# ---------------------------------------------------------------------------

@dataclass
class EstimateRecord:
    """Per-step output: lifted estimate, reconstruction, cost, solver stats."""

    k: int
    z_hat: np.ndarray
    x_hat: np.ndarray            # D @ z_hat, model working units (bit-exact)
    x_hat_phys: np.ndarray       # decoded to physical units
    v_opt: float
    pi_y_norm: float
    pi_z_norm: float
    alpha_norm: float
    iterations: int
    status: str
    degraded: bool = False
    p: np.ndarray | None = None  # scheduling parameter, set once u_k is known


class MheState:
    """Rolling buffers and the filtered-estimate history of one stream."""

    def __init__(self, model, stack: HankelStack, config: MheConfig,
                 x0_guess: np.ndarray):
        config.validate(model.n_z, stack.dims["n_y"])
        self.model = model
        self.stack = stack
        self.config = config
        self.k = 0
        x0_guess = np.asarray(x0_guess, dtype=float).reshape(model.n_x)
        self.z0_bar = model.lift(x0_guess[:, None])[:, 0]
        self.u_buf: list[np.ndarray] = []     # encoded inputs, last <= N
        self.v_buf: list[np.ndarray] = []
        self.y_buf: list[np.ndarray] = []     # raw outputs, last <= N
        self.filtered: list[np.ndarray] = []  # z_hat_{j|j} for all j
        self.last_record: EstimateRecord | None = None
        self._warm: tuple[int, np.ndarray] | None = None
        self._qp_cache: tuple | None = None   # (problem, layout) at depth N
        self._admm_cache: dict = {}

    def prior(self, h: int) -> np.ndarray:
        if self.k == 0:
            return self.z0_bar
        return self.filtered[self.k - h]


def mhe_step(state: MheState, u_prev, y_k) -> EstimateRecord:
    """Advance one step: ingest u_{k-1} (None at k=0) and y_k, solve, record.

    On solver failure the previous estimate is carried forward and the
    record is flagged degraded (online estimation must not halt).
    """
    model, stack, config = state.model, state.stack, state.config
    k = state.k
    if k > 0:
        if u_prev is None:
            raise ConfigInvalid(f"step {k} needs the input applied at {k - 1}")
        u_prev = np.asarray(u_prev, dtype=float).reshape(model.n_u)
        u_enc = model.encode_input(u_prev[:, None])[:, 0]
        if model.n_p > 0:
            z_prev = state.filtered[k - 1]
            p_prev = model.schedule(z_prev[:, None], u_prev[:, None])[:, 0]
            v_prev = kron_input(p_prev, u_enc)
            if state.last_record is not None:
                state.last_record.p = p_prev
        else:
            v_prev = np.zeros(0)
        state.u_buf.append(u_enc)
        state.v_buf.append(v_prev)
        if len(state.u_buf) > config.N:
            state.u_buf.pop(0)
            state.v_buf.pop(0)
    y_k = np.asarray(y_k, dtype=float).reshape(stack.dims["n_y"])
    state.y_buf.append(y_k)
    if len(state.y_buf) > config.N + 1:
        state.y_buf.pop(0)

    h = min(k, config.N)
    blocks = stack.blocks_for_depth(h)
    u_win = (np.stack(state.u_buf[-h:], axis=1)
             if h else np.zeros((model.n_u, 0)))
    v_win = (np.stack(state.v_buf[-h:], axis=1)
             if h and model.n_p > 0 else np.zeros((model.n_p * model.n_u, 0)))
    y_win = np.stack(state.y_buf[-(h + 1):], axis=1)
    prior = state.prior(h)

    if h == config.N and state._qp_cache is not None:
        prob, layout = state._qp_cache
        const = _refresh_qp(prob, layout, u_win, v_win, y_win, prior,
                            config, model)
    else:
        prob, layout, const = assemble_qp(blocks, u_win, v_win, y_win, prior,
                                          config, model)
        if h == config.N:
            state._qp_cache = (prob, layout)
    warm = None
    if state._warm is not None and state._warm[0] == prob.n and h == config.N:
        warm = _shift_warm_start(state._warm[1], layout)
    sol = solve_qp(prob, tol_primal=config.tol_primal,
                   tol_dual=config.tol_dual, max_iter=config.max_iter,
                   warm_start=warm,
                   cache=state._admm_cache if h == config.N else None)

    degraded = sol.status != STATUS_SOLVED
    if degraded and state.filtered:
        z_hat = state.filtered[-1].copy()
    else:
        z_hat = sol.x[layout.z_block(h)].copy()
    x_hat = model.D @ z_hat
    record = EstimateRecord(
        k=k, z_hat=z_hat, x_hat=x_hat,
        x_hat_phys=model.decode_state(x_hat[:, None])[:, 0],
        v_opt=float(sol.objective + const),
        pi_y_norm=float(np.linalg.norm(
            sol.x[layout.off_py:layout.off_py + layout.ny1])),
        pi_z_norm=float(np.linalg.norm(
            sol.x[layout.off_pz:layout.off_pz + layout.nz1])),
        alpha_norm=float(np.linalg.norm(
            sol.x[layout.off_alpha:layout.off_alpha + layout.M])),
        iterations=sol.iterations, status=sol.status, degraded=degraded)
    state.filtered.append(z_hat)
    state.last_record = record
    state._warm = (prob.n, sol.x.copy())
    state.k += 1
    return record


def _shift_warm_start(prev: np.ndarray, layout: QpLayout) -> np.ndarray:
    """Shift the previous solution one sample forward (receding window)."""
    out = prev.copy()

    def shift_block(off, dim, count):
        blk = prev[off:off + dim * count].reshape(count, dim)
        out[off:off + dim * (count - 1)] = blk[1:].reshape(-1)
        out[off + dim * (count - 1):off + dim * count] = blk[-1]

    shift_block(0, layout.n_z, layout.h + 1)
    shift_block(layout.off_py, layout.n_y, layout.h + 1)
    shift_block(layout.off_pz, layout.n_z, layout.h + 1)
    if layout.with_aux:
        shift_block(layout.off_alpha + layout.M, layout.n_x, layout.h + 1)
    return out


# ---------------------------------------------------------------------------
# batch runner and metrics
# ---------------------------------------------------------------------------

@dataclass
class RunMetrics:
    rmse_per_channel: np.ndarray
    rmse_aggregate: float
    mean_iterations: float
    failure_count: int
    steps: int

    def to_dict(self) -> dict:
        return {"rmse_per_channel": self.rmse_per_channel.tolist(),
                "rmse_aggregate": self.rmse_aggregate,
                "mean_iterations": self.mean_iterations,
                "failure_count": self.failure_count,
                "steps": self.steps}


def run_estimation(model, stack: HankelStack, config: MheConfig,
                   u_seq, y_seq, x0_guess, x_true=None):
    """Run the estimator over an online stream; returns (records, metrics).

    u_seq is (n_u, K) known inputs, y_seq (n_y, K+1) noisy outputs; step k
    consumes y_k and, for k > 0, u_{k-1}. When x_true (n_x, K+1) is given,
    RMSE is computed in physical units over all steps.
    """
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
    y_seq = np.atleast_2d(np.asarray(y_seq, dtype=float))
    K = y_seq.shape[1]
    if K == 0:
        return [], RunMetrics(rmse_per_channel=np.zeros(model.n_x),
                              rmse_aggregate=0.0, mean_iterations=0.0,
                              failure_count=0, steps=0)
    if u_seq.shape[1] < K - 1:
        raise DimensionMismatch(
            f"{K} outputs need at least {K - 1} inputs, got {u_seq.shape[1]}")
    state = MheState(model, stack, config, x0_guess)
    records = []
    for k in range(K):
        u_prev = u_seq[:, k - 1] if k > 0 else None
        records.append(mhe_step(state, u_prev, y_seq[:, k]))
    X_hat = np.stack([r.x_hat_phys for r in records], axis=1)
    if x_true is not None:
        x_true = np.atleast_2d(np.asarray(x_true, dtype=float))[:, :K]
        err = X_hat - x_true
        rmse = np.sqrt(np.mean(err ** 2, axis=1))
    else:
        rmse = np.full(model.n_x, np.nan)
    metrics = RunMetrics(
        rmse_per_channel=rmse,
        rmse_aggregate=float(np.sqrt(np.mean(rmse ** 2))),
        mean_iterations=float(np.mean([r.iterations for r in records])),
        failure_count=sum(r.degraded for r in records),
        steps=K)
    return records, metrics


def write_estimates_csv(records, dt: float, path_or_buf,
                        comments: dict | None = None) -> None:
    """Estimate log: k, t, physical estimate channels, norms, solver stats."""
    if not records:
        n_x = 0
    else:
        n_x = records[0].x_hat_phys.size
    x_cols = ",".join(f"xhat{i+1}" for i in range(n_x))
    lines = [f"# {key}={val}" for key, val in (comments or {}).items()]
    lines.append(ESTIMATE_CSV_HEADER.format(x_cols=x_cols))
    for r in records:
        cells = [str(r.k), "%.17g" % (r.k * dt)]
        cells += ["%.17g" % v for v in r.x_hat_phys]
        cells += ["%.17g" % float(np.linalg.norm(r.z_hat)),
                  "%.17g" % r.v_opt, "%.17g" % r.pi_y_norm,
                  "%.17g" % r.pi_z_norm, "%.17g" % r.alpha_norm,
                  str(r.iterations), r.status]
        lines.append(",".join(cells))
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)
