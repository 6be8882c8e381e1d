"""Lifting-network training: batches, losses, and the optimization loop.

Two networks are trained jointly with the reconstruction matrix D: the state
lifting psi (n_x -> n_z) and the scheduling map lambda (n_z + n_u -> n_p).
The loss is the sum of a reconstruction term (per-sample norm of D z - x) and
an implicit-prediction term that pushes windows predicted through the
offline Hankel stack toward the actual states. Gradients flow through the
Hankel entries and the ridge solve.

States and inputs are scaled per channel to unit variance and shifted to a
positive mean (+3 by default) before entering the networks, so the nets'
input ReLU acts as the identity on in-range data; the scaling is stored in
the model and inverted when decoding estimates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import netgrad as ng
from .errors import (
    ConfigInvalid,
    DimensionMismatch,
    DivergedLoss,
    TrajectoryTooShort,
)
from .trajectory import Trajectory

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ChannelScaler:
    """Per-channel affine codec: encode(x) = (x - shift)/scale + offset."""

    shift: np.ndarray
    scale: np.ndarray
    offset: float

    @classmethod
    def identity(cls, dim: int) -> "ChannelScaler":
        return cls(shift=np.zeros(dim), scale=np.ones(dim), offset=0.0)

    @classmethod
    def fit(cls, X: np.ndarray, offset: float = 3.0) -> "ChannelScaler":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        shift = X.mean(axis=1)
        scale = X.std(axis=1)
        scale = np.where(scale > 1e-12, scale, 1.0)
        return cls(shift=shift, scale=scale, offset=float(offset))

    def encode(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return (X - self.shift) / self.scale + self.offset
        return (X - self.shift[:, None]) / self.scale[:, None] + self.offset

    def decode(self, Xn) -> np.ndarray:
        Xn = np.asarray(Xn, dtype=float)
        if Xn.ndim == 1:
            return (Xn - self.offset) * self.scale + self.shift
        return (Xn - self.offset) * self.scale[:, None] + self.shift[:, None]

    def to_dict(self) -> dict:
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist(),
                "offset": self.offset}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelScaler":
        return cls(shift=np.array(d["shift"], dtype=float),
                   scale=np.array(d["scale"], dtype=float),
                   offset=float(d["offset"]))


class LiftingModel:
    """Trained lifting psi, scheduling map lambda, and reconstruction D.

    The model works internally in scaled coordinates; `lift`, `schedule`,
    `encode_*`, `decode_state` form the same interface the exact oracle and
    the identity baseline expose.
    """

    def __init__(self, n_x: int, n_u: int, n_z: int, n_p: int,
                 psi_hidden=(32, 64), lam_hidden=(32, 64, 64),
                 horizon: int = 4, rng: np.random.Generator | None = None,
                 norm_x: ChannelScaler | None = None,
                 norm_u: ChannelScaler | None = None):
        if n_z < n_x:
            raise ConfigInvalid(f"n_z ({n_z}) must be >= n_x ({n_x})")
        if min(n_x, n_u, n_p) < 1:
            raise ConfigInvalid("n_x, n_u, n_p must be positive")
        self.n_x, self.n_u, self.n_z, self.n_p = n_x, n_u, n_z, n_p
        self.horizon = int(horizon)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.psi = ng.Mlp([n_x, *psi_hidden, n_z], rng=rng)
        self.lam = ng.Mlp([n_z + n_u, *lam_hidden, n_p], rng=rng)
        self.D_param = ng.param(np.zeros((n_x, n_z)))
        self.norm_x = norm_x if norm_x is not None else ChannelScaler.identity(n_x)
        self.norm_u = norm_u if norm_u is not None else ChannelScaler.identity(n_u)

    # -- trainables -----------------------------------------------------------
    def parameters(self) -> list[ng.Tensor]:
        return self.psi.parameters() + self.lam.parameters() + [self.D_param]

    @property
    def D(self) -> np.ndarray:
        return self.D_param.value

    # -- numpy interface (raw coordinates in, scaled out) ----------------------
    def lift(self, X) -> np.ndarray:
        return self.psi.forward_np(self.encode_state(X))

    def schedule(self, Z, U) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        U = np.atleast_2d(self.encode_input(U))
        return self.lam.forward_np(np.vstack([Z, U]))

    def encode_input(self, U) -> np.ndarray:
        return np.atleast_2d(self.norm_u.encode(np.atleast_2d(np.asarray(U, float))))

    def encode_state(self, X) -> np.ndarray:
        return np.atleast_2d(self.norm_x.encode(np.atleast_2d(np.asarray(X, float))))

    def decode_state(self, Xn) -> np.ndarray:
        return self.norm_x.decode(Xn)

    # -- graph interface (scaled coordinates in) --------------------------------
    def lift_graph(self, X_enc: ng.Tensor) -> ng.Tensor:
        return self.psi.forward(X_enc)

    def schedule_graph(self, Z: ng.Tensor, U_enc: ng.Tensor) -> ng.Tensor:
        return self.lam.forward(ng.concat_rows([Z, U_enc]))

    def d_graph(self) -> ng.Tensor:
        return self.D_param

    def encode_state_graph(self, X_raw: ng.Tensor) -> ng.Tensor:
        return ng.constant(self.encode_state(X_raw.value))

    # -- serialization -----------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "version": MODEL_FORMAT_VERSION,
            "dims": {"n_x": self.n_x, "n_u": self.n_u,
                     "n_z": self.n_z, "n_p": self.n_p},
            "horizon": self.horizon,
            "psi": self.psi.to_dict(),
            "lambda": self.lam.to_dict(),
            "D": self.D_param.value.reshape(-1).tolist(),
            "norm_x": self.norm_x.to_dict(),
            "norm_u": self.norm_u.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LiftingModel":
        if d.get("version") != MODEL_FORMAT_VERSION:
            raise ConfigInvalid(f"unsupported model format version {d.get('version')}")
        dims = d["dims"]
        model = cls.__new__(cls)
        model.n_x, model.n_u = dims["n_x"], dims["n_u"]
        model.n_z, model.n_p = dims["n_z"], dims["n_p"]
        model.horizon = int(d["horizon"])
        model.psi = ng.Mlp.from_dict(d["psi"])
        model.lam = ng.Mlp.from_dict(d["lambda"])
        model.D_param = ng.param(
            np.array(d["D"], dtype=float).reshape(model.n_x, model.n_z))
        model.norm_x = ChannelScaler.from_dict(d["norm_x"])
        model.norm_u = ChannelScaler.from_dict(d["norm_u"])
        return model

    def save_json(self, path, extra: dict | None = None) -> None:
        doc = self.to_dict()
        doc.update(extra or {})
        with open(path, "w", encoding="ascii") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)

    @classmethod
    def load_json(cls, path) -> tuple["LiftingModel", dict]:
        with open(path, "r", encoding="ascii") as fh:
            doc = json.load(fh)
        return cls.from_dict(doc), doc


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingBatch:
    """One offline trajectory slice plus a set of prediction windows.

    Window columns are window-major: u_wins[:, w*N + s] is sample s of
    window w; x_wins has N+1 samples per window. All values raw units.
    """

    u_off: np.ndarray      # (n_u, T_off)
    x_off: np.ndarray      # (n_x, T_off + 1)
    u_wins: np.ndarray     # (n_u, N*W)
    x_wins: np.ndarray     # (n_x, (N+1)*W)
    N: int
    n_windows: int
    seed: int


def _window_starts(traj: Trajectory, N: int) -> int:
    """Number of valid window start indices (0 .. T_x - N - 1)."""
    T_x = traj.x.shape[1]
    T_u = traj.u.shape[1]
    return min(T_x - (N + 1), T_u - N) + 1


def build_batches(data, N: int, windows_per_batch: int, seed: int,
                  offline_index: int = 0, offline_slice: int = 200,
                  batches: int | None = None, slice_every: int = 1):
    """Stream of training batches with seeded uniform window sampling.

    The trajectory at `offline_index` provides the offline slice (a
    contiguous run of `offline_slice` inputs, redrawn every `slice_every`
    batches, i.e. once per epoch when that equals the batches-per-epoch);
    windows are drawn uniformly over all valid (trajectory, start) pairs.
    """
    data = list(data)
    if not data:
        raise ConfigInvalid("no training trajectories")
    for i, traj in enumerate(data):
        if traj.x is None:
            raise ConfigInvalid(f"trajectory {i} lacks state samples")
        if _window_starts(traj, N) < 1:
            raise TrajectoryTooShort(
                f"trajectory {i} (T={traj.x.shape[1]}) too short for horizon {N}")
    off = data[offline_index]
    max_slice = off.u.shape[1]
    L_s = min(offline_slice, max_slice)
    pool = [(i, s) for i, traj in enumerate(data)
            for s in range(_window_starts(traj, N))]
    rng = np.random.default_rng(seed)
    count = 0
    s0 = 0
    while batches is None or count < batches:
        if count % max(slice_every, 1) == 0:
            s0 = int(rng.integers(0, max_slice - L_s + 1))
        picks = rng.integers(0, len(pool), size=windows_per_batch)
        u_wins = np.empty((off.u.shape[0], N * windows_per_batch))
        x_wins = np.empty((off.x.shape[0], (N + 1) * windows_per_batch))
        for w, pick in enumerate(picks):
            ti, s = pool[pick]
            u_wins[:, w * N:(w + 1) * N] = data[ti].u[:, s:s + N]
            x_wins[:, w * (N + 1):(w + 1) * (N + 1)] = data[ti].x[:, s:s + N + 1]
        yield TrainingBatch(
            u_off=off.u[:, s0:s0 + L_s], x_off=off.x[:, s0:s0 + L_s + 1],
            u_wins=u_wins, x_wins=x_wins, N=N,
            n_windows=windows_per_batch, seed=seed)
        count += 1


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def _apply_D_blockwise(D_t: ng.Tensor, stacked: ng.Tensor,
                       n_z: int, n_x: int) -> ng.Tensor:
    """Map a ((N+1)*n_z, W) stacked tensor through D per time block."""
    flat = ng.unstack_windows(stacked, n_z)          # (n_z, (N+1)*W)
    mapped = ng.matmul(D_t, flat)                    # (n_x, (N+1)*W)
    n_samples = stacked.value.shape[0] // n_z
    return ng.stack_windows(mapped, n_samples)


def loss_graph(model, batch: TrainingBatch, mu: float = 1e-8):
    """Build both loss terms as graph tensors (shared subexpressions)."""
    N, W = batch.N, batch.n_windows
    n_x, n_z = model.n_x, model.n_z
    x_wins_enc = model.encode_state(batch.x_wins)
    x_wins_c = ng.constant(x_wins_enc)
    D_t = model.d_graph()
    Z_w = model.lift_graph(x_wins_c)                 # (n_z, (N+1)*W)

    # reconstruction: mean over windows of the per-sample norm sum
    recon = ng.sub(ng.matmul(D_t, Z_w), x_wins_c)
    l1 = ng.scale(ng.sum_all(ng.colnorms(recon)), 1.0 / W)

    # implicit prediction through the offline Hankel stack
    u_off_enc = ng.constant(model.encode_input(batch.u_off))
    x_off_enc = ng.constant(model.encode_state(batch.x_off))
    Z_off = model.lift_graph(x_off_enc)              # (n_z, T_off+1)
    T_off = batch.u_off.shape[1]
    Hz = ng.hankel_t(Z_off, N + 1)
    x_stack = ng.stack_windows(x_wins_c, N + 1)      # ((N+1)*n_x, W)
    blocks, parts = [], []
    if N > 0:
        Z_off_head = ng.take_cols(Z_off, np.arange(T_off))
        P_off = model.schedule_graph(Z_off_head, u_off_enc)
        blocks.append(ng.hankel_t(u_off_enc, N))
        u_wins_enc = ng.constant(model.encode_input(batch.u_wins))
        parts.append(ng.stack_windows(u_wins_enc, N))
        if model.n_p > 0:
            V_off = ng.colkron(P_off, u_off_enc)
            blocks.append(ng.hankel_t(V_off, N))
            head = np.concatenate(
                [w * (N + 1) + np.arange(N) for w in range(W)])
            Z_w_head = ng.take_cols(Z_w, head)
            P_w = model.schedule_graph(Z_w_head, u_wins_enc)
            V_w = ng.colkron(P_w, u_wins_enc)
            parts.append(ng.stack_windows(V_w, N))
    blocks.append(ng.hankel_t(x_off_enc, N + 1))
    parts.append(x_stack)
    M = ng.concat_rows(blocks)
    RHS = ng.concat_rows(parts)
    alpha = ng.ridge_lstsq(M, RHS, mu)               # (T_off-N+1, W)
    pred = _apply_D_blockwise(D_t, ng.matmul(Hz, alpha), n_z, n_x)
    l2 = ng.scale(ng.sum_all(ng.colnorms(ng.sub(pred, x_stack))), 1.0 / W)
    return l1, l2


def loss_l1(model, batch: TrainingBatch) -> float:
    """Reconstruction loss: mean over windows of sum_i ||D psi(x_i) - x_i||."""
    l1, _ = loss_graph(model, batch)
    val = float(l1.value)
    if not np.isfinite(val):
        raise DivergedLoss("reconstruction loss is not finite")
    return val


def loss_l2(model, batch: TrainingBatch, mu: float = 1e-8) -> float:
    """Implicit-prediction loss through the offline Hankel representation."""
    _, l2 = loss_graph(model, batch, mu=mu)
    val = float(l2.value)
    if not np.isfinite(val):
        raise DivergedLoss("prediction loss is not finite")
    return val


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    n_x: int
    n_u: int
    n_z: int
    n_p: int = 1
    psi_hidden: tuple = (32, 64)
    lam_hidden: tuple = (32, 64, 64)
    horizon: int = 4
    epochs: int = 400
    windows_per_batch: int = 64
    batches_per_epoch: int = 8
    lr: float = 1e-4
    lr_final: float | None = None  # geometric decay target (None = constant)
    mu: float = 1e-8
    seed: int = 0
    normalize: bool = True
    norm_offset: float = 3.0
    l1_weight: float = 1.0
    l2_weight: float = 1.0
    offline_slice: int = 200
    offline_index: int = 0
    val_windows: int = 128
    patience: int | None = None    # early stop after this many stale epochs
    keep_best: bool = True         # restore the best-validation snapshot

    def validate(self):
        if self.n_z < self.n_x:
            raise ConfigInvalid(f"n_z ({self.n_z}) must be >= n_x ({self.n_x})")
        if self.epochs < 0 or self.horizon < 0:
            raise ConfigInvalid("epochs and horizon must be nonnegative")
        if self.mu <= 0:
            raise ConfigInvalid("ridge parameter mu must be positive")
        if min(self.windows_per_batch, self.batches_per_epoch) < 1:
            raise ConfigInvalid("batch sizing must be positive")


@dataclass
class TrainHistory:
    epochs: list = field(default_factory=list)
    l1: list = field(default_factory=list)
    l2: list = field(default_factory=list)
    val_l1: list = field(default_factory=list)
    val_l2: list = field(default_factory=list)

    def to_csv(self, path_or_buf, comments: dict | None = None) -> None:
        lines = [f"# {k}={v}" for k, v in (comments or {}).items()]
        lines.append("epoch,L1,L2,val_L1,val_L2")
        for row in zip(self.epochs, self.l1, self.l2, self.val_l1, self.val_l2):
            lines.append("%d,%.17g,%.17g,%.17g,%.17g" % row)
        text = "\n".join(lines) + "\n"
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", encoding="ascii", newline="\n") as fh:
                fh.write(text)

    @property
    def final_val_total(self) -> float:
        if not self.val_l1:
            return float("nan")
        return self.val_l1[-1] + self.val_l2[-1]


def _fixed_batch(window_data, offline_traj: Trajectory, N: int,
                 offline_slice: int, n_windows: int, seed: int) -> TrainingBatch:
    """A frozen batch: windows from window_data, offline slice pinned to the
    head of offline_traj (reproducible validation)."""
    gen = build_batches(window_data, N, n_windows, seed,
                        offline_index=0, offline_slice=offline_slice, batches=1)
    batch = next(gen)
    L_s = min(offline_slice, offline_traj.u.shape[1])
    return TrainingBatch(u_off=offline_traj.u[:, :L_s],
                         x_off=offline_traj.x[:, :L_s + 1],
                         u_wins=batch.u_wins, x_wins=batch.x_wins,
                         N=batch.N, n_windows=batch.n_windows, seed=seed)


def train(cfg: TrainConfig, data, val_data=None):
    """Fit a LiftingModel by Adam on the combined loss; returns (model, history).

    Deterministic given cfg.seed (single-threaded). Raises DivergedLoss when
    the loss goes non-finite.
    """
    cfg.validate()
    data = list(data)
    rng = np.random.default_rng(cfg.seed)
    norm_x = norm_u = None
    if cfg.normalize:
        norm_x = ChannelScaler.fit(
            np.concatenate([t.x for t in data], axis=1), offset=cfg.norm_offset)
        norm_u = ChannelScaler.fit(
            np.concatenate([t.u for t in data], axis=1), offset=cfg.norm_offset)
    model = LiftingModel(cfg.n_x, cfg.n_u, cfg.n_z, cfg.n_p,
                         psi_hidden=tuple(cfg.psi_hidden),
                         lam_hidden=tuple(cfg.lam_hidden),
                         horizon=cfg.horizon, rng=rng,
                         norm_x=norm_x, norm_u=norm_u)
    if any(t.x.shape[0] != cfg.n_x or t.u.shape[0] != cfg.n_u for t in data):
        raise DimensionMismatch("trajectory channel dims do not match config")

    batches = build_batches(data, cfg.horizon, cfg.windows_per_batch,
                            int(rng.integers(0, 2 ** 31)),
                            offline_index=cfg.offline_index,
                            offline_slice=cfg.offline_slice,
                            slice_every=cfg.batches_per_epoch)
    first = next(batches)

    # D starts at the least-squares fit of x on psi(x) over the first batch
    Z0 = model.lift(first.x_wins)
    X0 = model.encode_state(first.x_wins)
    G = Z0 @ Z0.T + 1e-9 * np.eye(cfg.n_z)
    model.D_param.value = np.linalg.solve(G, Z0 @ X0.T).T

    val_batch = None
    if val_data is not None:
        val_batch = _fixed_batch(list(val_data), data[cfg.offline_index],
                                 cfg.horizon, cfg.offline_slice,
                                 cfg.val_windows, seed=cfg.seed + 1)

    params = model.parameters()
    state = ng.AdamState(lr=cfg.lr)
    history = TrainHistory()
    best_val, stale = np.inf, 0
    best_snapshot = None
    pending = first
    for epoch in range(cfg.epochs):
        if cfg.lr_final is not None and cfg.epochs > 1:
            # geometric decay: the unsquared-norm losses keep gradient
            # magnitudes O(1) near the optimum, so Adam needs a shrinking
            # step to settle below the lr scale
            frac = epoch / (cfg.epochs - 1)
            state.lr = cfg.lr * (cfg.lr_final / cfg.lr) ** frac
        l1_acc = l2_acc = 0.0
        for _ in range(cfg.batches_per_epoch):
            batch = pending if pending is not None else next(batches)
            pending = None
            l1_t, l2_t = loss_graph(model, batch, mu=cfg.mu)
            total = ng.add(ng.scale(l1_t, cfg.l1_weight),
                           ng.scale(l2_t, cfg.l2_weight))
            if not np.isfinite(float(total.value)):
                raise DivergedLoss(f"loss non-finite at epoch {epoch}")
            grads = ng.grad(total, params)
            ng.adam_step(params, grads, state)
            l1_acc += float(l1_t.value)
            l2_acc += float(l2_t.value)
        history.epochs.append(epoch)
        history.l1.append(l1_acc / cfg.batches_per_epoch)
        history.l2.append(l2_acc / cfg.batches_per_epoch)
        if val_batch is not None:
            v1, v2 = loss_graph(model, val_batch, mu=cfg.mu)
            history.val_l1.append(float(v1.value))
            history.val_l2.append(float(v2.value))
        else:
            history.val_l1.append(history.l1[-1])
            history.val_l2.append(history.l2[-1])
        total_val = history.val_l1[-1] + history.val_l2[-1]
        if total_val < best_val - 1e-12:
            best_val, stale = total_val, 0
            if cfg.keep_best:
                best_snapshot = [p.value.copy() for p in params]
        else:
            stale += 1
            if cfg.patience is not None and stale > cfg.patience:
                break
    if cfg.keep_best and best_snapshot is not None:
        for p, snap in zip(params, best_snapshot):
            p.value = snap
    return model, history
