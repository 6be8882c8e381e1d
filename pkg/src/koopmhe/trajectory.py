"""Sequence containers and Hankel-matrix algebra.

Sequences are stored column-wise: an array of shape ``(m, L)`` holds ``L``
samples of an ``m``-dimensional channel, one sample per column. Stacked
vectors and Hankel columns are time-major (sample k's full vector precedes
sample k+1's). All operations are pure functions on immutable inputs.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DepthExceedsLength,
    DimensionMismatch,
    EmptySequence,
    IndexOutOfRange,
)

DEFAULT_RANK_TOL = 1e-10


def _as_seq(seq) -> np.ndarray:
    """Coerce to a (m, L) float array; 1-D input becomes a scalar channel."""
    arr = np.asarray(seq, dtype=float)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2:
        raise DimensionMismatch(f"sequence must be 1-D or 2-D, got ndim={arr.ndim}")
    return arr


def hankel(seq, depth: int) -> np.ndarray:
    """Block Hankel matrix of the given depth.

    Args:
        seq: samples as columns, shape (m, L) (1-D treated as m=1).
        depth: window length N >= 1.

    Returns:
        Array of shape (depth*m, L-depth+1); column j is the stacked window
        seq[:, j:j+depth] in time-major order.
    """
    arr = _as_seq(seq)
    m, L = arr.shape
    if L == 0:
        raise EmptySequence("cannot build a Hankel matrix from an empty sequence")
    if depth < 1:
        raise DepthExceedsLength(f"depth must be >= 1, got {depth}")
    if L < depth:
        raise DepthExceedsLength(f"depth {depth} exceeds sequence length {L}")
    cols = L - depth + 1
    H = np.empty((depth * m, cols))
    for i in range(depth):
        H[i * m:(i + 1) * m, :] = arr[:, i:i + cols]
    return H


def kron_input(p, u) -> np.ndarray:
    """Kronecker-augmented input v = p (x) u, with v[i*n_u + j] = p[i]*u[j]."""
    p = np.asarray(p, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    return np.kron(p, u)


def kron_input_cols(P, U) -> np.ndarray:
    """Column-wise Kronecker product of two sequences.

    P has shape (n_p, L), U has shape (n_u, L); the result has shape
    (n_p*n_u, L) whose column k is kron_input(P[:, k], U[:, k]).
    """
    P = _as_seq(P)
    U = _as_seq(U)
    if P.shape[1] != U.shape[1]:
        raise DimensionMismatch(
            f"sequence lengths differ: {P.shape[1]} vs {U.shape[1]}")
    n_p, L = P.shape
    n_u = U.shape[0]
    return (P[:, np.newaxis, :] * U[np.newaxis, :, :]).reshape(n_p * n_u, L)


def numerical_rank(M: np.ndarray, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    """Rank = number of singular values above rank_tol * largest."""
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rank_tol * s[0]))


def is_persistently_exciting(seq, order: int,
                             rank_tol: float = DEFAULT_RANK_TOL):
    """Check persistency of excitation of the given order.

    Returns:
        (flag, rank): flag is True iff the numerical rank of the depth-`order`
        Hankel matrix equals order * m.
    """
    arr = _as_seq(seq)
    H = hankel(arr, order)
    r = numerical_rank(H, rank_tol)
    return r == order * arr.shape[0], r


@dataclass(frozen=True)
class StackedWindow:
    """Vertical concatenation of consecutive samples of one channel."""

    values: np.ndarray           # shape ((b-a+1)*m,)
    start: int
    stop: int                    # inclusive
    dim: int

    def __post_init__(self):
        expected = (self.stop - self.start + 1) * self.dim
        if self.values.shape != (expected,):
            raise DimensionMismatch(
                f"stacked window has length {self.values.shape}, expected ({expected},)")


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed input/state/output sequences with sampling metadata.

    u has shape (n_u, T_u); x and y, when present, have shape (n_x, T) and
    (n_y, T). Inputs may be one sample shorter than states/outputs (the
    u_[0,T-1] versus x_[0,T] convention); otherwise lengths must agree.
    """

    dt: float
    u: np.ndarray
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "u", _as_seq(self.u))
        for name in ("x", "y"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _as_seq(val))
        lengths = {n: s.shape[1] for n, s in
                   (("x", self.x), ("y", self.y)) if s is not None}
        if lengths:
            ref = max(lengths.values())
            for name, L in lengths.items():
                if L != ref:
                    raise DimensionMismatch(
                        f"channel {name} has {L} samples, expected {ref}")
            if self.u.shape[1] not in (ref, ref - 1):
                raise DimensionMismatch(
                    f"input length {self.u.shape[1]} is neither T={ref} nor T-1={ref - 1}")

    @property
    def T_len(self) -> int:
        """Number of samples of the longest channel."""
        cands = [self.u.shape[1]]
        cands += [s.shape[1] for s in (self.x, self.y) if s is not None]
        return max(cands)

    @property
    def n_u(self) -> int:
        return self.u.shape[0]

    @property
    def n_x(self) -> int | None:
        return None if self.x is None else self.x.shape[0]

    @property
    def n_y(self) -> int | None:
        return None if self.y is None else self.y.shape[0]

    def channel(self, name: str) -> np.ndarray:
        if name == "u":
            return self.u
        if name == "x" and self.x is not None:
            return self.x
        if name == "y" and self.y is not None:
            return self.y
        raise IndexOutOfRange(f"trajectory has no channel {name!r}")


def window(traj: Trajectory, channel: str, start: int, stop: int) -> StackedWindow:
    """Stacked window of one channel over samples [start, stop] inclusive.

    Matches the Hankel column convention: hankel(seq, N) column j equals
    window(traj, ch, j, j+N-1).values.
    """
    seq = traj.channel(channel)
    m, L = seq.shape
    if not (0 <= start <= stop < L):
        raise IndexOutOfRange(
            f"window [{start}, {stop}] outside channel {channel!r} of length {L}")
    vals = seq[:, start:stop + 1].T.reshape(-1).copy()
    return StackedWindow(values=vals, start=start, stop=stop, dim=m)


def stack_cols(seq, start: int, stop: int) -> np.ndarray:
    """Stacked vector of seq[:, start:stop+1], time-major (plain-array form)."""
    arr = _as_seq(seq)
    if not (0 <= start <= stop < arr.shape[1]):
        raise IndexOutOfRange(
            f"window [{start}, {stop}] outside sequence of length {arr.shape[1]}")
    return arr[:, start:stop + 1].T.reshape(-1).copy()


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------

FLOAT_FMT = "%.17g"   # shortest 17-significant-digit form; exact f64 round trip


def _fmt(v: float) -> str:
    return FLOAT_FMT % v


def to_csv(traj: Trajectory, path_or_buf, comments: dict | None = None) -> None:
    """Write the trajectory in the standard CSV layout.

    Header `t,u1..u{n_u}[,x1..][,y1..]`; one row per sample; floats at 17
    significant digits (bit-exact round trip). When inputs are one sample
    shorter than states/outputs the final row's input cells are left empty.
    Optional `comments` are emitted as leading `# key=value` lines.
    """
    T = traj.T_len
    cols = ["t"] + [f"u{i+1}" for i in range(traj.n_u)]
    if traj.x is not None:
        cols += [f"x{i+1}" for i in range(traj.n_x)]
    if traj.y is not None:
        cols += [f"y{i+1}" for i in range(traj.n_y)]
    lines = []
    for key, val in (comments or {}).items():
        lines.append(f"# {key}={val}")
    lines.append(",".join(cols))
    for k in range(T):
        row = [_fmt(k * traj.dt)]
        if k < traj.u.shape[1]:
            row += [_fmt(v) for v in traj.u[:, k]]
        else:
            row += [""] * traj.n_u
        if traj.x is not None:
            row += [_fmt(v) for v in traj.x[:, k]]
        if traj.y is not None:
            row += [_fmt(v) for v in traj.y[:, k]]
        lines.append(",".join(row))
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_buf, "write"):
        path_or_buf.write(text)
    else:
        with open(path_or_buf, "w", encoding="ascii", newline="\n") as fh:
            fh.write(text)


def from_csv(path_or_buf) -> Trajectory:
    """Read a trajectory written by :func:`to_csv`. Leading '#' lines are skipped."""
    if hasattr(path_or_buf, "read"):
        text = path_or_buf.read()
    else:
        with open(path_or_buf, "r", encoding="ascii") as fh:
            text = fh.read()
    lines = [ln for ln in io.StringIO(text).read().splitlines()
             if ln and not ln.startswith("#")]
    if not lines:
        raise EmptySequence("CSV contains no data")
    header = lines[0].split(",")
    if header[0] != "t":
        raise DimensionMismatch(f"first CSV column must be 't', got {header[0]!r}")

    def _span(prefix):
        idx = [i for i, h in enumerate(header) if h.startswith(prefix) and h[1:].isdigit()]
        return (idx[0], len(idx)) if idx else (None, 0)

    u0, n_u = _span("u")
    x0, n_x = _span("x")
    y0, n_y = _span("y")
    if n_u == 0:
        raise DimensionMismatch("CSV has no input columns")
    rows = [ln.split(",") for ln in lines[1:]]
    T = len(rows)
    t = np.array([float(r[0]) for r in rows])
    dt = float(t[1] - t[0]) if T > 1 else 1.0

    def _block(col0, n, allow_tail_empty):
        if n == 0:
            return None
        out, length = np.empty((n, T)), T
        for k, r in enumerate(rows):
            cells = r[col0:col0 + n]
            if allow_tail_empty and all(c == "" for c in cells):
                length = k
                break
            out[:, k] = [float(c) for c in cells]
        return out[:, :length]

    u = _block(u0, n_u, allow_tail_empty=True)
    x = _block(x0, n_x, allow_tail_empty=False)
    y = _block(y0, n_y, allow_tail_empty=False)
    return Trajectory(dt=dt, u=u, x=x, y=y)


def read_csv_comments(path) -> dict:
    """Return the `# key=value` comment lines of a trajectory CSV as a dict."""
    out = {}
    with open(path, "r", encoding="ascii") as fh:
        for ln in fh:
            if not ln.startswith("#"):
                break
            body = ln[1:].strip()
            if "=" in body:
                key, val = body.split("=", 1)
                out[key.strip()] = val.strip()
    return out
