"""Minimal reverse-mode differentiation core and the Adam optimizer.

Supports exactly the primitives the lifting losses need: dense affine maps,
ReLU, matrix products, (column-wise) Kronecker products, a ridge-regularized
least-squares solve, Euclidean norms, sums/means, and structural gathers.
Values are float64 numpy arrays; a graph is built per loss evaluation and
freed afterwards. Single-threaded evaluation is bitwise reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import NonFiniteInput, ShapeMismatch, UnsupportedPrimitive


class Tensor:
    """Node of the computation graph: a value plus backward bookkeeping."""

    __slots__ = ("value", "grad", "requires", "_parents", "_backward")

    def __init__(self, value, requires=False, parents=(), backward=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self.requires = requires or any(p.requires for p in parents)
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def param(value) -> Tensor:
    """Trainable leaf tensor."""
    return Tensor(np.array(value, dtype=float), requires=True)


def constant(value) -> Tensor:
    return Tensor(np.asarray(value, dtype=float))


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (np.ndarray, float, int, list, tuple)):
        return constant(x)
    raise UnsupportedPrimitive(f"cannot use {type(x).__name__} in the graph")


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.value)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))
    return Tensor(a.value + b.value, parents=(a, b), backward=backward)


def sub(a, b) -> Tensor:
    return add(a, scale(as_tensor(b), -1.0))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)

    def backward(g):
        _accum(a, c * g)
    return Tensor(c * a.value, parents=(a,), backward=backward)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))
    return Tensor(a.value * b.value, parents=(a, b), backward=backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim not in (1, 2):
        raise UnsupportedPrimitive("matmul supports 2-D @ (1-D or 2-D) only")

    def backward(g):
        if b.value.ndim == 1:
            _accum(a, np.outer(g, b.value))
            _accum(b, a.value.T @ g)
        else:
            _accum(a, g @ b.value.T)
            _accum(b, a.value.T @ g)
    return Tensor(a.value @ b.value, parents=(a, b), backward=backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0

    def backward(g):
        _accum(a, g * mask)
    return Tensor(np.where(mask, a.value, 0.0), parents=(a,), backward=backward)


def concat_rows(parts) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.value.shape[0] for p in parts]
    offs = np.cumsum([0] + sizes)

    def backward(g):
        for p, r0, r1 in zip(parts, offs[:-1], offs[1:]):
            _accum(p, g[r0:r1])
    return Tensor(np.concatenate([p.value for p in parts], axis=0),
                  parents=tuple(parts), backward=backward)


def take_rows(a, idx) -> Tensor:
    """Row gather (with repetition allowed); the adjoint scatter-adds."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=int)

    def backward(g):
        if a.requires:
            ga = np.zeros_like(a.value)
            np.add.at(ga, idx, g)
            _accum(a, ga)
    return Tensor(a.value[idx], parents=(a,), backward=backward)


def take_cols(a, idx) -> Tensor:
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=int)

    def backward(g):
        if a.requires:
            ga = np.zeros_like(a.value)
            np.add.at(ga.T, idx, g.T)
            _accum(a, ga)
    return Tensor(a.value[:, idx], parents=(a,), backward=backward)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)

    def backward(g):
        _accum(a, g.reshape(a.value.shape))
    return Tensor(a.value.reshape(shape), parents=(a,), backward=backward)


def transpose(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, g.T)
    return Tensor(a.value.T, parents=(a,), backward=backward)


def colkron(p, u) -> Tensor:
    """Column-wise Kronecker product: out[i*n_u+j, k] = p[i,k]*u[j,k]."""
    p, u = as_tensor(p), as_tensor(u)
    n_p, n_u = p.value.shape[0], u.value.shape[0]
    return mul(take_rows(p, np.repeat(np.arange(n_p), n_u)),
               take_rows(u, np.tile(np.arange(n_u), n_p)))


def hankel_t(seq, depth: int) -> Tensor:
    """Differentiable block Hankel matrix of a (m, L) sequence tensor."""
    seq = as_tensor(seq)
    m, L = seq.value.shape
    if L < depth or depth < 1:
        raise ShapeMismatch(f"depth {depth} invalid for sequence length {L}")
    cols = L - depth + 1
    # flat gather indices into the (m, L) array, laid out as (depth*m, cols)
    i = np.arange(depth)[:, None, None]
    r = np.arange(m)[None, :, None]
    j = np.arange(cols)[None, None, :]
    flat = (r * L + j + i).reshape(depth * m, cols)
    return take_flat(seq, flat)


def take_flat(a, flat_idx) -> Tensor:
    """Gather on the flattened array; output has flat_idx's shape."""
    a = as_tensor(a)
    flat_idx = np.asarray(flat_idx, dtype=int)

    def backward(g):
        if a.requires:
            ga = np.zeros(a.value.size)
            np.add.at(ga, flat_idx.ravel(), g.ravel())
            _accum(a, ga.reshape(a.value.shape))
    return Tensor(a.value.reshape(-1)[flat_idx], parents=(a,), backward=backward)


def stack_windows(cols_t, n_samples: int) -> Tensor:
    """Regroup (m, W*n_samples) sample columns into (n_samples*m, W) stacks.

    Input column order is window-major: column w*n_samples + s holds sample s
    of window w. Output column w is the time-major stacked window.
    """
    cols_t = as_tensor(cols_t)
    m, total = cols_t.value.shape
    W = total // n_samples
    if W * n_samples != total:
        raise ShapeMismatch(f"{total} columns not divisible by {n_samples}")
    s = np.arange(n_samples)[:, None, None]
    r = np.arange(m)[None, :, None]
    w = np.arange(W)[None, None, :]
    flat = (r * total + w * n_samples + s).reshape(n_samples * m, W)
    return take_flat(cols_t, flat)


def unstack_windows(stacked_t, dim: int) -> Tensor:
    """Inverse of stack_windows: (n_samples*dim, W) -> (dim, W*n_samples)."""
    stacked_t = as_tensor(stacked_t)
    rows, W = stacked_t.value.shape
    n_samples = rows // dim
    if n_samples * dim != rows:
        raise ShapeMismatch(f"{rows} rows not divisible by dim {dim}")
    r = np.arange(dim)[:, None, None]
    w = np.arange(W)[None, :, None]
    s = np.arange(n_samples)[None, None, :]
    flat = ((s * dim + r) * W + w).reshape(dim, W * n_samples)
    return take_flat(stacked_t, flat)


def sum_all(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accum(a, np.full(a.value.shape, float(g)))
    return Tensor(np.array(a.value.sum()), parents=(a,), backward=backward)


def mean_all(a) -> Tensor:
    a = as_tensor(a)
    n = a.value.size

    def backward(g):
        _accum(a, np.full(a.value.shape, float(g) / n))
    return Tensor(np.array(a.value.mean()), parents=(a,), backward=backward)


_NORM_GUARD = 1e-300


def norm(a) -> Tensor:
    """Euclidean (Frobenius) norm of the whole array."""
    a = as_tensor(a)
    val = float(np.sqrt(np.sum(a.value ** 2)))

    def backward(g):
        _accum(a, (float(g) / max(val, _NORM_GUARD)) * a.value)
    return Tensor(np.array(val), parents=(a,), backward=backward)


def colnorms(a) -> Tensor:
    """Per-column Euclidean norms of a 2-D array -> 1-D tensor."""
    a = as_tensor(a)
    vals = np.sqrt(np.sum(a.value ** 2, axis=0))

    def backward(g):
        _accum(a, a.value * (g / np.maximum(vals, _NORM_GUARD)))
    return Tensor(vals, parents=(a,), backward=backward)


def sumsq(a) -> Tensor:
    """Sum of squares (squared Frobenius norm)."""
    a = as_tensor(a)

    def backward(g):
        _accum(a, (2.0 * float(g)) * a.value)
    return Tensor(np.array(np.sum(a.value ** 2)), parents=(a,), backward=backward)


def ridge_lstsq(H, rhs, mu: float) -> Tensor:
    """argmin_x ||H x - rhs||^2 + mu ||x||^2, differentiable in H and rhs.

    H is (m, n); rhs is (m,) or (m, k) for k independent right-hand sides.
    Solves the normal equations (H^T H + mu I) x = H^T rhs by Cholesky; the
    backward pass reuses the factorization (linear-solve adjoint).
    """
    H, rhs = as_tensor(H), as_tensor(rhs)
    if mu <= 0:
        raise ValueError(f"ridge parameter must be positive, got {mu}")
    Hv, rv = H.value, rhs.value
    if not (np.all(np.isfinite(Hv)) and np.all(np.isfinite(rv))):
        raise NonFiniteInput("ridge_lstsq received non-finite input")
    n = Hv.shape[1]
    S = Hv.T @ Hv + mu * np.eye(n)
    cho = scipy.linalg.cho_factor(S, lower=True, check_finite=False)
    X = scipy.linalg.cho_solve(cho, Hv.T @ rv, check_finite=False)

    def backward(g):
        U = scipy.linalg.cho_solve(cho, g, check_finite=False)
        if rhs.requires:
            _accum(rhs, Hv @ U)
        if H.requires:
            R2 = rv.reshape(Hv.shape[0], -1)
            X2 = X.reshape(n, -1)
            U2 = U.reshape(n, -1)
            _accum(H, (R2 - Hv @ X2) @ U2.T - (Hv @ U2) @ X2.T)
    return Tensor(X, parents=(H, rhs), backward=backward)


# ---------------------------------------------------------------------------
# backward driver
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Reverse-mode sweep seeding d(loss)/d(loss) = 1. Loss must be scalar."""
    if loss.value.size != 1:
        raise UnsupportedPrimitive(
            f"backward needs a scalar loss, got shape {loss.value.shape}")
    order, visited, stack = [], set(), [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires and id(p) not in visited:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def grad(loss: Tensor, params) -> list[np.ndarray]:
    """Gradients of a scalar loss with respect to each parameter tensor."""
    for p in params:
        p.grad = None
    backward(loss)
    return [p.grad if p.grad is not None else np.zeros_like(p.value)
            for p in params]


# ---------------------------------------------------------------------------
# multilayer perceptron
# ---------------------------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


class Mlp:
    """Dense net: ReLU on the raw input and after each hidden affine layer,
    identity on the output layer.

    widths = [n_in, h_1, ..., h_k, n_out]; a single-layer net (no hidden
    widths) computes W @ relu(x) + b.
    """

    def __init__(self, widths, rng: np.random.Generator | None = None):
        if len(widths) < 2:
            raise ShapeMismatch("an Mlp needs at least input and output widths")
        self.widths = [int(w) for w in widths]
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        for fan_in, fan_out in zip(self.widths[:-1], self.widths[1:]):
            self.weights.append(param(glorot_uniform(rng, fan_out, fan_in)))
            self.biases.append(param(np.zeros((fan_out, 1))))

    @property
    def n_in(self) -> int:
        return self.widths[0]

    @property
    def n_out(self) -> int:
        return self.widths[-1]

    def parameters(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def forward(self, x) -> Tensor:
        """Graph forward pass; x is (n_in, batch) or (n_in,)."""
        x = as_tensor(x)
        vec = x.value.ndim == 1
        if vec:
            x = reshape(x, (x.value.shape[0], 1))
        if x.value.shape[0] != self.n_in:
            raise ShapeMismatch(
                f"input has {x.value.shape[0]} rows, net expects {self.n_in}")
        a = relu(x)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = add(matmul(w, a), b)
            if i < len(self.weights) - 1:
                a = relu(a)
        if vec:
            a = reshape(a, (self.n_out,))
        return a

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        """Plain-numpy forward pass (no graph)."""
        x = np.asarray(x, dtype=float)
        vec = x.ndim == 1
        a = np.maximum(x if not vec else x[:, None], 0.0)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = w.value @ a + b.value
            if i < len(self.weights) - 1:
                a = np.maximum(a, 0.0)
        return a[:, 0] if vec else a

    def to_dict(self) -> dict:
        return {
            "widths": list(self.widths),
            "weights": [w.value.reshape(-1).tolist() for w in self.weights],
            "biases": [b.value.reshape(-1).tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        net = cls(d["widths"])
        for w, flat in zip(net.weights, d["weights"]):
            w.value = np.array(flat, dtype=float).reshape(w.value.shape)
        for b, flat in zip(net.biases, d["biases"]):
            b.value = np.array(flat, dtype=float).reshape(b.value.shape)
        return net


def mlp_forward(net: Mlp, x) -> np.ndarray:
    """Deterministic forward evaluation on plain arrays."""
    return net.forward_np(x)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second-moment accumulators plus hyperparameters."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def ensure(self, params):
        if not self.m:
            self.m = [np.zeros_like(p.value) for p in params]
            self.v = [np.zeros_like(p.value) for p in params]
        if len(self.m) != len(params):
            raise ShapeMismatch(
                f"Adam state tracks {len(self.m)} tensors, got {len(params)}")


def adam_step(params, grads, state: AdamState):
    """One Adam update (bias-corrected); mutates params/state, returns both."""
    state.ensure(params)
    if len(grads) != len(params):
        raise ShapeMismatch(f"{len(grads)} gradients for {len(params)} parameters")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g = np.asarray(g, dtype=float)
        if g.shape != p.value.shape:
            raise ShapeMismatch(
                f"gradient shape {g.shape} != parameter shape {p.value.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value = p.value - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# finite-difference reference (test oracle)
# ---------------------------------------------------------------------------

def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g
