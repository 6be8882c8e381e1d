"""Benchmark plants, excitation signals, and the noisy data-collection protocol.

Three desk-scale plants are built in:

``poly2``
    The exact-Koopman benchmark x1+ = a*x1 + b*u, x2+ = c*x2 + d*x1^2,
    y = x1 (shared verbatim with :mod:`koopmhe.surrogate`). Dimensionless.

``cstr2``
    Exothermic continuous stirred-tank reactor with Arrhenius kinetics
    (Seborg-style parameterization). States: reactant concentration Ca
    [mol/L] and temperature T [K]; input: coolant temperature Tc [K];
    measured output: T. Time unit minutes.

        dCa/dt = q/V (Caf - Ca) - k0 exp(-E_R/T) Ca
        dT/dt  = q/V (Tf - T) + dHr/(rho cp) k0 exp(-E_R/T) Ca
                 + UA/(V rho cp) (Tc - T)

    q=100 L/min, V=100 L, Caf=1 mol/L, Tf=350 K, rho=1000 g/L,
    cp=0.239 J/(g K), dHr=5e4 J/mol, E_R=8750 K, k0=7.2e10 1/min,
    UA=5e4 J/(min K).

``bioreactor3``
    Monod-kinetics chemostat. States: biomass X, substrate S, product P
    [g/L]; inputs: dilution rate Dq [1/h] and feed concentration Sf [g/L];
    measured output: S. Time unit hours.

        dX/dt = mu(S) X - Dq X
        dS/dt = Dq (Sf - S) - mu(S) X / Yxs
        dP/dt = (ap mu(S) + bp) X - Dq P,   mu(S) = mu_max S / (Ks + S)

    mu_max=0.4 1/h, Ks=0.5 g/L, Yxs=0.4 g/g, ap=2.2 g/g, bp=0.2 1/h.
    With zero dilution the combination X + Yxs*S is an exact invariant
    (the documented mass balance).

Continuous plants are integrated with fixed-step classical RK4. All
stochastic operations are seeded and reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigInvalid, DimensionMismatch, NonFiniteState
from .surrogate import Poly2Dynamics
from .trajectory import Trajectory


@dataclass(frozen=True)
class PlantSpec:
    """A simulatable benchmark plant with its operating envelope."""

    name: str
    n_x: int
    n_u: int
    n_y: int
    step: callable                      # (x, u) -> next state
    C: np.ndarray                       # output matrix, y = C x
    x0: np.ndarray                      # nominal initial state
    state_box: tuple                    # (lower, upper) arrays on x
    input_box: tuple                    # (u_min, u_max) arrays
    dt: float                           # sampling period, seconds
    description: str = ""
    params: dict = field(default_factory=dict)

    def output(self, x) -> np.ndarray:
        return self.C @ np.asarray(x, dtype=float)

    def manifest_entry(self) -> dict:
        return {
            "name": self.name,
            "n_x": self.n_x, "n_u": self.n_u, "n_y": self.n_y,
            "dt_seconds": self.dt,
            "x0": np.asarray(self.x0).tolist(),
            "state_box": [np.asarray(b).tolist() for b in self.state_box],
            "input_box": [np.asarray(b).tolist() for b in self.input_box],
            "description": self.description,
            "params": self.params,
        }


def rk4_step(f, x: np.ndarray, u: np.ndarray, h: float, substeps: int) -> np.ndarray:
    """Classical fixed-step RK4 over one sampling period split into substeps."""
    hs = h / substeps
    for _ in range(substeps):
        k1 = f(x, u)
        k2 = f(x + 0.5 * hs * k1, u)
        k3 = f(x + 0.5 * hs * k2, u)
        k4 = f(x + hs * k3, u)
        x = x + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


# ---------------------------------------------------------------------------
# built-in plants
# ---------------------------------------------------------------------------

def make_poly2(a=0.9, b=0.5, c=0.8, d=0.4) -> PlantSpec:
    dyn = Poly2Dynamics(a, b, c, d)
    return PlantSpec(
        name="poly2", n_x=2, n_u=1, n_y=1,
        step=dyn.step,
        C=np.array([[1.0, 0.0]]),
        x0=np.array([1.0, 1.0]),
        state_box=(np.array([-10.0, -10.0]), np.array([10.0, 10.0])),
        input_box=(np.array([-1.0]), np.array([1.0])),
        dt=1.0,
        description="exact-Koopman polynomial benchmark (measures x1)",
        params=dict(a=a, b=b, c=c, d=d),
    )


_CSTR = dict(q=100.0, V=100.0, Caf=1.0, Tf=350.0, rho=1000.0, cp=0.239,
             dHr=5.0e4, E_R=8750.0, k0=7.2e10, UA=5.0e4)


def _cstr_rhs(x, u, p=_CSTR):
    Ca, T = x
    Tc = u[0]
    r = p["k0"] * np.exp(-p["E_R"] / T) * Ca
    dCa = p["q"] / p["V"] * (p["Caf"] - Ca) - r
    dT = (p["q"] / p["V"] * (p["Tf"] - T)
          + p["dHr"] / (p["rho"] * p["cp"]) * r
          + p["UA"] / (p["V"] * p["rho"] * p["cp"]) * (Tc - T))
    return np.array([dCa, dT])


def make_cstr2(dt_minutes=0.1, substeps=10) -> PlantSpec:
    # coolant box kept on the stable low-conversion branch; above ~305 K the
    # reactor ignites and fixed-step RK4 cannot follow the stiff transient
    def step(x, u):
        return rk4_step(_cstr_rhs, np.asarray(x, float), np.asarray(u, float),
                        dt_minutes, substeps)
    return PlantSpec(
        name="cstr2", n_x=2, n_u=1, n_y=1,
        step=step,
        C=np.array([[0.0, 1.0]]),
        x0=np.array([0.87725295, 324.47544343]),   # steady state at Tc = 300
        state_box=(np.array([0.0, 250.0]), np.array([1.0, 450.0])),
        input_box=(np.array([285.0]), np.array([302.0])),
        dt=dt_minutes * 60.0,
        description="exothermic CSTR with Arrhenius kinetics (measures T)",
        params=dict(_CSTR, dt_minutes=dt_minutes, substeps=substeps),
    )


_BIO = dict(mu_max=0.4, Ks=0.5, Yxs=0.4, ap=2.2, bp=0.2)


def _bio_rhs(x, u, p=_BIO):
    X, S, P = x
    Dq, Sf = u
    mu = p["mu_max"] * S / (p["Ks"] + S)
    dX = mu * X - Dq * X
    dS = Dq * (Sf - S) - mu * X / p["Yxs"]
    dP = (p["ap"] * mu + p["bp"]) * X - Dq * P
    return np.array([dX, dS, dP])


def make_bioreactor3(dt_hours=0.25, substeps=16) -> PlantSpec:
    def step(x, u):
        return rk4_step(_bio_rhs, np.asarray(x, float), np.asarray(u, float),
                        dt_hours, substeps)
    return PlantSpec(
        name="bioreactor3", n_x=3, n_u=2, n_y=1,
        step=step,
        C=np.array([[0.0, 1.0, 0.0]]),
        x0=np.array([5.0, 2.5, 10.0]),
        state_box=(np.zeros(3), np.array([30.0, 40.0, 80.0])),
        input_box=(np.array([0.05, 15.0]), np.array([0.4, 35.0])),
        dt=dt_hours * 3600.0,
        description="Monod-kinetics chemostat (measures substrate)",
        params=dict(_BIO, dt_hours=dt_hours, substeps=substeps),
    )


def builtin_plants() -> dict[str, PlantSpec]:
    """Catalogue of the built-in benchmark plants."""
    return {p.name: p for p in (make_poly2(), make_cstr2(), make_bioreactor3())}


def plants_manifest() -> dict:
    return {"plants": [p.manifest_entry() for p in builtin_plants().values()]}


# ---------------------------------------------------------------------------
# excitation and simulation
# ---------------------------------------------------------------------------

DEFAULT_HOLD = 40   # sampling periods each random input level is held


def excitation_signal(u_min, u_max, hold: int, length: int, seed: int,
                      input_noise_std=0.0) -> np.ndarray:
    """Piecewise-constant uniform excitation with additive Gaussian noise.

    Levels are drawn uniformly in [u_min, u_max] per channel and held for
    `hold` steps; noise of the given std (scalar or per channel) is added and
    the result is clamped back into the input box. Returns (n_u, length).
    """
    u_min = np.atleast_1d(np.asarray(u_min, dtype=float))
    u_max = np.atleast_1d(np.asarray(u_max, dtype=float))
    if u_min.shape != u_max.shape or np.any(u_min > u_max):
        raise ConfigInvalid("need elementwise u_min <= u_max")
    if hold < 1 or length < 1:
        raise ConfigInvalid(f"hold and length must be >= 1, got {hold}, {length}")
    n_u = u_min.size
    rng = np.random.default_rng(seed)
    n_seg = (length + hold - 1) // hold
    levels = rng.uniform(u_min[:, None], u_max[:, None], size=(n_u, n_seg))
    u = np.repeat(levels, hold, axis=1)[:, :length]
    std = np.broadcast_to(np.asarray(input_noise_std, dtype=float), (n_u,))
    if np.any(std > 0):
        u = u + std[:, None] * rng.standard_normal((n_u, length))
    return np.clip(u, u_min[:, None], u_max[:, None])


@dataclass(frozen=True)
class SimResult:
    """Noise-free and noisy views of one simulated rollout.

    The drawn noise streams are kept verbatim (noisy = clean + noise was
    rounded once; storing the streams keeps them exactly reproducible from
    the seed).
    """

    clean: Trajectory          # u plus noise-free x, y
    noisy: Trajectory          # same u plus noisy x, y channels
    state_noise: np.ndarray    # (n_x, T+1) seeded Gaussian stream
    output_noise: np.ndarray   # (n_y, T+1) seeded Gaussian stream
    clamp_count: int           # input samples clamped into the input box


def simulate(plant: PlantSpec, x0, u_seq, state_noise_std=0.0,
             output_noise_std=0.0, seed: int = 0) -> SimResult:
    """Roll the plant out and record noise-free plus noisy channels.

    u_seq is (n_u, T) (or (T,) for scalar input); the rollout produces T+1
    states/outputs. Inputs outside the input box are clamped (counted in the
    result). Noise is Gaussian with the given per-channel std, drawn from a
    single seeded generator: state noise (n_x, T+1) first, then output noise
    (n_y, T+1). Raises NonFiniteState with the valid prefix on divergence.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (plant.n_x,):
        raise DimensionMismatch(f"x0 must have shape ({plant.n_x},)")
    if not np.all(np.isfinite(x0)):
        raise NonFiniteState("initial state is not finite")
    U = np.atleast_2d(np.asarray(u_seq, dtype=float))
    if U.shape[0] != plant.n_u:
        raise DimensionMismatch(
            f"input has {U.shape[0]} channels, plant needs {plant.n_u}")
    lo, hi = plant.input_box
    clamped = np.clip(U, lo[:, None], hi[:, None])
    clamp_count = int(np.sum(np.any(clamped != U, axis=0)))
    T = U.shape[1]
    X = np.empty((plant.n_x, T + 1))
    X[:, 0] = x0
    for k in range(T):
        X[:, k + 1] = plant.step(X[:, k], clamped[:, k])
        if not np.all(np.isfinite(X[:, k + 1])):
            prefix = Trajectory(dt=plant.dt, u=clamped[:, :k],
                                x=X[:, :k + 1], y=plant.C @ X[:, :k + 1])
            raise NonFiniteState(
                f"rollout diverged at step {k + 1}", prefix=prefix)
    Y = plant.C @ X
    rng = np.random.default_rng(seed)
    sx = np.broadcast_to(np.asarray(state_noise_std, dtype=float), (plant.n_x,))
    sy = np.broadcast_to(np.asarray(output_noise_std, dtype=float), (plant.n_y,))
    ex = sx[:, None] * rng.standard_normal(X.shape)
    ey = sy[:, None] * rng.standard_normal(Y.shape)
    clean = Trajectory(dt=plant.dt, u=clamped, x=X, y=Y)
    noisy = Trajectory(dt=plant.dt, u=clamped, x=X + ex, y=Y + ey)
    return SimResult(clean=clean, noisy=noisy, state_noise=ex,
                     output_noise=ey, clamp_count=clamp_count)


def default_noise_std(plant: PlantSpec, scale: float = 1e-4):
    """Per-channel noise std: scale * |x0| for states, scale * |y0| for outputs.

    Channels whose nominal value is zero fall back to the mean magnitude of
    the nonzero channels (so the noise never degenerates to exactly zero).
    """
    x0 = np.abs(np.asarray(plant.x0, dtype=float))
    y0 = np.abs(plant.C @ plant.x0)
    ref_x = x0.copy()
    if np.any(ref_x == 0):
        fallback = ref_x[ref_x > 0].mean() if np.any(ref_x > 0) else 1.0
        ref_x[ref_x == 0] = fallback
    ref_y = y0.copy()
    if np.any(ref_y == 0):
        fallback = ref_y[ref_y > 0].mean() if np.any(ref_y > 0) else 1.0
        ref_y[ref_y == 0] = fallback
    return scale * ref_x, scale * ref_y


def generate_dataset(plant: PlantSpec, length: int, seed: int,
                     hold: int = DEFAULT_HOLD, input_noise_scale: float = 0.01,
                     state_noise_std=0.0, output_noise_std=0.0,
                     x0=None) -> SimResult:
    """Excite the plant and simulate: the standard data-collection recipe.

    The input is piecewise constant (held `hold` periods) with additive
    Gaussian noise of std input_noise_scale * u_max, clamped to the input
    box. Separate sub-seeds drive excitation and measurement noise.
    """
    lo, hi = plant.input_box
    rng = np.random.default_rng(seed)
    seed_u, seed_noise = rng.integers(0, 2 ** 31, size=2)
    U = excitation_signal(lo, hi, hold=hold, length=length, seed=int(seed_u),
                          input_noise_std=input_noise_scale * np.abs(hi))
    return simulate(plant, plant.x0 if x0 is None else x0, U,
                    state_noise_std=state_noise_std,
                    output_noise_std=output_noise_std, seed=int(seed_noise))
