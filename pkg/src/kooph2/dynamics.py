"""Ground-truth nonlinear plant simulators and closed-loop evaluation.

Two plants ship: a forced Duffing oscillator integrated with fixed-step
RK4, and a periodic KdV wave field advanced by Strang split-stepping
(exact Fourier dispersion, pseudo-spectral RK2 advection).  The rest of
the toolkit treats plants as black boxes exposing ``step``, ``state_dim``
and ``input_dim``.

All steppers broadcast over leading axes, so batches of states advance in
one call.  Everything is a pure function of (state, input, seed); there is
no shared mutable state.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "PlantState",
    "NoiseSpec",
    "DuffingPlant",
    "KdVPlant",
    "LinearPlant",
    "duffing_rk4",
    "duffing_step",
    "kdv_grid",
    "input_profile",
    "Trajectory",
    "simulate_closed_loop",
    "save_trajectory_csv",
    "load_trajectory_csv",
]

BLOWUP_BOUND = 1e6  # |x|_inf beyond this declares closed-loop divergence


@dataclass(frozen=True)
class PlantState:
    """A plant state snapshot: value vector plus simulation time."""

    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite state values")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean Gaussian measurement noise, one variance per coordinate.

    The same seed always reproduces the same sample stream.
    """

    variance: np.ndarray
    seed: int = 0

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.variance, dtype=float))
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("variances must be finite and nonnegative")
        object.__setattr__(self, "variance", v)

    @classmethod
    def off(cls, dim):
        return cls(variance=np.zeros(dim), seed=0)

    @property
    def enabled(self):
        return bool(np.any(self.variance > 0))

    def stream(self):
        return np.random.default_rng(self.seed)

    def sample(self, rng, dim):
        sigma = np.sqrt(self.variance)
        if sigma.size == 1:
            sigma = np.full(dim, sigma[0])
        if sigma.size != dim:
            raise ValueError("variance length does not match state dimension")
        return rng.standard_normal(dim) * sigma


# ---------------------------------------------------------------------------
# Duffing oscillator:  x1' = x2,  x2' = u - 0.5 x2 + x1 - 4 x1^3
# ---------------------------------------------------------------------------


def _duffing_rhs(x, u):
    x1 = x[..., 0]
    x2 = x[..., 1]
    return np.stack([x2, u - 0.5 * x2 + x1 - 4.0 * x1**3], axis=-1)


def duffing_rk4(x, u, dt):
    """One fixed-step RK4 advance of the forced Duffing oscillator.

    ``x`` has shape (..., 2); ``u`` is scalar or broadcastable to the
    leading axes.  The input is held constant over the step.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("non-finite state or input")
    k1 = _duffing_rhs(x, u)
    k2 = _duffing_rhs(x + 0.5 * dt * k1, u)
    k3 = _duffing_rhs(x + 0.5 * dt * k2, u)
    k4 = _duffing_rhs(x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def duffing_step(state: PlantState, u: float, dt: float) -> PlantState:
    """Advance a Duffing ``PlantState`` by ``dt`` with the input held."""
    x = duffing_rk4(state.values, float(u), dt)
    return PlantState(values=x, time=state.time + dt)


class DuffingPlant:
    """Forced Duffing oscillator with a fixed sampling interval."""

    state_dim = 2
    input_dim = 1

    def __init__(self, dt=0.1):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.dt = float(dt)

    def step(self, x, u):
        u = np.asarray(u, dtype=float)
        return duffing_rk4(x, u[..., 0] if u.ndim else u, self.dt)


# ---------------------------------------------------------------------------
# KdV equation:  y_t + y y_x + y_xxx = u(t, x)  on a periodic grid
# ---------------------------------------------------------------------------


def kdv_grid(n=128):
    """Periodic grid of ``n`` points on [-pi, pi)."""
    if n < 4 or (n & (n - 1)) != 0:
        raise ValueError("grid length must be a power of two (>= 4)")
    return -np.pi + 2.0 * np.pi * np.arange(n) / n


def input_profile(i, x, exponent_sign=-1.0):
    """Spatial profile of forcing channel ``i`` (1-based), a Gaussian bump.

    Channel centers sit at -pi/2, 0, pi/2.  ``exponent_sign`` defaults to
    a decaying bump exp(-25 (x - c_i)^2); the positive sign is accepted
    for completeness but produces an unbounded profile.
    """
    centers = (-np.pi / 2.0, 0.0, np.pi / 2.0)
    if not 1 <= i <= 3:
        raise ValueError("channel index must be 1..3")
    x = np.asarray(x, dtype=float)
    return np.exp(exponent_sign * 25.0 * (x - centers[i - 1]) ** 2)


class KdVPlant:
    """Periodic KdV field advanced by Strang split-stepping.

    The dispersion y_xxx is solved exactly in Fourier space (multiplier
    exp(i k^3 tau)); the advection y y_x plus the constant-over-step
    forcing advance pseudo-spectrally with an RK2 (Heun) substep under a
    2/3-rule dealias mask.  ``nsub`` Strang substeps per sampling
    interval keep the advection stage accurate at O(1) amplitudes.
    """

    input_dim = 3

    def __init__(self, n=128, dt=0.01, nsub=4, exponent_sign=-1.0):
        self.x = kdv_grid(n)
        self.n = n
        self.state_dim = n
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.dt = float(dt)
        self.nsub = int(nsub)
        if self.nsub < 1:
            raise ValueError("nsub must be >= 1")
        self.k = np.fft.rfftfreq(n, d=1.0 / n)  # integer wavenumbers 0..n/2
        self.profiles = np.stack(
            [input_profile(i, self.x, exponent_sign) for i in (1, 2, 3)]
        )
        kmax = self.k.max()
        self._dealias = self.k <= (2.0 / 3.0) * kmax
        tau = self.dt / self.nsub
        self._half_disp = np.exp(1j * self.k**3 * (tau / 2.0))

    def _advect(self, y, forcing):
        # d/dt y = -y y_x + forcing = -(y^2/2)_x + forcing
        fy = np.fft.rfft(0.5 * y * y, axis=-1)
        dflux = np.fft.irfft(1j * self.k * fy * self._dealias, n=self.n, axis=-1)
        return forcing - dflux

    def step(self, y, u):
        """Advance the field one sampling interval with ``u`` held (ZOH)."""
        y = np.asarray(y, dtype=float)
        u = np.asarray(u, dtype=float)
        if y.shape[-1] != self.n:
            raise ValueError(f"field length must be {self.n}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(u))):
            raise ValueError("non-finite field or input")
        forcing = u @ self.profiles  # (..., n)
        tau = self.dt / self.nsub
        for _ in range(self.nsub):
            fy = np.fft.rfft(y, axis=-1) * self._half_disp
            y = np.fft.irfft(fy, n=self.n, axis=-1)
            k1 = self._advect(y, forcing)
            k2 = self._advect(y + tau * k1, forcing)
            y = y + 0.5 * tau * (k1 + k2)
            fy = np.fft.rfft(y, axis=-1) * self._half_disp
            y = np.fft.irfft(fy, n=self.n, axis=-1)
        return y


def kdv_step(field: PlantState, u_vec, dt, n=128, nsub=4) -> PlantState:
    """Advance a KdV ``PlantState`` by one interval of length ``dt``."""
    plant = KdVPlant(n=n, dt=dt, nsub=nsub)
    y = plant.step(field.values, np.asarray(u_vec, dtype=float))
    return PlantState(values=y, time=field.time + dt)


class LinearPlant:
    """Discrete-time linear plant, handy as a toy in tests and demos."""

    def __init__(self, A, B):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.B = np.atleast_2d(np.asarray(B, dtype=float))
        if self.A.shape[0] != self.A.shape[1] or self.B.shape[0] != self.A.shape[0]:
            raise ValueError("inconsistent plant dimensions")
        self.state_dim = self.A.shape[0]
        self.input_dim = self.B.shape[1]

    def step(self, x, u):
        return x @ self.A.T + np.asarray(u, dtype=float) @ self.B.T


# ---------------------------------------------------------------------------
# Closed-loop simulation
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    """A simulated run: true states, applied inputs, divergence flag."""

    times: np.ndarray
    states: np.ndarray  # (steps+1, n)
    inputs: np.ndarray  # (steps, p)
    diverged: bool = False
    blowup_step: int | None = None
    meta: dict = field(default_factory=dict)


def simulate_closed_loop(
    plant,
    dictionary,
    gain,
    x0,
    steps,
    noise: NoiseSpec | None = None,
    dt=None,
    blowup=BLOWUP_BOUND,
):
    """Run u_k = S g(x_k) against the true plant for ``steps`` samples.

    At each step the controller sees the measured state (true state plus
    measurement noise), lifts it through ``dictionary`` and applies the
    static gain; the input is held over one sampling interval.  The true
    state is recorded.  Divergence (any |x| beyond ``blowup``) stops the
    run and is reported on the trajectory, not raised.
    """
    S = np.atleast_2d(np.asarray(gain, dtype=float))
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    p = plant.input_dim
    if S.shape != (p, dictionary.n_features):
        raise ValueError(
            f"gain shape {S.shape} does not match (inputs={p}, "
            f"features={dictionary.n_features})"
        )
    if dt is None:
        dt = getattr(plant, "dt", 1.0)
    noise = noise if noise is not None else NoiseSpec.off(n)
    rng = noise.stream()

    states = np.empty((steps + 1, n))
    inputs = np.empty((steps, p))
    states[0] = x
    diverged = False
    blowup_step = None
    k = 0
    for k in range(steps):
        measured = x + noise.sample(rng, n) if noise.enabled else x
        u = S @ dictionary(measured)
        inputs[k] = u
        x = plant.step(x, u)
        states[k + 1] = x
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > blowup:
            diverged = True
            blowup_step = k + 1
            states = states[: k + 2]
            inputs = inputs[: k + 1]
            break
    times = dt * np.arange(states.shape[0])
    return Trajectory(
        times=times,
        states=states,
        inputs=inputs,
        diverged=diverged,
        blowup_step=blowup_step,
        meta={"noise_seed": noise.seed, "dt": float(dt)},
    )


def save_trajectory_csv(traj: Trajectory, path):
    """Write ``t,x1,...,xn,u1,...,up`` rows at full double precision.

    The terminal sample has no applied input; its input fields are nan.
    """
    n = traj.states.shape[1]
    p = traj.inputs.shape[1] if traj.inputs.size else 0
    header = ",".join(
        ["t"]
        + [f"x{i + 1}" for i in range(n)]
        + [f"u{i + 1}" for i in range(p)]
    )
    rows = np.full((traj.states.shape[0], 1 + n + p), np.nan)
    rows[:, 0] = traj.times
    rows[:, 1 : 1 + n] = traj.states
    if p:
        rows[: traj.inputs.shape[0], 1 + n :] = traj.inputs
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")


def load_trajectory_csv(path):
    """Read a trajectory CSV back into (times, states, inputs)."""
    with open(path) as f:
        names = f.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = sum(1 for c in names if c.startswith("x"))
    p = sum(1 for c in names if c.startswith("u"))
    times = data[:, 0]
    states = data[:, 1 : 1 + n]
    inputs = data[:, 1 + n : 1 + n + p] if p else np.zeros((data.shape[0], 0))
    inputs = inputs[~np.any(np.isnan(inputs), axis=1)] if p else inputs
    return times, states, inputs
