"""Selective state-space systems, schedules, inputs and the fixed-step integrator.

The dynamics are

    h'(t) = A(x(t)) h(t) + B(x(t)) u(t),    y(t) = C(x(t)) h(t)

with a piecewise-constant selection schedule ``x``. The integration grid is
refined so that every schedule breakpoint is a grid node; parameters are
therefore constant inside every RK4 step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .numlin import EPS_ABS, check_hermitian, sym_eigen

DIVERGENCE_NORM = 1e12
DEFAULT_DT = 1e-3
STORAGE_TOL = 1e-8


class OutOfHorizon(ValueError):
    pass


class InvalidStorageError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    """State norm crossed the divergence guard. Carries the truncated trajectory."""

    def __init__(self, time: float, trajectory: "Trajectory"):
        super().__init__(f"divergence: |h| > {DIVERGENCE_NORM:g} at t = {time:.6g}")
        self.time = time
        self.trajectory = trajectory


def _as_matrix(M, name) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M))
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    M.setflags(write=False)
    return M


# --- systems -------------------------------------------------------------------------

@dataclass(frozen=True)
class Mode:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "C"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.B.shape[0] != n or self.C.shape[1] != n:
            raise ValueError(
                f"inconsistent shapes A{self.A.shape} B{self.B.shape} C{self.C.shape}")


class SelectiveSystem:
    """Base class: maps a schedule value to an ``(A, B, C)`` triple."""

    state_dim: int
    in_dim: int
    out_dim: int

    def params(self, value) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError


@dataclass(frozen=True)
class ModeSwitchedSystem(SelectiveSystem):
    """Finite list of modes; the schedule value is the mode index."""

    modes: tuple[Mode, ...]

    def __post_init__(self):
        modes = tuple(m if isinstance(m, Mode) else Mode(*m) for m in self.modes)
        if not modes:
            raise ValueError("need at least one mode")
        shapes = {(m.A.shape, m.B.shape, m.C.shape) for m in modes}
        if len(shapes) != 1:
            raise ValueError("all modes must share dimensions")
        object.__setattr__(self, "modes", modes)

    @property
    def state_dim(self):
        return self.modes[0].A.shape[0]

    @property
    def in_dim(self):
        return self.modes[0].B.shape[1]

    @property
    def out_dim(self):
        return self.modes[0].C.shape[0]

    def params(self, value):
        k = int(value)
        if k != value or not 0 <= k < len(self.modes):
            raise ValueError(f"mode index {value!r} outside 0..{len(self.modes) - 1}")
        m = self.modes[k]
        return m.A, m.B, m.C


@dataclass(frozen=True)
class AffineGatedSystem(SelectiveSystem):
    """``A(x) = A_base + gate(x) * A_sel`` with fixed ``B`` and ``C``; ``x`` is scalar."""

    A_base: np.ndarray
    A_sel: np.ndarray
    B: np.ndarray
    C: np.ndarray
    gate: Callable[[float], float] = np.tanh

    def __post_init__(self):
        for name in ("A_base", "A_sel", "B", "C"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        Mode(self.A_base, self.B, self.C)
        if self.A_sel.shape != self.A_base.shape:
            raise ValueError("A_sel must match A_base")

    @property
    def state_dim(self):
        return self.A_base.shape[0]

    @property
    def in_dim(self):
        return self.B.shape[1]

    @property
    def out_dim(self):
        return self.C.shape[0]

    def params(self, value):
        g = float(self.gate(float(value)))
        return self.A_base + g * self.A_sel, self.B, self.C


# --- schedules and inputs -----------------------------------------------------------

@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant, right-continuous selection signal on ``[t_start, t_end]``.

    ``values[k]`` holds on ``[breakpoints[k-1], breakpoints[k])`` with the
    horizon ends closing the first and last intervals.
    """

    breakpoints: np.ndarray
    values: np.ndarray
    t_start: float
    t_end: float

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float).reshape(-1)
        vals = np.asarray(self.values)
        if vals.ndim == 0:
            vals = vals.reshape(1)
        if not self.t_end > self.t_start:
            raise ValueError("empty horizon")
        if bp.size and (np.any(np.diff(bp) <= 0) or bp[0] <= self.t_start or bp[-1] >= self.t_end):
            raise ValueError("breakpoints must be strictly increasing inside (t_start, t_end)")
        if len(vals) != bp.size + 1:
            raise ValueError(f"{bp.size} breakpoints need {bp.size + 1} values, got {len(vals)}")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "t_end", float(self.t_end))

    @classmethod
    def constant(cls, value, t_start: float, t_end: float) -> "Schedule":
        return cls(np.empty(0), np.array([value]), t_start, t_end)

    @classmethod
    def from_samples(cls, samples, t_start: float, dt: float) -> "Schedule":
        """Schedule taking ``samples[k]`` on ``[t_start + k dt, t_start + (k+1) dt)``."""
        samples = np.asarray(samples)
        n = len(samples)
        change = np.flatnonzero(samples[1:] != samples[:-1]) + 1
        times = t_start + dt * np.arange(n + 1)
        return cls(times[change], samples[np.concatenate([[0], change])], t_start, times[-1])

    def segment_index(self, t):
        return np.searchsorted(self.breakpoints, t, side="right")

    def value_at(self, t: float):
        if t < self.t_start - 1e-12 or t > self.t_end + 1e-12:
            raise OutOfHorizon(f"t = {t} outside [{self.t_start}, {self.t_end}]")
        return self.values[self.segment_index(t)]


def gen_spiky_reference(seed: int, horizon: float, dt: float, *, dwell: float = 1.0,
                        impulse_amplitude: float = 5.0, impulse_rate: float = 0.5) -> np.ndarray:
    """Seeded step-and-impulse reference, one value per step of width ``dt``.

    Steps are drawn from {-1, 0, +1} and held for ``dwell`` seconds. Impulses
    of magnitude ``impulse_amplitude`` (random sign) replace single samples
    at Poisson arrival times with mean rate ``impulse_rate``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    rng = np.random.default_rng(seed)
    n = int(round(horizon / dt))
    n_dwell = int(math.ceil(horizon / dwell))
    levels = rng.integers(-1, 2, size=n_dwell).astype(float)
    idx = np.minimum((np.arange(n) * dt / dwell + 1e-9).astype(int), n_dwell - 1)
    out = levels[idx]
    if impulse_rate > 0:
        t = rng.exponential(1.0 / impulse_rate)
        while t < horizon:
            k = min(int(t / dt), n - 1)
            out[k] = impulse_amplitude * (1.0 if rng.random() < 0.5 else -1.0)
            t += rng.exponential(1.0 / impulse_rate)
    return out


@dataclass(frozen=True)
class InputSignal:
    """Port input ``u``. Non-zero kinds are held constant over each integration step.

    kind: "zero", "constant", "white_noise", "spiky_reference" or
    "coupled_to_selection" (``u = x``). ``cutoff`` zeroes the signal from
    that time on.
    """

    kind: str = "zero"
    value: float | Sequence[float] = 0.0
    amplitude: float = 1.0
    seed: int = 0
    sample_dt: float | None = None
    cutoff: float | None = None

    KINDS = ("zero", "constant", "white_noise", "spiky_reference", "coupled_to_selection")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown input kind {self.kind!r}")

    def sample(self, times: np.ndarray, d_in: int, schedule: Schedule | None = None,
               dt: float | None = None) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        t0 = times[0]
        out = np.zeros((len(times), d_in))
        if self.kind == "constant":
            out[:] = np.broadcast_to(np.asarray(self.value, dtype=float), (d_in,))
        elif self.kind in ("white_noise", "spiky_reference"):
            sdt = self.sample_dt or dt
            if sdt is None:
                raise ValueError("sample_dt needed for sampled input kinds")
            horizon = times[-1] - t0
            k = np.floor((times - t0) / sdt + 1e-9).astype(int)
            n = int(k.max()) + 1
            if self.kind == "white_noise":
                draws = np.random.default_rng(self.seed).standard_normal((n, d_in))
                out[:] = self.amplitude * draws[k]
            else:
                ref = gen_spiky_reference(self.seed, max(horizon, n * sdt), sdt)
                out[:] = ref[np.minimum(k, len(ref) - 1), None]
        elif self.kind == "coupled_to_selection":
            if schedule is None:
                raise ValueError("coupled input needs the selection schedule")
            x = np.asarray(schedule.values[schedule.segment_index(times)], dtype=float)
            out[:] = x.reshape(len(times), -1) if x.ndim > 1 else x[:, None]
        if self.cutoff is not None:
            out[times >= self.cutoff - 1e-12] = 0.0
        return out


# --- trajectories --------------------------------------------------------------------

def fmt_float(v: float) -> str:
    return format(float(v), ".17g")


@dataclass
class Trajectory:
    """Sampled run. ``u[n]`` is the input held on ``[t[n], t[n+1])``."""

    t: np.ndarray
    h: np.ndarray
    u: np.ndarray
    y: np.ndarray
    dt: float

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.h, axis=1)

    @property
    def input_norms(self) -> np.ndarray:
        return np.linalg.norm(self.u, axis=1)

    def index_of(self, time: float) -> int:
        """Index of the grid node at ``time``; raises if ``time`` is not a node."""
        i = int(np.searchsorted(self.t, time - 1e-9 * max(1.0, abs(time))))
        if i >= len(self.t) or abs(self.t[i] - time) > 1e-9 * max(1.0, abs(time)):
            raise ValueError(f"t = {time} is not a grid node")
        return i

    def nearest_index(self, time: float) -> int:
        """Index of the grid node closest to ``time`` (which must lie on the horizon)."""
        if time < self.t[0] - 1e-9 or time > self.t[-1] + 1e-9:
            raise OutOfHorizon(f"t = {time} outside the trajectory")
        i = int(np.searchsorted(self.t, time))
        if i == len(self.t) or (i > 0 and time - self.t[i - 1] < self.t[i] - time):
            i -= 1
        return i

    def rows(self):
        for i in range(len(self.t)):
            yield [self.t[i], *self.h[i].real, *self.u[i].real, *self.y[i].real]

    def header(self) -> list[str]:
        N, d_in, d_out = self.h.shape[1], self.u.shape[1], self.y.shape[1]
        return (["t"] + [f"h_{i + 1}" for i in range(N)] + [f"u_{i + 1}" for i in range(d_in)]
                + [f"y_{i + 1}" for i in range(d_out)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(self.header())
            for row in self.rows():
                w.writerow([fmt_float(v) for v in row])


def build_grid(t_start: float, t_end: float, dt: float, breakpoints=()) -> np.ndarray:
    """Uniform grid with every breakpoint inserted as an exact node."""
    n = int(math.ceil((t_end - t_start) / dt - 1e-9))
    base = t_start + dt * np.arange(n + 1)
    base[-1] = t_end
    bp = np.asarray(breakpoints, dtype=float)
    if bp.size == 0:
        return base
    grid = np.union1d(base, bp)
    # drop uniform nodes that sit on top of a breakpoint
    near = np.abs(grid[:, None] - bp[None, :]).min(axis=1) if bp.size < 2000 else _near_bp(grid, bp)
    is_bp = np.isin(grid, bp)
    keep = is_bp | (near > 1e-9 * dt)
    return grid[keep]


def _near_bp(grid, bp):
    j = np.clip(np.searchsorted(bp, grid), 1, len(bp) - 1)
    return np.minimum(np.abs(grid - bp[j - 1]), np.abs(grid - bp[j]))


def eval_params(sys: SelectiveSystem, sched: Schedule, t: float):
    """``(A, B, C)`` active at time ``t`` (right-continuous at breakpoints)."""
    return sys.params(sched.value_at(t))


def rk4_step(A, B, h, u, dt):
    """One classical RK4 step of ``h' = A h + B u`` with ``A``, ``B``, ``u`` frozen."""
    f = B @ u
    k1 = A @ h + f
    k2 = A @ (h + 0.5 * dt * k1) + f
    k3 = A @ (h + 0.5 * dt * k2) + f
    k4 = A @ (h + dt * k3) + f
    return h + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate(sys: SelectiveSystem, sched: Schedule, inp: InputSignal, h0,
             dt: float = DEFAULT_DT, horizon: tuple[float, float] | None = None) -> Trajectory:
    """Integrate the selective system over ``horizon`` (default: the schedule's).

    Raises DivergenceError once ``|h|`` exceeds 1e12.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    t0, t1 = horizon if horizon is not None else (sched.t_start, sched.t_end)
    if t0 < sched.t_start - 1e-12 or t1 > sched.t_end + 1e-12:
        raise OutOfHorizon("simulation horizon exceeds the schedule horizon")
    h0 = np.asarray(h0)
    N = sys.state_dim
    if h0.shape != (N,):
        raise ValueError(f"h0 must have shape ({N},)")
    bp = sched.breakpoints[(sched.breakpoints > t0) & (sched.breakpoints < t1)]
    grid = build_grid(t0, t1, dt, bp)
    seg = sched.segment_index(grid)
    u = inp.sample(grid, sys.in_dim, sched, dt)

    dtype = np.result_type(h0, *sys.params(sched.values[seg[0]]), float)
    h = np.zeros((len(grid), N), dtype=dtype)
    y = np.zeros((len(grid), sys.out_dim), dtype=dtype)
    h[0] = h0
    cache: dict[int, tuple] = {}

    def params(k):
        if k not in cache:
            cache[k] = sys.params(sched.values[k])
        return cache[k]

    for n in range(len(grid) - 1):
        A, B, C = params(seg[n])
        y[n] = C @ h[n]
        h[n + 1] = rk4_step(A, B, h[n], u[n], grid[n + 1] - grid[n])
        if not np.all(np.isfinite(h[n + 1])) or np.linalg.norm(h[n + 1]) > DIVERGENCE_NORM:
            m = n + 2
            traj = Trajectory(grid[:m], h[:m], u[:m], y[:m], dt)
            traj.y[-1] = params(seg[n + 1])[2] @ h[n + 1]
            raise DivergenceError(float(grid[n + 1]), traj)
    y[-1] = params(seg[-1])[2] @ h[-1]
    return Trajectory(grid, h, u, y, dt)


# --- integrals over trajectories -----------------------------------------------------

def _window_indices(traj: Trajectory, window) -> tuple[int, int]:
    a, b = window
    return traj.nearest_index(a), traj.nearest_index(b)


def supply_integral(traj: Trajectory, window) -> float:
    """``int Re<u, y> dt`` over ``window`` (endpoints snap to the nearest grid node).

    Trapezoidal in ``y`` with ``u`` taken from the left node of each step,
    which is exact quadrature structure for a zero-order-hold input.
    """
    i, j = _window_indices(traj, window)
    if j <= i:
        return 0.0
    dts = np.diff(traj.t[i:j + 1])
    y_mid = 0.5 * (traj.y[i:j] + traj.y[i + 1:j + 1])
    # <u, y> = y^H u
    power = np.real(np.sum(np.conj(y_mid) * traj.u[i:j], axis=1))
    return float(np.sum(dts * power))


def state_energy_integral(traj: Trajectory, window) -> float:
    """``int |h|^2 dt`` over ``window`` (trapezoidal)."""
    i, j = _window_indices(traj, window)
    if j <= i:
        return 0.0
    sq = np.sum(np.abs(traj.h[i:j + 1]) ** 2, axis=1)
    return float(np.trapezoid(sq, traj.t[i:j + 1]))


def energy_trace(traj: Trajectory, storage) -> np.ndarray:
    """``V(t) = 1/2 h^H Q(t) h`` along the trajectory.

    ``storage`` is either a fixed matrix or a callable ``t -> Q`` (for example a
    StorageCertificate). Each distinct ``Q`` is checked to be PSD.
    """
    checked: dict[int, np.ndarray] = {}

    def validated(Q):
        key = id(Q)
        if key not in checked:
            Q = check_hermitian(Q)
            w = sym_eigen(Q).values
            if w.size and w[-1] < -STORAGE_TOL * max(abs(w[0]), EPS_ABS):
                raise InvalidStorageError(f"invalid storage: eigenvalue {w[-1]:.3e}")
            checked[key] = Q
        return checked[key]

    if callable(storage):
        Qs = [storage(t) for t in traj.t]
    else:
        Qs = [storage] * len(traj.t)
    V = np.empty(len(traj.t))
    for n, Q in enumerate(Qs):
        Q = validated(Q)
        hn = traj.h[n]
        V[n] = 0.5 * float(np.real(np.conj(hn) @ Q @ hn))
    return V
