"""Certificates for selective SSMs: dissipation, decay, parametric LMI, rank, ISS."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numlin import (DEFAULT_RANK_TOL, check_hermitian, ctranspose, hermitian_part,
                     lambda_max, loewner_geq, rank_with_tol, sym_eigen)
from .ssm import (SelectiveSystem, Trajectory, energy_trace, state_energy_integral,
                  supply_integral)

JUMP_TOL = 1e-9
KERNEL_TOL = 1e-8
CONTRACTION_TOL = 1e-8
ISS_TOL = 1e-6
DEFAULT_X_GRID = np.round(np.linspace(-3.0, 3.0, 61), 12)


class InvalidJumpError(ValueError):
    """A storage jump that is not non-increasing in the Loewner order."""


# --- storage certificates -----------------------------------------------------------

@dataclass(frozen=True)
class StorageCertificate:
    """Piecewise-constant storage ``Q(t)`` with dissipation rate ``beta``.

    ``segments`` is a sequence of ``(t_start, t_end, Q)`` covering the horizon
    without gaps. ``Q(t)`` is right-continuous; the final endpoint belongs to
    the last segment.
    """

    segments: tuple
    beta: float = 0.0
    rank_tol: float = DEFAULT_RANK_TOL

    def __post_init__(self):
        segs = []
        for a, b, Q in self.segments:
            Q = check_hermitian(Q).copy()
            Q.setflags(write=False)
            rank_with_tol(Q, self.rank_tol)  # raises NotPSDError
            segs.append((float(a), float(b), Q))
        if not segs:
            raise ValueError("certificate needs at least one segment")
        for (a0, b0, _), (a1, _, _) in zip(segs, segs[1:]):
            if abs(b0 - a1) > 1e-12 * max(1.0, abs(b0)):
                raise ValueError("segments must partition the horizon")
        if any(b <= a for a, b, _ in segs):
            raise ValueError("empty segment")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        object.__setattr__(self, "segments", tuple(segs))

    @classmethod
    def constant(cls, Q, t_start, t_end, beta=0.0, rank_tol=DEFAULT_RANK_TOL):
        return cls(((t_start, t_end, Q),), beta, rank_tol)

    @property
    def jump_times(self) -> list[float]:
        return [seg[0] for seg in self.segments[1:]]

    @property
    def horizon(self) -> tuple[float, float]:
        return self.segments[0][0], self.segments[-1][1]

    def segment_index(self, t: float) -> int:
        starts = [seg[0] for seg in self.segments[1:]]
        return int(np.searchsorted(starts, t, side="right"))

    def __call__(self, t: float) -> np.ndarray:
        return self.segments[self.segment_index(t)][2]

    def jump_ok(self, k: int, tol: float = JUMP_TOL) -> bool:
        """Loewner check at the jump into segment ``k`` (k >= 1)."""
        return loewner_geq(self.segments[k - 1][2], self.segments[k][2], tol)


def dyadic_windows(t0: float, T: float, min_length: float = 0.25) -> list[tuple[float, float]]:
    """All dyadic subintervals of ``[t0, T]`` no shorter than ``min_length``."""
    out = []
    parts = 1
    while (T - t0) / parts >= min_length - 1e-12:
        L = (T - t0) / parts
        out.extend((t0 + k * L, t0 + (k + 1) * L) for k in range(parts))
        parts *= 2
    return out


def dissipation_tolerance(window) -> float:
    return 1e-6 * (1.0 + (window[1] - window[0]))


def dissipation_residual(traj: Trajectory, cert: StorageCertificate, windows) -> np.ndarray:
    """Residual ``[V(T) - V(t0)] - int Re<u,y> + beta int |h|^2`` per window.

    The certificate holds on a window when the residual is at most
    ``dissipation_tolerance(window)``. A window that contains a storage jump
    failing the Loewner check raises InvalidJumpError.
    """
    V = energy_trace(traj, cert)
    bad_jumps = [t for k, t in enumerate(cert.jump_times, start=1) if not cert.jump_ok(k)]
    out = np.empty(len(windows))
    for w, (a, b) in enumerate(windows):
        for tj in bad_jumps:
            if a < tj <= b:
                raise InvalidJumpError(f"invalid jump at t = {tj} inside window [{a}, {b}]")
        i, j = traj.nearest_index(a), traj.nearest_index(b)
        out[w] = (V[j] - V[i]) - supply_integral(traj, (a, b)) \
            + cert.beta * state_energy_integral(traj, (a, b))
    return out


def dissipation_holds(residuals, windows) -> bool:
    return all(r <= dissipation_tolerance(w) for r, w in zip(residuals, windows))


# --- exponential decay ---------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    C_fit: float
    gamma_fit: float
    r_squared: float


def decay_fit(t, norms, window) -> DecayFit:
    """Least-squares fit of ``|h(t)| ~ C exp(-gamma (t - t0)) |h(t0)|`` on ``window``."""
    t = np.asarray(t, dtype=float)
    norms = np.asarray(norms, dtype=float)
    a, b = window
    sel = (t >= a - 1e-12) & (t <= b + 1e-12)
    ts, ns = t[sel], norms[sel]
    if ts.size < 2:
        raise ValueError("window holds fewer than two samples")
    if np.any(ns <= 0):
        raise ValueError("underflow, shrink window")
    logs = np.log(ns)
    slope, intercept = np.polyfit(ts - ts[0], logs, 1)
    pred = intercept + slope * (ts - ts[0])
    ss_res = float(np.sum((logs - pred) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(np.exp(intercept) / ns[0]), float(-slope), r2)


# --- parametric LMI ------------------------------------------------------------------

def assemble_lmi(Q, Qdot, A, B, C, beta: float = 0.0) -> np.ndarray:
    """Symmetrized passivity LMI block of size ``N + d_in``.

    [[Qdot + Q A + A^H Q + 2 beta I,  Q B - C^H],
     [B^H Q - C,                      0        ]]
    """
    Q, A, B, C = (np.atleast_2d(np.asarray(M)) for M in (Q, A, B, C))
    N = Q.shape[0]
    Qdot = np.zeros_like(Q) if Qdot is None else np.atleast_2d(np.asarray(Qdot))
    d = B.shape[1]
    if (Q.shape != (N, N) or Qdot.shape != (N, N) or A.shape != (N, N) or B.shape[0] != N
            or C.shape != (d, N)):
        raise ValueError(f"dimension mismatch: Q{Q.shape} Qdot{Qdot.shape} A{A.shape} "
                         f"B{B.shape} C{C.shape}")
    top_left = Qdot + Q @ A + ctranspose(A) @ Q + 2.0 * beta * np.eye(N)
    off = Q @ B - ctranspose(C)
    M = np.block([[top_left, off], [ctranspose(B) @ Q - C, np.zeros((d, d))]])
    return hermitian_part(M)


def lmi_violation(Q, Qdot, A, B, C, beta: float = 0.0) -> float:
    return max(0.0, lambda_max(assemble_lmi(Q, Qdot, A, B, C, beta)))


@dataclass
class LMIReport:
    samples: list  # (t, x, violation)
    max_violation: float
    violating_fraction: float


def lmi_violation_sweep(sys: SelectiveSystem, cert: StorageCertificate, x_grid, t_grid) -> LMIReport:
    """Evaluate the LMI violation for every ``(t, x)`` pair (``Qdot = 0`` inside segments)."""
    x_grid = list(x_grid)
    if not x_grid:
        raise ValueError("x_grid must be nonempty")
    params = [sys.params(x) for x in x_grid]
    samples = []
    for t in t_grid:
        Q = cert(t)
        for x, (A, B, C) in zip(x_grid, params):
            samples.append((float(t), x, lmi_violation(Q, None, A, B, C, cert.beta)))
    viol = np.array([s[2] for s in samples])
    return LMIReport(samples, float(viol.max()), float(np.mean(viol > 0)))


def kernel_output_residual(Q, C_list, rank_tol: float = DEFAULT_RANK_TOL) -> float:
    """``max |C v|`` over an orthonormal kernel basis of ``Q`` and all ``C``; 0 if the kernel is empty."""
    _, K = rank_with_tol(Q, rank_tol)
    if K.shape[1] == 0:
        return 0.0
    return max(float(np.max(np.linalg.norm(np.atleast_2d(C) @ K, axis=0))) for C in C_list)


def kernel_output_holds(residual: float, C_list) -> bool:
    scale = max(1.0, max(np.linalg.norm(np.atleast_2d(C), 2) for C in C_list))
    return residual <= KERNEL_TOL * scale


def kernel_energy_residual(Q, Qdot, beta: float, rank_tol: float = DEFAULT_RANK_TOL) -> float:
    """``max v^H Qdot v + 2 beta`` over unit vectors ``v`` in ker(Q); 0 if the kernel is empty.

    The maximum is taken over the whole kernel (largest eigenvalue of Qdot
    compressed to the kernel), not only over basis vectors.
    """
    _, K = rank_with_tol(Q, rank_tol)
    if K.shape[1] == 0:
        return 0.0
    Qdot = np.atleast_2d(np.asarray(Qdot))
    return lambda_max(ctranspose(K) @ Qdot @ K) + 2.0 * beta


def kernel_energy_holds(residual: float) -> bool:
    return residual <= KERNEL_TOL


# --- rank profile ---------------------------------------------------------------------

@dataclass
class RankProfile:
    times: list
    ranks: list
    monotone_nonincreasing: bool
    jump_loewner_ok: bool
    jump_checks: list = field(default_factory=list)  # (t, ok) per jump


def rank_profile(cert: StorageCertificate) -> RankProfile:
    times = [seg[0] for seg in cert.segments]
    ranks = [rank_with_tol(seg[2], cert.rank_tol)[0] for seg in cert.segments]
    monotone = all(r1 <= r0 for r0, r1 in zip(ranks, ranks[1:]))
    checks = [(t, cert.jump_ok(k)) for k, t in enumerate(cert.jump_times, start=1)]
    return RankProfile(times, ranks, monotone, all(ok for _, ok in checks), checks)


# --- uniform contraction and ISS ------------------------------------------------------

def uniform_contraction_check(Q, Qdot, A_list, delta: float) -> float:
    """``max_x lambda_max(Qdot + Q A(x) + A(x)^H Q + 2 delta Q)``; holds iff <= 1e-8."""
    Q = check_hermitian(Q)
    w = sym_eigen(Q).values
    if w[-1] <= 0:
        raise np.linalg.LinAlgError(f"k1 bound violated (lambda_min(Q) = {w[-1]:.3e})")
    Qdot = np.zeros_like(Q) if Qdot is None else np.atleast_2d(np.asarray(Qdot))
    return max(lambda_max(Qdot + Q @ A + ctranspose(A) @ Q + 2.0 * delta * Q) for A in A_list)


def contraction_holds(excess: float) -> bool:
    return excess <= CONTRACTION_TOL


@dataclass
class ISSCheckReport:
    k1: float
    k2: float
    delta: float
    M_B: float
    C_tilde: float
    gamma_tilde: float
    K_prime: float
    margins: np.ndarray
    min_margin: float

    @property
    def holds(self) -> bool:
        return self.min_margin >= -ISS_TOL


def iss_bound_check(traj: Trajectory, k1: float, k2: float, delta: float, M_B: float) -> ISSCheckReport:
    """Margin ``bound(t) - |h(t)|`` for the linear-gain ISS estimate.

    bound(t) = sqrt(k2/k1) exp(-delta (t - t0)) |h(t0)| + (k2 M_B / (delta k1)) sup |u|,
    with the supremum over the input samples seen up to ``t``.
    """
    if min(k1, k2, delta, M_B) <= 0 or k2 < k1:
        raise ValueError("need 0 < k1 <= k2 and positive delta, M_B")
    C_tilde = float(np.sqrt(k2 / k1))
    K_prime = k2 * M_B / (delta * k1)
    t = traj.t
    norms = traj.norms
    u_sup = np.maximum.accumulate(traj.input_norms)
    bound = C_tilde * np.exp(-delta * (t - t[0])) * norms[0] + K_prime * u_sup
    margins = bound - norms
    return ISSCheckReport(k1, k2, delta, M_B, C_tilde, delta, K_prime, margins,
                          float(margins.min()))


def comparison_rhs(t, psi0: float, delta: float, K: float, u_norms) -> np.ndarray:
    """``exp(-delta (t - t0)) psi0 + int exp(-delta (t - s)) (K/2) |u(s)| ds`` on the grid.

    The convolution is advanced step by step with the trapezoidal rule.
    """
    t = np.asarray(t, dtype=float)
    f = 0.5 * K * np.asarray(u_norms, dtype=float)
    conv = np.zeros(len(t))
    for n in range(len(t) - 1):
        h = t[n + 1] - t[n]
        decay = np.exp(-delta * h)
        conv[n + 1] = decay * conv[n] + 0.5 * h * (decay * f[n] + f[n + 1])
    return np.exp(-delta * (t - t[0])) * psi0 + conv


@dataclass
class ComparisonReport:
    margins: np.ndarray
    min_margin: float


def comparison_bound_check(t, psi, delta: float, K: float, u_norms) -> ComparisonReport:
    psi = np.asarray(psi, dtype=float)
    if np.any(psi < 0) or K < 0:
        raise ValueError("need psi >= 0 and K >= 0")
    margins = comparison_rhs(t, psi[0], delta, K, u_norms) - psi
    return ComparisonReport(margins, float(margins.min()))


def psi_trace(traj: Trajectory, storage) -> np.ndarray:
    """``sqrt(V_Q)`` along a trajectory."""
    return np.sqrt(np.maximum(energy_trace(traj, storage), 0.0))


# --- combined report ---------------------------------------------------------------

@dataclass
class CertificateReport:
    max_lmi_violation: float
    violating_fraction: float
    kernel_output_residual: float
    kernel_energy_residual: float
    rank_profile: list  # [{"t", "rank"}]
    monotone: bool
    loewner_ok: bool
    dissipation: list  # [{"t0", "T", "residual"}]
    iss: dict | None

    def to_dict(self) -> dict:
        return {
            "max_lmi_violation": self.max_lmi_violation,
            "violating_fraction": self.violating_fraction,
            "kernel_output_residual": self.kernel_output_residual,
            "kernel_energy_residual": self.kernel_energy_residual,
            "rank_profile": self.rank_profile,
            "monotone": self.monotone,
            "loewner_ok": self.loewner_ok,
            "dissipation": self.dissipation,
            "iss": self.iss,
        }


def certify_run(sys: SelectiveSystem, traj: Trajectory, cert: StorageCertificate,
                x_grid=DEFAULT_X_GRID, windows=None, iss_delta: float | None = None) -> CertificateReport:
    """Run every applicable check for one system, trajectory and certificate."""
    t_grid = [seg[0] for seg in cert.segments]
    lmi = lmi_violation_sweep(sys, cert, x_grid, t_grid)
    C_list = [sys.params(x)[2] for x in x_grid]
    k_out = max(kernel_output_residual(Q, C_list, cert.rank_tol) for _, _, Q in cert.segments)
    k_en = max(kernel_energy_residual(Q, np.zeros_like(Q), cert.beta, cert.rank_tol)
               for _, _, Q in cert.segments)
    prof = rank_profile(cert)
    if windows is None:
        windows = dyadic_windows(traj.t[0], traj.t[-1])
    try:
        res = dissipation_residual(traj, cert, windows)
        dissipation = [{"t0": a, "T": b, "residual": float(r)} for (a, b), r in zip(windows, res)]
    except InvalidJumpError:
        dissipation = []
    iss = None
    if iss_delta is not None and len(cert.segments) == 1:
        Q = cert.segments[0][2]
        w = sym_eigen(Q).values
        if w[-1] > 0:
            M_B = max(np.linalg.norm(sys.params(x)[1], 2) for x in x_grid)
            rep = iss_bound_check(traj, float(w[-1]), float(w[0]), iss_delta, float(M_B))
            iss = {"k1": rep.k1, "k2": rep.k2, "delta": rep.delta, "M_B": rep.M_B,
                   "min_margin": rep.min_margin}
    return CertificateReport(
        lmi.max_violation, lmi.violating_fraction, k_out, k_en,
        [{"t": t, "rank": r} for t, r in zip(prof.times, prof.ranks)],
        prof.monotone_nonincreasing, prof.jump_loewner_ok, dissipation, iss)
