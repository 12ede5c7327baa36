"""Dense Hermitian linear algebra used throughout the toolkit.

Matrices are plain numpy arrays. Real inputs stay real; complex inputs are
handled through conjugate transposes everywhere.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
import scipy.linalg

HERMITIAN_RTOL = 1e-12
EPS_ABS = 1e-12
DEFAULT_RANK_TOL = 1e-8
MAX_LYAP_DIM = 32


class NotHermitianError(ValueError):
    def __init__(self, residual: float):
        super().__init__(f"matrix is not Hermitian (symmetry residual {residual:.3e})")
        self.residual = residual


class NotPSDError(ValueError):
    def __init__(self, eigenvalue: float):
        super().__init__(f"matrix is not PSD (eigenvalue {eigenvalue:.3e})")
        self.eigenvalue = eigenvalue


class LyapunovError(np.linalg.LinAlgError):
    """The Lyapunov operator is singular: no unique solution."""


class MagnitudeOverflow(OverflowError):
    pass


class EigenDecomposition(NamedTuple):
    values: np.ndarray  # real, descending
    vectors: np.ndarray  # orthonormal columns


def ctranspose(M: np.ndarray) -> np.ndarray:
    return M.conj().T


def check_hermitian(M) -> np.ndarray:
    """Return ``M`` as a 2-D array, raising NotHermitianError if it is not Hermitian."""
    M = np.atleast_2d(np.asarray(M))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 0.0)
    residual = float(np.max(np.abs(M - ctranspose(M)))) if M.size else 0.0
    if residual > HERMITIAN_RTOL * scale:
        raise NotHermitianError(residual)
    return M


def hermitian_part(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + ctranspose(M))


def _canonical_phase(vectors: np.ndarray) -> np.ndarray:
    # make the first entry of non-negligible magnitude real and positive
    out = vectors.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        k = int(np.argmax(np.abs(col) > 1e-8 * np.max(np.abs(col))))
        if np.iscomplexobj(out):
            out[:, j] = col * (abs(col[k]) / col[k])
        elif col[k] < 0:
            out[:, j] = -col
    return out


def sym_eigen(M) -> EigenDecomposition:
    """Full eigendecomposition of a Hermitian matrix.

    Eigenvalues come back in descending order. Within a cluster of
    numerically equal eigenvalues, eigenvectors are ordered
    lexicographically by their (phase-normalized) entries so that the output
    is deterministic.
    """
    M = check_hermitian(M)
    w, V = np.linalg.eigh(hermitian_part(M))
    V = _canonical_phase(V)
    scale = max(EPS_ABS, float(np.max(np.abs(w))) if w.size else 0.0)

    def key(j):
        # descending value, rounded so that exact ties compare equal
        rounded = np.round(-w[j] / scale, 10)
        entries = tuple(x for z in V[:, j] for x in (round(z.real, 10), round(z.imag, 10)))
        return (rounded, entries)

    order = sorted(range(len(w)), key=key)
    return EigenDecomposition(w[order], V[:, order])


def lyapunov_solve(A, W) -> np.ndarray:
    """Solve ``A^H Q + Q A = -W`` by Kronecker vectorization.

    Indefinite solutions are returned as-is; callers decide what to do with
    them. Raises LyapunovError when some pair of eigenvalues satisfies
    ``lambda_i + conj(lambda_j) = 0``.
    """
    A = np.atleast_2d(np.asarray(A))
    W = check_hermitian(W)
    n = A.shape[0]
    if A.shape != (n, n) or W.shape != (n, n):
        raise ValueError(f"dimension mismatch: A {A.shape}, W {W.shape}")
    if n > MAX_LYAP_DIM:
        raise ValueError(f"dimension {n} exceeds the dense Kronecker limit {MAX_LYAP_DIM}")

    lam = np.linalg.eigvals(A)
    gap = np.min(np.abs(lam[:, None] + lam.conj()[None, :]))
    if gap <= 1e-10 * max(1.0, np.linalg.norm(A, 2)):
        raise LyapunovError(f"no unique solution (min |l_i + conj(l_j)| = {gap:.3e})")

    eye = np.eye(n)
    # column-major vec: vec(A^H Q) = (I kron A^H) q, vec(Q A) = (A^T kron I) q
    K = np.kron(eye, ctranspose(A)) + np.kron(A.T, eye)
    q = np.linalg.solve(K, -W.reshape(-1, order="F"))
    Q = q.reshape(n, n, order="F")
    if not (np.iscomplexobj(A) or np.iscomplexobj(W)):
        Q = Q.real
    return hermitian_part(Q)


def lyapunov_residual(A, Q, W) -> float:
    A, Q, W = (np.atleast_2d(np.asarray(M)) for M in (A, Q, W))
    return float(np.linalg.norm(ctranspose(A) @ Q + Q @ A + W, "fro"))


def rank_with_tol(M, tol: float = DEFAULT_RANK_TOL) -> tuple[int, np.ndarray]:
    """Numerical rank of a PSD matrix and an orthonormal basis of its kernel.

    Eigenvalues above ``tol * max(lambda_max, 1e-12)`` count towards the rank.
    """
    eig = sym_eigen(M)
    lam_max = float(eig.values[0]) if eig.values.size else 0.0
    lam_min = float(eig.values[-1]) if eig.values.size else 0.0
    if lam_min < -tol * max(lam_max, EPS_ABS):
        raise NotPSDError(lam_min)
    keep = eig.values > tol * max(lam_max, EPS_ABS)
    rank = int(np.count_nonzero(keep))
    return rank, eig.vectors[:, rank:]


def cond_number(M) -> float:
    """Spectral condition number of a positive definite matrix."""
    w = sym_eigen(M).values
    if w[-1] <= 0:
        raise np.linalg.LinAlgError(f"indefinite or singular (lambda_min = {w[-1]:.3e})")
    return float(w[0] / w[-1])


def is_positive_definite(M) -> bool:
    w = sym_eigen(M).values
    return bool(w[-1] > EPS_ABS * max(1.0, abs(w[0])))


def lambda_max(M) -> float:
    return float(np.linalg.eigvalsh(hermitian_part(np.atleast_2d(np.asarray(M))))[-1])


def lambda_min(M) -> float:
    return float(np.linalg.eigvalsh(hermitian_part(np.atleast_2d(np.asarray(M))))[0])


def loewner_geq(P, Q, tol: float = 1e-9) -> bool:
    """True iff ``P - Q`` is PSD up to ``tol``."""
    P = check_hermitian(P)
    Q = check_hermitian(Q)
    if P.shape != Q.shape:
        raise ValueError(f"dimension mismatch: {P.shape} vs {Q.shape}")
    return lambda_min(P - Q) >= -tol


def expm_apply(A, t: float, v) -> np.ndarray:
    """``exp(A t) @ v`` via scaling-and-squaring (scipy)."""
    A = np.atleast_2d(np.asarray(A))
    v = np.asarray(v)
    if A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    with np.errstate(over="raise", invalid="raise"):
        try:
            out = scipy.linalg.expm(A * t) @ v
        except FloatingPointError as exc:
            raise MagnitudeOverflow("magnitude overflow") from exc
    if not np.all(np.isfinite(out)):
        raise MagnitudeOverflow("magnitude overflow")
    return out
