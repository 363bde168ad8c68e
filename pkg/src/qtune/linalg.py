"""Dense real matrix kernel: Schur form, Riccati and Lyapunov solvers.

The Riccati solvers work on the Hamiltonian matrix

    H = [[A, -G], [-Qw, -A']]

and extract the stable invariant subspace from an ordered real Schur
decomposition. ``G`` may be indefinite, which is what the H-infinity
synthesis needs; :func:`solve_care` is the LQ special case
``G = B Rw^-1 B'``.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla


class LinalgError(ValueError):
    """Raised when a matrix equation has no admissible solution."""


class NotStabilizableError(LinalgError):
    pass


def as_mat(M, name: str = "matrix") -> np.ndarray:
    """Coerce ``M`` to a finite 2-D float array."""
    arr = np.atleast_2d(np.asarray(M, dtype=float))
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite entries")
    return arr


def _square(M, name):
    M = as_mat(M, name)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got {M.shape}")
    return M


def is_hurwitz(A, margin: float = 0.0) -> bool:
    return bool(np.max(np.linalg.eigvals(_square(A, "A")).real) < -margin)


def real_schur(M, sort=None):
    """Real Schur decomposition ``M = Q T Q'``.

    Returns ``(Q, T)`` with ``T`` quasi upper-triangular. ``sort`` is passed
    through to LAPACK's reordering ('lhp', 'rhp', 'iuc', 'ouc' or a callable);
    when given, the number of selected eigenvalues is returned as a third item.
    """
    M = _square(M, "M")
    try:
        if sort is None:
            T, Q = sla.schur(M, output="real")
            return Q, T
        T, Q, sdim = sla.schur(M, output="real", sort=sort)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise LinalgError(f"Schur decomposition failed: {exc}") from exc
    return Q, T, sdim


def schur_eigenvalues(T) -> np.ndarray:
    """Eigenvalues read off the 1x1 and 2x2 diagonal blocks of a real Schur form."""
    T = np.asarray(T)
    n = T.shape[0]
    out = []
    i = 0
    while i < n:
        if i + 1 < n and T[i + 1, i] != 0.0:
            a, b, c, d = T[i, i], T[i, i + 1], T[i + 1, i], T[i + 1, i + 1]
            tr, det = a + d, a * d - b * c
            disc = complex(tr * tr / 4.0 - det)
            root = np.sqrt(disc)
            out.extend([tr / 2.0 + root, tr / 2.0 - root])
            i += 2
        else:
            out.append(complex(T[i, i]))
            i += 1
    return np.array(out)


def _symplectic_scaling(A, G, Qw):
    """Diagonal state scaling ``D`` that balances the Hamiltonian.

    Scaling ``x = D x_s`` keeps the Hamiltonian structure:
    ``A_s = D^-1 A D``, ``G_s = D^-1 G D^-1``, ``Qw_s = D Qw D`` and the
    solutions are related by ``X = D^-1 X_s D^-1``.
    """
    n = A.shape[0]
    H = np.block([[A, G], [Qw, A.T]])
    _, (s, _) = sla.matrix_balance(np.abs(H), permute=False, separate=True)
    d = np.sqrt(s[:n] / s[n:])
    # powers of two keep the scaling exact in floating point
    return np.exp2(np.round(np.log2(d)))


def solve_hamiltonian_riccati(A, G, Qw, balance: bool = True) -> np.ndarray:
    """Stabilizing solution of ``A'X + XA - XGX + Qw = 0``.

    ``G`` and ``Qw`` must be symmetric; neither needs to be definite.
    The solution makes ``A - G X`` Hurwitz.
    """
    A = _square(A, "A")
    n = A.shape[0]
    G = _square(G, "G")
    Qw = _square(Qw, "Qw")
    if G.shape != (n, n) or Qw.shape != (n, n):
        raise ValueError("A, G and Qw must share dimensions")
    G = 0.5 * (G + G.T)
    Qw = 0.5 * (Qw + Qw.T)

    d = _symplectic_scaling(A, G, Qw) if balance else np.ones(n)
    As = A * (1.0 / d)[:, None] * d[None, :]
    Gs = G * (1.0 / d)[:, None] * (1.0 / d)[None, :]
    Qs = Qw * d[:, None] * d[None, :]

    H = np.block([[As, -Gs], [-Qs, -As.T]])
    scale = max(np.linalg.norm(H, 1), 1.0)
    # eigenvalues too close to the imaginary axis cannot be split reliably
    tol = 100.0 * np.finfo(float).eps * scale
    Z, T, sdim = real_schur(H, sort=lambda re, im: re < -tol)
    if sdim != n:
        raise NotStabilizableError(
            f"Hamiltonian has {sdim} stable eigenvalues, expected {n} "
            "(stabilizability/detectability violated or eigenvalues on the imaginary axis)")
    U11 = Z[:n, :n]
    U21 = Z[n:, :n]
    if np.linalg.cond(U11) > 1e12:
        raise LinalgError("stable subspace is not a graph subspace (U11 singular)")
    Xs = np.linalg.solve(U11.T, U21.T).T
    Xs = 0.5 * (Xs + Xs.T)
    return Xs / d[:, None] / d[None, :]


def care_residual(A, B, Qw, Rw, P) -> np.ndarray:
    return A.T @ P + P @ A - P @ B @ np.linalg.solve(Rw, B.T @ P) + Qw


def solve_care(A, B, Qw, Rw, refine: int = 2) -> np.ndarray:
    """Stabilizing solution of ``A'P + PA - P B Rw^-1 B' P + Qw = 0``.

    The Schur-based solution is polished by up to ``refine`` Newton steps,
    each kept only if it lowers the residual.
    """
    A = _square(A, "A")
    B = as_mat(B, "B")
    Qw = _square(Qw, "Qw")
    Rw = _square(Rw, "Rw")
    n, m = B.shape
    if A.shape[0] != n or Qw.shape[0] != n or Rw.shape[0] != m:
        raise ValueError("inconsistent CARE dimensions")
    Rw = 0.5 * (Rw + Rw.T)
    if np.min(np.linalg.eigvalsh(Rw)) <= 0.0:
        raise LinalgError("Rw must be symmetric positive definite")
    if np.min(np.linalg.eigvalsh(0.5 * (Qw + Qw.T))) < -1e-12 * max(1.0, np.abs(Qw).max()):
        raise LinalgError("Qw must be positive semi-definite")
    if not pbh_stabilizable(A, B):
        raise NotStabilizableError("(A, B) is not stabilizable")
    G = B @ np.linalg.solve(Rw, B.T)
    P = solve_hamiltonian_riccati(A, G, Qw)
    if refine:
        P = _newton_refine(A, B, Qw, Rw, P, refine)
    pnorm = max(np.linalg.norm(P, 2), 1e-300)
    if np.min(np.linalg.eigvalsh(P)) < -1e-9 * pnorm:
        raise LinalgError("CARE solution is indefinite")
    return P


def _newton_refine(A, B, Qw, Rw, P, steps):
    res = care_residual(A, B, Qw, Rw, P)
    best = np.linalg.norm(res)
    for _ in range(steps):
        Ak = A - B @ np.linalg.solve(Rw, B.T @ P)
        if not is_hurwitz(Ak):
            break
        P_new = P + sla.solve_continuous_lyapunov(Ak.T, -res)
        P_new = 0.5 * (P_new + P_new.T)
        res_new = care_residual(A, B, Qw, Rw, P_new)
        if not np.linalg.norm(res_new) < best:
            break
        P, res, best = P_new, res_new, np.linalg.norm(res_new)
    return P


def kleinman_care(A, B, Qw, Rw, K0=None, maxiter: int = 100, patience: int = 3) -> np.ndarray:
    """Newton-Kleinman iteration for the CARE (oracle for :func:`solve_care`).

    ``K0`` must make ``A - B K0`` Hurwitz; if omitted ``A`` itself must be
    Hurwitz. Each step solves a Lyapunov equation. Iteration stops once the
    CARE residual has not improved for ``patience`` steps; the iterate with
    the smallest residual is returned.
    """
    A, B, Qw, Rw = (np.asarray(a, dtype=float) for a in (A, B, Qw, Rw))
    K = np.zeros((B.shape[1], A.shape[0])) if K0 is None else np.asarray(K0, dtype=float)
    best, best_res, stall = None, np.inf, 0
    for _ in range(maxiter):
        Ak = A - B @ K
        P = solve_lyapunov(Ak, Qw + K.T @ Rw @ K)
        K = np.linalg.solve(Rw, B.T @ P)
        res = np.linalg.norm(care_residual(A, B, Qw, Rw, P))
        if res < best_res:
            best, best_res, stall = P, res, 0
        else:
            stall += 1
            if stall >= patience:
                break
    return best


def solve_lyapunov(A, W) -> np.ndarray:
    """Solve ``A'X + XA + W = 0`` for Hurwitz ``A``."""
    A = _square(A, "A")
    W = _square(W, "W")
    if W.shape != A.shape:
        raise ValueError("A and W must share dimensions")
    if not is_hurwitz(A):
        raise LinalgError("A is not Hurwitz")
    X = sla.solve_continuous_lyapunov(A.T, -W)
    return 0.5 * (X + X.T) if np.allclose(W, W.T) else X


def pbh_stabilizable(A, B, tol: float = 1e-9) -> bool:
    """PBH test: ``[A - lam I, B]`` has full row rank at every unstable eigenvalue."""
    A = _square(A, "A")
    B = as_mat(B, "B")
    n = A.shape[0]
    scale = max(np.linalg.norm(A, 2), np.linalg.norm(B, 2), 1.0)
    for lam in np.linalg.eigvals(A):
        if lam.real < 0:
            continue
        M = np.hstack([A - lam * np.eye(n), B])
        sv = np.linalg.svd(M, compute_uv=False)
        if sv[-1] <= tol * scale:
            return False
    return True


def pbh_detectable(C, A, tol: float = 1e-9) -> bool:
    return pbh_stabilizable(np.asarray(A).T, np.asarray(C).T, tol)
