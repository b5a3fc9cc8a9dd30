"""Continuous-time algebraic Riccati solver via Newton-Kleinman iteration.

The gain-scheduled steering controller needs CARE solutions at build time
for every speed bracket. State dimension is tiny (4), so each Newton step
solves its Lyapunov equation directly by vectorization (an n^2 x n^2 linear
solve) rather than through a Schur decomposition. The iteration is seeded
with a stabilizing gain from Bass's loop-shifting construction; if the pair
is stabilizable but not controllable the fallback seed K0 = 0 covers the
already-stable case.

Newton-Kleinman: given stabilizing K_i, solve

    (A - B K_i)^T P_i + P_i (A - B K_i) = -(Q + K_i^T R K_i)

and set K_{i+1} = R^-1 B^T P_i. P_i decreases monotonically to the
stabilizing CARE solution with quadratic terminal convergence.
"""

from __future__ import annotations

import numpy as np

_MAX_ITER = 60
_RESIDUAL_RTOL = 1e-8


class CareError(RuntimeError):
    """Raised when no stabilizing solution can be computed."""


def solve_lyapunov(F: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Solve F^T X + X F = -C by vectorization. F must be Hurwitz."""
    n = F.shape[0]
    eye = np.eye(n)
    M = np.kron(eye, F.T) + np.kron(F.T, eye)
    X = np.linalg.solve(M, -C.reshape(-1)).reshape(n, n)
    return 0.5 * (X + X.T)


def stabilizing_gain(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Initial stabilizing gain K0 with A - B K0 Hurwitz.

    Bass construction: for beta exceeding the spectral abscissa of A, solve
    (A + beta I) Z + Z (A + beta I)^T = 2 B B^T; K0 = B^T Z^-1 stabilizes
    controllable pairs. Falls back to K0 = 0 when A is already stable.
    """
    n, m = A.shape[0], B.shape[1]
    eigs = np.linalg.eigvals(A).real
    if eigs.max() < 0:
        return np.zeros((m, n))
    # beta must exceed the abscissa of -A so A + beta*I is positively stable;
    # keep it moderate, since beta >> that makes Z nearly singular and K0 huge.
    base = max(-eigs.min(), 0.0) * 1.05 + 0.5 * (1.0 + eigs.max())
    for beta in (base, 4.0 * base, 2.0 * np.linalg.norm(A, "fro") + 1.0):
        G = A + beta * np.eye(n)
        M = np.kron(np.eye(n), G) + np.kron(G, np.eye(n))
        try:
            Z = np.linalg.solve(M, (2.0 * B @ B.T).reshape(-1)).reshape(n, n)
            K0 = np.linalg.solve(0.5 * (Z + Z.T), B).T
        except np.linalg.LinAlgError:
            continue
        if np.max(np.linalg.eigvals(A - B @ K0).real) < 0:
            return K0
    raise CareError("loop-shifting seed failed to stabilize; pair may not be stabilizable")


def care_residual(A, B, Q, R, P) -> float:
    """Frobenius norm of A^T P + P A - P B R^-1 B^T P + Q."""
    res = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.linalg.norm(res, "fro"))


def solve_care(A, B, Q, R) -> tuple[np.ndarray, np.ndarray]:
    """Stabilizing CARE solution P and gain K = R^-1 B^T P.

    Raises CareError with the residual when the iteration does not converge
    or the closed loop is not strictly stable.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if np.min(np.linalg.eigvalsh(R)) <= 0:
        raise CareError("R must be positive definite")

    K = stabilizing_gain(A, B)
    P = np.zeros_like(A)
    for _ in range(_MAX_ITER):
        Acl = A - B @ K
        try:
            P = solve_lyapunov(Acl, Q + K.T @ R @ K)
        except np.linalg.LinAlgError as exc:
            raise CareError(f"Lyapunov operator singular during iteration: {exc}") from exc
        K_full = np.linalg.solve(R, B.T @ P)
        # Damped step: keep the iterate stabilizing under roundoff.
        K_next = K_full
        t = 1.0
        while np.max(np.linalg.eigvals(A - B @ K_next).real) >= 0 and t > 1e-4:
            t *= 0.5
            K_next = (1.0 - t) * K + t * K_full
        if np.max(np.abs(K_next - K)) <= 1e-13 * (1.0 + np.max(np.abs(K_next))):
            K = K_next
            break
        K = K_next

    resid = care_residual(A, B, Q, R, P)
    if resid >= _RESIDUAL_RTOL * (1.0 + np.linalg.norm(P, "fro")):
        raise CareError(f"Newton-Kleinman did not converge, residual {resid:.3e}")
    cl = np.max(np.linalg.eigvals(A - B @ K).real)
    if cl >= 0:
        raise CareError(f"closed loop not strictly stable (max Re eig {cl:.3e})")
    return P, K
