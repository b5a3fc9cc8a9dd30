"""CARE solver: closed-form fixtures, random-system residuals, and the
scipy solver as an independent cross-check oracle."""

import math

import numpy as np
import pytest
from scipy.linalg import solve_continuous_are

from ovalsim.riccati import CareError, care_residual, solve_care, solve_lyapunov


class TestClosedForms:
    def test_double_integrator(self):
        # Closed form: P = [[sqrt(3), 1], [1, sqrt(3)]], K = [1, sqrt(3)].
        A = np.array([[0.0, 1.0], [0.0, 0.0]])
        B = np.array([[0.0], [1.0]])
        P, K = solve_care(A, B, np.eye(2), np.array([[1.0]]))
        s3 = math.sqrt(3.0)
        assert np.allclose(P, [[s3, 1.0], [1.0, s3]], atol=1e-9)
        assert np.allclose(K, [[1.0, s3]], atol=1e-9)

    def test_stable_system_zero_input(self):
        # B = 0 with A stable: K = 0 and P solves the Lyapunov equation
        # A^T P + P A + Q = 0 -> P = I/2 for A = -I, Q = I.
        A = -np.eye(2)
        B = np.zeros((2, 1))
        P, K = solve_care(A, B, np.eye(2), np.array([[1.0]]))
        assert np.allclose(K, 0.0, atol=1e-12)
        assert np.allclose(P, 0.5 * np.eye(2), atol=1e-10)

    def test_scalar_case(self):
        # a=1, b=1, q=1, r=1: p = 1 + sqrt(2), k = p.
        P, K = solve_care([[1.0]], [[1.0]], [[1.0]], [[1.0]])
        assert P[0, 0] == pytest.approx(1.0 + math.sqrt(2.0), abs=1e-10)
        assert K[0, 0] == pytest.approx(1.0 + math.sqrt(2.0), abs=1e-10)


class TestRandomSystems:
    def test_hundred_random_4state(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            A = rng.normal(size=(4, 4))
            B = rng.normal(size=(4, 1))
            Q = np.eye(4)
            R = np.array([[1.0]])
            P, K = solve_care(A, B, Q, R)
            resid = care_residual(A, B, Q, R, P)
            assert resid < 1e-8 * (1.0 + np.linalg.norm(P, "fro"))
            assert np.max(np.linalg.eigvals(A - B @ K).real) < 0.0
            # Independent oracle: scipy's Schur-based solver.
            P_ref = solve_continuous_are(A, B, Q, R)
            assert np.linalg.norm(P - P_ref) < 1e-7 * np.linalg.norm(P_ref)

    def test_runtime_budget(self):
        import time

        rng = np.random.default_rng(1)
        systems = [
            (rng.normal(size=(4, 4)), rng.normal(size=(4, 1))) for _ in range(100)
        ]
        t0 = time.monotonic()
        for A, B in systems:
            solve_care(A, B, np.eye(4), np.array([[1.0]]))
        assert time.monotonic() - t0 < 1.0


class TestLyapunov:
    def test_known_solution(self):
        # F = -I: F^T X + X F = -C gives X = C/2.
        C = np.array([[2.0, 0.4], [0.4, 6.0]])
        X = solve_lyapunov(-np.eye(2), C)
        assert np.allclose(X, C / 2.0, atol=1e-12)

    def test_residual(self):
        rng = np.random.default_rng(3)
        F = -np.eye(3) + 0.3 * rng.normal(size=(3, 3))
        if np.max(np.linalg.eigvals(F).real) >= 0:
            F -= 2.0 * np.eye(3)
        C = rng.normal(size=(3, 3))
        C = C @ C.T
        X = solve_lyapunov(F, C)
        assert np.allclose(F.T @ X + X @ F, -C, atol=1e-9)


class TestErrors:
    def test_indefinite_r_rejected(self):
        with pytest.raises(CareError, match="positive definite"):
            solve_care(np.eye(2), np.ones((2, 1)), np.eye(2), [[-1.0]])

    def test_unstabilizable_pair_rejected(self):
        # Unstable mode completely decoupled from the input.
        A = np.diag([1.0, -1.0])
        B = np.array([[0.0], [1.0]])
        with pytest.raises(CareError):
            solve_care(A, B, np.eye(2), [[1.0]])
