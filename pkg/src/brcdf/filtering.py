"""Per-agent filter algebra: gains, covariance recursion and the stability bound."""
from dataclasses import dataclass, replace
import warnings

import numpy as np

from ._linalg import block_diag, right_solve, spd_inv, spd_solve, sym
from .errors import ConvergenceError, NumericalError


def kalman_gain(P, H, R, A):
    """``K = A P H^T (R + H P H^T)^{-1}``."""
    M = sym(R + H @ P @ H.T)
    return right_solve(A @ P @ H.T, M, "innovation covariance R + H P H^T")


def riccati_step(P, A, H, R, Q, K):
    """``F P F^T + K R K^T + Q`` with ``F = A - K H``, symmetrized."""
    F = A - K @ H
    return sym(F @ P @ F.T + K @ R @ K.T + Q)


def information_matrix(P, H, R):
    """``Mbar = P^{-1} + H^T R^{-1} H``."""
    return sym(spd_inv(P, "covariance P") + H.T @ spd_solve(R, H, "R"))


def steady_state_covariance(A, H, R, Q, P0=None, tol=1e-11, max_iter=100_000, full_output=False):
    """Iterate the local Riccati recursion with the optimal gain to its fixed point.

    Stops when the Frobenius change between iterates drops below ``tol``.
    With ``full_output`` the number of iterations is returned as well.
    """
    P = np.eye(A.shape[0]) if P0 is None else np.asarray(P0, dtype=float)
    delta = np.inf
    for it in range(1, max_iter + 1):
        K = kalman_gain(P, H, R, A)
        P_next = riccati_step(P, A, H, R, Q, K)
        delta = np.linalg.norm(P_next - P)
        P = P_next
        if not np.isfinite(delta):
            break
        if delta < tol:
            return (P, it) if full_output else P
    raise ConvergenceError(
        f"Riccati iteration did not converge (last delta {delta:.3e})", delta, max_iter
    )


def consensus_gain(gamma, A, P, H, R):
    """``C = gamma A Mbar^{-1}``."""
    Mbar = information_matrix(P, H, R)
    return gamma * right_solve(A, Mbar, "information matrix Mbar")


@dataclass(frozen=True)
class StabilityProfile:
    lambda_I: np.ndarray
    lambda_II: np.ndarray
    gamma_star: float
    p_e: float
    lambda_min_I: float
    lambda_max_II: float


def gamma_bound(graph, P, H, R, p_e, A=None):
    """Largest consensus step ``gamma*`` that keeps the noise-free error stable.

    ``P``, ``H`` and ``R`` are per-agent sequences (steady-state covariances,
    observation matrices, noise covariances).
    """
    if not 0.0 < p_e <= 1.0:
        raise ValueError("p_e must lie in (0, 1]")
    if A is not None and np.linalg.cond(A) > 1e12:
        warnings.warn("A is (numerically) singular; the stability argument assumes A invertible", stacklevel=2)
    lam1, lam2 = [], []
    for P_i, H_i, R_i in zip(P, H, R):
        G = sym(H_i.T @ spd_solve(R_i, H_i, "R"))
        G_inv = spd_inv(G, "H^T R^-1 H")
        lam1.append(spd_inv(sym(P_i + G_inv), "P + (H^T R^-1 H)^-1"))
        lam2.append(spd_inv(information_matrix(P_i, H_i, R_i), "information matrix Mbar"))
    m = lam1[0].shape[0]
    Lam1, Lam2 = block_diag(lam1), block_diag(lam2)
    LI = np.kron(graph.laplacian(), np.eye(m))
    lmin = min(np.linalg.eigvalsh(b)[0] for b in lam1)
    lmax = np.linalg.eigvalsh(sym(LI @ Lam2 @ LI))[-1]
    if lmin <= 0 or lmax <= 0:
        raise NumericalError(f"degenerate stability profile (lambda_min={lmin}, lambda_max={lmax})")
    gstar = np.sqrt(lmin / lmax) / np.sqrt(p_e)
    return StabilityProfile(Lam1, Lam2, float(gstar), p_e, float(lmin), float(lmax))


@dataclass(frozen=True)
class AgentRuntime:
    x_hat: np.ndarray
    P: np.ndarray
    K: np.ndarray
    C: np.ndarray
    frozen: bool = False


def _as_diag(S):
    S = np.asarray(S, dtype=float)
    return S if S.ndim == 1 else np.diag(S)


def filter_step(agent, y, received, A, H, R, Q):
    """One synchronous update of a single agent.

    ``received`` holds ``(S_j, S_j xbar_j)`` pairs from the neighbors, where
    ``S_j`` is either the selection matrix or its 0/1 diagonal. Entries the
    neighbor did not share are filled with the agent's own estimate, so they
    drop out of the consensus term.
    """
    m = agent.x_hat.shape[0]
    K = agent.K if agent.frozen else kalman_gain(agent.P, H, R, A)
    u = np.zeros(m)
    for S_j, frag in received:
        s = _as_diag(S_j)
        frag = np.asarray(frag, dtype=float)
        if s.shape != (m,) or frag.shape != (m,):
            raise ValueError(f"fragment dimension mismatch: expected length {m}")
        u += frag - s * agent.x_hat
    x_next = A @ agent.x_hat + K @ (y - H @ agent.x_hat) + agent.C @ u
    P_next = agent.P if agent.frozen else riccati_step(agent.P, A, H, R, Q, K)
    return replace(agent, x_hat=x_next, P=P_next, K=K)


def optimal_gain_full(P_i, P_ji, C_i, S, A, H, R):
    """Trace-optimal gain when the cross covariances ``P_ji`` are available.

    ``P_ji`` and ``S`` run over the neighbors of agent ``i`` in the same order.
    """
    m = A.shape[0]
    s_sum = np.zeros(m)
    cross = np.zeros((m, m))
    for S_j, P_j in zip(S, P_ji):
        s = _as_diag(S_j)
        s_sum += s
        cross += s[:, None] * P_j
    G = (A - C_i * s_sum[None, :]) @ P_i + C_i @ cross
    M = sym(R + H @ P_i @ H.T)
    return right_solve(G @ H.T, M, "innovation covariance M")
