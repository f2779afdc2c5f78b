"""Network-wide error covariance propagation and MSE metrics.

Block conventions: per-agent quantities are stacked along the first axis,
``F``/``C`` have shape ``(L, m, m)``, ``K`` has shape ``(L, m, n)`` and
selection patterns are 0/1 arrays of shape ``(L, m)``. Joint matrices are
``Lm x Lm`` with agent ``i`` occupying rows ``i*m:(i+1)*m``.
"""
from dataclasses import dataclass, replace

import numpy as np

from ._linalg import block_diag, diag_blocks, sym
from .errors import ConvergenceError, NumericalError


def assemble_atilde(F, C, graph, s):
    """``diag(F_i) + C (E kron I) S``."""
    L, m, _ = F.shape
    X = np.einsum("ij,iab,jb->iajb", graph.E.astype(float), C, np.asarray(s, dtype=float))
    idx = np.arange(L)
    X[idx, :, idx, :] += F
    return X.reshape(L * m, L * m)


def gamma_matrix(C, graph, s, z=None):
    """``C (E kron I) S (diag(z) kron I)``; ``z`` defaults to all ones."""
    L, m, _ = C.shape
    s = np.asarray(s, dtype=float)
    if z is not None:
        s = s * np.asarray(z, dtype=float)[:, None]
    X = np.einsum("ij,iab,jb->iajb", graph.E.astype(float), C, s)
    return X.reshape(L * m, L * m)


def error_transition_blocks(A, K, H, C, graph, s):
    """``F_i = A - K_i H_i - C_i sum_{j in N_i} S_j`` for every agent."""
    shared = graph.E.astype(float) @ np.asarray(s, dtype=float)
    return A[None] - K @ H - C * shared[:, None, :]


def congruence(F, P):
    """Batched ``F_i P_i F_i^T`` for stacked ``F`` and ``P``."""
    return F @ P @ np.swapaxes(F, -1, -2)


def q_tilde(K, R, Q):
    """``diag(K_i R_i K_i^T) + (1 1^T) kron Q``."""
    L = K.shape[0]
    return sym(block_diag(list(congruence(K, R))) + np.kron(np.ones((L, L)), Q))


@dataclass(frozen=True)
class NetworkErrorState:
    P: np.ndarray
    A_tilde: np.ndarray
    Q_tilde: np.ndarray
    Gamma: np.ndarray


def network_error_step(state, sigma=None):
    """``P+ = A~ P A~^T + Q~ + Gamma Sigma Gamma^T``."""
    At = state.A_tilde
    P = At @ state.P @ At.T + state.Q_tilde
    if sigma is not None:
        P = P + state.Gamma @ sigma @ state.Gamma.T
    return replace(state, P=sym(P))


def mse_from_cov(P, m=None):
    """Average trace of the per-agent diagonal blocks.

    Accepts stacked blocks ``(L, m, m)`` or a joint ``Lm x Lm`` matrix
    together with ``m``.
    """
    P = np.asarray(P, dtype=float)
    if P.ndim == 3:
        return float(np.trace(P, axis1=1, axis2=2).mean())
    if m is None:
        raise ValueError("m is required for a joint covariance")
    return float(np.trace(diag_blocks(P, m), axis1=1, axis2=2).mean())


def nmse(P):
    return float(np.trace(P))


def expected_attack_term(C, sigma, graph, p_e):
    """Per-agent ``p_e C_i [(E kron I) Sigma (E kron I)]_ii C_i^T``."""
    L, m, _ = C.shape
    EI = np.kron(graph.E.astype(float), np.eye(m))
    return p_e * congruence(C, diag_blocks(EI @ sigma @ EI, m))


def _lyapunov_fixed_point(F, forcing, tol, max_iter, P0=None):
    P = np.zeros_like(forcing) if P0 is None else np.array(P0, dtype=float)
    delta = np.inf
    for _ in range(max_iter):
        P_next = congruence(F, P) + forcing
        P_next = 0.5 * (P_next + P_next.transpose(0, 2, 1))
        delta = np.sqrt(np.sum((P_next - P) ** 2, axis=(1, 2))).max()
        P = P_next
        if delta < tol:
            return P
    raise ConvergenceError(f"Lyapunov iteration did not converge (last delta {delta:.3e})", delta, max_iter)


def steady_state_attacked(F_hat, K, R, Q, C, sigma, graph, p_e, tol=1e-11, max_iter=100_000):
    """Expected steady-state per-agent covariances under a stationary attack.

    Solves ``P_i = F_i P_i F_i^T + K_i R_i K_i^T + Q + p_e C_i X_ii C_i^T`` by
    fixed-point iteration, where ``X = (E kron I) Sigma (E kron I)``.
    """
    radii = [np.max(np.abs(np.linalg.eigvals(F_i))) for F_i in F_hat]
    if max(radii) >= 1.0:
        raise NumericalError(f"closed-loop matrix unstable (spectral radius {max(radii):.4f})")
    forcing = congruence(K, R) + Q[None]
    if sigma is not None:
        forcing = forcing + expected_attack_term(C, sigma, graph, p_e)
    return _lyapunov_fixed_point(F_hat, forcing, tol, max_iter)


@dataclass(frozen=True)
class GainSequence:
    """Deterministic per-step quantities of one network run.

    ``K[k]``, ``C[k]`` and ``patterns[k]`` are used to go from step ``k`` to
    ``k + 1``; ``attack[k]`` says whether perturbations are injected at ``k``.
    """

    K: np.ndarray
    C: np.ndarray
    patterns: np.ndarray
    attack: np.ndarray
    freeze_step: int

    @property
    def horizon(self):
        return self.K.shape[0]


def mse_prime_series(A, H, R, Q, graph, gains, sigma=None, P0=None, method="joint"):
    """MSE' along the realized selection sequence (no expectation over S).

    ``method="joint"`` propagates the exact joint covariance including all
    cross blocks and the ``-C_i sum S_j`` part of the error transition.
    ``method="local"`` uses the per-agent recursion that drops cross terms,
    keeping only the realized attack term. ``P0`` is the joint initial
    covariance (``Lm x Lm``) for ``"joint"`` and the per-agent one (``m x m``)
    for ``"local"``.
    """
    T = gains.horizon
    L, m, _ = gains.C[0].shape
    out = np.empty(T + 1)
    if method == "joint":
        P = np.zeros((L * m, L * m)) if P0 is None else np.asarray(P0, dtype=float)
        out[0] = mse_from_cov(P, m)
        for k in range(T):
            P = joint_step(P, A, H, R, Q, graph, gains.K[k], gains.C[k], gains.patterns[k],
                           sigma if gains.attack[k] else None)
            out[k + 1] = mse_from_cov(P, m)
        return out
    if method != "local":
        raise ValueError(f"unknown method {method!r}")
    return _local_series(A, H, R, Q, graph, gains, sigma, P0, p_e=None)


def _local_series(A, H, R, Q, graph, gains, sigma, P0, p_e):
    # p_e=None uses the realized patterns, otherwise the p_e-scaled expectation
    T = gains.horizon
    L, m, _ = gains.C[0].shape
    P = np.repeat((np.eye(m) if P0 is None else P0)[None], L, axis=0)
    out = np.empty(T + 1)
    out[0] = mse_from_cov(P)
    EI = np.kron(graph.E.astype(float), np.eye(m))
    frozen_term = None
    for k in range(T):
        K, C = gains.K[k], gains.C[k]
        P = congruence(A[None] - K @ H, P) + congruence(K, R) + Q
        if sigma is not None and gains.attack[k]:
            if p_e is None:
                s = gains.patterns[k].reshape(-1)
                P = P + congruence(C, diag_blocks(EI @ (s[:, None] * sigma * s[None, :]) @ EI, m))
            else:
                if k < gains.freeze_step:
                    term = expected_attack_term(C, sigma, graph, p_e)
                else:
                    # C is constant after the freeze
                    if frozen_term is None:
                        frozen_term = expected_attack_term(C, sigma, graph, p_e)
                    term = frozen_term
                P = P + term
        out[k + 1] = mse_from_cov(P)
    return out


def joint_step(P, A, H, R, Q, graph, K, C, s, sigma=None):
    """Exact one-step propagation of the joint error covariance."""
    F = error_transition_blocks(A, K, H, C, graph, s)
    state = NetworkErrorState(
        P, assemble_atilde(F, C, graph, s), q_tilde(K, R, Q), gamma_matrix(C, graph, s)
    )
    return network_error_step(state, sigma).P


def expected_series(A, H, R, Q, graph, gains, sigma, p_e, P0=None):
    """Per-agent recursion with the attack term replaced by its ``p_e``-scaled expectation."""
    return _local_series(A, H, R, Q, graph, gains, sigma, P0, p_e=p_e)
