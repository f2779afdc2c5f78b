"""Small dense linear-algebra helpers shared by the numerical modules."""
import numpy as np
import scipy.linalg as sla

from .errors import NumericalError


def sym(X):
    return 0.5 * (X + X.T)


def cho(M, what="matrix"):
    try:
        return sla.cho_factor(M, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"{what} is not positive definite: {exc}") from exc


def spd_solve(M, B, what="matrix"):
    """Solve ``M X = B`` for symmetric positive definite ``M``."""
    return sla.cho_solve(cho(M, what), B, check_finite=False)


def spd_inv(M, what="matrix"):
    out = spd_solve(M, np.eye(M.shape[0]), what)
    return sym(out)


def right_solve(B, M, what="matrix"):
    """Return ``B M^{-1}`` for symmetric positive definite ``M``."""
    return spd_solve(M, B.T, what).T


def psd_factor(M, tol=1e-8):
    """Return ``F`` with ``F @ F.T == M`` for a symmetric PSD ``M``.

    Eigenvalues in ``[-tol, 0)`` are clipped to zero; anything more negative
    is rejected.
    """
    M = sym(np.asarray(M, dtype=float))
    if M.size == 0:
        return np.zeros_like(M)
    w, V = np.linalg.eigh(M)
    if w[0] < -tol:
        raise NumericalError(f"matrix is not PSD (min eigenvalue {w[0]:.3e})")
    return V * np.sqrt(np.clip(w, 0.0, None))


def is_psd(M, tol=1e-9):
    M = np.asarray(M, dtype=float)
    if not np.allclose(M, M.T, atol=1e-12, rtol=0):
        return False
    return M.size == 0 or np.linalg.eigvalsh(sym(M))[0] >= -tol


def block(M, i, j, m):
    return M[i * m:(i + 1) * m, j * m:(j + 1) * m]


def diag_blocks(M, m):
    L = M.shape[0] // m
    return np.stack([block(M, i, i, m) for i in range(L)])


def block_diag(blocks):
    return sla.block_diag(*blocks) if len(blocks) else np.zeros((0, 0))
