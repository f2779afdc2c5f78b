"""Coordinated Byzantine perturbations and the attacker's two design levers.

The attacker chooses either the perturbation covariance ``Sigma`` (subject to
``Sigma >= 0`` and ``tr(Sigma) <= eta``) or the selection phases of the
Byzantine agents at the attack start ``k0``.
"""
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import NamedTuple

import numpy as np

from ._linalg import block, psd_factor, sym
from .analysis import gamma_matrix
from .errors import NumericalError

PSD_TOL = 1e-8
FEAS_TOL = 1e-9


def byzantine_index(byzantine, m):
    """Positions of the Byzantine agents' entries inside a stacked ``Lm`` vector."""
    return np.concatenate([np.arange(j * m, (j + 1) * m) for j in byzantine]) if len(byzantine) else np.zeros(0, int)


@dataclass(frozen=True)
class AttackPlan:
    byzantine: tuple
    sigma: np.ndarray
    eta: float
    k0: int
    m: int
    patterns: tuple = None
    factor: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        byz = tuple(sorted(int(b) for b in self.byzantine))
        sigma = sym(np.asarray(self.sigma, dtype=float))
        Lm = sigma.shape[0]
        if Lm % self.m:
            raise ValueError("sigma size must be a multiple of m")
        if len(set(byz)) != len(byz) or any(not 0 <= b < Lm // self.m for b in byz):
            raise ValueError("invalid Byzantine set")
        mask = np.zeros(Lm, dtype=bool)
        mask[byzantine_index(byz, self.m)] = True
        if np.any(sigma[~mask, :] != 0) or np.any(sigma[:, ~mask] != 0):
            raise ValueError("sigma must vanish outside the Byzantine blocks")
        if np.trace(sigma) > self.eta + FEAS_TOL:
            raise ValueError(f"tr(sigma)={np.trace(sigma):.6g} exceeds eta={self.eta}")
        if self.k0 < 0:
            raise ValueError("k0 must be >= 0")
        idx = byzantine_index(byz, self.m)
        F = psd_factor(sigma[np.ix_(idx, idx)], PSD_TOL)
        object.__setattr__(self, "byzantine", byz)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "factor", F)
        if self.patterns is not None:
            pats = tuple(tuple(int(v) for v in p) for p in self.patterns)
            if len(pats) != len(byz) or any(len(p) != self.m for p in pats):
                raise ValueError("one length-m pattern per Byzantine agent is required")
            object.__setattr__(self, "patterns", pats)

    @property
    def L(self):
        return self.sigma.shape[0] // self.m

    @property
    def z(self):
        z = np.zeros(self.L, dtype=int)
        z[list(self.byzantine)] = 1
        return z


def byzantine_set(graph, B):
    """The ``B`` highest-degree agents; ties go to the lower index."""
    if not 1 <= B <= graph.L:
        raise ValueError(f"B must satisfy 1 <= B <= L={graph.L}")
    deg = graph.degrees
    order = sorted(range(graph.L), key=lambda i: (-deg[i], i))
    return tuple(sorted(order[:B]))


def draw_perturbation(plan, rng):
    """``delta ~ N(0, Sigma)``; entries of regular agents are exactly zero."""
    delta = np.zeros(plan.sigma.shape[0])
    idx = byzantine_index(plan.byzantine, plan.m)
    delta[idx] = plan.factor @ rng.standard_normal(idx.size)
    return delta


def random_covariance(byzantine, eta, m, L, rng):
    """``W W^T`` on the Byzantine block, ``W`` standard Gaussian, scaled to trace ``eta``."""
    if eta <= 0:
        raise ValueError("eta must be positive")
    idx = byzantine_index(tuple(sorted(byzantine)), m)
    W = rng.standard_normal((idx.size, idx.size))
    S = W @ W.T
    S *= eta / np.trace(S)
    sigma = np.zeros((L * m, L * m))
    sigma[np.ix_(idx, idx)] = sym(S)
    return sigma


def u_matrix(i, j, C, graph):
    """``U_ij = sum over common neighbors q of C_q^T C_q``."""
    common = sorted(set(graph.neighbors[i]) & set(graph.neighbors[j]))
    m = C.shape[1]
    U = np.zeros((m, m))
    for q in common:
        U += C[q].T @ C[q]
    return U


@dataclass(frozen=True)
class AttackContext:
    """Quantities the attacker needs at ``k0``: gains, graph and the ``U`` blocks."""

    byzantine: tuple
    C: np.ndarray
    E: np.ndarray
    U: np.ndarray

    @property
    def m(self):
        return self.C.shape[1]


def attack_context(C, graph, byzantine):
    byz = tuple(sorted(byzantine))
    nb, m = len(byz), C.shape[1]
    U = np.empty((nb, nb, m, m))
    for a, i in enumerate(byz):
        for b, j in enumerate(byz):
            U[a, b] = u_matrix(i, j, C, graph)
    return AttackContext(byz, np.asarray(C), graph.E, U)


def _sigma_blocks(ctx, sigma):
    m = ctx.m
    return np.array([[block(sigma, i, j, m) for j in ctx.byzantine] for i in ctx.byzantine])


def attack_objective(ctx, patterns, sigma):
    """``sum_{i,j in B} tr(U_ij S_j Sigma_ji S_i)`` for 0/1 diagonals ``patterns``."""
    S = [np.diag(np.asarray(p, dtype=float)) for p in patterns]
    Sb = _sigma_blocks(ctx, sigma)
    total = 0.0
    for a in range(len(ctx.byzantine)):
        for b in range(len(ctx.byzantine)):
            total += np.trace(ctx.U[a, b] @ S[b] @ Sb[b, a] @ S[a])
    return float(total)


def hadamard_gram(ctx, sigma):
    """Matrix ``G`` with blocks ``U_ij * Sigma_ij`` so the objective is ``s^T G s``.

    ``G`` is PSD whenever ``U`` and ``Sigma`` are (Schur product theorem).
    """
    nb, m = len(ctx.byzantine), ctx.m
    G = ctx.U * _sigma_blocks(ctx, sigma)
    return sym(G.transpose(0, 2, 1, 3).reshape(nb * m, nb * m))


@lru_cache(maxsize=64)
def _candidates(m, l, exact):
    """0/1 patterns ordered by preference: more ones first, then lexicographic index set."""
    sizes = [l] if exact else range(l, -1, -1)
    rows = []
    for size in sizes:
        for idx in combinations(range(m), size):
            s = np.zeros(m)
            s[list(idx)] = 1.0
            rows.append(s)
    out = np.array(rows)
    out.setflags(write=False)
    return out


class SubproblemResult(NamedTuple):
    pattern: np.ndarray
    value: float
    short: bool


def _coordinate_terms(G, patterns, a, m):
    Gaa = G[a * m:(a + 1) * m, a * m:(a + 1) * m]
    g = np.zeros(m)
    for b in range(patterns.shape[0]):
        if b != a:
            g += G[a * m:(a + 1) * m, b * m:(b + 1) * m] @ patterns[b]
    return Gaa, g


def _project_box_budget(v, l):
    """Euclidean projection onto ``{0 <= s <= 1, sum(s) <= l}``."""
    s = np.clip(v, 0.0, 1.0)
    if s.sum() <= l:
        return s
    lo, hi = 0.0, float(np.max(v))
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if np.clip(v - mid, 0.0, 1.0).sum() > l:
            lo = mid
        else:
            hi = mid
    return np.clip(v - hi, 0.0, 1.0)


def top_l_round(s, l):
    """Set the ``l`` largest entries to one (ties to the lower index), the rest to zero."""
    order = np.lexsort((np.arange(s.size), -np.asarray(s)))
    out = np.zeros(s.size)
    out[order[:l]] = 1.0
    return out


def _relaxed_ascent(Gaa, g, s0, l, iters=500):
    lip = 2.0 * max(np.linalg.eigvalsh(Gaa)[-1], 1e-12)
    s = _project_box_budget(np.asarray(s0, dtype=float), l)
    for _ in range(iters):
        s_new = _project_box_budget(s + (2.0 * (Gaa @ s + g)) / lip, l)
        if np.max(np.abs(s_new - s)) < 1e-12:
            break
        s = s_new
    return top_l_round(s, l)


def bcd_subproblem(a, ctx, patterns, sigma, l, exact=False, method="auto", G=None):
    """Best pattern for Byzantine agent ``ctx.byzantine[a]`` with the others fixed.

    Maximizes the total attack objective over 0/1 diagonals with at most
    ``l`` ones (exactly ``l`` if ``exact``). Exhaustive for ``m <= 20``;
    otherwise projected ascent on the box relaxation followed by top-``l``
    rounding. Ties go to the pattern with more ones, then to the
    lexicographically smallest index set.
    """
    patterns = np.asarray(patterns, dtype=float)
    m = ctx.m
    if not 1 <= l <= m:
        raise ValueError("need 1 <= l <= m")
    G = hadamard_gram(ctx, sigma) if G is None else G
    Gaa, g = _coordinate_terms(G, patterns, a, m)
    if method == "auto":
        method = "exhaustive" if m <= 20 else "relaxed"
    if method == "exhaustive":
        cand = _candidates(m, l, exact)
        vals = np.einsum("na,ab,nb->n", cand, Gaa, cand) + 2.0 * cand @ g
        best = vals.max()
        pick = int(np.flatnonzero(vals >= best - 1e-12 * max(1.0, abs(best)))[0])
        s = cand[pick].copy()
    elif method == "relaxed":
        s = _relaxed_ascent(Gaa, g, patterns[a], l)
    else:
        raise ValueError(f"unknown method {method!r}")
    value = float(s @ Gaa @ s + 2.0 * s @ g)
    return SubproblemResult(s.astype(int), value, bool(s.sum() < l))


class BCDResult(NamedTuple):
    patterns: np.ndarray
    history: list
    objective: float
    short: tuple


def bcd_design(ctx, sigma, l, T, initial, exact=False, method="auto"):
    """Cyclic block-coordinate ascent over the Byzantine selection patterns.

    Sweeps the Byzantine agents in ascending order ``T`` times, each time
    replacing one pattern by the exact maximizer given the latest others.
    ``history`` holds the objective before the first sweep and after each
    sweep. Patterns that end with fewer than ``l`` ones are completed to
    ``l`` ones greedily, which is the rounding step for 0/1 iterates.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    S = np.array(initial, dtype=float)
    G = hadamard_gram(ctx, sigma)
    history = [float(np.einsum("a,ab,b->", S.ravel(), G, S.ravel()))]
    for _ in range(T):
        for a in range(S.shape[0]):
            S[a] = bcd_subproblem(a, ctx, S, sigma, l, exact=exact, method=method, G=G).pattern
        history.append(float(np.einsum("a,ab,b->", S.ravel(), G, S.ravel())))
    short = tuple(bool(p.sum() < l) for p in S)
    for a in np.flatnonzero(short):
        S[a] = _complete_pattern(G, S, a, l)
    objective = float(np.einsum("a,ab,b->", S.ravel(), G, S.ravel()))
    return BCDResult(S.astype(int), history, objective, short)


def _complete_pattern(G, S, a, l):
    m = S.shape[1]
    Gaa, g = _coordinate_terms(G, S, a, m)
    s = S[a].copy()
    while s.sum() < l:
        free = np.flatnonzero(s == 0)
        gains = np.array([Gaa[f, f] + 2.0 * (Gaa[f] @ s) + 2.0 * g[f] for f in free])
        s[free[int(np.argmax(gains))]] = 1.0
    return s


class CovarianceDesign(NamedTuple):
    sigma: np.ndarray
    objective: float
    lambda_max: float
    degenerate: bool
    gamma_zero: bool


def design_covariance(Gamma, eta, z, m, degeneracy_tol=1e-10):
    """Maximize ``tr(Gamma Sigma Gamma^T)`` over ``Sigma >= 0``, ``tr(Sigma) <= eta``.

    The objective is linear and the extreme points of the feasible set are
    ``eta v v^T`` with ``|v| = 1``, so the optimum is ``eta`` times the top
    eigenvalue of ``Gamma^T Gamma`` on the Byzantine coordinates. For a
    repeated top eigenvalue, ``v`` is the normalized projection of the first
    coordinate vector (in index order) with a nonzero component in the top
    eigenspace; this also fixes the sign.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    z = np.asarray(z)
    byz = tuple(np.flatnonzero(z).tolist())
    idx = byzantine_index(byz, m)
    Lm = Gamma.shape[1]
    G = Gamma[:, idx]
    M = sym(G.T @ G)
    sigma = np.zeros((Lm, Lm))
    if idx.size == 0 or not np.any(G):
        return CovarianceDesign(sigma, 0.0, 0.0, False, True)
    w, V = np.linalg.eigh(M)
    lam = w[-1]
    top = V[:, w >= lam - degeneracy_tol * max(1.0, abs(lam))]
    proj = top @ top.T
    norms = np.linalg.norm(proj, axis=0)
    a = int(np.flatnonzero(norms > 1e-8)[0])
    v = proj[:, a] / norms[a]
    sigma[np.ix_(idx, idx)] = eta * np.outer(v, v)
    return CovarianceDesign(sym(sigma), float(eta * lam), float(lam), top.shape[1] > 1, False)


def check_feasible(sigma, eta, byzantine, m):
    """Raise if ``sigma`` violates PSD, the trace budget or the block structure."""
    AttackPlan(byzantine, sigma, eta, 0, m)
    w = np.linalg.eigvalsh(sym(sigma))
    if w.size and w[0] < -FEAS_TOL:
        raise NumericalError(f"sigma not PSD (min eigenvalue {w[0]:.3e})")

