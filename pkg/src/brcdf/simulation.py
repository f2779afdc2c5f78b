"""Network runs of the partial-sharing consensus filter.

A run has a deterministic part (gains, selection patterns and the exact error
covariance, none of which depend on noise realizations) and a Monte-Carlo
part that simulates the true state, observations and perturbations.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from ._linalg import block, psd_factor
from .analysis import GainSequence, expected_series, joint_step, mse_from_cov
from .attack import byzantine_index
from .filtering import consensus_gain, kalman_gain, optimal_gain_full, riccati_step
from .model import stream
from .selection import init_schedule, pattern_sequence

VARIANTS = ("suboptimal", "full")


@dataclass(frozen=True)
class Scenario:
    """Everything that defines a network run except the noise seeds.

    ``variant="suboptimal"`` is the local-covariance filter; ``"full"`` uses
    the trace-optimal gain computed from the exact joint covariance. The
    consensus gains are shared by both variants.
    """

    model: object
    graph: object
    schedules: tuple
    gamma: float
    horizon: int
    variant: str = "suboptimal"
    attack: object = None
    P0: np.ndarray = None
    x0: np.ndarray = None
    freeze_tol: float = 1e-9

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if len(self.schedules) != self.model.L or self.graph.L != self.model.L:
            raise ValueError("model, graph and schedules disagree on L")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")

    @property
    def p_e(self):
        return self.schedules[0].l / self.model.m

    @property
    def prior_cov(self):
        return np.eye(self.model.m) if self.P0 is None else np.asarray(self.P0, dtype=float)

    @property
    def prior_mean(self):
        return np.zeros(self.model.m) if self.x0 is None else np.asarray(self.x0, dtype=float)


def selection_patterns(sc):
    """Realized patterns ``(horizon, L, m)``, with designed Byzantine phases from ``k0``."""
    pats = pattern_sequence(sc.schedules, sc.horizon)
    atk = sc.attack
    if atk is not None and atk.patterns is not None and atk.k0 < sc.horizon:
        new = list(sc.schedules)
        for j, p in zip(atk.byzantine, atk.patterns):
            old = sc.schedules[j]
            new[j] = init_schedule(old.m, int(sum(p)), old.tau, pattern=np.array(p))
        tail = pattern_sequence([new[j] for j in atk.byzantine], sc.horizon - atk.k0)
        pats[atk.k0:, list(atk.byzantine)] = tail
    return pats


def local_gains(sc, patterns=None):
    """Gains of the suboptimal filter: local Riccati until steady state, then frozen.

    Freezing happens after the first step whose covariance change is below
    ``freeze_tol`` for every agent, or at ``k0 - 1`` when an attack is
    configured, whichever comes first.
    """
    md = sc.model
    L, m, n = md.L, md.m, md.agents[0].n
    T = sc.horizon
    K = np.empty((T, L, m, n))
    C = np.empty((T, L, m, m))
    P = [sc.prior_cov.copy() for _ in range(L)]
    last = sc.attack.k0 - 1 if sc.attack is not None else None
    freeze = T
    for k in range(T):
        if k < freeze:
            delta = 0.0
            for i, obs in enumerate(md.agents):
                K[k, i] = kalman_gain(P[i], obs.H, obs.R, md.A)
                C[k, i] = consensus_gain(sc.gamma, md.A, P[i], obs.H, obs.R)
                P_next = riccati_step(P[i], md.A, obs.H, obs.R, md.Q, K[k, i])
                delta = max(delta, np.linalg.norm(P_next - P[i]))
                P[i] = P_next
            if delta < sc.freeze_tol or (last is not None and k >= last):
                freeze = k + 1
        else:
            K[k], C[k] = K[k - 1], C[k - 1]
    pats = selection_patterns(sc) if patterns is None else patterns
    attack = np.zeros(T, dtype=bool)
    if sc.attack is not None:
        attack[sc.attack.k0:] = True
    return GainSequence(K, C, pats, attack, min(freeze, T))


def initial_joint_cov(sc):
    L = sc.model.L
    return np.kron(np.ones((L, L)), sc.prior_cov)


@dataclass
class Deterministic:
    gains: GainSequence
    mse_prime: np.ndarray
    mse_analytic: np.ndarray
    P_final: np.ndarray


def deterministic_part(sc):
    """Gains, exact joint covariance (MSE') and the expected local recursion."""
    md, g = sc.model, sc.graph
    H, R = md.H, md.R
    base = local_gains(sc)
    sigma = sc.attack.sigma if sc.attack is not None else None
    L, m = md.L, md.m
    P = initial_joint_cov(sc)
    mse_prime = np.empty(sc.horizon + 1)
    mse_prime[0] = mse_from_cov(P, m)
    K_used = base.K.copy()
    Pf = P.copy()
    for k in range(sc.horizon):
        s = base.patterns[k]
        Ck = base.C[k]
        if sc.variant == "full":
            K_used[k] = full_gains(md, g, Pf, Ck, s)
            Pf = joint_step(Pf, md.A, H, R, md.Q, g, K_used[k], Ck, s)
        active = sigma if base.attack[k] else None
        P = joint_step(P, md.A, H, R, md.Q, g, K_used[k], Ck, s, active)
        mse_prime[k + 1] = mse_from_cov(P, m)
    gains = GainSequence(K_used, base.C, base.patterns, base.attack, base.freeze_step)
    analytic = expected_series(md.A, H, R, md.Q, g, gains, sigma, sc.p_e, sc.prior_cov)
    return Deterministic(gains, mse_prime, analytic, P)


def full_gains(md, graph, Pj, C, s):
    """Trace-optimal gains of every agent from the joint covariance ``Pj``."""
    m = md.m
    K = np.empty((md.L, m, md.agents[0].n))
    for i, obs in enumerate(md.agents):
        nb = graph.neighbors[i]
        K[i] = optimal_gain_full(
            block(Pj, i, i, m),
            [block(Pj, j, i, m) for j in nb],
            C[i],
            [s[j] for j in nb],
            md.A, obs.H, obs.R,
        )
    return K


@dataclass
class RunResult:
    scenario: Scenario
    gains: GainSequence
    mse_empirical: np.ndarray
    mse_prime: np.ndarray
    mse_analytic: np.ndarray
    max_error: np.ndarray
    P_final: np.ndarray = field(repr=False)
    mse_runs: np.ndarray = field(default=None, repr=False)

    def steady(self, series="mse_empirical", start=None):
        x = getattr(self, series)
        k0 = len(x) // 2 if start is None else start
        return float(np.mean(x[k0:]))


def _draw_noise(sc, runs, master_seed, noise_free):
    md = sc.model
    T, L, m, n = sc.horizon, md.L, md.m, md.agents[0].n
    W = np.zeros((runs, T, m))
    V = np.zeros((runs, T, L, n))
    X0 = np.tile(sc.prior_mean, (runs, 1))
    D = None
    atk = sc.attack
    nb = len(atk.byzantine) * m if atk is not None else 0
    if atk is not None:
        D = np.zeros((runs, T, nb))
    if noise_free:
        return X0, W, V, D
    Fq = psd_factor(md.Q)
    Fp = psd_factor(sc.prior_cov)
    Fr = np.stack([np.linalg.cholesky(a.R) for a in md.agents])
    for r in range(runs):
        X0[r] += Fp @ stream(master_seed, r, "x0").standard_normal(m)
        W[r] = stream(master_seed, r, "w").standard_normal((T, m)) @ Fq.T
        V[r] = np.einsum("lab,klb->kla", Fr, stream(master_seed, r, "v").standard_normal((T, L, n)))
        if atk is not None:
            D[r] = stream(master_seed, r, "delta").standard_normal((T, nb)) @ atk.factor.T
    return X0, W, V, D


def run_network(sc, runs=100, master_seed=0, noise_free=False, x_hat0=None, det=None):
    """Monte-Carlo simulation of ``runs`` independent realizations.

    Run ``r`` draws its noise from streams keyed by ``(master_seed, r, tag)``,
    so the realizations are shared across scenarios (common random numbers).
    ``x_hat0`` overrides the initial estimates (shape ``(L, m)``); by default
    every agent starts from the prior mean.
    """
    md, g = sc.model, sc.graph
    det = deterministic_part(sc) if det is None else det
    gains = det.gains
    A, H = md.A, md.H
    E = g.E.astype(float)
    L, m = md.L, md.m
    X, W, V, D = _draw_noise(sc, runs, master_seed, noise_free)
    Xh = np.broadcast_to(sc.prior_mean if x_hat0 is None else x_hat0, (runs, L, m)).copy()
    idx = byzantine_index(sc.attack.byzantine, m) if sc.attack is not None else None
    T = sc.horizon
    per_run = np.empty((runs, T + 1))
    maxerr = np.empty(T + 1)

    def record(k):
        sq = np.sum((Xh - X[:, None, :]) ** 2, axis=2)
        per_run[:, k] = sq.mean(axis=1)
        maxerr[k] = np.sqrt(sq.max())

    Ht = np.swapaxes(H, 1, 2)[None]
    record(0)
    for k in range(T):
        K, C, s = gains.K[k], gains.C[k], gains.patterns[k].astype(float)
        Xbar = Xh
        if gains.attack[k] and D is not None:
            Xbar = Xh.reshape(runs, L * m).copy()
            Xbar[:, idx] += D[:, k]
            Xbar = Xbar.reshape(runs, L, m)
        innov = (X[:, None, None, :] - Xh[:, :, None, :]) @ Ht
        innov = innov[:, :, 0, :] + V[:, k]
        u = E @ (s[None] * Xbar) - (E @ s)[None] * Xh
        Xh = (
            Xh @ A.T
            + (innov[:, :, None, :] @ np.swapaxes(K, 1, 2)[None])[:, :, 0, :]
            + (u[:, :, None, :] @ np.swapaxes(C, 1, 2)[None])[:, :, 0, :]
        )
        X = X @ A.T + W[:, k]
        record(k + 1)
    return RunResult(sc, gains, per_run.mean(axis=0), det.mse_prime, det.mse_analytic, maxerr,
                     det.P_final, per_run)


def full_filter_run(sc, runs=100, master_seed=0, **kw):
    """Network run with the full-information gain (cross covariances shared)."""
    return run_network(replace(sc, variant="full"), runs, master_seed, **kw)


def empirical_mse(sc, runs, master_seed=0):
    """``(1/(R L)) sum_r sum_i |xhat_i(k) - x(k)|^2`` for ``k = 0..horizon``."""
    return run_network(sc, runs, master_seed).mse_empirical
