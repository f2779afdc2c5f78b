"""Linear state-space model, agent observations and the communication graph."""
from collections import deque
from dataclasses import dataclass, field
import zlib

import numpy as np

from ._linalg import cho, psd_factor
from .errors import GraphError

MAX_GRAPH_ATTEMPTS = 1000


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def stream(master_seed, run_index=0, tag=""):
    """Independent random generator keyed by ``(master_seed, run_index, tag)``.

    The tag is hashed with CRC32 so that stream identity does not depend on
    Python's randomized ``hash``.
    """
    key = (int(run_index), zlib.crc32(tag.encode("utf-8")))
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class ObservationModel:
    H: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        n = H.shape[0]
        if n < 1 or R.shape != (n, n):
            raise ValueError(f"R must be {n}x{n}, got {R.shape}")
        if not np.allclose(R, R.T, atol=1e-12, rtol=0):
            raise ValueError("R must be symmetric")
        cho(R, "observation noise covariance R")
        object.__setattr__(self, "H", _frozen(H))
        object.__setattr__(self, "R", _frozen(R))

    @property
    def n(self):
        return self.H.shape[0]


@dataclass(frozen=True)
class StateSpaceModel:
    A: np.ndarray
    Q: np.ndarray
    agents: tuple

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        m = A.shape[0]
        if A.shape != (m, m):
            raise ValueError("A must be square")
        if Q.shape != (m, m) or not np.allclose(Q, Q.T, atol=1e-12, rtol=0):
            raise ValueError("Q must be a symmetric m x m matrix")
        psd_factor(Q)
        agents = tuple(self.agents)
        for i, obs in enumerate(agents):
            if obs.H.shape[1] != m:
                raise ValueError(f"agent {i}: H has {obs.H.shape[1]} columns, expected {m}")
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "Q", _frozen(Q))
        object.__setattr__(self, "agents", agents)

    @property
    def m(self):
        return self.A.shape[0]

    @property
    def L(self):
        return len(self.agents)

    @property
    def H(self):
        return np.stack([a.H for a in self.agents])

    @property
    def R(self):
        return np.stack([a.R for a in self.agents])


@dataclass(frozen=True)
class NetworkGraph:
    """Undirected connected graph given by a 0/1 adjacency matrix."""

    E: np.ndarray
    neighbors: tuple = field(init=False)

    def __post_init__(self):
        E = np.array(self.E, dtype=int)
        if E.ndim != 2 or E.shape[0] != E.shape[1]:
            raise GraphError("adjacency must be square")
        if not np.array_equal(E, E.T):
            raise GraphError("adjacency must be symmetric")
        if np.any(np.diag(E) != 0) or not np.isin(E, (0, 1)).all():
            raise GraphError("adjacency must be 0/1 with zero diagonal")
        E.setflags(write=False)
        object.__setattr__(self, "E", E)
        object.__setattr__(
            self, "neighbors", tuple(tuple(np.flatnonzero(row).tolist()) for row in E)
        )
        if not self.is_connected():
            raise GraphError("graph is not connected")

    @property
    def L(self):
        return self.E.shape[0]

    @property
    def degrees(self):
        return self.E.sum(axis=1)

    @property
    def D(self):
        return np.diag(self.degrees)

    def edges(self):
        i, j = np.nonzero(np.triu(self.E))
        return list(zip(i.tolist(), j.tolist()))

    def is_connected(self):
        return _bfs_connected(self.E.astype(bool))

    def laplacian(self):
        return laplacian(self)

    def to_dot(self):
        lines = ["graph g {"]
        lines += [f"  {i} -- {j};" for i, j in self.edges()]
        lines.append("}")
        return "\n".join(lines) + "\n"


def _bfs_connected(E):
    L = E.shape[0]
    seen = np.zeros(L, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(E[i] & ~seen):
            seen[j] = True
            queue.append(j)
    return bool(seen.all())


def build_network(seed, L, edge_prob):
    """Erdos-Renyi graph G(L, edge_prob), redrawn until connected.

    Attempt ``a`` uses the sub-seed ``(seed, a)``, so the result is a pure
    function of the arguments.
    """
    if L < 2:
        raise GraphError("need at least two agents")
    if not 0.0 < edge_prob <= 1.0:
        raise GraphError("edge_prob must lie in (0, 1]")
    iu = np.triu_indices(L, k=1)
    for attempt in range(MAX_GRAPH_ATTEMPTS):
        rng = np.random.default_rng([int(seed), attempt])
        E = np.zeros((L, L), dtype=bool)
        E[iu] = rng.random(iu[0].size) < edge_prob
        E = E | E.T
        if _bfs_connected(E):
            return NetworkGraph(E.astype(int))
    raise GraphError(
        f"no connected graph after {MAX_GRAPH_ATTEMPTS} attempts; edge_prob={edge_prob} is too small"
    )


def laplacian(g):
    E = g.E.astype(float)
    return np.diag(E.sum(axis=1)) - E


def simulate_truth(model, horizon, rng, x0=None):
    """Trajectory ``x(0..horizon)`` of ``x(k+1) = A x(k) + w(k)``, ``w ~ N(0, Q)``."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    m = model.m
    W = rng.standard_normal((horizon, m)) @ psd_factor(model.Q).T
    x = np.empty((horizon + 1, m))
    x[0] = np.zeros(m) if x0 is None else x0
    for k in range(horizon):
        x[k + 1] = model.A @ x[k] + W[k]
    return x


def observe(obs, x, rng):
    """One draw of ``y = H x + v`` with ``v ~ N(0, R)``."""
    Lr = np.linalg.cholesky(obs.R)
    return obs.H @ x + Lr @ rng.standard_normal(obs.n)


BENCH_A = np.array([[0.6, 0.005], [0.25, 0.6]])
BENCH_H = np.array([[1, 1, 0, 0], [1, 0, 0, 0], [0, 0, 1, 0], [0, 0, 1, 1]], dtype=float)


def draw_noise_levels(rng, L):
    """``mu_i ~ U(0, 1)``, excluding the endpoint 0 so that R stays definite."""
    mu = rng.random(L)
    while np.any(mu == 0.0):
        mu[mu == 0.0] = rng.random(int(np.sum(mu == 0.0)))
    return mu


def bench_model(seed=7, L=25, edge_prob=0.15):
    """Target-tracking benchmark: m = 8, n = 8, Q = 0.1 I, R_i = mu_i I."""
    A = np.kron(BENCH_A, np.eye(4))
    Q = 0.1 * np.eye(8)
    H = np.kron(BENCH_H, np.eye(2))
    mu = draw_noise_levels(stream(seed, 0, "mu"), L)
    agents = [ObservationModel(H, mu_i * np.eye(8)) for mu_i in mu]
    return StateSpaceModel(A, Q, agents), build_network(seed, L, edge_prob)
