import numpy as np
import pytest

from brcdf.filtering import gamma_bound, steady_state_covariance
from brcdf.model import NetworkGraph, ObservationModel, StateSpaceModel, bench_model


@pytest.fixture(scope="session")
def bench():
    """Benchmark model, graph, per-agent steady covariances and gamma* at full sharing."""
    model, graph = bench_model()
    P = [steady_state_covariance(model.A, a.H, a.R, model.Q) for a in model.agents]
    prof = gamma_bound(graph, P, model.H, model.R, 1.0, A=model.A)
    return model, graph, P, prof


def random_connected_graph(rng, L, p=0.6):
    while True:
        U = np.triu((rng.random((L, L)) < p).astype(int), 1)
        E = U + U.T
        try:
            return NetworkGraph(E)
        except ValueError:
            continue


def small_model(rng, L, m=3, n=2):
    A = rng.standard_normal((m, m))
    A *= 0.9 / max(abs(np.linalg.eigvals(A)))
    W = rng.standard_normal((m, m))
    Q = W @ W.T / m + 0.1 * np.eye(m)
    agents = []
    for _ in range(L):
        H = rng.standard_normal((n, m))
        V = rng.standard_normal((n, n))
        agents.append(ObservationModel(H, V @ V.T + 0.5 * np.eye(n)))
    return StateSpaceModel(A, Q, agents)


def random_spd(rng, m, scale=1.0):
    W = rng.standard_normal((m, m))
    return scale * (W @ W.T / m + 0.2 * np.eye(m))


def bench_scenario(bench, l, horizon=150, attack=None, variant="suboptimal", gamma_mult=0.9):
    from brcdf.model import stream
    from brcdf.selection import init_schedule
    from brcdf.simulation import Scenario

    model, graph, _, prof = bench
    scheds = tuple(init_schedule(model.m, l, 1, rng=stream(7, 0, f"sched{i}")) for i in range(model.L))
    return Scenario(model, graph, scheds, gamma_mult * prof.gamma_star, horizon, variant=variant, attack=attack)


def bench_attack(bench, eta=25.0, k0=30, B=5, seed=0):
    from brcdf.attack import AttackPlan, byzantine_set, random_covariance
    from brcdf.model import stream

    model, graph, _, _ = bench
    byz = byzantine_set(graph, B)
    sigma = random_covariance(byz, eta, model.m, model.L, stream(seed, 0, "sigma"))
    return AttackPlan(byz, sigma, eta, k0, model.m)


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
