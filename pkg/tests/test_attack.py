from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from brcdf.attack import (
    AttackPlan,
    attack_context,
    attack_objective,
    bcd_design,
    bcd_subproblem,
    byzantine_set,
    check_feasible,
    design_covariance,
    draw_perturbation,
    hadamard_gram,
    random_covariance,
    top_l_round,
    u_matrix,
)
from brcdf.model import NetworkGraph, stream

from conftest import random_connected_graph


def star(L):
    E = np.zeros((L, L), dtype=int)
    E[0, 1:] = E[1:, 0] = 1
    return NetworkGraph(E)


def byz_sigma(rng, byz, m, L, eta=None):
    idx = np.concatenate([np.arange(j * m, (j + 1) * m) for j in byz])
    W = rng.standard_normal((idx.size, idx.size))
    S = np.zeros((L * m, L * m))
    S[np.ix_(idx, idx)] = W @ W.T
    if eta is not None:
        S *= eta / np.trace(S)
    return S


def random_instance(rng, L=6, m=4, nb=3):
    g = random_connected_graph(rng, L, 0.5)
    C = rng.standard_normal((L, m, m)) * 0.5
    byz = tuple(sorted(rng.choice(L, nb, replace=False).tolist()))
    return g, C, byz, byz_sigma(rng, byz, m, L)


def test_byzantine_set_examples():
    assert byzantine_set(star(5), 1) == (0,)
    assert byzantine_set(NetworkGraph([[0, 1], [1, 0]]), 1) == (0,)


def test_byzantine_set_bench_network(bench):
    _, g, _, _ = bench
    b = byzantine_set(g, 5)
    assert b == byzantine_set(g, 5)
    deg = g.degrees
    assert min(deg[list(b)]) >= max(np.delete(deg, list(b)))


def test_byzantine_set_bounds():
    with pytest.raises(ValueError):
        byzantine_set(star(4), 0)
    with pytest.raises(ValueError):
        byzantine_set(star(4), 5)


def test_zero_covariance_gives_zero_perturbation():
    plan = AttackPlan((1,), np.zeros((12, 12)), 1.0, 0, 4)
    assert not np.any(draw_perturbation(plan, stream(0)))


def test_single_byzantine_sample_covariance():
    m, L = 3, 3
    sigma = np.zeros((L * m, L * m))
    sigma[3:6, 3:6] = np.eye(3)
    plan = AttackPlan((1,), sigma, 3.0, 0, m)
    rng = stream(1)
    D = np.array([draw_perturbation(plan, rng) for _ in range(10000)])
    assert not np.any(D[:, :3]) and not np.any(D[:, 6:])
    np.testing.assert_allclose(np.cov(D[:, 3:6].T), np.eye(3), atol=0.06)


def test_plan_rejects_infeasible_covariances():
    m, L = 2, 3
    bad_struct = np.zeros((6, 6))
    bad_struct[0, 0] = 1.0
    with pytest.raises(ValueError):
        AttackPlan((1,), bad_struct, 5.0, 0, m)
    over = np.zeros((6, 6))
    over[2:4, 2:4] = 3 * np.eye(2)
    with pytest.raises(ValueError):
        AttackPlan((1,), over, 5.0, 0, m)
    indef = np.zeros((6, 6))
    indef[2:4, 2:4] = np.diag([1.0, -0.5])
    with pytest.raises(Exception):
        AttackPlan((1,), indef, 5.0, 0, m)


def test_plan_mask():
    plan = AttackPlan((2, 0), np.zeros((8, 8)), 1.0, 3, 2)
    assert plan.byzantine == (0, 2)
    np.testing.assert_array_equal(plan.z, [1, 0, 1, 0])


def test_random_covariance_feasible():
    rng = stream(2)
    for _ in range(100):
        S = random_covariance((1, 3), 7.5, 3, 5, rng)
        assert np.trace(S) == pytest.approx(7.5, abs=1e-10)
        assert np.linalg.eigvalsh(S)[0] > -1e-9
        for i in (0, 2, 4):
            assert not np.any(S[i*3:(i+1)*3]) and not np.any(S[:, i*3:(i+1)*3])
        check_feasible(S, 7.5, (1, 3), 3)


def test_u_matrix_examples():
    path = NetworkGraph([[0, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0]])
    C = np.stack([np.eye(2) * (q + 1) for q in range(4)])
    # N_0 = {1}, N_3 = {2}: no common neighbor
    np.testing.assert_array_equal(u_matrix(0, 3, C, path), np.zeros((2, 2)))
    k2 = NetworkGraph([[0, 1], [1, 0]])
    np.testing.assert_array_equal(u_matrix(0, 0, np.stack([np.eye(3)] * 2), k2), np.eye(3))


def test_u_matrix_symmetry():
    rng = np.random.default_rng(3)
    for _ in range(10):
        g = random_connected_graph(rng, 6, 0.5)
        C = rng.standard_normal((6, 3, 3))
        for i in range(6):
            for j in range(6):
                np.testing.assert_allclose(u_matrix(i, j, C, g), u_matrix(j, i, C, g).T, atol=1e-14)


def direct_trace(C, graph, patterns_full, sigma):
    """``tr(C (E kron I) S Sigma S (E kron I) C^T)`` by explicit assembly."""
    L, m, _ = C.shape
    Cb = np.zeros((L * m, L * m))
    for i in range(L):
        Cb[i*m:(i+1)*m, i*m:(i+1)*m] = C[i]
    EI = np.kron(graph.E, np.eye(m))
    S = np.diag(np.concatenate(patterns_full).astype(float))
    G = Cb @ EI @ S
    return np.trace(G @ sigma @ G.T)


def test_objective_matches_direct_assembly():
    rng = np.random.default_rng(4)
    for _ in range(20):
        g, C, byz, sigma = random_instance(rng)
        ctx = attack_context(C, g, byz)
        pats = (rng.random((g.L, 4)) < 0.5).astype(int)
        got = attack_objective(ctx, pats[list(byz)], sigma)
        assert got == pytest.approx(direct_trace(C, g, pats, sigma), rel=1e-9, abs=1e-9)


def test_objective_special_cases():
    rng = np.random.default_rng(5)
    g, C, byz, sigma = random_instance(rng)
    ctx = attack_context(C, g, byz)
    ones = np.ones((len(byz), 4))
    assert attack_objective(ctx, ones, np.zeros_like(sigma)) == 0.0
    m = 4
    expected = sum(np.trace(ctx.U[a, b] @ sigma[j*m:(j+1)*m, i*m:(i+1)*m])
                   for a, i in enumerate(byz) for b, j in enumerate(byz))
    assert attack_objective(ctx, ones, sigma) == pytest.approx(expected, rel=1e-12)


def test_quadratic_form_matches_objective():
    rng = np.random.default_rng(6)
    g, C, byz, sigma = random_instance(rng)
    ctx = attack_context(C, g, byz)
    G = hadamard_gram(ctx, sigma)
    for _ in range(10):
        pats = (rng.random((len(byz), 4)) < 0.5).astype(float)
        assert pats.ravel() @ G @ pats.ravel() == pytest.approx(attack_objective(ctx, pats, sigma), rel=1e-10)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), m=st.integers(1, 6))
def test_hadamard_product_of_psd_matrices_is_psd(seed, m):
    rng = np.random.default_rng(seed)
    X, Y = rng.standard_normal((m, m)), rng.standard_normal((m, m))
    U, S = X @ X.T, Y @ Y.T
    assert np.linalg.eigvalsh(U.T * S)[0] > -1e-9 * max(1.0, np.abs(U).max() * np.abs(S).max())


def test_hadamard_gram_is_psd():
    rng = np.random.default_rng(7)
    for _ in range(10):
        g, C, byz, sigma = random_instance(rng)
        G = hadamard_gram(attack_context(C, g, byz), sigma)
        assert np.linalg.eigvalsh(G)[0] > -1e-9 * np.abs(G).max()


def test_zero_objective_picks_first_full_pattern():
    rng = np.random.default_rng(8)
    g, C, byz, sigma = random_instance(rng, m=5)
    ctx = attack_context(C, g, byz)
    res = bcd_subproblem(0, ctx, np.ones((3, 5)), np.zeros_like(sigma), 2)
    np.testing.assert_array_equal(res.pattern, [1, 1, 0, 0, 0])


def test_separable_diagonal_case_picks_largest_entries():
    m = 6
    k2 = NetworkGraph([[0, 1], [1, 0]])
    C = np.stack([np.eye(m)] * 2)
    sigma = np.zeros((2 * m, 2 * m))
    sigma[:m, :m] = np.diag([4.0, 3.0, 2.0, 1.0, 0.5, 0.25])
    ctx = attack_context(C, k2, (0,))
    res = bcd_subproblem(0, ctx, np.zeros((1, m)), sigma, 2)
    np.testing.assert_array_equal(res.pattern, [1, 1, 0, 0, 0, 0])
    sigma[:m, :m] = np.diag([0.1, 0.2, 5.0, 0.3, 4.0, 0.0])
    np.testing.assert_array_equal(bcd_subproblem(0, ctx, np.zeros((1, m)), sigma, 2).pattern, [0, 0, 1, 0, 1, 0])


def brute_force(a, C, graph, byz, patterns, sigma, l):
    """Enumerate every 0/1 vector with at most l ones and score it with the direct trace."""
    m = C.shape[1]
    best, best_key, best_s = -np.inf, None, None
    for bits in product((0, 1), repeat=m):
        if sum(bits) > l:
            continue
        full = np.zeros((graph.L, m), dtype=int)
        for b, j in enumerate(byz):
            full[j] = patterns[b]
        full[byz[a]] = bits
        v = direct_trace(C, graph, full, sigma)
        idx = tuple(i for i in range(m) if bits[i])
        key = (-len(idx), idx)
        tol = 1e-9 * max(1.0, abs(v))
        if best_key is None or v > best + tol or (abs(v - best) <= tol and key < best_key):
            best, best_key, best_s = max(v, best), key, np.array(bits)
    return best_s


def test_subproblem_matches_independent_enumerator():
    rng = np.random.default_rng(9)
    for _ in range(50):
        g, C, byz, sigma = random_instance(rng, L=6, m=6, nb=3)
        ctx = attack_context(C, g, byz)
        pats = np.array([rng.permutation([1, 1, 1, 0, 0, 0]) for _ in byz])
        a = int(rng.integers(len(byz)))
        res = bcd_subproblem(a, ctx, pats, sigma, 3)
        np.testing.assert_array_equal(res.pattern, brute_force(a, C, g, byz, pats, sigma, 3))


def test_exact_subproblem_uses_exactly_l_ones():
    rng = np.random.default_rng(10)
    g, C, byz, sigma = random_instance(rng, m=6)
    ctx = attack_context(C, g, byz)
    res = bcd_subproblem(1, ctx, np.ones((3, 6)), sigma, 2, exact=True)
    assert res.pattern.sum() == 2 and not res.short


def test_relaxed_subproblem_returns_l_ones():
    rng = np.random.default_rng(11)
    g, C, byz, sigma = random_instance(rng, m=6)
    ctx = attack_context(C, g, byz)
    res = bcd_subproblem(0, ctx, np.ones((3, 6)), sigma, 3, method="relaxed")
    assert res.pattern.sum() == 3
    exh = bcd_subproblem(0, ctx, np.ones((3, 6)), sigma, 3, exact=True)
    assert res.value <= exh.value + 1e-9


def test_top_l_round():
    np.testing.assert_array_equal(top_l_round(np.array([0.2, 0.9, 0.2, 0.5]), 2), [0, 1, 0, 1])
    np.testing.assert_array_equal(top_l_round(np.array([0.5, 0.5, 0.5]), 2), [1, 1, 0])


def test_single_sweep_single_byzantine_is_one_subproblem():
    rng = np.random.default_rng(12)
    g, C, _, _ = random_instance(rng)
    sigma = byz_sigma(rng, (2,), 4, g.L)
    ctx = attack_context(C, g, (2,))
    init = np.array([[1, 0, 0, 1]])
    res = bcd_design(ctx, sigma, 2, 1, init)
    np.testing.assert_array_equal(res.patterns[0], bcd_subproblem(0, ctx, init, sigma, 2).pattern)


def test_bcd_history_is_monotone():
    rng = np.random.default_rng(13)
    for _ in range(20):
        g, C, byz, sigma = random_instance(rng, L=8, m=5, nb=4)
        ctx = attack_context(C, g, byz)
        init = np.array([rng.permutation([1, 1, 0, 0, 0]) for _ in byz])
        for exact in (False, True):
            res = bcd_design(ctx, sigma, 2, 5, init, exact=exact)
            assert np.all(np.diff(res.history) >= -1e-12 * max(1.0, res.history[-1]))
            assert all(p.sum() == 2 for p in res.patterns)
            assert res.objective >= res.history[0] - 1e-12


def test_bcd_requires_a_sweep():
    rng = np.random.default_rng(14)
    g, C, byz, sigma = random_instance(rng)
    with pytest.raises(ValueError):
        bcd_design(attack_context(C, g, byz), sigma, 2, 0, np.ones((3, 4)))


def test_design_single_column():
    L, m = 2, 3
    Gamma = np.zeros((6, 6))
    c = np.array([1.0, -2.0, 0.5, 0.0, 3.0, 1.0])
    Gamma[:, 4] = c
    d = design_covariance(Gamma, 2.5, [0, 1], m)
    expected = np.zeros((6, 6))
    expected[4, 4] = 2.5
    np.testing.assert_allclose(d.sigma, expected, atol=1e-12)
    assert d.objective == pytest.approx(2.5 * c @ c, rel=1e-12)


def test_design_orthogonal_gamma_is_deterministic():
    rng = np.random.default_rng(15)
    Qm, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    d1 = design_covariance(Qm, 3.0, [1, 1], 4)
    d2 = design_covariance(Qm, 3.0, [1, 1], 4)
    assert d1.degenerate and d1.objective == pytest.approx(3.0, rel=1e-12)
    assert np.array_equal(d1.sigma, d2.sigma)
    np.testing.assert_allclose(d1.sigma, 3.0 * np.diag(np.eye(8)[0]), atol=1e-12)


def test_design_with_zero_gamma_flags():
    d = design_covariance(np.zeros((6, 6)), 1.0, [1, 0, 1], 2)
    assert d.gamma_zero and d.objective == 0.0 and not np.any(d.sigma)


def test_design_beats_sampled_feasible_points():
    rng = np.random.default_rng(16)
    L, m, eta = 5, 4, 3.0
    z = np.array([0, 1, 0, 1, 1])
    Gamma = rng.standard_normal((20, 20))
    d = design_covariance(Gamma, eta, z, m)
    idx = np.flatnonzero(np.repeat(z, m))
    M = Gamma[:, idx].T @ Gamma[:, idx]
    assert d.objective == pytest.approx(eta * np.linalg.eigvalsh(M)[-1], rel=1e-8)
    assert np.trace(Gamma @ d.sigma @ Gamma.T) == pytest.approx(d.objective, rel=1e-8)
    check_feasible(d.sigma, eta, np.flatnonzero(z), m)
    for r in range(1, 13):
        W = rng.standard_normal((10000 // 12 + 1, idx.size, r))
        S = W @ np.swapaxes(W, 1, 2)
        S *= eta / np.trace(S, axis1=1, axis2=2)[:, None, None]
        vals = np.einsum("ab,nbc,ac->n", Gamma[:, idx], S, Gamma[:, idx])
        assert np.all(vals <= d.objective + 1e-9)


def test_monotone_in_added_covariance():
    rng = np.random.default_rng(17)
    g, C, byz, sigma = random_instance(rng)
    ctx = attack_context(C, g, byz)
    extra = byz_sigma(rng, byz, 4, g.L)
    pats = (rng.random((len(byz), 4)) < 0.5).astype(int)
    assert attack_objective(ctx, pats, sigma + extra) >= attack_objective(ctx, pats, sigma) - 1e-12
