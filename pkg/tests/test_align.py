import numpy as np
import pytest

from tsgad import autodiff as ad
from tsgad.align import (
    AlignProblem,
    alignment_equivalence_check,
    batch_alignment,
    cost_matrix,
    entropic_gwd,
    enumerate_alignment_values,
    exact_gwd_uniform,
    exact_wd_uniform,
    ga_distance,
    gwd_cost,
    gwd_cost_naive,
    gwd_cost_term,
    permutation_matrices,
    sinkhorn_wd,
    uniform_weights,
    wd_cost_term,
)
from tsgad.autodiff import Tensor
from tsgad.checks import numeric_gradient, relative_error


def test_cost_matrix_zero_diagonal_when_identical():
    x = np.random.default_rng(0).random((4, 3))
    c = cost_matrix(x, x)
    np.testing.assert_allclose(np.diag(c), 0.0, atol=1e-15)


def test_cost_matrix_1d_points():
    c = cost_matrix(np.array([[0.0], [3.0]]), np.array([[4.0]]))
    np.testing.assert_allclose(c, [[4.0], [1.0]])


def test_cost_matrix_symmetry():
    rng = np.random.default_rng(1)
    x, y = rng.random((3, 2)), rng.random((5, 2))
    np.testing.assert_allclose(cost_matrix(x, y), cost_matrix(y, x).T, atol=1e-15)


def test_cost_matrix_dim_mismatch():
    with pytest.raises(ValueError, match="dimensions differ"):
        cost_matrix(np.zeros((2, 3)), np.zeros((2, 4)))


def test_sinkhorn_identical_two_point():
    cost = np.array([[0.0, 1.0], [1.0, 0.0]])
    u = uniform_weights(2)
    res = sinkhorn_wd(cost, u, u, beta=0.01, max_iter=1000, tol=1e-9)
    assert res.objective < 1e-9
    np.testing.assert_allclose(res.plan, np.diag([0.5, 0.5]), atol=1e-9)
    # LP oracle: the better of the two permutation couplings
    assert exact_wd_uniform(cost) == 0.0


def test_sinkhorn_unique_feasible_coupling():
    res = sinkhorn_wd(np.array([[2.0], [4.0]]), np.array([0.5, 0.5]), np.array([1.0]),
                      beta=0.7, max_iter=50, tol=1e-12)
    np.testing.assert_allclose(res.plan, [[0.5], [0.5]], atol=1e-12)
    assert res.objective == pytest.approx(3.0, abs=1e-12)


def test_sinkhorn_matches_enumeration_on_random_4x4():
    u = uniform_weights(4)
    for seed in range(10):
        cost = np.random.default_rng(seed).random((4, 4))
        res = sinkhorn_wd(cost, u, u, beta=0.005, max_iter=3000, tol=1e-9)
        lp = exact_wd_uniform(cost)
        assert abs(res.objective - lp) / lp < 0.02
        assert res.marginal_error < 1e-6


def test_sinkhorn_rejects_bad_marginals():
    cost = np.ones((2, 2))
    with pytest.raises(ValueError, match="strictly positive"):
        sinkhorn_wd(cost, np.array([1.0, 0.0]), uniform_weights(2), 0.1)
    with pytest.raises(ValueError, match="sum to 1"):
        sinkhorn_wd(cost, np.array([0.7, 0.7]), uniform_weights(2), 0.1)


def test_sinkhorn_marginal_violation_monotone():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        cost = rng.random((5, 6))
        v = rng.random(6)
        v /= v.sum()
        res = sinkhorn_wd(cost, uniform_weights(5), v, beta=0.03, max_iter=2000, tol=1e-10)
        errs = np.asarray(res.marginal_errors)
        assert np.all(np.diff(errs) <= 1e-12)


def test_sinkhorn_objective_decreases_with_beta():
    u = uniform_weights(4)
    for seed in range(5):
        cost = np.random.default_rng(100 + seed).random((4, 4))
        objs = [sinkhorn_wd(cost, u, u, beta=b, max_iter=20000, tol=1e-9).objective
                for b in (0.5, 0.1, 0.02, 0.005)]
        assert all(objs[i] >= objs[i + 1] - 1e-9 for i in range(len(objs) - 1))
        lp = exact_wd_uniform(cost)
        assert abs(objs[-1] - lp) / lp < 0.02


def test_sinkhorn_symmetry_and_identity():
    rng = np.random.default_rng(3)
    x = rng.random((4, 3)) * 2.0
    y = rng.random((5, 3)) * 2.0
    u, v = uniform_weights(4), uniform_weights(5)
    ab = sinkhorn_wd(cost_matrix(x, y), u, v, beta=0.02, max_iter=5000, tol=1e-10)
    ba = sinkhorn_wd(cost_matrix(y, x), v, u, beta=0.02, max_iter=5000, tol=1e-10)
    assert ab.objective == pytest.approx(ba.objective, abs=1e-8)
    self_dist = sinkhorn_wd(cost_matrix(x, x), u, u, beta=0.01, max_iter=5000, tol=1e-10)
    assert self_dist.objective <= 1e-6


def test_gwd_factorized_equals_naive():
    rng = np.random.default_rng(0)
    for _ in range(15):
        n, m = rng.integers(2, 5, size=2)
        a_s = rng.random((int(n), int(n)))
        a_t = rng.random((int(m), int(m)))
        plan = rng.random((int(n), int(m)))
        plan /= plan.sum()
        obj_f, pseudo_f = gwd_cost(a_s, a_t, plan)
        obj_n, pseudo_n = gwd_cost_naive(a_s, a_t, plan)
        assert abs(obj_f - obj_n) < 1e-10
        np.testing.assert_allclose(pseudo_f, pseudo_n, atol=1e-10)


def test_gwd_cost_zero_for_identical_identity_plan():
    a = np.random.default_rng(1).random((4, 4))
    obj, _ = gwd_cost(a, a, np.eye(4) / 4.0)
    assert obj == pytest.approx(0.0, abs=1e-15)


def test_gwd_coupling_independent_case():
    # A_s has unit off-diagonal, A_t all zero: every feasible coupling pays
    # the full mass of A_s, i.e. sum_{i,i'} A_s[i,i'] u_i u_{i'} = 0.5.
    a_s = np.array([[0.0, 1.0], [1.0, 0.0]])
    a_t = np.zeros((2, 2))
    u = uniform_weights(2)
    for theta in np.linspace(0.0, 0.5, 6):
        plan = np.array([[theta, 0.5 - theta], [0.5 - theta, theta]])
        obj, _ = gwd_cost(a_s, a_t, plan)
        assert obj == pytest.approx(0.5, abs=1e-12)
    res = entropic_gwd(a_s, a_t, u, u, beta=0.05, outer_iter=10, tol=1e-12)
    assert res.objective == pytest.approx(0.5, abs=1e-9)


def test_entropic_gwd_recovers_isomorphism():
    # relabeled 3-node path with distinct edge weights (rigid: no automorphisms,
    # so the optimal plan is the unique isomorphism rather than a mixture)
    path = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.5], [0.0, 0.5, 0.0]])
    sigma = np.array([2, 0, 1])
    relabeled = path[np.ix_(sigma, sigma)]
    u = uniform_weights(3)
    res = entropic_gwd(path, relabeled, u, u, beta=0.01, outer_iter=100, tol=1e-10,
                       sink_iter=3000, sink_tol=1e-9)
    assert res.objective < 1e-3
    assert exact_gwd_uniform(path, relabeled) == pytest.approx(0.0, abs=1e-15)
    # source node i couples to the target slot that carries it: sigma[j] == i
    support = np.zeros((3, 3))
    support[np.arange(3), np.argsort(sigma)] = 1.0
    assert (res.plan * (1.0 - support)).sum() < 1e-3


def test_entropic_gwd_identical_graphs():
    a = np.random.default_rng(5).random((4, 4))
    u = uniform_weights(4)
    res = entropic_gwd(a, a, u, u, beta=0.01, outer_iter=100, tol=1e-10,
                       sink_iter=3000, sink_tol=1e-9)
    assert res.objective < 1e-6


def test_entropic_gwd_relabeling_invariance():
    rng = np.random.default_rng(9)
    a_s = rng.random((4, 4))
    a_t = rng.random((4, 4))
    u = uniform_weights(4)
    kwargs = dict(outer_iter=100, tol=1e-10, sink_iter=3000, sink_tol=1e-9)
    base = entropic_gwd(a_s, a_t, u, u, 0.01, **kwargs)
    sigma = rng.permutation(4)
    conj = entropic_gwd(a_s, a_t[np.ix_(sigma, sigma)], u, u, 0.01, **kwargs)
    assert base.objective == pytest.approx(conj.objective, abs=1e-6)


def test_ga_distance_composition_and_ablation():
    rng = np.random.default_rng(4)
    prob = AlignProblem(
        source_embeddings=rng.random((4, 3)),
        source_adjacency=rng.random((4, 4)),
        target_embeddings=rng.random((4, 3)),
        target_adjacency=rng.random((4, 4)),
        lam=0.1,
        beta=0.02,
    )
    res = ga_distance(prob, sink_iter=2000, sink_tol=1e-9, gw_outer=50, gw_tol=1e-10)
    assert res.value == pytest.approx(0.1 * (res.wd.objective + res.gwd.objective), abs=1e-12)
    u = uniform_weights(4)
    wd_alone = sinkhorn_wd(cost_matrix(prob.source_embeddings, prob.target_embeddings),
                           u, u, 0.02, max_iter=2000, tol=1e-9)
    assert res.wd.objective == pytest.approx(wd_alone.objective, abs=1e-10)
    zero = AlignProblem(prob.source_embeddings, prob.source_adjacency,
                        prob.target_embeddings, prob.target_adjacency, lam=0.0, beta=0.02)
    assert ga_distance(zero).value == 0.0


def test_ga_distance_identical_graphs_near_zero():
    rng = np.random.default_rng(6)
    emb = rng.random((4, 3)) * 2.0
    adj = rng.random((4, 4))
    prob = AlignProblem(emb, adj, emb.copy(), adj.copy(), lam=0.1, beta=0.01)
    res = ga_distance(prob, sink_iter=3000, sink_tol=1e-10, gw_outer=100, gw_tol=1e-10)
    assert res.value < 1e-6


def test_transport_plan_marginals_feasible():
    rng = np.random.default_rng(8)
    cost = rng.random((5, 7))
    u = uniform_weights(5)
    v = rng.random(7)
    v /= v.sum()
    res = sinkhorn_wd(cost, u, v, beta=0.05, max_iter=2000, tol=1e-8)
    assert np.abs(res.plan.sum(axis=1) - u).max() < 1e-6
    assert np.abs(res.plan.sum(axis=0) - v).max() < 1e-6
    assert np.all(res.plan >= 0.0)


# enumeration-based equivalence of the two alignment objectives

def test_alignment_equivalence_random_instances():
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = 3 if seed % 2 == 0 else 4
        assert alignment_equivalence_check(
            rng.random((n, n)), rng.random((n, 3)),
            rng.random((n, n)), rng.random((n, 3)),
        )


def test_alignment_equivalence_planted_solution():
    rng = np.random.default_rng(11)
    n = 4
    a_s = rng.random((n, n))
    x_s = rng.random((n, 3))
    planted = rng.permutation(n)
    p0 = np.zeros((n, n))
    p0[np.arange(n), planted] = 1.0
    x_t = p0 @ (a_s @ x_s)
    perms, frob, inner = enumerate_alignment_values(a_s, x_s, np.eye(n), x_t)
    best = perms[int(np.argmin(frob))]
    assert np.array_equal(best, planted)
    assert frob.min() == pytest.approx(0.0, abs=1e-18)
    assert np.array_equal(perms[int(np.argmax(inner))], planted)


def test_alignment_equivalence_trivial_n1():
    assert alignment_equivalence_check(
        np.array([[0.3]]), np.array([[1.0, 2.0]]),
        np.array([[0.7]]), np.array([[0.5, 0.1]]),
    )


def test_alignment_equivalence_rejects_mismatch():
    with pytest.raises(ValueError, match="equal node counts"):
        alignment_equivalence_check(np.eye(2), np.ones((2, 2)), np.eye(3), np.ones((3, 2)))


def test_permutation_matrices_act_by_row_selection():
    m = np.arange(9.0).reshape(3, 3)
    for sigma, p in permutation_matrices(3):
        np.testing.assert_array_equal(p @ m, m[list(sigma)])


# differentiable cost terms

def test_wd_cost_term_matches_fixed_plan_fd():
    rng = np.random.default_rng(2)
    xs = Tensor(rng.random((4, 3)), requires_grad=True)
    xt = Tensor(rng.random((4, 3)), requires_grad=True)
    u = uniform_weights(4)
    plan = sinkhorn_wd(cost_matrix(xs.data, xt.data), u, u, 0.05, max_iter=2000, tol=1e-10).plan
    loss = wd_cost_term(xs, xt, plan)
    assert loss.item() == pytest.approx(float((plan * cost_matrix(xs.data, xt.data)).sum()), abs=1e-12)
    ad.backward(loss)
    for p in (xs, xt):
        numeric = numeric_gradient(lambda: wd_cost_term(Tensor(xs.data), Tensor(xt.data), plan).item()
                                   if p is None else wd_cost_term(xs, xt, plan).item(), p)
        assert relative_error(p.grad, numeric) < 1e-6


def test_gwd_cost_term_matches_fixed_plan_fd():
    rng = np.random.default_rng(3)
    a_s = Tensor(rng.random((3, 3)), requires_grad=True)
    a_t = Tensor(rng.random((3, 3)), requires_grad=True)
    u = uniform_weights(3)
    plan = entropic_gwd(a_s.data, a_t.data, u, u, 0.05, outer_iter=30, tol=1e-10).plan
    loss = gwd_cost_term(a_s, a_t, plan)
    ad.backward(loss)
    for p in (a_s, a_t):
        numeric = numeric_gradient(lambda: gwd_cost_term(a_s, a_t, plan).item(), p)
        assert relative_error(p.grad, numeric) < 1e-6


def test_gwd_cost_term_block_target():
    rng = np.random.default_rng(4)
    a_s = Tensor(rng.random((3, 3)), requires_grad=True)
    blocks = [Tensor(rng.random((3, 3)), requires_grad=True) for _ in range(2)]
    full = np.zeros((6, 6))
    full[:3, :3] = blocks[0].data
    full[3:, 3:] = blocks[1].data
    plan = entropic_gwd(a_s.data, full, uniform_weights(3), uniform_weights(6),
                        0.05, outer_iter=30, tol=1e-10).plan
    loss = gwd_cost_term(a_s, blocks, plan)
    assert loss.item() == pytest.approx(gwd_cost(a_s.data, full, plan)[0], abs=1e-12)
    ad.backward(loss)
    numeric = numeric_gradient(lambda: gwd_cost_term(a_s, blocks, plan).item(), blocks[0])
    assert relative_error(blocks[0].grad, numeric) < 1e-6


# batch alignment against the leave-one-out reference

def _toy_batch(rng, batch=4, n=3, d=2):
    emb = Tensor(rng.random((batch, n, d)), requires_grad=True)
    raw = rng.random((batch, n, n))
    adj = Tensor(raw / raw.sum(axis=2, keepdims=True), requires_grad=True)
    return emb, adj


def test_batch_alignment_identical_windows_near_zero():
    rng = np.random.default_rng(5)
    one_emb = rng.random((3, 2)) * 2.0
    one_adj = rng.random((3, 3))
    emb = Tensor(np.stack([one_emb, one_emb.copy()]))
    adj = Tensor(np.stack([one_adj, one_adj.copy()]))
    res = batch_alignment(emb, adj, lam=0.1, beta=0.01, sink_iter=3000, sink_tol=1e-10,
                          gw_outer=100, gw_tol=1e-10)
    assert res.ga.shape == (2,)
    assert np.all(res.ga < 1e-6)


def test_batch_alignment_outlier_scores_highest():
    # one window's adjacency rows are permuted one-sidedly: its nodes now point
    # at different neighbors (a genuine rewiring, unlike a full relabeling,
    # which GWD is invariant to by construction)
    rng = np.random.default_rng(6)
    base_emb = rng.random((4, 2))
    base_adj = rng.random((4, 4))
    base_adj /= base_adj.sum(axis=1, keepdims=True)
    embs, adjs = [], []
    for k in range(6):
        embs.append(base_emb + rng.normal(0, 0.01, base_emb.shape))
        adjs.append(base_adj + rng.normal(0, 0.002, base_adj.shape))
    sigma = np.array([2, 3, 0, 1])
    adjs[2] = adjs[2][sigma, :]
    res = batch_alignment(Tensor(np.stack(embs)), Tensor(np.stack(adjs)), lam=0.1, beta=0.02)
    others = np.delete(res.ga, 2)
    assert res.ga[2] > np.median(others)


def test_batch_alignment_output_length_and_contract():
    rng = np.random.default_rng(7)
    emb, adj = _toy_batch(rng, batch=5)
    res = batch_alignment(emb, adj, lam=0.2, beta=0.05)
    assert len(res.ga) == 5
    np.testing.assert_allclose(res.ga, 0.2 * (res.wd + res.gwd), atol=1e-14)
    with pytest.raises(ValueError, match="B >= 2"):
        batch_alignment(Tensor(rng.random((1, 3, 2))), Tensor(rng.random((1, 3, 3))))


def test_batch_alignment_loss_term_matches_values():
    rng = np.random.default_rng(8)
    emb, adj = _toy_batch(rng)
    res = batch_alignment(emb, adj, lam=0.1, beta=0.05)
    assert res.loss_term.item() == pytest.approx(res.ga.mean(), rel=1e-10)
    ad.backward(res.loss_term)
    assert emb.grad is not None and np.any(emb.grad != 0.0)
    assert adj.grad is not None and np.any(adj.grad != 0.0)


def test_batch_alignment_term_selection():
    rng = np.random.default_rng(9)
    emb, adj = _toy_batch(rng)
    wd_only = batch_alignment(emb, adj, lam=0.1, beta=0.05, terms=("wd",))
    assert np.all(wd_only.gwd == 0.0)
    gwd_only = batch_alignment(emb, adj, lam=0.1, beta=0.05, terms=("gwd",))
    assert np.all(gwd_only.wd == 0.0)
    both = batch_alignment(emb, adj, lam=0.1, beta=0.05)
    np.testing.assert_allclose(both.wd, wd_only.wd, atol=1e-12)
    np.testing.assert_allclose(both.gwd, gwd_only.gwd, atol=1e-12)


def test_batch_alignment_concat_mode():
    rng = np.random.default_rng(10)
    emb, adj = _toy_batch(rng, batch=3)
    res = batch_alignment(emb, adj, lam=0.1, beta=0.05, omega_mode="concat")
    assert len(res.ga) == 3
    ad.backward(res.loss_term)
    assert emb.grad is not None and adj.grad is not None
    with pytest.raises(ValueError, match="omega_mode"):
        batch_alignment(emb, adj, omega_mode="stack")
