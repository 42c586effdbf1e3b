"""Self-contained verification suites: solvers against enumeration, gradients
against finite differences.

Each suite returns a dict with ``name``, ``passed``, ``checks``, ``failures``
and ``max_deviation`` so callers (CLI, tests) can print uniform reports. The
suites are deliberately independent of the solver internals they check:
expected values come from permutation enumeration or numeric differentiation.
"""

from __future__ import annotations

import time

import numpy as np

from . import autodiff as ad
from .align import (
    alignment_equivalence_check,
    cost_matrix,
    entropic_gwd,
    exact_gwd_uniform,
    exact_wd_uniform,
    gwd_cost,
    gwd_cost_naive,
    gwd_cost_term,
    sinkhorn_wd,
    uniform_weights,
    wd_cost_term,
)
from .autodiff import Tensor
from .checks import gradient_check, numeric_gradient, relative_error
from .encoder import encode_batch, init_encoder
from .flow import init_flow, log_prob
from .graph import build_graph, init_attention


def equivalence_suite(seeds=100, sizes=(3, 4), inject_fault=False):
    """Frobenius-argmin vs inner-product-argmax over full permutation enumeration."""
    t0 = time.time()
    failures = []
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        n = sizes[seed % len(sizes)]
        ok = alignment_equivalence_check(
            rng.random((n, n)), rng.random((n, 3)), rng.random((n, n)), rng.random((n, 3))
        )
        if inject_fault and seed == 0:
            ok = False
        if not ok:
            failures.append(f"seed {seed} (n={n})")
    return {
        "name": "alignment-equivalence",
        "checks": seeds,
        "failures": failures,
        "passed": not failures,
        "max_deviation": 0.0,
        "seconds": time.time() - t0,
    }


def sinkhorn_suite(seeds=50, beta=0.005, rel_tol=0.02, inject_fault=False):
    """Entropic transport objective against the enumerated LP optimum."""
    t0 = time.time()
    failures = []
    worst = 0.0
    u = uniform_weights(4)
    for seed in range(seeds):
        cost = np.random.default_rng(1000 + seed).random((4, 4))
        res = sinkhorn_wd(cost, u, u, beta, max_iter=3000, tol=1e-9)
        lp = exact_wd_uniform(cost)
        rel = abs(res.objective - lp) / lp
        worst = max(worst, rel)
        if inject_fault and seed == 0:
            rel = rel_tol * 10
        if rel > rel_tol or res.marginal_error > 1e-6:
            failures.append(f"seed {seed}: rel {rel:.4f}, marginal {res.marginal_error:.2e}")
    return {
        "name": "sinkhorn-vs-enumeration",
        "checks": seeds,
        "failures": failures,
        "passed": not failures,
        "max_deviation": worst,
        "seconds": time.time() - t0,
    }


def gwd_suite(seeds=20, beta=0.01, obj_tol=1e-3, inject_fault=False):
    """Edge alignment finds graph isomorphisms and separates unlike graphs."""
    t0 = time.time()
    failures = []
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(2000 + seed)
        n = int(rng.integers(3, 6))
        a = rng.random((n, n))
        sigma = rng.permutation(n)
        b = a[np.ix_(sigma, sigma)]
        u = uniform_weights(n)
        res = entropic_gwd(a, b, u, u, beta, outer_iter=100, tol=1e-10,
                           sink_iter=3000, sink_tol=1e-9)
        value = res.objective
        if inject_fault and seed == 0:
            value = obj_tol * 10
        worst = max(worst, value)
        if value > obj_tol:
            failures.append(f"seed {seed}: isomorphic objective {value:.2e}")
    # factorized pseudo-cost against the quadruple loop
    for seed in range(5):
        rng = np.random.default_rng(3000 + seed)
        a = rng.random((3, 3))
        b = rng.random((4, 4))
        plan = rng.random((3, 4))
        plan /= plan.sum()
        of, pf = gwd_cost(a, b, plan, method="factorized")
        on, pn = gwd_cost_naive(a, b, plan)
        dev = max(abs(of - on), float(np.abs(pf - pn).max()))
        worst = max(worst, dev)
        if dev > 1e-10:
            failures.append(f"factorized-vs-naive seed {seed}: {dev:.2e}")
    # structurally different graphs must stay separated
    path = np.zeros((4, 4))
    for i, j in ((0, 1), (1, 2), (2, 3)):
        path[i, j] = path[j, i] = 1.0
    star = np.zeros((4, 4))
    for i, j in ((0, 1), (0, 2), (0, 3)):
        star[i, j] = star[j, i] = 1.0
    u4 = uniform_weights(4)
    gap = entropic_gwd(path, star, u4, u4, beta, outer_iter=100, tol=1e-10,
                       sink_iter=3000, sink_tol=1e-9).objective
    enum_gap = exact_gwd_uniform(path, star)
    if gap < 0.05:
        failures.append(f"path-vs-star objective {gap:.4f} below 0.05 (enumeration {enum_gap:.4f})")
    return {
        "name": "gwd-isomorphism",
        "checks": seeds + 6,
        "failures": failures,
        "passed": not failures,
        "max_deviation": worst,
        "seconds": time.time() - t0,
    }


def gradient_suite(inject_fault=False):
    """Finite-difference checks for every differentiable surface."""
    t0 = time.time()
    failures = []
    worst = 0.0

    def record(name, err, tol):
        nonlocal worst
        if inject_fault and not failures:
            err = tol * 10
        worst = max(worst, err)
        if err > tol:
            failures.append(f"{name}: rel err {err:.2e} > {tol}")

    rng = np.random.default_rng(0)
    att = init_attention(6, rng)
    window = rng.normal(size=(6, 3))
    record(
        "attention",
        gradient_check(lambda: ad.sum_(build_graph(window, att).adjacency ** 2),
                       [att.w_query, att.w_key]),
        1e-4,
    )

    enc = init_encoder(3, 2, rng)
    windows = rng.normal(size=(2, 4, 3))
    adjacency = Tensor(np.full((2, 3, 3), 1.0 / 3.0))
    record(
        "encoder",
        gradient_check(lambda: ad.sum_(encode_batch(windows, adjacency, enc)),
                       list(enc.tensors().values())),
        1e-4,
    )

    model = init_flow(3, 2, n_layers=2, rng=rng, scale=0.3)
    x = rng.normal(size=(4, 3))
    c = rng.normal(size=(4, 2))
    record(
        "flow",
        gradient_check(lambda: ad.mean_(log_prob(x, c, model)),
                       list(model.tensors().values())),
        1e-4,
    )

    # envelope gradient of the fused distance against the re-solved objective,
    # on planted near-isomorphic instances where the optimal plan is locked
    beta, lam = 0.01, 0.1
    for seed in range(3):
        r = np.random.default_rng(100 + seed)
        n, d = 3, 2
        u = uniform_weights(n)
        sigma = r.permutation(n)
        xs_np = r.random((n, d))
        xt_np = xs_np[sigma] + r.normal(0.0, 0.02, (n, d))
        as_np = r.random((n, n))
        at_np = as_np[np.ix_(sigma, sigma)] + r.normal(0.0, 0.02, (n, n))
        xs = Tensor(xs_np, requires_grad=True)
        a_s = Tensor(as_np, requires_grad=True)
        sk = dict(max_iter=3000, tol=1e-11)
        gw = dict(outer_iter=40, tol=1e-11, sink_iter=1000, sink_tol=1e-10)

        wd = sinkhorn_wd(cost_matrix(xs.data, xt_np), u, u, beta, **sk)
        gwp = entropic_gwd(a_s.data, at_np, u, u, beta, **gw)
        term = (wd_cost_term(xs, xt_np, wd.plan) + gwd_cost_term(a_s, Tensor(at_np), gwp.plan)) * lam
        xs.zero_grad()
        a_s.zero_grad()
        ad.backward(term)

        def resolved():
            w = sinkhorn_wd(cost_matrix(xs.data, xt_np), u, u, beta, **sk)
            g = entropic_gwd(a_s.data, at_np, u, u, beta, **gw)
            return lam * (w.objective + g.objective)

        err = max(
            relative_error(xs.grad, numeric_gradient(resolved, xs)),
            relative_error(a_s.grad, numeric_gradient(resolved, a_s)),
        )
        record(f"envelope-ga-seed{seed}", err, 1e-2)

    return {
        "name": "gradient-integrity",
        "checks": 6,
        "failures": failures,
        "passed": not failures,
        "max_deviation": worst,
        "seconds": time.time() - t0,
    }


def run_all(seeds=100, inject_fault=False):
    return [
        equivalence_suite(seeds=seeds, inject_fault=inject_fault),
        sinkhorn_suite(seeds=max(10, seeds // 2), inject_fault=inject_fault),
        gwd_suite(seeds=max(5, seeds // 5), inject_fault=inject_fault),
        gradient_suite(inject_fault=inject_fault),
    ]
