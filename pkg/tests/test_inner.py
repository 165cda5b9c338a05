import math

import numpy as np
import pytest

from mspp.core import CompositeObjective, LossKind, Minibatch, Regularizer
from mspp.inner import (
    CertificationError,
    DivergenceError,
    ProxSubproblem,
    SolveOptions,
    certify,
    min_norm_subgradient,
    prox_gradient_iterates,
    solve,
)

from oracles import random_subproblem, ref_objective, reference_solve

Q, LG = LossKind.QUADRATIC, LossKind.LOGISTIC


def to_problem(sp):
    reg = {"l1": Regularizer.l1, "l2": Regularizer.l2}.get(sp["reg"], lambda mu: Regularizer.none())(sp["mu"])
    loss = Q if sp["loss"] == "quadratic" else LG
    obj = CompositeObjective(loss, reg, radius=sp["radius"])
    return ProxSubproblem(obj, Minibatch(sp["X"], sp["y"]), sp["center"], sp["gamma"])


def one_d(reg, x=1.0, y=1.0, center=0.0, gamma=1.0):
    obj = CompositeObjective(Q, reg)
    return ProxSubproblem(obj, Minibatch([[x]], [y]), [center], gamma)


def test_one_dimensional_closed_forms():
    grid = np.linspace(-2, 2, 400001)
    for reg, expected in [(Regularizer.none(), 0.5), (Regularizer.l1(0.5), 0.25)]:
        prob = one_d(reg)
        w, cert = solve(prob, SolveOptions.certified(1e-14))
        assert w[0] == pytest.approx(expected, abs=1e-7)
        f = 0.5 * (1 - grid) ** 2 + 0.5 * grid ** 2 + (0.5 * np.abs(grid) if reg.mu else 0)
        assert grid[np.argmin(f)] == pytest.approx(expected, abs=1e-5)
        assert cert.subopt_bound <= 1e-14


def test_warm_start_at_optimum_returns_quickly():
    prob = one_d(Regularizer.l1(0.5))
    w, cert = solve(prob, SolveOptions.certified(1e-8), w_init=np.array([0.25]))
    assert cert.iters_used <= 2 and cert.subopt_bound <= 1e-8
    assert w[0] == pytest.approx(0.25, abs=1e-12)


def test_min_norm_subgradient_clamps_at_zero():
    # smooth gradient at w=0 is (0 - y) * x + gamma * (0 - c) = 0.4 when y=-0.4, c=0
    prob = one_d(Regularizer.l1(1.0), y=-0.4)
    np.testing.assert_array_equal(min_norm_subgradient(prob, np.zeros(1)), [0.0])
    prob = one_d(Regularizer.l1(0.1), y=-0.4)
    np.testing.assert_allclose(min_norm_subgradient(prob, np.zeros(1)), [0.3])


def test_min_norm_subgradient_is_plain_gradient_without_reg():
    rng = np.random.default_rng(0)
    sp = random_subproblem(rng, reg="none")
    prob = to_problem(sp)
    w = rng.standard_normal(len(sp["center"]))
    h = 1e-6
    fd = [(ref_objective(sp, w + h * e) - ref_objective(sp, w - h * e)) / (2 * h) for e in np.eye(len(w))]
    np.testing.assert_allclose(min_norm_subgradient(prob, w), fd, rtol=1e-6, atol=1e-7)


def test_subgradient_vanishes_at_l1_minimizer():
    rng = np.random.default_rng(1)
    for _ in range(10):
        sp = random_subproblem(rng, reg="l1")
        prob = to_problem(sp)
        w, _ = solve(prob, SolveOptions.certified(1e-24))
        assert np.linalg.norm(min_norm_subgradient(prob, w)) <= 1e-10
        assert certify(prob, w) <= 1e-18


def test_certify_is_exact_on_pure_quadratic():
    # F(w) = w^2: zero-feature sample, gamma = 2, center 0
    obj = CompositeObjective(Q, Regularizer.none())
    prob = ProxSubproblem(obj, Minibatch([[0.0]], [0.0]), [0.0], 2.0)
    assert certify(prob, np.array([0.1])) == pytest.approx(0.01, rel=1e-14)
    assert prob.objective(np.array([0.1])) == pytest.approx(0.01, rel=1e-14)


@pytest.mark.parametrize("case,loss,reg,radius", [
    (0, "quadratic", "l1", None), (1, "quadratic", "l2", None), (2, "logistic", "l1", None),
    (3, "logistic", "none", None), (4, "quadratic", "l1", 0.5), (5, "logistic", "l2", 0.3)])
def test_certificate_soundness_against_reference(case, loss, reg, radius):
    rng = np.random.default_rng(case)
    for _ in range(10):
        sp = random_subproblem(rng, loss=loss, reg=reg, radius=radius)
        prob = to_problem(sp)
        ref = reference_solve(sp)
        f_star = ref_objective(sp, ref)
        for w in [sp["center"], solve(prob, SolveOptions.certified(1e-3))[0],
                  solve(prob, SolveOptions.certified(1e-8))[0]]:
            w = w if radius is None else w * min(1.0, radius / np.linalg.norm(w))
            assert certify(prob, w) >= ref_objective(sp, w) - f_star - 1e-9


def test_ball_constrained_certificate_uses_normal_cone():
    # minimizer of the unconstrained problem lies outside the ball; the constrained one sits on it
    obj = CompositeObjective(Q, Regularizer.none(), radius=0.5)
    prob = ProxSubproblem(obj, Minibatch([[1.0, 0.0]], [3.0]), np.zeros(2), 1.0)
    w, cert = solve(prob, SolveOptions.certified(1e-14))
    np.testing.assert_allclose(w, [0.5, 0.0], atol=1e-12)
    assert cert.subopt_bound <= 1e-14


def test_monotone_descent():
    rng = np.random.default_rng(2)
    for loss in ("quadratic", "logistic"):
        sp = random_subproblem(rng, loss=loss, reg="l1", p=8, n=6)
        prob = to_problem(sp)
        prev = math.inf
        for k, (w, _) in enumerate(prox_gradient_iterates(prob)):
            f = prob.objective(w)
            assert f <= prev + 1e-12
            prev = f
            if k == 300:
                break


def test_heuristic_stops_on_objective_change():
    rng = np.random.default_rng(3)
    prob = to_problem(random_subproblem(rng, p=6, n=5))
    w, cert = solve(prob, SolveOptions.heuristic())
    assert cert.iters_used <= 1000
    assert cert.subopt_bound == pytest.approx(certify(prob, w))
    _, capped = solve(prob, SolveOptions.heuristic(obj_diff_tol=1e-300, max_iters=3))
    assert capped.iters_used == 3


def test_certification_failure_carries_best_point():
    rng = np.random.default_rng(4)
    prob = to_problem(random_subproblem(rng, p=6, n=5))
    with pytest.raises(CertificationError) as info:
        solve(prob, SolveOptions.certified(0.0, max_iters_hard=5))
    assert info.value.w.shape == (6,)
    assert not info.value.certificate.converged


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_detected():
    obj = CompositeObjective(Q, Regularizer.none())
    prob = ProxSubproblem(obj, Minibatch([[1e200]], [1e200]), [1e200], 1.0)
    with pytest.raises(DivergenceError):
        solve(prob)


def test_solve_is_deterministic():
    rng = np.random.default_rng(5)
    prob = to_problem(random_subproblem(rng, loss="logistic"))
    a, _ = solve(prob, SolveOptions.certified(1e-12))
    b, _ = solve(prob, SolveOptions.certified(1e-12))
    assert a.tobytes() == b.tobytes()


def test_subproblem_validation():
    obj = CompositeObjective(Q)
    with pytest.raises(ValueError):
        ProxSubproblem(obj, Minibatch([[1.0]], [1.0]), [0.0], 0.0)
    with pytest.raises(ValueError):
        ProxSubproblem(obj, Minibatch([[1.0]], [1.0]), [0.0, 1.0], 1.0)
    with pytest.raises(ValueError):
        SolveOptions.certified(-1.0)
