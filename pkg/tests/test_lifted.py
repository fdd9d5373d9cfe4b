import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from liftbreg.network import Layer, Network, forward, init_aux, init_glorot
from liftbreg.objective import ObjectiveSpec, objective_E
from liftbreg.lifted import (LBNConfig, LinearizedBregman, NormCache, StepSizes, lbn_batch,
                             model_average, power_iteration, prox_grad_step,
                             relu_prox_grad_step, spectral_norm, spectral_stepsize,
                             train_constrained, train_lbn, train_parallel)
from liftbreg.prox import ProxSpec

RELU, ZERO, TANH = ProxSpec.relu(), ProxSpec.zero(), ProxSpec.tanh()


def regression(rng, s=40, n=5, m=3, noise=0.1):
    X = rng.standard_normal((s, n))
    Y = X @ rng.standard_normal((n, m)) + 0.5 + noise * rng.standard_normal((s, m))
    A = np.hstack([X, np.ones((s, 1))])
    sol = np.linalg.solve(A.T @ A, A.T @ Y)
    return X, Y, sol[:-1], sol[-1]


def random_relu_problem(rng, widths=(3, 5, 4, 2), s=7):
    net = init_glorot(list(widths), [RELU] * (len(widths) - 1), seed=int(rng.integers(1 << 30)))
    for la in net.layers:
        la.b = 0.1 * rng.standard_normal(la.b.shape)
    x0 = rng.standard_normal((s, widths[0]))
    aux = [np.abs(a + 0.3 * rng.standard_normal(a.shape)) for a in init_aux(net, x0)]
    return net, aux, x0, np.abs(rng.standard_normal((s, widths[-1])))


# ---------------------------------------------------------------- single steps


def test_prox_grad_zero_steps_change_nothing(rng):
    net, aux, x0, y = random_relu_problem(rng)
    new, new_aux = prox_grad_step(ObjectiveSpec(), net, aux, x0, y, 0.0, 0.0, 0.0)
    for a, b in zip(net.layers, new.layers):
        np.testing.assert_array_equal(a.W, b.W)
        np.testing.assert_array_equal(a.b, b.b)
    for a, b in zip(aux, new_aux):
        np.testing.assert_array_equal(a, b)


def test_prox_grad_scalar_example():
    net = Network([Layer(np.zeros((1, 1)), np.zeros(1), RELU)])
    new, _ = prox_grad_step(ObjectiveSpec(), net, [], [[1.0]], [[1.0]], 0.0, 0.5, 0.0)
    assert new[0].b[0] == 0.5


def test_generic_step_matches_relu_closed_form(rng):
    for _ in range(5):
        net, aux, x0, y = random_relu_problem(rng)
        a_net, a_aux = prox_grad_step(ObjectiveSpec(), net, aux, x0, y, 0.3, 0.7, 0.4)
        b_net, b_aux = relu_prox_grad_step(net, aux, x0, y, 0.3, 0.7, 0.4)
        for a, b in zip(a_net.layers, b_net.layers):
            assert np.max(np.abs(a.W - b.W)) <= 1e-12
            assert np.max(np.abs(a.b - b.b)) <= 1e-12
        for a, b in zip(a_aux, b_aux):
            assert np.max(np.abs(a - b)) <= 1e-12


# ---------------------------------------------------------------- step sizes


def test_spectral_stepsize_examples():
    assert spectral_stepsize(np.eye(2)) == pytest.approx(1.99, rel=1e-6)
    assert spectral_stepsize(2 * np.eye(2)) == pytest.approx(0.4975, rel=1e-6)
    assert spectral_stepsize(np.zeros((3, 3)), tau_k=4.0) == pytest.approx(1.99 / 2)
    assert spectral_stepsize(np.zeros((3, 3)), tau_k=0.0, cap=0.25) == 0.25
    assert spectral_stepsize(np.eye(2), scale=20) == pytest.approx(39.8, rel=1e-6)
    with pytest.raises(ValueError):
        spectral_stepsize(np.zeros((0, 3)))


@given(seed=st.integers(0, 10_000))
def test_power_iteration_matches_svd(seed):
    A = np.random.default_rng(seed).standard_normal((5, 5))
    top = np.linalg.svd(A, compute_uv=False)[0]
    assert spectral_norm(A) == pytest.approx(top, abs=1e-5 * max(1, top))


def test_power_iteration_wide_and_warm_start(rng):
    A = rng.standard_normal((4, 30))
    s, v = power_iteration(A)
    assert s == pytest.approx(np.linalg.norm(A, 2), rel=1e-5)
    cache = NormCache()
    first = cache.norm("A", A)
    assert cache.norm("A", A * (1 + 1e-9)) == pytest.approx(first, rel=1e-5)
    assert power_iteration(np.zeros((3, 2)))[0] == 0.0


# ---------------------------------------------------------------- mini-batch solver


@pytest.mark.parametrize("acts", [(RELU, RELU, ZERO), (TANH, RELU, ZERO), (RELU, ProxSpec.l1(0.1), ZERO)])
@pytest.mark.parametrize("tau_k,scaled", [(0.0, False), (1.0, True), (100.0, False)])
def test_inner_sweeps_descend(acts, tau_k, scaled, rng):
    net = init_glorot([6, 8, 7, 4], list(acts), seed=int(rng.integers(1 << 30)))
    x0 = rng.standard_normal((12, 6))
    y = rng.standard_normal((12, 4))
    spec = ObjectiveSpec(alpha=0.05, code_layer=2)
    steps = StepSizes(tau_k=tau_k, n_inner=15, batch_scaled=scaled)
    _, _, values = lbn_batch(spec, net, x0, y, steps, anchor=net.copy(), trace=True)
    assert all(b <= a + 1e-8 for a, b in zip(values, values[1:]))
    assert values[-1] < values[0]


def test_explicit_anchor_matches_printed_form(rng):
    net = init_glorot([3, 2], [ZERO], seed=0)
    x0, y = rng.standard_normal((5, 3)), rng.standard_normal((5, 2))
    anchor = net.copy()
    steps = StepSizes(tau_w=0.1, tau_b=0.1, tau_k=2.0, n_inner=1)
    got, _, _ = lbn_batch(ObjectiveSpec(), net.copy(), x0, y, steps, anchor=anchor,
                          anchor_mode="explicit")
    r = x0 @ net[0].W + net[0].b - y
    W = net[0].W - 0.1 * (x0.T @ r / 5)
    np.testing.assert_allclose(got[0].W, W, atol=1e-14)


def test_implicit_anchor_is_exact_prox(rng):
    # one step on a linear layer equals argmin of the linearised model plus
    # (tau_k / 2)||W - anchor||^2 plus (1 / 2 tau)||W - W_n||^2
    net = init_glorot([3, 2], [ZERO], seed=0)
    anchor = init_glorot([3, 2], [ZERO], seed=5)
    x0, y = rng.standard_normal((5, 3)), rng.standard_normal((5, 2))
    tau, tk = 0.2, 3.0
    got, _, _ = lbn_batch(ObjectiveSpec(), net.copy(), x0, y,
                          StepSizes(tau_w=tau, tau_b=0.0, tau_k=tk, n_inner=1), anchor=anchor)
    g = x0.T @ (x0 @ net[0].W + net[0].b - y) / 5
    expected = (net[0].W / tau - g + tk * anchor[0].W) / (1 / tau + tk)
    np.testing.assert_allclose(got[0].W, expected, atol=1e-14)


# ---------------------------------------------------------------- trainers


def test_train_lbn_least_squares(rng):
    X, Y, W, b = regression(rng)
    net = init_glorot([5, 3], [ZERO], seed=0)
    cfg = LBNConfig(epochs=400, batch_size=None, steps=StepSizes(n_inner=5, batch_scaled=True))
    st_ = train_lbn(ObjectiveSpec(), net, X, Y, cfg)
    assert np.max(np.abs(st_.net[0].W - W)) <= 1e-4
    assert np.max(np.abs(st_.net[0].b - b)) <= 1e-4


def test_huge_tau_k_freezes(rng):
    X, Y, _, _ = regression(rng)
    net = init_glorot([5, 4, 3], [RELU, ZERO], seed=0)
    before = [p.copy() for p in net.params()]
    cfg = LBNConfig(epochs=1, batch_size=10, steps=StepSizes(tau_k=1e12, n_inner=15))
    st_ = train_lbn(ObjectiveSpec(), net, X, Y, cfg)
    for a, b in zip(before, st_.net.params()):
        assert np.linalg.norm(a - b) <= 1e-6 * max(np.linalg.norm(a), 1e-3)


def test_train_lbn_deterministic(rng):
    X, Y, _, _ = regression(rng)
    runs = []
    for _ in range(2):
        net = init_glorot([5, 6, 3], [RELU, ZERO], seed=4)
        cfg = LBNConfig(epochs=3, batch_size=8, steps=StepSizes(tau_k=1.0), seed=11)
        st_ = train_lbn(ObjectiveSpec(), net, X, Y, cfg,
                        callback=lambda s: objective_E(ObjectiveSpec(), s.net,
                                                       init_aux(s.net, X), X, Y))
        runs.append((st_.history, [p.tobytes() for p in st_.net.params()]))
    assert runs[0] == runs[1]


def test_callback_and_history(rng):
    X, Y, _, _ = regression(rng)
    net = init_glorot([5, 3], [ZERO], seed=0)
    st_ = train_lbn(ObjectiveSpec(), net, X, Y, LBNConfig(epochs=3, batch_size=10),
                    callback=lambda s: s.epoch)
    assert st_.history == [0, 1, 2, 3]


def test_config_validation():
    with pytest.raises(ValueError):
        StepSizes(n_inner=0)
    with pytest.raises(ValueError):
        StepSizes(tau_k=-1)
    with pytest.raises(ValueError):
        LBNConfig(batch_size=0)
    with pytest.raises(ValueError):
        LBNConfig(anchor="sideways")


# ---------------------------------------------------------------- model averaging


def test_model_average_examples():
    a = Network([Layer(np.array([[1.0]]), np.array([1.0]), ZERO)])
    b = Network([Layer(np.array([[3.0]]), np.array([5.0]), ZERO)])
    avg = model_average([a, b])
    assert avg[0].W[0, 0] == 2.0 and avg[0].b[0] == 3.0
    same = model_average([a, a.copy(), a.copy()])
    assert same[0].W[0, 0] == 1.0
    with pytest.raises(ValueError):
        model_average([a, Network([Layer(np.ones((1, 2)), np.zeros(2), ZERO)])])
    with pytest.raises(ValueError):
        model_average([])


def test_parallel_single_worker_equals_lbn(rng):
    X, Y, _, _ = regression(rng)
    cfg = LBNConfig(epochs=3, batch_size=None, steps=StepSizes(tau_k=1.0), seed=3)
    a = train_lbn(ObjectiveSpec(), init_glorot([5, 4, 3], [RELU, ZERO], seed=1), X, Y, cfg)
    b = train_parallel(ObjectiveSpec(), init_glorot([5, 4, 3], [RELU, ZERO], seed=1), X, Y, 1, cfg)
    for p, q in zip(a.net.params(), b.net.params()):
        assert p.tobytes() == q.tobytes()


def test_parallel_runs_and_descends(rng):
    X, Y, _, _ = regression(rng)
    net = init_glorot([5, 3], [ZERO], seed=1)
    before = objective_E(ObjectiveSpec(), net, [], X, Y)
    cfg = LBNConfig(epochs=20, steps=StepSizes(tau_k=1.0, batch_scaled=True), seed=3)
    st_ = train_parallel(ObjectiveSpec(), net, X, Y, 4, cfg)
    assert objective_E(ObjectiveSpec(), st_.net, [], X, Y) < before
    with pytest.raises(ValueError):
        train_parallel(ObjectiveSpec(), net, X, Y, 0, cfg)


# ---------------------------------------------------------------- constrained variant


def teacher_data(rng, s=20):
    teacher = init_glorot([3, 4, 2], [RELU, ZERO], seed=9)
    x0 = rng.standard_normal((s, 3))
    return teacher, x0, forward(teacher, x0)[-1]


def test_constrained_zero_penalty_keeps_lambda(rng):
    teacher, x0, y = teacher_data(rng)
    cfg = LBNConfig(epochs=1, batch_size=5, steps=StepSizes(tau_k=1.0))
    st_ = train_constrained(ObjectiveSpec(lam=(0.5,)), teacher.copy(), x0, y, 0.3, cfg, 3)
    for lam in st_.extra["lam"]:
        np.testing.assert_allclose(lam, [0.5], atol=1e-12)


def test_constrained_positive_penalty_increases_lambda(rng):
    _, x0, y = teacher_data(rng)
    net = init_glorot([3, 4, 2], [RELU, ZERO], seed=1)
    cfg = LBNConfig(epochs=1, batch_size=5, steps=StepSizes(tau_k=1.0))
    st_ = train_constrained(ObjectiveSpec(), net, x0, y, 0.3, cfg, 4)
    lams = np.array(st_.extra["lam"])
    assert np.all(lams >= 0)
    assert np.all(np.diff(lams[:, 0]) > 0)
    with pytest.raises(ValueError):
        train_constrained(ObjectiveSpec(), net, x0, y, 0.0, cfg, 1)


@given(seed=st.integers(0, 1000))
def test_constrained_lambda_never_negative(seed):
    rng = np.random.default_rng(seed)
    x0, y = rng.standard_normal((6, 2)), rng.standard_normal((6, 2))
    net = init_glorot([2, 3, 2], [RELU, ZERO], seed=seed)
    cfg = LBNConfig(epochs=1, batch_size=3, steps=StepSizes(tau_k=1.0, n_inner=3))
    st_ = train_constrained(ObjectiveSpec(), net, x0, y, 1.0, cfg, 2)
    assert np.all(np.array(st_.extra["lam"]) >= 0)


# ---------------------------------------------------------------- linearised Bregman


def test_bregman_reg_zero_is_plain_step(rng):
    X, Y, _, _ = regression(rng)
    steps = StepSizes(tau_k=1.0, n_inner=4)
    a, _, _ = lbn_batch(ObjectiveSpec(), init_glorot([5, 4, 3], [RELU, ZERO], seed=2), X, Y, steps)
    b, _, _ = lbn_batch(ObjectiveSpec(), init_glorot([5, 4, 3], [RELU, ZERO], seed=2), X, Y, steps,
                        reg=LinearizedBregman(0.0))
    for p, q in zip(a.params(), b.params()):
        assert p.tobytes() == q.tobytes()


def test_bregman_reg_huge_threshold_keeps_zero(rng):
    X, Y, _, _ = regression(rng)
    net = Network([Layer(np.zeros((5, 3)), np.zeros(3), ZERO)])
    cfg = LBNConfig(epochs=5, batch_size=10, steps=StepSizes(tau_k=1.0), param_reg=1e9)
    st_ = train_lbn(ObjectiveSpec(), net, X, Y, cfg)
    assert all(np.all(p == 0) for p in st_.net.params())


def test_bregman_reg_gives_sparser_parameters(rng):
    # overparametrised regression with a sparse ground truth; the inverse
    # scale space path starts at zero and only activates needed entries
    X = rng.standard_normal((20, 60))
    W_true = np.zeros((60, 1))
    W_true[[3, 17, 40]] = [[2.0], [-1.5], [1.0]]
    Y = X @ W_true
    cfg = dict(epochs=300, batch_size=None, steps=StepSizes(n_inner=5, batch_scaled=True))
    plain = train_lbn(ObjectiveSpec(), Network([Layer(np.zeros((60, 1)), np.zeros(1), ZERO)]),
                      X, Y, LBNConfig(**cfg))
    lb = train_lbn(ObjectiveSpec(), Network([Layer(np.zeros((60, 1)), np.zeros(1), ZERO)]),
                   X, Y, LBNConfig(**cfg, param_reg=0.5))
    zeros = lambda n: int(np.sum(np.abs(n[0].W) <= 1e-10))  # noqa: E731
    assert zeros(lb.net) > zeros(plain.net)
    assert zeros(lb.net) >= 30


def test_power_iteration_large_path(rng):
    A = rng.standard_normal((400, 300))
    s, v = power_iteration(A, tol=1e-9, max_iter=5000)
    assert s == pytest.approx(np.linalg.norm(A, 2), rel=1e-6)
    warm, _ = power_iteration(A * 1.001, v0=v)
    assert warm == pytest.approx(1.001 * s, rel=1e-5)
