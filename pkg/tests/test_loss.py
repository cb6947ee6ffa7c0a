import math

import numpy as np
import pytest

from helpers import fd_gradient, random_lifted, random_problem, random_state, rel_err
from sdlkit import ArgumentError
from sdlkit.linalg import vec
from sdlkit.loss import (BLOCKS, FEATURE, FILTER, FactorState, LiftedState, SdlProblem, activation, activations,
                         assemble_hessian_small, grad_blocks, grad_lifted, hessian_block, lift, loss_lifted,
                         loss_separate)


def loop_activation(prob, st, s):
    k = prob.kappa
    a = np.zeros(k)
    for j in range(k):
        if prob.mode == FILTER:
            for i in range(prob.p):
                for l in range(prob.rank):
                    a[j] += st.beta[l, j] * st.W[i, l] * prob.X[i, s]
        else:
            for l in range(prob.rank):
                a[j] += st.beta[l, j] * st.H[l, s]
        for m in range(prob.q):
            a[j] += st.gamma[m, j] * prob.X_aux[m, s]
    return a


def loop_nll(y, a):
    den = 1.0 + sum(math.exp(v) for v in a)
    return -math.log((1.0 if y == 0 else math.exp(a[y - 1])) / den)


def loop_loss_separate(prob, st):
    total = 0.0
    for s in range(prob.n):
        total += loop_nll(int(prob.y[s]), loop_activation(prob, st, s))
    for i in range(prob.p):
        for s in range(prob.n):
            wh = sum(st.W[i, l] * st.H[l, s] for l in range(prob.rank))
            total += prob.xi * (prob.X[i, s] - wh) ** 2
    if prob.nu:
        if prob.mode == FILTER:
            core = [[sum(st.W[i, l] * st.beta[l, j] for l in range(prob.rank)) for j in range(prob.kappa)]
                    for i in range(prob.p)]
        else:
            core = [[sum(st.beta[l, j] * st.H[l, s] for l in range(prob.rank)) for s in range(prob.n)]
                    for j in range(prob.kappa)]
        reg = sum(v * v for row in core for v in row) + sum(v * v for v in st.gamma.ravel())
        total += prob.nu * reg
    return total


# ---------------------------------------------------------------- problem validation

def test_problem_validation():
    X = np.ones((4, 5))
    with pytest.raises(ArgumentError):
        SdlProblem(X, np.zeros(4), 1, 2)
    with pytest.raises(ArgumentError):
        SdlProblem(X, np.full(5, 3), 1, 2)
    with pytest.raises(ArgumentError):
        SdlProblem(X, np.zeros(5), 1, 5)
    with pytest.raises(ArgumentError):
        SdlProblem(X, np.zeros(5), 1, 2, xi=-1.0)
    with pytest.raises(ArgumentError):
        SdlProblem(X, np.zeros(5), 1, 2, X_aux=np.ones((2, 4)))
    with pytest.raises(ArgumentError):
        SdlProblem(X, np.zeros(5), 1, 2, mode="hybrid")
    prob = SdlProblem(X, np.zeros(5), 1, 2)
    assert prob.q == 0 and prob.X_aux.shape == (0, 5)


# ---------------------------------------------------------------- activation

def test_activation_examples():
    prob = random_problem(0, p=4, n=3, r=1, q=0, kappa=1)
    assert np.array_equal(activation(prob, 0, FactorState.zeros(prob)), [0.0])
    X = np.zeros((4, 3))
    X[0, 1] = 2.0
    prob = SdlProblem(X, np.zeros(3), 1, 1)
    st = FactorState(np.eye(4)[:, :1], np.zeros((1, 3)), np.ones((1, 1)), np.zeros((0, 1)))
    assert np.allclose(activation(prob, 1, st), [2.0])
    with pytest.raises(ArgumentError):
        activation(prob, 3, st)


@pytest.mark.parametrize("mode", [FILTER, FEATURE])
def test_activation_matches_loop(mode):
    prob = random_problem(1, p=5, n=4, r=2, q=2, kappa=2, mode=mode)
    st = random_state(prob, 1)
    act = activations(prob, st)
    for s in range(prob.n):
        assert np.allclose(activation(prob, s, st), loop_activation(prob, st, s), atol=1e-12)
        assert np.allclose(act[:, s], loop_activation(prob, st, s), atol=1e-12)


# ---------------------------------------------------------------- losses

@pytest.mark.parametrize("mode", [FILTER, FEATURE])
def test_loss_at_zero(mode):
    prob = random_problem(2, kappa=3, mode=mode)
    want = prob.n * math.log(4) + prob.xi * float(np.sum(prob.X**2))
    assert abs(loss_separate(prob, FactorState.zeros(prob)) - want) <= 1e-10 * want
    assert abs(loss_lifted(prob, LiftedState.zeros(prob)) - want) <= 1e-10 * want


@pytest.mark.parametrize("mode", [FILTER, FEATURE])
@pytest.mark.parametrize("nu", [0.0, 0.4])
def test_loss_separate_matches_loop(mode, nu):
    prob = random_problem(3, p=6, n=9, r=2, q=2, kappa=2, mode=mode, nu=nu)
    st = random_state(prob, 3)
    assert abs(loss_separate(prob, st) - loop_loss_separate(prob, st)) <= 1e-10 * loop_loss_separate(prob, st)


def test_loss_decouples_at_zero_xi():
    prob = random_problem(4, xi=0.0)
    st = random_state(prob, 4)
    nll = sum(loop_nll(int(prob.y[s]), loop_activation(prob, st, s)) for s in range(prob.n))
    assert abs(loss_separate(prob, st) - nll) <= 1e-10 * nll


@pytest.mark.parametrize("mode", [FILTER, FEATURE])
def test_doubling_xi_doubles_reconstruction_term(mode):
    prob = random_problem(5, mode=mode, nu=0.3)
    st = random_state(prob, 5)
    base = loss_separate(prob.with_(xi=0.0), st)
    one = loss_separate(prob, st) - base
    two = loss_separate(prob.with_(xi=2 * prob.xi), st) - base
    assert abs(two - 2 * one) <= 1e-10 * abs(two)


@pytest.mark.parametrize("mode", [FILTER, FEATURE])
def test_lifted_equals_separate_without_penalty(mode):
    prob = random_problem(6, mode=mode)
    st = random_state(prob, 6)
    assert abs(loss_lifted(prob, lift(prob, st)) - loss_separate(prob, st)) <= 1e-10 * loss_separate(prob, st)


def test_lifted_penalty_differs_from_separate():
    prob = random_problem(7, nu=0.5)
    st = random_state(prob, 7)
    z = lift(prob, st)
    na, ng = np.linalg.norm(z.A), np.linalg.norm(z.gamma)
    diff = loss_lifted(prob, z) - loss_separate(prob, st)
    assert abs(diff - 0.5 * ((na + ng) ** 2 - na**2 - ng**2)) <= 1e-9 * abs(diff)


def test_lifted_matches_loop():
    prob = random_problem(8, p=4, n=5, r=2, q=1, kappa=2, nu=0.3)
    z = random_lifted(prob, 8)
    total = 0.0
    for s in range(prob.n):
        a = [sum(z.A[i, j] * prob.X[i, s] for i in range(prob.p)) + z.gamma[0, j] * prob.X_aux[0, s]
             for j in range(prob.kappa)]
        total += loop_nll(int(prob.y[s]), a)
    total += prob.xi * sum((prob.X[i, s] - z.B[i, s]) ** 2 for i in range(prob.p) for s in range(prob.n))
    total += prob.nu * (math.sqrt(np.sum(z.A**2)) + math.sqrt(np.sum(z.gamma**2))) ** 2
    assert abs(loss_lifted(prob, z) - total) <= 1e-10 * total


# ---------------------------------------------------------------- gradients

def test_grad_examples():
    prob = random_problem(9, xi=1.0)
    st = random_state(prob, 9)
    st = FactorState(st.W, np.linalg.lstsq(st.W, prob.X, rcond=None)[0], st.beta, st.gamma)
    # H is the least-squares code, so the residual is orthogonal to W
    assert np.allclose(grad_blocks(prob.with_(xi=1.0), st).H, 0.0, atol=1e-10)

    prob = random_problem(10, kappa=2, q=0, xi=0.0)
    st = random_state(prob, 10)
    st = FactorState(st.W, st.H, np.zeros_like(st.beta), st.gamma)
    K = np.full((2, prob.n), 1.0 / 3.0)
    K[prob.y[prob.y > 0] - 1, np.nonzero(prob.y > 0)[0]] -= 1.0
    assert np.allclose(grad_blocks(prob, st).beta, st.W.T @ prob.X @ K.T, atol=1e-12)
    z = LiftedState.zeros(prob)
    assert np.allclose(grad_lifted(prob, z).A, prob.X @ K.T, atol=1e-12)
    z.B = prob.X.copy()
    assert np.array_equal(grad_lifted(prob, z).B, np.zeros_like(prob.X))


@pytest.mark.parametrize("seed", range(20))
def test_block_gradients_match_finite_differences(seed):
    for mode in (FILTER, FEATURE):
        for q in (0, 2):
            for nu in (0.0, 0.6):
                prob = random_problem(seed, mode=mode, q=q, nu=nu)
                st = random_state(prob, seed)
                g = grad_blocks(prob, st)
                for name in BLOCKS:
                    if st.get(name).size == 0:
                        continue
                    fd = fd_gradient(lambda v: loss_separate(prob, st.replaced(name, v)), st.get(name))
                    assert rel_err(g.get(name), fd) <= 1e-6, (mode, q, nu, name)


@pytest.mark.parametrize("seed", range(20))
def test_lifted_gradients_match_finite_differences(seed):
    for mode in (FILTER, FEATURE):
        prob = random_problem(seed, mode=mode, nu=0.5)
        z = random_lifted(prob, seed)
        g = grad_lifted(prob, z)
        for name in ("A", "B", "gamma"):
            def f(v, name=name):
                w = z.copy()
                setattr(w, name, v)
                return loss_lifted(prob, w)
            assert rel_err(getattr(g, name), fd_gradient(f, getattr(z, name))) <= 1e-6


# ---------------------------------------------------------------- multiconvexity

@pytest.mark.parametrize("mode", [FILTER, FEATURE])
def test_loss_convex_in_each_block(mode):
    prob = random_problem(11, mode=mode, nu=0.2)
    rng = np.random.default_rng(11)
    for trial in range(10):
        st = random_state(prob, trial)
        for name in BLOCKS:
            a = st.get(name)
            b = a + rng.standard_normal(a.shape)
            fa = loss_separate(prob, st)
            fb = loss_separate(prob, st.replaced(name, b))
            fm = loss_separate(prob, st.replaced(name, 0.5 * (a + b)))
            assert fm <= 0.5 * (fa + fb) + 1e-10 * max(1.0, abs(fa) + abs(fb))


# ---------------------------------------------------------------- Hessian

def _fd_hessian(prob, st, eps=1e-5):
    x0 = st.flat()
    cols = []
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = eps
        gp = grad_blocks(prob, FactorState.unflat(x0 + e, prob)).flat()
        gm = grad_blocks(prob, FactorState.unflat(x0 - e, prob)).flat()
        cols.append((gp - gm) / (2 * eps))
    return np.array(cols).T


@pytest.mark.parametrize("mode", [FILTER, FEATURE])
@pytest.mark.parametrize("nu", [0.0, 0.7])
def test_hessian_matches_finite_differences(mode, nu):
    prob = random_problem(12, p=4, n=5, r=2, q=1, kappa=1, mode=mode, nu=nu)
    st = random_state(prob, 12)
    Hs = assemble_hessian_small(prob, st)
    fd = _fd_hessian(prob, st)
    assert np.allclose(Hs, Hs.T, atol=1e-9)
    assert np.max(np.abs(Hs - fd)) <= 1e-4 * max(1.0, np.max(np.abs(fd)))


def test_hessian_diagonal_blocks_psd():
    for mode in (FILTER, FEATURE):
        prob = random_problem(13, p=4, n=5, r=2, q=1, kappa=2, mode=mode)
        Hs = assemble_hessian_small(prob, random_state(prob, 13))
        for name in BLOCKS:
            blk = hessian_block(Hs, prob, name, name)
            assert np.linalg.eigvalsh(blk).min() >= -1e-9


def test_hessian_quadratic_form_matches_directional_second_derivative():
    prob = random_problem(14, p=3, n=4, r=2, q=1, kappa=2, nu=0.3)
    st = random_state(prob, 14)
    Hs = assemble_hessian_small(prob, st)
    d = np.random.default_rng(14).standard_normal(Hs.shape[0])
    x0, t = st.flat(), 1e-4
    f = [loss_separate(prob, FactorState.unflat(x0 + c * t * d, prob)) for c in (-1, 0, 1)]
    second = (f[0] - 2 * f[1] + f[2]) / t**2
    assert abs(second - d @ Hs @ d) <= 1e-4 * abs(d @ Hs @ d)


def test_hessian_dimension_guard():
    prob = random_problem(15, p=40, n=60, r=20, q=0, kappa=1)
    with pytest.raises(ArgumentError):
        assemble_hessian_small(prob, random_state(prob, 15))


def test_vec_layout_of_flat_state():
    prob = random_problem(16, p=3, n=4, r=2, q=1, kappa=2)
    st = random_state(prob, 16)
    assert np.array_equal(st.flat()[: 6], vec(st.W))
    assert np.array_equal(FactorState.unflat(st.flat(), prob).flat(), st.flat())
