import numpy as np

from sdlkit.loss import FactorState, LiftedState, SdlProblem


def random_problem(seed, p=8, n=12, r=3, q=2, kappa=3, mode="filter", xi=0.7, nu=0.0, **kw):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((p, n))
    Xa = rng.standard_normal((q, n)) if q else None
    y = rng.integers(0, kappa + 1, n)
    return SdlProblem(X, y, kappa, r, xi=xi, nu=nu, mode=mode, X_aux=Xa, **kw)


def random_state(prob, seed, scale=0.5):
    rng = np.random.default_rng(seed + 1000)
    return FactorState(scale * rng.standard_normal((prob.p, prob.rank)),
                       scale * rng.standard_normal((prob.rank, prob.n)),
                       scale * rng.standard_normal((prob.rank, prob.kappa)),
                       scale * rng.standard_normal((prob.q, prob.kappa)))


def random_lifted(prob, seed, scale=0.3):
    rng = np.random.default_rng(seed + 2000)
    z = LiftedState.zeros(prob)
    return LiftedState(scale * rng.standard_normal(z.A.shape), scale * rng.standard_normal(z.B.shape),
                       scale * rng.standard_normal(z.gamma.shape))


def fd_gradient(f, x, eps=1e-6):
    """Central finite-difference gradient of a scalar function of an array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        e = np.zeros_like(x)
        e[idx] = eps
        g[idx] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))
