"""Baselines and experiment drivers: Pareto sweeps, training curves, consistency curves."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from . import classifier
from .errors import ArgumentError
from .generative import WEAK_FILTER, choose_tau, estimate_weak, lifted_errors, make_weak_params, sample
from .loss import FEATURE, FILTER, BlockConstraints, FactorState, SdlProblem
from .metrics import classification_metrics, relative_recon
from .solvers import (BcdConfig, Clock, LpgdConfig, SolverReport, bcd_dr, predict_labels, sdl_conv_feat,
                      sdl_conv_filt)

SOLVERS = ("conv-filt", "conv-feat", "bcd-filt", "bcd-feat")


# ---------------------------------------------------------------- baselines

def nmf_hals(X, r: int, iters: int = 200, seed: int = 0, eps: float = 1e-12) -> tuple[np.ndarray, np.ndarray]:
    """Nonnegative factorization X ~ W H by hierarchical alternating least squares."""
    X = np.asarray(X, dtype=np.float64)
    if np.any(X < 0):
        X = np.maximum(X, 0.0)
    p, n = X.shape
    rng = np.random.default_rng(seed)
    scale = math.sqrt(max(X.mean(), eps) / r)
    W = rng.random((p, r)) * scale
    H = rng.random((r, n)) * scale
    for _ in range(iters):
        XHt, HHt = X @ H.T, H @ H.T
        for j in range(r):
            W[:, j] = np.maximum(W[:, j] + (XHt[:, j] - W @ HHt[:, j]) / max(HHt[j, j], eps), 0.0)
        WtX, WtW = W.T @ X, W.T @ W
        for j in range(r):
            H[j] = np.maximum(H[j] + (WtX[j] - WtW[j] @ H) / max(WtW[j, j], eps), 0.0)
    return W, H


@dataclass
class LogisticModel:
    coef: np.ndarray  # d x kappa
    intercept: np.ndarray  # kappa

    def activations(self, F) -> np.ndarray:
        return self.coef.T @ np.asarray(F, dtype=np.float64) + self.intercept[:, None]

    def predict(self, F) -> np.ndarray:
        return np.argmax(classifier.batch_probs(self.activations(F)), axis=0)


def fit_logistic(F, y, kappa: int, l2: float = 1e-4, standardize: bool = True) -> LogisticModel:
    """Multinomial logistic regression (reference class 0) on feature columns F by L-BFGS."""
    F = np.asarray(F, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    d, n = F.shape
    mu = F.mean(axis=1, keepdims=True) if standardize else np.zeros((d, 1))
    sd = F.std(axis=1, keepdims=True) if standardize else np.ones((d, 1))
    sd[sd == 0] = 1.0
    Z = (F - mu) / sd

    def fg(theta):
        C = theta[: d * kappa].reshape(d, kappa)
        b = theta[d * kappa:]
        A = C.T @ Z + b[:, None]
        K = classifier.batch_hdot(y, A)
        val = float(np.sum(classifier.batch_nll(y, A))) / n + l2 * float(np.sum(C * C))
        gC = Z @ K.T / n + 2 * l2 * C
        return val, np.concatenate([gC.ravel(), K.sum(axis=1) / n])

    res = minimize(fg, np.zeros(d * kappa + kappa), jac=True, method="L-BFGS-B",
                   options={"maxiter": 500, "gtol": 1e-8})
    C = res.x[: d * kappa].reshape(d, kappa) / sd
    b = res.x[d * kappa:] - (C.T @ mu)[:, 0]
    return LogisticModel(C, b)


def split_indices(n: int, seed: int, test_frac: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(test_frac * n))
    return np.sort(perm[k:]), np.sort(perm[:k])


# ---------------------------------------------------------------- model fitting

@dataclass
class ModelSettings:
    solver: str = "bcd-filt"
    rank: int = 2
    kappa: int = 1
    xi: float = 1.0
    nu: float = 0.0
    tau: float | None = None
    iters: int = 100
    sub_iters: int = 5
    l1: float = 0.0
    radius_scale: float | dict = 1.0
    constraints: BlockConstraints = field(default_factory=BlockConstraints)

    @property
    def mode(self) -> str:
        return FILTER if self.solver.endswith("filt") else FEATURE


def fit_model(X, y, ms: ModelSettings, X_aux=None, seed: int = 0, clock: Clock | None = None
              ) -> tuple[SdlProblem, FactorState, SolverReport]:
    """Train one SDL model with the requested solver."""
    if ms.solver not in SOLVERS:
        raise ArgumentError(f"solver must be one of {SOLVERS}")
    prob = SdlProblem(X, y, ms.kappa, ms.rank, xi=ms.xi, nu=ms.nu, mode=ms.mode, X_aux=X_aux,
                      constraints=ms.constraints)
    if ms.solver.startswith("bcd"):
        cfg = BcdConfig(iters=ms.iters, sub_iters=ms.sub_iters, l1=ms.l1, radius_scale=ms.radius_scale)
        st, rep = bcd_dr(prob, cfg, seed=seed, clock=clock)
        return prob, st, rep
    tau = ms.tau
    if tau is None:
        tau, _ = choose_tau(prob)
    cfg = LpgdConfig(tau=tau, iters=ms.iters, rank=ms.rank)
    solver = sdl_conv_filt if ms.mode == FILTER else sdl_conv_feat
    st, _, rep = solver(prob, cfg, None, clock)
    rep.seed = seed
    rep.extras["tau"] = tau
    return prob, st, rep


def evaluate(prob: SdlProblem, st: FactorState, X_test, y_test, Xaux_test=None, positive: int = 1):
    """Test-set classification scores plus training reconstruction error."""
    pred = predict_labels(prob, st, X_test, Xaux_test)
    return classification_metrics(pred, y_test, positive, prob.kappa + 1,
                                  recon_rel=relative_recon(prob.X, st.W, st.H))


# ---------------------------------------------------------------- Pareto sweep

BASELINES = ("lr", "nmf-lr")
PARETO_HEADER = ("method", "xi", "recon_rel", "recon_rel_sd", "accuracy", "accuracy_sd",
                 "f_score", "f_score_sd", "seed")


def _take(M, idx):
    return None if M is None or M.shape[0] == 0 else M[:, idx]


def pareto_replicate(method: str, xi: float, X, y, X_aux, ms: ModelSettings, seed: int,
                     test_frac: float = 0.2, positive: int = 1) -> tuple[float, float, float]:
    """(recon_rel, accuracy, f_score) of one method on one random train/test split."""
    itr, ite = split_indices(X.shape[1], seed, test_frac)
    Xtr, Xte, ytr, yte = X[:, itr], X[:, ite], y[itr], y[ite]
    Atr, Ate = _take(X_aux, itr), _take(X_aux, ite)
    k1 = ms.kappa + 1

    def with_aux(F, A):
        return F if A is None else np.vstack([F, A])

    if method == "lr":
        lr = fit_logistic(with_aux(Xtr, Atr), ytr, ms.kappa)
        s = classification_metrics(lr.predict(with_aux(Xte, Ate)), yte, positive, k1)
        return 1.0, s.accuracy, s.f_score
    if method == "nmf-lr":
        W, H = nmf_hals(Xtr, ms.rank, seed=seed)
        lr = fit_logistic(with_aux(W.T @ Xtr, Atr), ytr, ms.kappa)
        s = classification_metrics(lr.predict(with_aux(W.T @ Xte, Ate)), yte, positive, k1)
        return relative_recon(Xtr, W, H), s.accuracy, s.f_score
    if method not in SOLVERS:
        raise ArgumentError(f"unknown method {method!r}")
    prob, st, _ = fit_model(Xtr, ytr, replace(ms, solver=method, xi=float(xi)), Atr, seed)
    s = evaluate(prob, st, Xte, yte, Ate, positive)
    return s.recon_rel, s.accuracy, s.f_score


def replicate_seeds(seed: int, count: int) -> list[int]:
    """Independent per-replicate seeds: seed xor replicate index."""
    return [int(seed) ^ i for i in range(count)]


def run_pareto(X, y, ms: ModelSettings, methods=("lr", "nmf-lr", "bcd-filt"), xis=(0.1, 1.0, 5.0, 10.0),
               seeds: int = 5, seed: int = 0, X_aux=None, test_frac: float = 0.2, workers: int = 1,
               positive: int = 1) -> list[tuple]:
    """One row per (method, xi) with means and standard deviations over replicates.

    Baselines ignore xi and are repeated on every xi row. Replicates run on a
    thread pool and are merged in replicate order.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rs = replicate_seeds(seed, seeds)
    cache = {}
    rows = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for method in methods:
            for xi in xis:
                key = (method, None if method in BASELINES else float(xi))
                if key not in cache:
                    cache[key] = list(pool.map(
                        lambda s: pareto_replicate(method, xi, X, y, X_aux, ms, s, test_frac, positive), rs))
                vals = np.array(cache[key])
                mean, sd = vals.mean(axis=0), vals.std(axis=0, ddof=1) if len(rs) > 1 else np.zeros(3)
                rows.append((method, float(xi), mean[0], sd[0], mean[1], sd[1], mean[2], sd[2], int(seed)))
    return rows


def best_row(rows, method: str, recon_cap: float | None = None):
    """Highest-accuracy row of ``method`` (optionally among rows with recon_rel <= cap)."""
    cand = [r for r in rows if r[0] == method and (recon_cap is None or r[2] <= recon_cap)]
    return max(cand, key=lambda r: r[4]) if cand else None


# ---------------------------------------------------------------- training curves

CURVES_HEADER = ("solver", "xi", "iter", "loss", "stationarity", "grad_mapping_norm", "elapsed_s")


def run_curves(X, y, ms: ModelSettings, solvers=("bcd-filt",), xis=(1.0,), seed: int = 0, X_aux=None,
               clock_kind: str | None = None) -> list[tuple]:
    rows = []
    for solver in solvers:
        for xi in xis:
            _, _, rep = fit_model(X, y, replace(ms, solver=solver, xi=float(xi)), X_aux, seed,
                                  Clock(clock_kind))
            rows.extend((solver, float(xi)) + rec for rec in rep.records)
    return rows


# ---------------------------------------------------------------- consistency

CONSISTENCY_HEADER = ("n", "error_mean", "error_sd", "stack_mean", "stack_sd", "recon_mean", "recon_sd")


@dataclass
class ConsistencySettings:
    variant: str = WEAK_FILTER
    n_grid: tuple = (200, 800, 3200)
    seeds: int = 5
    sigma: float = 0.05
    p: int = 12
    r: int = 2
    kappa: int = 1
    q: int = 0
    nu: float = 0.0
    error: str = "discriminative"


def consistency_replicate(cs: ConsistencySettings, n: int, seed: int) -> dict:
    gp = make_weak_params(cs.variant, cs.p, n, cs.r, cs.kappa, cs.q, sigma=cs.sigma, seed=seed)
    data = sample(gp, seed + 1000)
    z, _ = estimate_weak(cs.variant, data, cs.sigma, cs.nu, rank=cs.r, kappa=cs.kappa)
    return lifted_errors(z, gp)


def loglog_slope(ns, errs) -> float:
    return float(np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(errs, float)), 1)[0])


def run_consistency(cs: ConsistencySettings, seed: int = 0, workers: int = 1) -> tuple[list[tuple], float]:
    """Error of the weak-model estimator across the n grid, averaged over seeds.

    The same replicate seed fixes the ground-truth parameters for every n.
    Returns the table rows and the log-log slope of the mean ``cs.error``.
    """
    if cs.error not in ("discriminative", "stack", "recon"):
        raise ArgumentError(f"unknown error measure {cs.error!r}")
    if len(cs.n_grid) < 2:
        raise ArgumentError("need at least two sample sizes")
    rs = replicate_seeds(seed, cs.seeds)
    rows, means = [], []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for n in cs.n_grid:
            errs = list(pool.map(lambda s: consistency_replicate(cs, int(n), s), rs))
            cols = []
            for key in (cs.error, "stack", "recon"):
                v = np.array([e[key] for e in errs])
                cols += [v.mean(), v.std(ddof=1) if len(v) > 1 else 0.0]
            means.append(cols[0])
            rows.append((int(n),) + tuple(cols))
    return rows, loglog_slope(cs.n_grid, means)
