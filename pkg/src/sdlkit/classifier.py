"""Generalized multinomial classification head.

Class 0 is the reference class. For an activation ``a`` of length kappa and a
nonnegative score function ``h``::

    g_0 = 1 / (1 + sum_c h(a_c)),   g_j = h(a_j) / (1 + sum_c h(a_c))

With ``h = exp`` this is multinomial logistic regression. Batch functions take
activations as a kappa x n matrix (one column per sample).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ArgumentError, NumericError


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


@dataclass(frozen=True)
class ScoreFunction:
    eval: Callable[[np.ndarray], np.ndarray]
    deriv1: Callable[[np.ndarray], np.ndarray]
    deriv2: Callable[[np.ndarray], np.ndarray]
    tag: str


EXP = ScoreFunction(np.exp, np.exp, np.exp, "exp")
SOFTPLUS = ScoreFunction(
    lambda x: np.logaddexp(0.0, x),
    _sigmoid,
    lambda x: _sigmoid(x) * _sigmoid(-np.asarray(x, dtype=np.float64)),
    "softplus",
)

SCORE_FUNCTIONS = {"exp": EXP, "softplus": SOFTPLUS}


def score_function(tag: str) -> ScoreFunction:
    try:
        return SCORE_FUNCTIONS[tag]
    except KeyError:
        raise ArgumentError(f"unknown score function {tag!r}") from None


def _as_act(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if not np.all(np.isfinite(A)):
        raise NumericError("non-finite activation")
    return A


def _check_labels(y, kappa: int) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if np.any(y < 0) or np.any(y > kappa):
        raise ArgumentError(f"labels must lie in 0..{kappa}")
    return y


def _log_probs_exp(A: np.ndarray) -> np.ndarray:
    Z = np.vstack([np.zeros((1, A.shape[1])), A])
    m = Z.max(axis=0)
    lse = m + np.log(np.exp(Z - m).sum(axis=0))
    return Z - lse


def _scores(A: np.ndarray, h: ScoreFunction) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore"):
        hv = np.asarray(h.eval(A), dtype=np.float64)
    if not np.all(np.isfinite(hv)):
        raise NumericError(f"score function {h.tag} overflowed")
    if np.any(hv < 0):
        raise NumericError(f"score function {h.tag} returned a negative value")
    return hv


def batch_probs(A, h: ScoreFunction = EXP) -> np.ndarray:
    """(kappa+1) x n matrix of class probabilities."""
    A = _as_act(A)
    if h is EXP:
        return np.exp(_log_probs_exp(A))
    hv = _scores(A, h)
    S = 1.0 + hv.sum(axis=0)
    return np.vstack([1.0 / S, hv / S])


def batch_nll(y, A, h: ScoreFunction = EXP) -> np.ndarray:
    """Per-sample negative log likelihood; +inf where g_y = 0."""
    A = _as_act(A)
    y = _check_labels(y, A.shape[0])
    cols = np.arange(A.shape[1])
    if h is EXP:
        return -_log_probs_exp(A)[y, cols]
    hv = _scores(A, h)
    S = 1.0 + hv.sum(axis=0)
    out = np.log(S)
    pos = y > 0
    hy = hv[y[pos] - 1, cols[pos]]
    with np.errstate(divide="ignore"):
        out[pos] -= np.log(hy)
    return out


def batch_hdot(y, A, h: ScoreFunction = EXP) -> np.ndarray:
    """kappa x n matrix K whose columns are d nll / d a."""
    A = _as_act(A)
    kappa, n = A.shape
    y = _check_labels(y, kappa)
    onehot = np.zeros((kappa, n))
    pos = y > 0
    onehot[y[pos] - 1, np.arange(n)[pos]] = 1.0
    if h is EXP:
        return batch_probs(A, h)[1:] - onehot
    hv = _scores(A, h)
    d1 = np.asarray(h.deriv1(A), dtype=np.float64)
    S = 1.0 + hv.sum(axis=0)
    if np.any(hv[onehot > 0] == 0):
        raise NumericError("hdot undefined where h(a_y) = 0")
    ratio = np.zeros_like(A)
    ratio[onehot > 0] = d1[onehot > 0] / hv[onehot > 0]
    return d1 / S - ratio


def batch_hddot(y, A, h: ScoreFunction = EXP) -> np.ndarray:
    """n x kappa x kappa stack of nll Hessians in the activation."""
    A = _as_act(A)
    kappa, n = A.shape
    y = _check_labels(y, kappa)
    if h is EXP:
        g = batch_probs(A, h)[1:]
        out = -np.einsum("in,jn->nij", g, g)
        idx = np.arange(kappa)
        out[:, idx, idx] += g.T
        return out
    hv = _scores(A, h)
    d1 = np.asarray(h.deriv1(A), dtype=np.float64)
    d2 = np.asarray(h.deriv2(A), dtype=np.float64)
    S = 1.0 + hv.sum(axis=0)
    out = -np.einsum("in,jn->nij", d1, d1) / (S * S)[:, None, None]
    idx = np.arange(kappa)
    out[:, idx, idx] += (d2 / S).T
    for s in np.nonzero(y > 0)[0]:
        j = y[s] - 1
        if hv[j, s] == 0:
            raise NumericError("hddot undefined where h(a_y) = 0")
        out[s, j, j] -= d2[j, s] / hv[j, s] - (d1[j, s] / hv[j, s]) ** 2
    return out


# single-activation wrappers

def predictive_distribution(a, h: ScoreFunction = EXP) -> np.ndarray:
    return batch_probs(np.asarray(a, dtype=np.float64).reshape(-1, 1), h)[:, 0]


def nll(y: int, a, h: ScoreFunction = EXP) -> float:
    """-log g_y(a). Returns math.inf (never NaN) when g_y underflows to zero."""
    v = float(batch_nll([y], np.asarray(a, dtype=np.float64).reshape(-1, 1), h)[0])
    return math.inf if not math.isfinite(v) else v


def hdot(y: int, a, h: ScoreFunction = EXP) -> np.ndarray:
    return batch_hdot([y], np.asarray(a, dtype=np.float64).reshape(-1, 1), h)[:, 0]


def hddot(y: int, a, h: ScoreFunction = EXP) -> np.ndarray:
    return batch_hddot([y], np.asarray(a, dtype=np.float64).reshape(-1, 1), h)[0]


# ---------------------------------------------------------------- bounds

@dataclass(frozen=True)
class ClassBounds:
    gamma_max: float
    alpha_minus: float
    alpha_plus: float
    M: float


def _check_bound_args(M: float, kappa: int) -> None:
    if not M > 0:
        raise ArgumentError("activation bound M must be positive")
    if kappa < 1:
        raise ArgumentError("kappa must be >= 1")


def logit_bounds(M: float, kappa: int) -> ClassBounds:
    """Closed-form stiffness and curvature constants for h = exp, ||a|| <= M."""
    _check_bound_args(M, kappa)
    eM, emM = math.exp(M), math.exp(-M)
    den = 1.0 + eM + (kappa - 1) * emM
    gamma_max = 1.0 + eM / den
    alpha_minus = emM / (1.0 + emM + (kappa - 1) * eM)
    alpha_plus = eM * (1.0 + 2.0 * (kappa - 1) * eM) / den**2
    return ClassBounds(gamma_max, alpha_minus, alpha_plus, float(M))


def certified_logit_bounds(M: float, kappa: int) -> ClassBounds:
    """Eigenvalue bounds on the exp-score Hessian that provably hold for ||a|| <= M.

    Hddot = diag(g) - g g^T with g the non-reference probabilities. For any v,
    v^T Hddot v >= g_0 * sum_i g_i v_i^2 by Cauchy-Schwarz, so the smallest
    eigenvalue is at least g_0 * min_i g_i; the largest is at most max_i g_i
    (and at most 1/4 when kappa = 1).
    """
    _check_bound_args(M, kappa)
    eM, emM = math.exp(M), math.exp(-M)
    g_min = emM / (emM + 1.0 + (kappa - 1) * eM)
    g0_min = 1.0 / (1.0 + kappa * eM)
    g_max = eM / (eM + 1.0 + (kappa - 1) * emM)
    alpha_plus = 0.25 if kappa == 1 else g_max
    gamma_max = logit_bounds(M, kappa).gamma_max
    return ClassBounds(gamma_max, g_min * g0_min, alpha_plus, float(M))


def min_curvature_probe(h: ScoreFunction, kappa: int, M: float = 1.0, n_probe: int = 200,
                        seed: int = 0) -> float:
    """Smallest Hddot eigenvalue over random labels and activations with ||a|| <= M."""
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((kappa, n_probe))
    A *= M * rng.uniform(size=n_probe) / np.maximum(np.linalg.norm(A, axis=0), 1e-300)
    y = rng.integers(0, kappa + 1, size=n_probe)
    return float(np.linalg.eigvalsh(batch_hddot(y, A, h)).min())


def warn_if_not_positive_definite(h: ScoreFunction, kappa: int, M: float = 1.0) -> None:
    if h is EXP:
        return
    lam = min_curvature_probe(h, kappa, M)
    if lam <= 0:
        warnings.warn(f"score function {h.tag}: observed information not positive definite "
                      f"(min eigenvalue {lam:.3g} on probe set)", RuntimeWarning, stacklevel=2)
