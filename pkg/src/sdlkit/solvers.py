"""Training algorithms.

* :func:`lpgd` - low-rank projected gradient descent on a (matrix, aux) pair.
* :func:`sdl_conv_filt` / :func:`sdl_conv_feat` - LPGD on the lifted SDL
  objective followed by an SVD split back into factors.
* :func:`bcd_dr` - block coordinate descent where each block may move at
  most ``r_k`` per outer iteration.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import classifier
from .diagnostics import gradient_mapping, stationarity_blocks
from .errors import ArgumentError, NumericError
from .linalg import (BALL, NONNEG_BALL, ConstraintSpec, frobenius_norm, project_ball_around,
                     project_constraint, rank_r_project, svd_full)
from .loss import (BLOCKS, FEATURE, FILTER, FactorState, LiftedState, SdlProblem, check_state,
                   grad_blocks, grad_lifted, loss_lifted, loss_separate)

DEFAULT_TAU = 0.01


# ---------------------------------------------------------------- reports

@dataclass
class SolverReport:
    records: list = field(default_factory=list)  # (iter, loss, stationarity, gmap_norm, elapsed_s)
    termination: str = "max_iters"
    flags: dict = field(default_factory=dict)
    seed: int | None = None
    extras: dict = field(default_factory=dict)

    HEADER = ("iter", "loss", "stationarity", "grad_mapping_norm", "elapsed_s")

    def add(self, it: int, loss: float, stat: float, gmap: float, elapsed: float) -> None:
        self.records.append((int(it), float(loss), float(stat), float(gmap), float(elapsed)))

    @property
    def losses(self) -> np.ndarray:
        return np.array([r[1] for r in self.records])

    @property
    def stationarity(self) -> np.ndarray:
        return np.array([r[2] for r in self.records])

    def final_metrics(self) -> dict:
        if not self.records:
            return {}
        it, loss, stat, gm, el = self.records[-1]
        return {"iters": it, "loss": loss, "stationarity": stat, "grad_mapping_norm": gm,
                "elapsed_s": el, "termination": self.termination}


class Clock:
    """Elapsed-seconds source; ``Clock(None)`` always reads 0 for reproducible traces."""

    def __init__(self, kind: str | None = "wall"):
        if kind not in ("wall", None, "none"):
            raise ArgumentError(f"unknown clock {kind!r}")
        self.kind = "wall" if kind == "wall" else None
        self.t0 = time.perf_counter()

    def __call__(self) -> float:
        return time.perf_counter() - self.t0 if self.kind else 0.0


# ---------------------------------------------------------------- LPGD

@dataclass
class LpgdConfig:
    tau: float
    iters: int
    rank: int
    theta: ConstraintSpec = field(default_factory=ConstraintSpec.unbounded)
    theta_aux: ConstraintSpec = field(default_factory=ConstraintSpec.unbounded)
    eps: float | None = None  # optional early stop when stationarity <= sqrt(eps)

    def __post_init__(self):
        if not self.tau > 0:
            raise ArgumentError("tau must be positive")
        if self.iters < 1:
            raise ArgumentError("iters must be >= 1")
        if self.rank < 1:
            raise ArgumentError("rank must be >= 1")


Objective = Callable[[np.ndarray, np.ndarray], float]
Gradient = Callable[[np.ndarray, np.ndarray], tuple]


def lpgd(f: Objective, grad: Gradient, cfg: LpgdConfig, z0: tuple, clock: Clock | None = None,
         callback: Callable | None = None) -> tuple[tuple, SolverReport]:
    """Iterate Z <- [Pr_r(Proj_theta(M - tau gM)), Proj_aux(G - tau gG)].

    ``z0 = (M, G)``; the aux coordinate G is never rank-projected. Each record
    carries the stationarity measure and gradient-mapping norm over the convex
    constraint (the rank constraint is handled by the projection only).
    """
    clock = clock or Clock()
    M, G = (np.array(a, dtype=np.float64) for a in z0)
    if not (cfg.theta.contains(M, 1e-9) and cfg.theta_aux.contains(G, 1e-9)):
        raise ArgumentError("initial point is not feasible")
    if cfg.rank > min(M.shape):
        raise ArgumentError(f"rank {cfg.rank} exceeds min{M.shape}")
    rep = SolverReport()
    tau = cfg.tau
    for t in range(1, cfg.iters + 1):
        gM, gG = grad(M, G)
        M = rank_r_project(project_constraint(M - tau * gM, cfg.theta), cfg.rank)
        G = project_constraint(G - tau * gG, cfg.theta_aux)
        val = f(M, G)
        if not math.isfinite(val):
            raise NumericError(f"non-finite loss at iteration {t}")
        gM, gG = grad(M, G)
        stat = stationarity_blocks([gM, gG], [M, G], [cfg.theta, cfg.theta_aux])
        gm = math.hypot(frobenius_norm(gradient_mapping(gM, M, tau, cfg.theta)),
                        frobenius_norm(gradient_mapping(gG, G, tau, cfg.theta_aux)))
        rep.add(t, val, stat, gm, clock())
        if callback is not None:
            callback(t, M, G)
        if cfg.eps is not None and stat <= math.sqrt(cfg.eps):
            rep.termination = "stationary"
            break
    return (M, G), rep


# ---------------------------------------------------------------- convex SDL

def stack_lifted(prob: SdlProblem, z: LiftedState) -> np.ndarray:
    return np.hstack([z.A, z.B]) if prob.mode == FILTER else np.vstack([z.A, z.B])


def unstack_lifted(prob: SdlProblem, S: np.ndarray, gamma: np.ndarray) -> LiftedState:
    k = prob.kappa
    if prob.mode == FILTER:
        return LiftedState(S[:, :k].copy(), S[:, k:].copy(), gamma)
    return LiftedState(S[:k].copy(), S[k:].copy(), gamma)


def recover_factors(prob: SdlProblem, z: LiftedState) -> tuple[FactorState, bool]:
    """Split the rank-r lifted stack into (W, H, beta) with a balanced SVD.

    Returns the factors and a flag that is True when the stack has rank < r
    (the trailing factor columns are then zero).
    """
    r, k = prob.rank, prob.kappa
    U, s, V = svd_full(stack_lifted(prob, z))
    U, s, V = U[:, :r], s[:r], V[:, :r]
    tiny = s <= 1e-14 * max(s[0], 1e-300)
    deficient = bool(tiny.any())
    root = np.where(tiny, 0.0, np.sqrt(s))
    left = U * root
    right = (V * root).T
    if prob.mode == FILTER:
        W, beta, H = left, right[:, :k], right[:, k:]
    else:
        beta, W, H = left[:k].T, left[k:], right
    return FactorState(np.ascontiguousarray(W), np.ascontiguousarray(H),
                       np.ascontiguousarray(beta), z.gamma.copy()), deficient


def _conv(prob: SdlProblem, cfg: LpgdConfig, init: LiftedState | None, mode: str,
          clock: Clock | None = None, callback=None):
    if prob.mode != mode:
        raise ArgumentError(f"problem mode is {prob.mode}, solver needs {mode}")
    if cfg.rank != prob.rank:
        raise ArgumentError("LpgdConfig.rank must equal the problem rank")
    init = init if init is not None else LiftedState.zeros(prob)
    k = prob.kappa

    def split(S, G):
        return unstack_lifted(prob, S, G)

    def f(S, G):
        return loss_lifted(prob, split(S, G))

    def grad(S, G):
        g = grad_lifted(prob, split(S, G))
        return stack_lifted(prob, g), g.gamma

    (S, G), rep = lpgd(f, grad, cfg, (stack_lifted(prob, init), init.gamma), clock, callback)
    z = split(S, G)
    st, deficient = recover_factors(prob, z)
    rep.flags["rank_deficient"] = deficient
    rep.extras["kappa"] = k
    return st, z, rep


def sdl_conv_filt(prob: SdlProblem, cfg: LpgdConfig, init: LiftedState | None = None,
                  clock: Clock | None = None, callback=None):
    """LPGD on the filter-mode lifted loss over the horizontal stack [A, B]."""
    return _conv(prob, cfg, init, FILTER, clock, callback)


def sdl_conv_feat(prob: SdlProblem, cfg: LpgdConfig, init: LiftedState | None = None,
                  clock: Clock | None = None, callback=None):
    """LPGD on the feature-mode lifted loss over the vertical stack [A; B]."""
    return _conv(prob, cfg, init, FEATURE, clock, callback)


# ---------------------------------------------------------------- BCD-DR

def default_radius(k: int) -> float:
    """min(1, 1 / (sqrt(k) log(k + 1)))."""
    return min(1.0, 1.0 / (math.sqrt(k) * math.log(k + 1.0)))


@dataclass
class BcdConfig:
    iters: int = 100
    radius_schedule: Callable[[int], float] = default_radius
    sub_iters: int = 5
    sub_step: str | float = "backtracking"
    radius_scale: float | dict = 1.0
    l1: float = 0.0  # lambda * ||H||_1 on the code block
    armijo_c: float = 1e-4
    max_halvings: int = 60
    eps: float | None = None

    def __post_init__(self):
        if self.iters < 1 or self.sub_iters < 1:
            raise ArgumentError("iters and sub_iters must be >= 1")
        if self.l1 < 0:
            raise ArgumentError("l1 must be nonnegative")
        if not (self.sub_step == "backtracking" or (isinstance(self.sub_step, (int, float))
                                                     and self.sub_step > 0)):
            raise ArgumentError("sub_step must be 'backtracking' or a positive float")

    def scale_for(self, name: str) -> float:
        if isinstance(self.radius_scale, dict):
            return float(self.radius_scale.get(name, 1.0))
        return float(self.radius_scale)


def project_intersection(Z, c: ConstraintSpec, center, radius: float, rounds: int = 10) -> np.ndarray:
    """Approximate projection onto (constraint set) cap (ball around ``center``).

    Alternating projections, a final constraint projection for feasibility,
    and, if the ball is still violated, a pull-back along the segment towards
    ``center`` (feasible by convexity since ``center`` is feasible).
    """
    Z = np.asarray(Z, dtype=np.float64)
    for _ in range(rounds):
        Z = project_ball_around(project_constraint(Z, c), center, radius)
    Z = project_constraint(Z, c)
    d = frobenius_norm(Z - center)
    if d > radius:
        Z = center + (radius / d) * (Z - center)
    return Z


def _soft(Z: np.ndarray, t: float) -> np.ndarray:
    return np.sign(Z) * np.maximum(np.abs(Z) - t, 0.0)


def block_descent(objective: Callable[[dict], float], gradient: Callable[[dict, str], np.ndarray],
                  blocks: dict, constraints: dict, order: Sequence[str], cfg: BcdConfig,
                  l1_blocks: Sequence[str] = (), clock: Clock | None = None,
                  stationarity: Callable[[dict], float] | None = None) -> tuple[dict, SolverReport]:
    """Generic diminishing-radius block coordinate descent.

    ``objective`` must already include any l1 term for ``l1_blocks``. Each
    block update runs ``cfg.sub_iters`` projected-gradient steps inside
    (constraint cap ball(previous block, scale * r_k)) and accepts a step only
    if it passes a sufficient-decrease test, so the objective never increases.
    """
    clock = clock or Clock()
    x = {k: np.array(v, dtype=np.float64) for k, v in blocks.items()}
    for name in order:
        if not constraints[name].contains(x[name], 1e-9):
            raise ArgumentError(f"initial block {name} is infeasible")
    F = objective(x)
    if not math.isfinite(F):
        raise NumericError("initial objective is not finite")
    steps = {name: 1.0 for name in order}
    rep = SolverReport()
    block_trace = [F]
    radius_ratio = 0.0

    def stat_of(xx):
        if stationarity is not None:
            return stationarity(xx)
        return stationarity_blocks([gradient(xx, n) for n in order], [xx[n] for n in order],
                                   [constraints[n] for n in order],
                                   [cfg.l1 if n in l1_blocks else 0.0 for n in order])

    for k in range(1, cfg.iters + 1):
        rk = cfg.radius_schedule(k)
        if not (0 < rk <= 1):
            raise ArgumentError(f"radius r_{k}={rk} outside (0, 1]")
        for name in order:
            c = constraints[name]
            center = x[name].copy()
            radius = cfg.scale_for(name) * rk
            lam = cfg.l1 if name in l1_blocks else 0.0
            for _ in range(cfg.sub_iters):
                g = gradient(x, name)
                cur = x[name]
                t = steps[name] if cfg.sub_step == "backtracking" else float(cfg.sub_step)
                accepted = False
                for _ in range(cfg.max_halvings if cfg.sub_step == "backtracking" else 1):
                    Y = cur - t * g
                    if lam:
                        Y = _soft(Y, t * lam)
                    cand = project_intersection(Y, c, center, radius)
                    dist2 = float(np.sum((cand - cur) ** 2))
                    if dist2 == 0.0:
                        break
                    trial = dict(x)
                    trial[name] = cand
                    Fc = objective(trial)
                    if math.isfinite(Fc) and Fc <= F - cfg.armijo_c * dist2 / t:
                        x, F, accepted = trial, Fc, True
                        break
                    t *= 0.5
                if cfg.sub_step == "backtracking":
                    steps[name] = min(2.0 * t, 1e8) if accepted else max(t, 1e-12)
                if not accepted:
                    break
            moved = frobenius_norm(x[name] - center)
            radius_ratio = max(radius_ratio, moved / radius)
            block_trace.append(F)
        stat = stat_of(x)
        gm = math.sqrt(sum(frobenius_norm(gradient_mapping(gradient(x, n), x[n], 1.0, constraints[n])) ** 2
                           for n in order))
        rep.add(k, F, stat, gm, clock())
        if cfg.eps is not None and stat <= math.sqrt(cfg.eps):
            rep.termination = "stationary"
            break
    rep.extras["block_losses"] = block_trace
    rep.extras["max_radius_ratio"] = radius_ratio
    return x, rep


def random_init(prob: SdlProblem, seed: int, constraints=None) -> FactorState:
    """Uniform[0,1) entries scaled to Frobenius norm 0.1 x constraint radius, then projected."""
    rng = np.random.default_rng(seed)
    cons = constraints or prob.constraints
    shapes = {"W": (prob.p, prob.rank), "H": (prob.rank, prob.n),
              "beta": (prob.rank, prob.kappa), "gamma": (prob.q, prob.kappa)}
    out = {}
    for name in BLOCKS:
        c = cons.for_block(name)
        U = rng.random(shapes[name])
        nrm = frobenius_norm(U)
        if nrm > 0:
            U *= 0.1 * c.bounded_radius / nrm
        out[name] = project_constraint(U, c)
    return FactorState(out["W"], out["H"], out["beta"], out["gamma"])


def _block_order(prob: SdlProblem) -> list[str]:
    order = ["W", "beta", "gamma", "H"]
    if prob.q == 0:
        order.remove("gamma")
    return order


def sdl_objective(prob: SdlProblem, l1: float = 0.0) -> Callable[[FactorState], float]:
    def F(st: FactorState) -> float:
        val = loss_separate(prob, st)
        if l1:
            val += l1 * float(np.abs(st.H).sum())
        return val
    return F


def sdl_stationarity(prob: SdlProblem, st: FactorState, l1: float = 0.0) -> float:
    g = grad_blocks(prob, st)
    names = _block_order(prob)
    return stationarity_blocks([g.get(n) for n in names], [st.get(n) for n in names],
                               [prob.constraints.for_block(n) for n in names],
                               [l1 if n == "H" else 0.0 for n in names])


def bcd_dr(prob: SdlProblem, cfg: BcdConfig, init: FactorState | None = None, seed: int = 0,
           clock: Clock | None = None) -> tuple[FactorState, SolverReport]:
    """Diminishing-radius BCD on the separate-factor loss, blocks in order W, beta, Gamma, H."""
    init = init if init is not None else random_init(prob, seed)
    check_state(prob, init)
    order = _block_order(prob)
    F = sdl_objective(prob, cfg.l1)

    def to_state(x):
        return FactorState(x["W"], x["H"], x["beta"], x.get("gamma", init.gamma))

    def objective(x):
        return F(to_state(x))

    def gradient(x, name):
        st = to_state(x)
        if name == "H" and prob.mode == FILTER and not prob.nu:
            return 2.0 * prob.xi * (st.W.T @ (st.W @ st.H - prob.X))
        return grad_blocks(prob, st).get(name)

    blocks = {n: init.get(n) for n in order}
    cons = {n: prob.constraints.for_block(n) for n in order}
    x, rep = block_descent(objective, gradient, blocks, cons, order, cfg, ("H",), clock,
                           stationarity=lambda xx: sdl_stationarity(prob, to_state(xx), cfg.l1))
    rep.seed = seed
    return to_state(x), rep


# ---------------------------------------------------------------- prediction

def code_samples(W: np.ndarray, Xnew: np.ndarray, c: ConstraintSpec, iters: int = 5000,
                 tol: float = 1e-13) -> np.ndarray:
    """argmin over feasible codes of ||x - W h||^2, one column per sample (projected gradient)."""
    Xnew = np.asarray(Xnew, dtype=np.float64)
    L = float(np.linalg.norm(W, 2)) ** 2
    if L == 0:
        return np.zeros((W.shape[1], Xnew.shape[1]))
    WtW, WtX = W.T @ W, W.T @ Xnew

    def proj(Hm):
        if c.kind in (BALL, NONNEG_BALL):
            return np.column_stack([project_constraint(Hm[:, [j]], c)[:, 0] for j in range(Hm.shape[1])])
        return project_constraint(Hm, c)

    Hc = np.zeros((W.shape[1], Xnew.shape[1]))
    for _ in range(iters):
        Hn = proj(Hc - (WtW @ Hc - WtX) / L)
        delta = frobenius_norm(Hn - Hc)
        Hc = Hn
        if delta <= tol * (1.0 + frobenius_norm(Hc)):
            break
    return Hc


def predict_proba_factors(st: FactorState, Xnew, mode: str = FILTER, code: ConstraintSpec | None = None,
                          Xaux_new=None, h: classifier.ScoreFunction = classifier.EXP) -> np.ndarray:
    """(kappa+1) x m class probabilities for new samples given trained factors.

    Feature mode first codes each sample against W under ``code``.
    """
    Xnew = np.asarray(Xnew, dtype=np.float64)
    if Xnew.ndim == 1:
        Xnew = Xnew[:, None]
    p, m = st.W.shape[0], Xnew.shape[1]
    if Xnew.shape[0] != p:
        raise ArgumentError(f"new data must have {p} rows")
    if mode == FILTER:
        act = st.beta.T @ (st.W.T @ Xnew)
    else:
        act = st.beta.T @ code_samples(st.W, Xnew, code or ConstraintSpec.unbounded())
    q = st.gamma.shape[0]
    if q:
        if Xaux_new is None:
            raise ArgumentError("auxiliary covariates required")
        Xa = np.asarray(Xaux_new, dtype=np.float64)
        if Xa.ndim == 1:
            Xa = Xa[:, None]
        if Xa.shape != (q, m):
            raise ArgumentError(f"aux data must be {q} x {m}")
        act = act + st.gamma.T @ Xa
    return classifier.batch_probs(act, h)


def predict_proba(prob: SdlProblem, st: FactorState, Xnew, Xaux_new=None) -> np.ndarray:
    """(kappa+1) x m class probabilities for new samples (columns)."""
    return predict_proba_factors(st, Xnew, prob.mode, prob.constraints.code, Xaux_new, prob.h)


def predict_labels(prob: SdlProblem, st: FactorState, Xnew, Xaux_new=None) -> np.ndarray:
    # argmax returns the first maximum, i.e. ties go to the smallest label
    return np.argmax(predict_proba(prob, st, Xnew, Xaux_new), axis=0)


def predict(prob: SdlProblem, st: FactorState, x, x_aux=None) -> tuple[int, np.ndarray]:
    P = predict_proba(prob, st, np.asarray(x, dtype=np.float64).reshape(-1, 1),
                      None if x_aux is None else np.asarray(x_aux, dtype=np.float64).reshape(-1, 1))
    return int(np.argmax(P[:, 0])), P[:, 0]
