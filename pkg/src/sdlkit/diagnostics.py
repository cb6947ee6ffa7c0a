"""Stationarity measures, gradient mapping and conditioning constants."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import classifier
from .errors import ArgumentError
from .linalg import BALL, BOX, NONNEG, NONNEG_BALL, UNBOUNDED, ConstraintSpec, frobenius_norm, project_constraint
from .loss import FILTER, SdlProblem

_ACTIVE_TOL = 1e-12


def steepest_feasible_descent(grad, point, c: ConstraintSpec, l1: float = 0.0) -> np.ndarray:
    """Projection of -grad onto the tangent cone of the set at ``point``.

    With ``l1 > 0`` the objective is f + l1 * ||.||_1 and the returned vector
    is the steepest descent direction of the composite objective scaled by its
    slope, so its norm is the stationarity measure either way.
    """
    g = np.asarray(grad, dtype=np.float64)
    x = np.asarray(point, dtype=np.float64)
    if g.shape != x.shape:
        raise ArgumentError("gradient and point shapes differ")
    v = -g.copy()
    if l1:
        nz = x != 0
        v[nz] -= l1 * np.sign(x[nz])
        z = ~nz
        v[z] = -np.sign(g[z]) * np.maximum(np.abs(g[z]) - l1, 0.0)
    lower = np.zeros(x.shape, dtype=bool)
    upper = np.zeros(x.shape, dtype=bool)
    if c.kind in (NONNEG, NONNEG_BALL):
        lower = x <= _ACTIVE_TOL
    elif c.kind == BOX:
        lo = np.broadcast_to(np.asarray(c.lo, dtype=np.float64), x.shape)
        hi = np.broadcast_to(np.asarray(c.hi, dtype=np.float64), x.shape)
        lower = x <= lo + _ACTIVE_TOL * (1 + np.abs(lo))
        upper = x >= hi - _ACTIVE_TOL * (1 + np.abs(hi))
    if l1 and lower.any():
        # an active lower bound at zero: only increases allowed, slope g + l1
        at0 = lower & (x == 0)
        v[at0] = np.maximum(-(g[at0] + l1), 0.0)
        lower = lower & ~at0
    v[lower] = np.maximum(v[lower], 0.0)
    v[upper] = np.minimum(v[upper], 0.0)
    v[lower & upper] = 0.0
    if c.kind in (BALL, NONNEG_BALL):
        nx = frobenius_norm(x)
        if nx >= c.radius * (1 - _ACTIVE_TOL):
            # orthant-active coordinates have x_i = 0, so the half-space
            # constraint <d, x> <= 0 only touches the free coordinates
            ip = float(np.sum(v * x))
            if ip > 0:
                v = v - (ip / (nx * nx)) * x
    return v


def epsilon_stationarity(grad, point, c: ConstraintSpec | None = None, l1: float = 0.0) -> float:
    """-inf over feasible unit directions d of <grad, d>, clipped at 0.

    A point is eps-stationary iff the returned value is <= sqrt(eps).
    """
    c = c or ConstraintSpec.unbounded()
    return frobenius_norm(steepest_feasible_descent(grad, point, c, l1))


def stationarity_blocks(grads, points, constraints, l1s=None) -> float:
    """Measure for a product of sets: norm of the stacked per-block descent vectors."""
    l1s = l1s or [0.0] * len(grads)
    tot = 0.0
    for g, x, c, lam in zip(grads, points, constraints, l1s):
        tot += epsilon_stationarity(g, x, c, lam) ** 2
    return float(np.sqrt(tot))


def gradient_mapping(grad, point, tau: float, theta: ConstraintSpec | None = None) -> np.ndarray:
    """G(Z, tau) = (Z - Proj(Z - tau * grad)) / tau."""
    if not tau > 0:
        raise ArgumentError("tau must be positive")
    theta = theta or ConstraintSpec.unbounded()
    Z = np.asarray(point, dtype=np.float64)
    if theta.kind == UNBOUNDED:
        return np.asarray(grad, dtype=np.float64).copy()
    return (Z - project_constraint(Z - tau * np.asarray(grad), theta)) / tau


# ---------------------------------------------------------------- conditioning

@dataclass(frozen=True)
class ConditioningReport:
    mode: str
    n: int
    xi: float
    nu: float
    M: float
    delta_minus: float
    delta_plus: float
    alpha_minus: float
    alpha_plus: float
    gamma_max: float
    lambda_max_aux: float
    mu_star: float
    L_star: float
    mu: float
    L: float
    ratio: float
    condition_ok: bool
    tau_interval: tuple | None
    bounds: str = "closed_form"

    def rho(self, tau: float) -> float:
        return 2.0 * max(abs(1.0 - tau * self.mu), abs(1.0 - tau * self.L))

    @property
    def tau_mid(self) -> float | None:
        if self.tau_interval is None:
            return None
        return 0.5 * (self.tau_interval[0] + self.tau_interval[1])

    def to_dict(self) -> dict:
        d = asdict(self)
        d["tau_interval"] = list(self.tau_interval) if self.tau_interval else None
        d["tau_mid"] = self.tau_mid
        d["rho_at_tau_mid"] = self.rho(self.tau_mid) if self.tau_mid else None
        return d


def conditioning_from_constants(mode: str, n: int, xi: float, nu: float, mu_star: float, L_star: float,
                                alpha_minus: float, alpha_plus: float, lambda_max_aux: float = 0.0,
                                **extra) -> ConditioningReport:
    if mode == FILTER:
        mu = min(2 * xi, 2 * nu + n * mu_star)
        L = max(2 * xi, 2 * nu + n * L_star)
    else:
        mu = min(2 * xi, 2 * nu + alpha_minus)
        L = max(2 * xi, 2 * nu + alpha_plus * lambda_max_aux * n, alpha_plus + 2 * nu)
    ratio = L / mu if mu > 0 else float("inf")
    ok = bool(ratio < 3)
    interval = (1.0 / (2 * mu), 3.0 / (2 * L)) if ok else None
    fields = dict(mode=mode, n=n, xi=xi, nu=nu, M=extra.get("M", float("nan")),
                  delta_minus=extra.get("delta_minus", float("nan")),
                  delta_plus=extra.get("delta_plus", float("nan")),
                  alpha_minus=alpha_minus, alpha_plus=alpha_plus,
                  gamma_max=extra.get("gamma_max", float("nan")),
                  lambda_max_aux=lambda_max_aux, mu_star=mu_star, L_star=L_star,
                  mu=mu, L=L, ratio=ratio, condition_ok=ok, tau_interval=interval,
                  bounds=extra.get("bounds", "closed_form"))
    return ConditioningReport(**fields)


def conditioning(prob: SdlProblem, M: float, bounds: str = "closed_form") -> ConditioningReport:
    """Restricted strong convexity / smoothness constants of the lifted objective.

    ``bounds="closed_form"`` uses :func:`classifier.logit_bounds`;
    ``"certified"`` uses :func:`classifier.certified_logit_bounds`.
    """
    if not M > 0:
        raise ArgumentError("M must be positive")
    if bounds == "closed_form":
        cb = classifier.logit_bounds(M, prob.kappa)
    elif bounds == "certified":
        cb = classifier.certified_logit_bounds(M, prob.kappa)
    else:
        raise ArgumentError(f"unknown bounds {bounds!r}")
    n = prob.n
    Phi = np.vstack([prob.X, prob.X_aux])
    ev = np.linalg.eigvalsh(Phi @ Phi.T / n)
    d_minus, d_plus = float(max(ev[0], 0.0)), float(ev[-1])
    lam_aux = float(np.linalg.eigvalsh(prob.X_aux @ prob.X_aux.T / n)[-1]) if prob.q else 0.0
    return conditioning_from_constants(
        prob.mode, n, prob.xi, prob.nu, d_minus * cb.alpha_minus, d_plus * cb.alpha_plus,
        cb.alpha_minus, cb.alpha_plus, lam_aux, M=float(M), delta_minus=d_minus,
        delta_plus=d_plus, gamma_max=cb.gamma_max, bounds=bounds)
