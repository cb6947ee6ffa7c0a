"""Generative SDL models, samplers and estimation pipelines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import classifier
from .diagnostics import conditioning
from .errors import ArgumentError
from .linalg import ConstraintSpec, frobenius_norm
from .loss import FEATURE, FILTER, LiftedState, SdlProblem
from .solvers import (DEFAULT_TAU, BcdConfig, Clock, LpgdConfig, block_descent, default_radius,
                      sdl_conv_feat, sdl_conv_filt)

WEAK_FILTER = "weak_filter"
WEAK_FEATURE = "weak_feature"
STRONG_FILTER = "strong_filter"
VARIANTS = (WEAK_FILTER, WEAK_FEATURE, STRONG_FILTER)


@dataclass
class GenerativeParams:
    """Ground truth of a generative SDL model.

    Weak variants store ``A, B, C, gamma`` (C is the q x n aux mean);
    the strong variant stores ``W, h, beta, gamma, lam``.
    """

    variant: str
    truth: dict
    sigma: float
    sigma_aux: float
    kappa: int
    p: int
    q: int
    n: int
    r: int

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ArgumentError(f"unknown variant {self.variant!r}")
        if not (self.sigma > 0 and self.sigma_aux > 0):
            raise ArgumentError("noise levels must be positive")
        self.truth = {k: np.asarray(v, dtype=np.float64) for k, v in self.truth.items()}
        if self.variant != STRONG_FILTER:
            A, B = self.truth["A"], self.truth["B"]
            stack = np.hstack([A, B]) if self.variant == WEAK_FILTER else np.vstack([A, B])
            if np.linalg.matrix_rank(stack, tol=1e-9 * max(1.0, np.abs(stack).max())) > self.r:
                raise ArgumentError("stacked truth has rank above r")

    @property
    def mode(self) -> str:
        return FEATURE if self.variant == WEAK_FEATURE else FILTER


def _orthonormal(rng, p: int, r: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((p, r)))
    return Q * np.sign(np.diag(R))


def make_weak_params(variant: str, p: int, n: int, r: int, kappa: int = 1, q: int = 0,
                     sigma: float = 0.1, sigma_aux: float = 0.1, seed: int = 0,
                     code_scale: float = 1.0, beta_scale: float = 1.0, gamma_scale: float = 0.5) -> GenerativeParams:
    """Random low-rank truth: W orthonormal, codes N(0, code_scale^2), beta N(0, beta_scale^2)."""
    if variant not in (WEAK_FILTER, WEAK_FEATURE):
        raise ArgumentError("variant must be weak_filter or weak_feature")
    rng = np.random.default_rng(seed)
    # n-independent parts first so the same seed gives the same W, beta, Gamma for every n
    W = _orthonormal(rng, p, r)
    beta = beta_scale * rng.standard_normal((r, kappa))
    gamma = gamma_scale * rng.standard_normal((q, kappa))
    H = code_scale * rng.standard_normal((r, n))
    truth = {
        "A": W @ beta if variant == WEAK_FILTER else beta.T @ H,
        "B": W @ H,
        "C": rng.standard_normal((q, n)),
        "gamma": gamma,
        "W": W, "H": H, "beta": beta,
    }
    return GenerativeParams(variant, truth, sigma, sigma_aux, kappa, p, q, n, r)


def make_strong_params(p: int, r: int, kappa: int = 1, q: int = 0, sigma: float = 0.1,
                       sigma_aux: float = 0.1, seed: int = 0, n: int = 0) -> GenerativeParams:
    rng = np.random.default_rng(seed)
    truth = {
        "W": _orthonormal(rng, p, r),
        "h": rng.uniform(0.5, 1.5, size=(r, 1)),
        "beta": rng.standard_normal((r, kappa)),
        "gamma": 0.5 * rng.standard_normal((q, kappa)),
        "lam": rng.standard_normal((q, 1)),
    }
    return GenerativeParams(STRONG_FILTER, truth, sigma, sigma_aux, kappa, p, q, n, r)


def _draw_labels(rng, act: np.ndarray) -> np.ndarray:
    P = classifier.batch_probs(act)
    cum = np.cumsum(P, axis=0)
    u = rng.random(act.shape[1])
    y = (u[None, :] >= cum).sum(axis=0)
    return np.minimum(y, act.shape[0]).astype(np.int64)


def sample_weak_filter(gp: GenerativeParams, seed: int):
    if gp.variant != WEAK_FILTER:
        raise ArgumentError("sample_weak_filter needs a weak_filter model")
    rng = np.random.default_rng(seed)
    t = gp.truth
    X = t["B"] + gp.sigma * rng.standard_normal(t["B"].shape)
    Xa = t["C"] + gp.sigma_aux * rng.standard_normal(t["C"].shape)
    act = t["A"].T @ X + t["gamma"].T @ Xa
    return X, Xa, _draw_labels(rng, act)


def sample_weak_feature(gp: GenerativeParams, seed: int):
    if gp.variant != WEAK_FEATURE:
        raise ArgumentError("sample_weak_feature needs a weak_feature model")
    rng = np.random.default_rng(seed)
    t = gp.truth
    X = t["B"] + gp.sigma * rng.standard_normal(t["B"].shape)
    Xa = t["C"] + gp.sigma_aux * rng.standard_normal(t["C"].shape)
    act = t["A"] + t["gamma"].T @ Xa
    return X, Xa, _draw_labels(rng, act)


def sample_strong_filter(gp: GenerativeParams, seed: int, n: int | None = None):
    if gp.variant != STRONG_FILTER:
        raise ArgumentError("sample_strong_filter needs a strong_filter model")
    n = n or gp.n
    if n < 1:
        raise ArgumentError("sample size must be positive")
    rng = np.random.default_rng(seed)
    t = gp.truth
    X = t["W"] @ t["h"] + gp.sigma * rng.standard_normal((gp.p, n))
    Xa = t["lam"] + gp.sigma_aux * rng.standard_normal((gp.q, n))
    act = t["beta"].T @ (t["W"].T @ X) + t["gamma"].T @ Xa
    return X, Xa, _draw_labels(rng, act)


def sample(gp: GenerativeParams, seed: int):
    return {WEAK_FILTER: sample_weak_filter, WEAK_FEATURE: sample_weak_feature,
            STRONG_FILTER: sample_strong_filter}[gp.variant](gp, seed)


# ---------------------------------------------------------------- estimation

def default_iters(n: int, c: float = 10.0) -> int:
    return int(math.ceil(c * math.log(n)))


def choose_tau(prob: SdlProblem, M: float = 1.0) -> tuple[float, dict]:
    """Midpoint of the admissible interval when the conditioning check passes.

    Otherwise the fixed default stepsize, capped at 1/L so the reconstruction
    block (curvature 2 xi) cannot diverge for large xi.
    """
    rep = conditioning(prob, M)
    if rep.condition_ok:
        return rep.tau_mid, rep.to_dict()
    return min(DEFAULT_TAU, 1.0 / rep.L), rep.to_dict()


def estimate_weak(variant: str, data, sigma: float, nu: float = 0.0, T: int | None = None,
                  rank: int = 1, kappa: int = 1, c: float = 10.0, M: float = 1.0,
                  tau: float | None = None, clock: Clock | None = None):
    """Lifted MLE with xi = 1/(2 sigma^2) run for T = ceil(c log n) LPGD steps."""
    if variant not in (WEAK_FILTER, WEAK_FEATURE):
        raise ArgumentError("estimate_weak handles the weak variants")
    X, Xa, y = data
    n = X.shape[1]
    mode = FILTER if variant == WEAK_FILTER else FEATURE
    prob = SdlProblem(X, y, kappa, rank, xi=1.0 / (2.0 * sigma**2), nu=nu, mode=mode, X_aux=Xa)
    T = T or default_iters(n, c)
    cond = None
    if tau is None:
        tau, cond = choose_tau(prob, M)
    cfg = LpgdConfig(tau=tau, iters=T, rank=rank)
    solver = sdl_conv_filt if mode == FILTER else sdl_conv_feat
    _, z, rep = solver(prob, cfg, LiftedState.zeros(prob), clock)
    rep.extras["tau"] = tau
    rep.extras["conditioning"] = cond
    return z, rep


def lifted_errors(z: LiftedState, gp: GenerativeParams) -> dict:
    """Relative Frobenius errors of the lifted estimate against the truth."""
    t = gp.truth
    A, B, G = t["A"], t["B"], t["gamma"]
    full = np.hstack([z.A, z.B]) if gp.mode == FILTER else np.vstack([z.A, z.B])
    full_t = np.hstack([A, B]) if gp.mode == FILTER else np.vstack([A, B])
    disc = np.concatenate([z.A.ravel(), z.gamma.ravel()])
    disc_t = np.concatenate([A.ravel(), G.ravel()])
    return {
        "stack": frobenius_norm(full - full_t) / frobenius_norm(full_t),
        "discriminative": float(np.linalg.norm(disc - disc_t) / np.linalg.norm(disc_t)),
        "recon": frobenius_norm(z.B - B) / frobenius_norm(B),
    }


@dataclass
class StrongEstimate:
    W: np.ndarray
    h: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray


def strong_objective(X, Xa, y, sigma: float, nu: float):
    """Regularized negative log likelihood for the shared-code filter model.

    Returns (objective(blocks), gradient(blocks, name)). Blocks are
    W (p x r), h (r x 1), beta (r x kappa) and gamma (q x kappa).
    """
    n = X.shape[1]
    xbar = X.mean(axis=1, keepdims=True)
    sq = float(np.sum(X * X))
    w = 1.0 / (2.0 * sigma**2)

    def act(b):
        a = b["beta"].T @ (b["W"].T @ X)
        return a + b["gamma"].T @ Xa if Xa.shape[0] else a

    def objective(b):
        W, h = b["W"], b["h"]
        Wh = W @ h
        recon = sq - 2.0 * n * (xbar.T @ Wh).item() + n * (Wh.T @ Wh).item()
        reg = sum(float(np.sum(b[k] ** 2)) for k in ("W", "h", "gamma"))
        return float(np.sum(classifier.batch_nll(y, act(b)))) + w * recon + n * nu * reg

    def gradient(b, name):
        W, h = b["W"], b["h"]
        if name == "h":
            return 2.0 * w * n * (W.T @ (W @ h) - W.T @ xbar) + 2.0 * n * nu * h
        K = classifier.batch_hdot(y, act(b))
        if name == "W":
            return ((X @ K.T) @ b["beta"].T + 2.0 * w * n * ((W @ h) - xbar) @ h.T
                    + 2.0 * n * nu * W)
        if name == "beta":
            return W.T @ (X @ K.T)
        return Xa @ K.T + 2.0 * n * nu * b["gamma"]

    return objective, gradient


def estimate_strong(data, sigma: float, nu: float = 0.0, T: int | None = None, rank: int = 1,
                    kappa: int = 1, seed: int = 0, c: float = 10.0, radius_scale: float = 1.0,
                    sub_iters: int = 5, clock: Clock | None = None):
    """BCD-DR on the shared-code likelihood; lambda-hat is the aux sample mean."""
    X, Xa, y = data
    X = np.asarray(X, dtype=np.float64)
    Xa = np.zeros((0, X.shape[1])) if Xa is None else np.asarray(Xa, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    p, n = X.shape
    q = Xa.shape[0]
    T = T or default_iters(n, c)
    objective, gradient = strong_objective(X, Xa, y, sigma, nu)
    rng = np.random.default_rng(seed)
    blocks = {}
    for name, shape in (("W", (p, rank)), ("h", (rank, 1)), ("beta", (rank, kappa)), ("gamma", (q, kappa))):
        U = rng.random(shape)
        nrm = frobenius_norm(U)
        blocks[name] = U * (0.1 / nrm) if nrm > 0 else U
    order = ["W", "beta", "gamma", "h"] if q else ["W", "beta", "h"]
    cons = {k: ConstraintSpec.unbounded() for k in order}
    cfg = BcdConfig(iters=T, radius_schedule=default_radius, sub_iters=sub_iters, radius_scale=radius_scale)
    x, rep = block_descent(objective, gradient, {k: blocks[k] for k in order}, cons, order, cfg, clock=clock)
    rep.seed = seed
    lam = Xa.mean(axis=1, keepdims=True)
    est = StrongEstimate(x["W"], x["h"], x["beta"], x.get("gamma", blocks["gamma"]), lam)
    return est, rep


# ---------------------------------------------------------------- semi-synthetic images

@dataclass
class SemiSyntheticSpec:
    """Image-like data with a reconstruction signal and a label signal.

    With the defaults, X = basis_x H + noise and the label logit is
    beta_y^T W_y^T x. ``y_signal`` adds basis_y H_y to X, ``normalize`` divides
    X by the root mean squared column norm of its noiseless part, and
    ``act_scale`` centres the logit and rescales it to that standard deviation.
    """

    p: int = 784
    n: int = 500
    r_bar: int = 20
    r: int = 2
    kappa: int = 1
    sigma: float = 0.5
    beta_true_y: tuple = (1.0, -1.0)
    y_signal: bool = False
    normalize: bool = False
    act_scale: float | None = None
    basis_x: np.ndarray | None = None
    basis_y: np.ndarray | None = None
    extra: dict = field(default_factory=dict)


def blob_basis(side: int, count: int, cols: tuple[int, int], width: float, amplitude: float,
               seed: int) -> np.ndarray:
    """``count`` Gaussian blobs on a side x side image with centres in the column band ``cols``.

    Each atom is flattened row-major and scaled to Frobenius norm ``amplitude``.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:side, 0:side]
    atoms = []
    for _ in range(count):
        cy = rng.uniform(2, side - 3)
        cx = rng.uniform(cols[0] + 1, cols[1] - 2)
        img = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
        img[:, :cols[0]] = 0.0
        img[:, cols[1]:] = 0.0
        atoms.append(amplitude * img.ravel() / np.linalg.norm(img))
    return np.array(atoms).T


def discrepancy_bases(p: int = 784, r_bar: int = 20, amp_x: float = 10.0, amp_y: float = 3.0,
                      seed: int = 7) -> tuple[np.ndarray, np.ndarray]:
    """Nonnegative smooth bases on disjoint halves of the image (mutually orthogonal)."""
    side = int(round(math.sqrt(p)))
    if side * side != p:
        raise ArgumentError("bundled bases need a square pixel count")
    half = side // 2
    bx = blob_basis(side, r_bar, (0, half), 2.0, amp_x, seed)
    by = blob_basis(side, r_bar, (half, side), 1.5, amp_y, seed + 1)
    return bx, by


def make_semisynthetic(spec: SemiSyntheticSpec, seed: int):
    """Sample X, Bernoulli labels and a truth record; codes are U[0, 1].

    W_y pools the two halves of basis_y (sum of the first and of the second
    half of its atoms) and beta_y weights the two pooled filters.
    """
    if spec.basis_x is None or spec.basis_y is None:
        bx, by = discrepancy_bases(spec.p, spec.r_bar)
    else:
        bx, by = np.asarray(spec.basis_x, float), np.asarray(spec.basis_y, float)
    if bx.shape != (spec.p, spec.r_bar) or by.shape != (spec.p, spec.r_bar):
        raise ArgumentError(f"bases must be {spec.p} x {spec.r_bar}")
    rng = np.random.default_rng(seed)
    H = rng.uniform(0.0, 1.0, size=(spec.r_bar, spec.n))
    Hy = rng.uniform(0.0, 1.0, size=(spec.r_bar, spec.n))
    X0 = bx @ H + by @ Hy if spec.y_signal else bx @ H
    unit = math.sqrt(float(np.sum(X0 * X0)) / spec.n) if spec.normalize else 1.0
    X0 = X0 / unit
    X = X0 + (spec.sigma / unit) * rng.standard_normal(X0.shape) if spec.sigma > 0 else X0.copy()
    half = spec.r_bar // 2
    Wy = np.column_stack([by[:, :half].sum(axis=1), by[:, half:].sum(axis=1)])
    beta = np.asarray(spec.beta_true_y, dtype=np.float64)
    if spec.act_scale is None:
        s, offset = 1.0, 0.0
    else:
        raw = beta @ (Wy.T @ X0)
        s = spec.act_scale / max(float(raw.std()), 1e-300)
        offset = float(raw.mean())
    act = s * (beta @ (Wy.T @ X) - offset)
    prob1 = 1.0 / (1.0 + np.exp(-act))
    y = (rng.random(spec.n) < prob1).astype(np.int64)
    truth = {"H": H, "H_y": Hy, "X0": X0, "W_y": Wy, "beta_y": beta, "basis_x": bx, "basis_y": by,
             "p1": prob1, "scale": unit, "act_scale": s, "act_offset": offset, "seed": seed}
    return X, y, truth
