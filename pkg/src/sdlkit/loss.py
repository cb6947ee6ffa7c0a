"""SDL objectives in separate factors and in lifted (stacked) variables.

Shapes: X p x n, X_aux q x n (q may be 0), W p x r, H r x n, beta r x kappa,
Gamma q x kappa. Activations are collected column-wise into a kappa x n
matrix; K = [hdot(y_s, a_s)]_s is the kappa x n score matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import classifier
from .classifier import EXP, ScoreFunction
from .errors import ArgumentError, NumericError
from .linalg import ConstraintSpec, as_matrix, commutation_matrix, frobenius_norm, unvec, vec

FILTER = "filter"
FEATURE = "feature"
MODES = (FILTER, FEATURE)
BLOCKS = ("W", "H", "beta", "gamma")


@dataclass(frozen=True)
class BlockConstraints:
    dict: ConstraintSpec = field(default_factory=ConstraintSpec.unbounded)
    code: ConstraintSpec = field(default_factory=ConstraintSpec.unbounded)
    beta: ConstraintSpec = field(default_factory=ConstraintSpec.unbounded)
    aux: ConstraintSpec = field(default_factory=ConstraintSpec.unbounded)

    def for_block(self, name: str) -> ConstraintSpec:
        return {"W": self.dict, "H": self.code, "beta": self.beta, "gamma": self.aux}[name]


@dataclass(frozen=True, eq=False)
class SdlProblem:
    X: np.ndarray
    y: np.ndarray
    kappa: int
    rank: int
    xi: float = 1.0
    nu: float = 0.0
    mode: str = FILTER
    X_aux: np.ndarray | None = None
    h: ScoreFunction = EXP
    constraints: BlockConstraints = field(default_factory=BlockConstraints)
    lifted: ConstraintSpec = field(default_factory=ConstraintSpec.unbounded)

    def __post_init__(self):
        X = as_matrix(self.X, "X_data")
        object.__setattr__(self, "X", X)
        p, n = X.shape
        Xa = np.zeros((0, n)) if self.X_aux is None else np.asarray(self.X_aux, dtype=np.float64)
        if Xa.ndim != 2 or Xa.shape[1] != n:
            raise ArgumentError(f"X_aux must be q x {n}, got {Xa.shape}")
        if Xa.size and not np.all(np.isfinite(Xa)):
            raise ArgumentError("X_aux has non-finite entries")
        object.__setattr__(self, "X_aux", np.ascontiguousarray(Xa))
        y = np.asarray(self.y)
        if y.shape != (n,):
            raise ArgumentError(f"labels must have length {n}, got shape {y.shape}")
        if np.any(y != np.round(y)):
            raise ArgumentError("labels must be integers")
        y = y.astype(np.int64)
        if self.kappa < 1 or np.any(y < 0) or np.any(y > self.kappa):
            raise ArgumentError(f"labels must lie in 0..{self.kappa}")
        object.__setattr__(self, "y", y)
        if not (1 <= self.rank <= min(p, n)):
            raise ArgumentError(f"rank {self.rank} outside [1, min(p, n)={min(p, n)}]")
        if self.xi < 0 or self.nu < 0:
            raise ArgumentError("xi and nu must be nonnegative")
        if self.mode not in MODES:
            raise ArgumentError(f"mode must be one of {MODES}")

    @property
    def p(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.X_aux.shape[0]

    def with_(self, **kw) -> "SdlProblem":
        return replace(self, **kw)


@dataclass
class FactorState:
    W: np.ndarray
    H: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def copy(self) -> "FactorState":
        return FactorState(self.W.copy(), self.H.copy(), self.beta.copy(), self.gamma.copy())

    def get(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def replaced(self, name: str, value) -> "FactorState":
        out = self.copy()
        setattr(out, name, np.asarray(value, dtype=np.float64))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([vec(self.W), vec(self.H), vec(self.beta), vec(self.gamma)])

    @classmethod
    def zeros(cls, prob: SdlProblem) -> "FactorState":
        return cls(np.zeros((prob.p, prob.rank)), np.zeros((prob.rank, prob.n)),
                   np.zeros((prob.rank, prob.kappa)), np.zeros((prob.q, prob.kappa)))

    @classmethod
    def unflat(cls, v, prob: SdlProblem) -> "FactorState":
        p, n, r, q, k = prob.p, prob.n, prob.rank, prob.q, prob.kappa
        sizes = [p * r, r * n, r * k, q * k]
        parts = np.split(np.asarray(v, dtype=np.float64), np.cumsum(sizes)[:-1])
        return cls(unvec(parts[0], p, r), unvec(parts[1], r, n), unvec(parts[2], r, k), unvec(parts[3], q, k))


@dataclass
class LiftedState:
    A: np.ndarray
    B: np.ndarray
    gamma: np.ndarray

    def copy(self) -> "LiftedState":
        return LiftedState(self.A.copy(), self.B.copy(), self.gamma.copy())

    @classmethod
    def zeros(cls, prob: SdlProblem) -> "LiftedState":
        shape_a = (prob.p, prob.kappa) if prob.mode == FILTER else (prob.kappa, prob.n)
        return cls(np.zeros(shape_a), np.zeros((prob.p, prob.n)), np.zeros((prob.q, prob.kappa)))


def check_state(prob: SdlProblem, st: FactorState) -> None:
    want = {"W": (prob.p, prob.rank), "H": (prob.rank, prob.n),
            "beta": (prob.rank, prob.kappa), "gamma": (prob.q, prob.kappa)}
    for name, shape in want.items():
        if st.get(name).shape != shape:
            raise ArgumentError(f"{name} has shape {st.get(name).shape}, expected {shape}")


# ---------------------------------------------------------------- separate factors

def activations(prob: SdlProblem, st: FactorState) -> np.ndarray:
    """kappa x n activation matrix."""
    if prob.mode == FILTER:
        act = st.beta.T @ (st.W.T @ prob.X)
    else:
        act = st.beta.T @ st.H
    if prob.q:
        act = act + st.gamma.T @ prob.X_aux
    return act


def activation(prob: SdlProblem, s: int, st: FactorState) -> np.ndarray:
    if not 0 <= s < prob.n:
        raise ArgumentError(f"sample index {s} out of range")
    if prob.mode == FILTER:
        a = st.beta.T @ (st.W.T @ prob.X[:, s])
    else:
        a = st.beta.T @ st.H[:, s]
    if prob.q:
        a = a + st.gamma.T @ prob.X_aux[:, s]
    return a


def _nll_sum(prob: SdlProblem, act: np.ndarray) -> float:
    v = float(np.sum(classifier.batch_nll(prob.y, act, prob.h)))
    if not np.isfinite(v):
        raise NumericError("classification loss is not finite")
    return v


def l2_penalty(prob: SdlProblem, st: FactorState) -> float:
    if prob.mode == FILTER:
        core = st.W @ st.beta
    else:
        core = st.beta.T @ st.H
    return float(np.sum(core * core) + np.sum(st.gamma * st.gamma))


def loss_separate(prob: SdlProblem, st: FactorState) -> float:
    R = prob.X - st.W @ st.H
    val = _nll_sum(prob, activations(prob, st)) + prob.xi * float(np.sum(R * R))
    if prob.nu:
        val += prob.nu * l2_penalty(prob, st)
    if not np.isfinite(val):
        raise NumericError("loss is not finite")
    return val


def score_matrix(prob: SdlProblem, act: np.ndarray) -> np.ndarray:
    return classifier.batch_hdot(prob.y, act, prob.h)


def grad_blocks(prob: SdlProblem, st: FactorState) -> FactorState:
    X, Xa, W, H, beta, gamma = prob.X, prob.X_aux, st.W, st.H, st.beta, st.gamma
    K = score_matrix(prob, activations(prob, st))
    R = W @ H - X
    xi2 = 2.0 * prob.xi
    if prob.mode == FILTER:
        XK = X @ K.T
        gW = XK @ beta.T + xi2 * (R @ H.T)
        gb = W.T @ XK
        gH = xi2 * (W.T @ R)
    else:
        gW = xi2 * (R @ H.T)
        gb = H @ K.T
        gH = beta @ K + xi2 * (W.T @ R)
    gG = Xa @ K.T
    if prob.nu:
        nu2 = 2.0 * prob.nu
        if prob.mode == FILTER:
            Wb = W @ beta
            gW = gW + nu2 * (Wb @ beta.T)
            gb = gb + nu2 * (W.T @ Wb)
        else:
            bH = beta.T @ H
            gb = gb + nu2 * (H @ bH.T)
            gH = gH + nu2 * (beta @ bH)
        gG = gG + nu2 * gamma
    return FactorState(gW, gH, gb, gG)


def loss_and_grad(prob: SdlProblem, st: FactorState) -> tuple[float, FactorState]:
    return loss_separate(prob, st), grad_blocks(prob, st)


# ---------------------------------------------------------------- lifted variables

def lifted_activations(prob: SdlProblem, z: LiftedState) -> np.ndarray:
    act = z.A.T @ prob.X if prob.mode == FILTER else z.A.copy()
    if prob.q:
        act = act + z.gamma.T @ prob.X_aux
    return act


def lifted_penalty(prob: SdlProblem, z: LiftedState) -> float:
    if prob.mode == FILTER:
        return (frobenius_norm(z.A) + frobenius_norm(z.gamma)) ** 2
    return float(np.sum(z.A * z.A) + np.sum(z.gamma * z.gamma))


def loss_lifted(prob: SdlProblem, z: LiftedState) -> float:
    R = prob.X - z.B
    val = _nll_sum(prob, lifted_activations(prob, z)) + prob.xi * float(np.sum(R * R))
    if prob.nu:
        val += prob.nu * lifted_penalty(prob, z)
    if not np.isfinite(val):
        raise NumericError("loss is not finite")
    return val


def grad_lifted(prob: SdlProblem, z: LiftedState) -> LiftedState:
    K = score_matrix(prob, lifted_activations(prob, z))
    gA = prob.X @ K.T if prob.mode == FILTER else K
    gG = prob.X_aux @ K.T
    gB = 2.0 * prob.xi * (z.B - prob.X)
    if prob.nu:
        if prob.mode == FILTER:
            # d/dU of nu (||A|| + ||Gamma||)^2; the zero matrix gets the zero subgradient
            na, ng = frobenius_norm(z.A), frobenius_norm(z.gamma)
            c = 2.0 * prob.nu * (na + ng)
            if na > 0:
                gA = gA + (c / na) * z.A
            if ng > 0:
                gG = gG + (c / ng) * z.gamma
        else:
            gA = gA + 2.0 * prob.nu * z.A
            gG = gG + 2.0 * prob.nu * z.gamma
    return LiftedState(gA, gB, gG)


def lift(prob: SdlProblem, st: FactorState) -> LiftedState:
    """Lifted point corresponding to a factor state."""
    A = st.W @ st.beta if prob.mode == FILTER else st.beta.T @ st.H
    return LiftedState(A, st.W @ st.H, st.gamma.copy())


# ---------------------------------------------------------------- Hessian (verification scale)

MAX_HESSIAN_DIM = 2000


def _block_diag(blocks: np.ndarray) -> np.ndarray:
    n, k, _ = blocks.shape
    D = np.zeros((n * k, n * k))
    for s in range(n):
        D[s * k:(s + 1) * k, s * k:(s + 1) * k] = blocks[s]
    return D


def _fd_grad_jacobian(prob: SdlProblem, st: FactorState, step: float = 1e-5) -> np.ndarray:
    x0 = st.flat()
    cols = []
    for i in range(x0.size):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += step
        xm[i] -= step
        gp = grad_blocks(prob, FactorState.unflat(xp, prob)).flat()
        gm = grad_blocks(prob, FactorState.unflat(xm, prob)).flat()
        cols.append((gp - gm) / (2 * step))
    J = np.array(cols).T
    return 0.5 * (J + J.T)


def assemble_hessian_small(prob: SdlProblem, st: FactorState) -> np.ndarray:
    """Hessian of loss_separate over (vec W, vec H, vec beta, vec Gamma).

    Filter mode is assembled in closed form. The classifier enters through
    vec(act) = J_W vec(W) + J_b vec(beta) + J_G vec(Gamma) with

        J_W = (X^T kron beta^T) C(p, r)
        J_b = ((W^T X)^T kron I_kappa) C(r, kappa)
        J_G = (X_aux^T kron I_kappa) C(q, kappa)

    giving Gauss-Newton blocks J_i^T D J_j with D = blockdiag(Hddot_s), plus
    the bilinear W-beta term and the reconstruction/penalty terms. Feature
    mode assembles the diagonal blocks in closed form and fills the cross
    blocks by central differences of the analytic gradient.
    """
    check_state(prob, st)
    p, n, r, q, k = prob.p, prob.n, prob.rank, prob.q, prob.kappa
    sizes = [p * r, r * n, r * k, q * k]
    dim = sum(sizes)
    if dim > MAX_HESSIAN_DIM:
        raise ArgumentError(f"Hessian dimension {dim} exceeds {MAX_HESSIAN_DIM}")
    X, Xa, W, H, beta = prob.X, prob.X_aux, st.W, st.H, st.beta
    act = activations(prob, st)
    D = _block_diag(classifier.batch_hddot(prob.y, act, prob.h))
    xi2, nu2 = 2.0 * prob.xi, 2.0 * prob.nu
    I_p, I_k, I_r, I_n = np.eye(p), np.eye(k), np.eye(r), np.eye(n)
    off = np.concatenate([[0], np.cumsum(sizes)])
    sl = {name: slice(off[i], off[i + 1]) for i, name in enumerate(BLOCKS)}
    Hs = np.zeros((dim, dim))

    J_G = np.kron(Xa.T, I_k) @ commutation_matrix(q, k) if q else np.zeros((k * n, 0))
    gg = J_G.T @ D @ J_G + nu2 * np.eye(q * k)

    if prob.mode == FILTER:
        K = score_matrix(prob, act)
        J_W = np.kron(X.T, beta.T) @ commutation_matrix(p, r)
        J_b = np.kron((W.T @ X).T, I_k) @ commutation_matrix(r, k)
        C_rk = commutation_matrix(r, k)
        ww = J_W.T @ D @ J_W + xi2 * np.kron(H @ H.T, I_p) + nu2 * np.kron(beta @ beta.T, I_p)
        hh = xi2 * np.kron(I_n, W.T @ W)
        bb = J_b.T @ D @ J_b + nu2 * np.kron(I_k, W.T @ W)
        wb = (J_W.T @ D @ J_b + np.kron(I_r, X @ K.T) @ C_rk
              + nu2 * (np.kron(beta, W) + np.kron(I_r, W @ beta) @ C_rk))
        wh = xi2 * (np.kron(H, W) + np.kron(I_r, W @ H - X) @ commutation_matrix(r, n))
        wg = J_W.T @ D @ J_G
        bg = J_b.T @ D @ J_G
        Hs[sl["W"], sl["W"]] = ww
        Hs[sl["H"], sl["H"]] = hh
        Hs[sl["beta"], sl["beta"]] = bb
        Hs[sl["gamma"], sl["gamma"]] = gg
        for a, b, blk in (("W", "beta", wb), ("W", "H", wh), ("W", "gamma", wg), ("beta", "gamma", bg)):
            Hs[sl[a], sl[b]] = blk
            Hs[sl[b], sl[a]] = blk.T
        return Hs

    Hs[:, :] = _fd_grad_jacobian(prob, st)
    J_H = np.kron(I_n, beta.T)
    J_b = np.kron(H.T, I_k) @ commutation_matrix(r, k)
    Hs[sl["W"], sl["W"]] = xi2 * np.kron(H @ H.T, I_p)
    Hs[sl["H"], sl["H"]] = J_H.T @ D @ J_H + xi2 * np.kron(I_n, W.T @ W) + nu2 * np.kron(I_n, beta @ beta.T)
    Hs[sl["beta"], sl["beta"]] = J_b.T @ D @ J_b + nu2 * np.kron(I_k, H @ H.T)
    Hs[sl["gamma"], sl["gamma"]] = gg
    return Hs


def hessian_block(Hs: np.ndarray, prob: SdlProblem, row: str, col: str) -> np.ndarray:
    p, n, r, q, k = prob.p, prob.n, prob.rank, prob.q, prob.kappa
    sizes = [p * r, r * n, r * k, q * k]
    off = np.concatenate([[0], np.cumsum(sizes)])
    i, j = BLOCKS.index(row), BLOCKS.index(col)
    return Hs[off[i]:off[i + 1], off[j]:off[j + 1]]
