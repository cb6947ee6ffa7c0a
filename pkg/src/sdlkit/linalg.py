"""Dense matrix kernel: norms, SVD, rank-r and convex projections, Kronecker tools.

Matrices are plain float64 numpy arrays. ``vec`` is column-major stacking,
which is the convention the Kronecker identities below assume.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ArgumentError, NumericError


def as_matrix(M, name: str = "matrix") -> np.ndarray:
    """Return ``M`` as a finite 2-D float64 array or raise ArgumentError."""
    A = np.asarray(M, dtype=np.float64)
    if A.ndim != 2:
        raise ArgumentError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ArgumentError(f"{name} has non-finite entries")
    return np.ascontiguousarray(A)


def frobenius_norm(M) -> float:
    M = np.asarray(M, dtype=np.float64)
    return float(np.sqrt(np.sum(M * M)))


def vec(M) -> np.ndarray:
    return np.asarray(M, dtype=np.float64).reshape(-1, order="F")


def unvec(v, rows: int, cols: int) -> np.ndarray:
    return np.asarray(v, dtype=np.float64).reshape((rows, cols), order="F")


# ---------------------------------------------------------------- SVD

class SvdResult(NamedTuple):
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray


def _fix_signs(U: np.ndarray, V: np.ndarray) -> None:
    # largest-magnitude entry of each left vector made positive;
    # np.argmax returns the lowest index on ties
    for j in range(U.shape[1]):
        i = int(np.argmax(np.abs(U[:, j])))
        if U[i, j] < 0:
            U[:, j] *= -1.0
            V[:, j] *= -1.0


def svd_full(M) -> SvdResult:
    """Thin SVD with k = min(m, n) and a deterministic sign convention."""
    A = as_matrix(M)
    if min(A.shape) < 1:
        raise ArgumentError("svd of an empty matrix")
    try:
        U, s, Vt = np.linalg.svd(A, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD did not converge: {exc}") from exc
    U = np.ascontiguousarray(U)
    V = np.ascontiguousarray(Vt.T)
    _fix_signs(U, V)
    return SvdResult(U, s, V)


def svd_truncated(M, r: int) -> SvdResult:
    A = as_matrix(M)
    _check_rank(A, r)
    U, s, V = svd_full(A)
    return SvdResult(U[:, :r].copy(), s[:r].copy(), V[:, :r].copy())


def _check_rank(A: np.ndarray, r: int) -> None:
    if not (1 <= r <= min(A.shape)):
        raise ArgumentError(f"rank {r} outside [1, {min(A.shape)}] for shape {A.shape}")


def rank_r_project(M, r: int) -> np.ndarray:
    """Best rank-<=r approximation in Frobenius norm."""
    U, s, V = svd_truncated(M, r)
    return (U * s) @ V.T


# ---------------------------------------------------------------- convex sets

UNBOUNDED = "unbounded"
BALL = "ball"
NONNEG = "nonneg"
NONNEG_BALL = "nonneg_ball"
BOX = "box"

KINDS = (UNBOUNDED, BALL, NONNEG, NONNEG_BALL, BOX)


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    """A convex set with an exact Euclidean projection.

    ``radius`` is used by the ball kinds; ``lo``/``hi`` by ``box`` and may be
    scalars or arrays broadcastable to the block shape.
    """

    kind: str = UNBOUNDED
    radius: float = float("inf")
    lo: object = -np.inf
    hi: object = np.inf

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"unknown constraint kind {self.kind!r}")
        if self.kind in (BALL, NONNEG_BALL) and not (self.radius > 0 and np.isfinite(self.radius)):
            raise ArgumentError("ball radius must be positive and finite")
        if self.kind == BOX and np.any(np.asarray(self.lo) > np.asarray(self.hi)):
            raise ArgumentError("box requires lo <= hi")

    @classmethod
    def unbounded(cls):
        return cls(UNBOUNDED)

    @classmethod
    def ball(cls, radius: float):
        return cls(BALL, radius=float(radius))

    @classmethod
    def nonneg(cls):
        return cls(NONNEG)

    @classmethod
    def nonneg_ball(cls, radius: float):
        return cls(NONNEG_BALL, radius=float(radius))

    @classmethod
    def box(cls, lo, hi):
        return cls(BOX, lo=lo, hi=hi)

    @property
    def bounded_radius(self) -> float:
        """Radius used to scale random initializations (1 when unbounded)."""
        if self.kind in (BALL, NONNEG_BALL):
            return self.radius
        if self.kind == BOX:
            lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
            span = np.max(np.where(np.isfinite(hi - lo), hi - lo, 1.0))
            return float(span)
        return 1.0

    def contains(self, M, tol: float = 1e-12) -> bool:
        M = np.asarray(M, dtype=np.float64)
        if self.kind == UNBOUNDED:
            return True
        if self.kind == BALL:
            return frobenius_norm(M) <= self.radius * (1 + tol) + tol
        if self.kind == NONNEG:
            return bool(np.all(M >= -tol))
        if self.kind == NONNEG_BALL:
            return bool(np.all(M >= -tol)) and frobenius_norm(M) <= self.radius * (1 + tol) + tol
        return bool(np.all(M >= np.asarray(self.lo) - tol) and np.all(M <= np.asarray(self.hi) + tol))

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind in (BALL, NONNEG_BALL):
            d["radius"] = self.radius
        if self.kind == BOX:
            d["lo"] = np.asarray(self.lo).tolist()
            d["hi"] = np.asarray(self.hi).tolist()
        return d

    @classmethod
    def from_dict(cls, d) -> "ConstraintSpec":
        if d is None:
            return cls.unbounded()
        if isinstance(d, str):
            return cls(d)
        d = dict(d)
        kind = d.get("kind", UNBOUNDED)
        if kind in (BALL, NONNEG_BALL):
            return cls(kind, radius=float(d["radius"]))
        if kind == BOX:
            return cls(BOX, lo=d.get("lo", -np.inf), hi=d.get("hi", np.inf))
        return cls(kind)


def _scale_to_ball(M: np.ndarray, radius: float) -> np.ndarray:
    nrm = frobenius_norm(M)
    if nrm > radius:
        return M * (radius / nrm)
    return M


def project_constraint(M, c: ConstraintSpec) -> np.ndarray:
    """Euclidean projection of ``M`` onto the set described by ``c``."""
    M = np.asarray(M, dtype=np.float64)
    if c.kind == UNBOUNDED:
        return M.copy()
    if c.kind == BALL:
        return _scale_to_ball(M.copy(), c.radius)
    if c.kind == NONNEG:
        return np.maximum(M, 0.0)
    if c.kind == NONNEG_BALL:
        # exact: a cone intersected with an origin-centred ball
        return _scale_to_ball(np.maximum(M, 0.0), c.radius)
    return np.clip(M, c.lo, c.hi)


def project_ball_around(M, center, radius: float) -> np.ndarray:
    D = np.asarray(M, dtype=np.float64) - center
    nrm = frobenius_norm(D)
    if nrm > radius:
        D = D * (radius / nrm)
    return center + D


# ---------------------------------------------------------------- Kronecker

def kron(A, B) -> np.ndarray:
    return np.kron(np.asarray(A, dtype=np.float64), np.asarray(B, dtype=np.float64))


def commutation_matrix(a: int, b: int) -> np.ndarray:
    """C with C @ vec(M) = vec(M.T) for every a x b matrix M."""
    if a < 1 or b < 1:
        raise ArgumentError("commutation matrix needs a, b >= 1")
    C = np.zeros((a * b, a * b))
    # vec(M)[i + a*j] = M[i, j];  vec(M.T)[j + b*i] = M[i, j]
    i, j = np.meshgrid(np.arange(a), np.arange(b), indexing="ij")
    C[(j + b * i).ravel(), (i + a * j).ravel()] = 1.0
    return C
