"""Small datasets generated on demand from fixed seeds.

``tiny``
    20 x 60 filter-model data with a rank-2 signal, for smoke runs.
``well_conditioned``
    6 x 300 data with a clear rank-2 spectral gap. With xi = 1.5 n and
    nu = n the lifted filter objective passes the conditioning check.
``discrepancy``
    20 x 20 images, 1000 samples: a strong nonnegative signal on the left
    half and a weak label-carrying signal on the right half. Unsupervised
    rank-2 factorizations keep the left half and lose the labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError
from .generative import WEAK_FILTER, SemiSyntheticSpec, make_semisynthetic, make_weak_params, sample


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    kappa: int
    X_aux: np.ndarray | None = None
    suggested: dict = field(default_factory=dict)


def _tiny() -> Dataset:
    gp = make_weak_params(WEAK_FILTER, 20, 60, 2, kappa=1, sigma=0.1, seed=11, beta_scale=2.0)
    X, _, y = sample(gp, 12)
    return Dataset(X, y, 1, None, {"rank": 2, "xi": 1.0, "nu": 0.1})


def _well_conditioned() -> Dataset:
    rng = np.random.default_rng(3)
    p, n, r = 6, 300, 2
    W = np.linalg.qr(rng.standard_normal((p, r)))[0]
    X = 2.0 * W @ rng.standard_normal((r, n)) + 0.1 * rng.standard_normal((p, n))
    act = 0.3 * X.sum(axis=0)
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-act))).astype(np.int64)
    return Dataset(X, y, 1, None, {"rank": 2, "xi": 1.5 * n, "nu": float(n)})


def _discrepancy() -> Dataset:
    spec = SemiSyntheticSpec(p=400, n=1000, y_signal=True, normalize=True, act_scale=4.0)
    X, y, _ = make_semisynthetic(spec, seed=0)
    return Dataset(X, y, 1, None, {"rank": 2, "xi_grid": [0.1, 1.0, 5.0, 10.0]})


BUNDLED = {"tiny": _tiny, "well_conditioned": _well_conditioned, "discrepancy": _discrepancy}


def bundled(name: str) -> Dataset:
    try:
        return BUNDLED[name]()
    except KeyError:
        raise ArgumentError(f"unknown bundled dataset {name!r}; choose from {sorted(BUNDLED)}") from None
