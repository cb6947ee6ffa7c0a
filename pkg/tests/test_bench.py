import numpy as np
import pytest

from sdlkit import ArgumentError
from sdlkit.bench import (PARETO_HEADER, ConsistencySettings, ModelSettings, best_row, fit_logistic, fit_model,
                          loglog_slope, nmf_hals, replicate_seeds, run_consistency, run_curves, run_pareto,
                          split_indices)
from sdlkit.classifier import batch_hdot
from sdlkit.datasets import bundled
from sdlkit.metrics import relative_recon


def test_nmf_hals_nonneg_and_fits_low_rank():
    rng = np.random.default_rng(0)
    X = rng.random((10, 2)) @ rng.random((2, 30))
    W, H = nmf_hals(X, 2, iters=300, seed=1)
    assert W.min() >= 0 and H.min() >= 0
    assert relative_recon(X, W, H) < 1e-6
    W2, H2 = nmf_hals(X, 2, iters=300, seed=1)
    assert np.array_equal(W, W2) and np.array_equal(H, H2)


def test_logistic_fit_is_stationary():
    rng = np.random.default_rng(2)
    F = rng.standard_normal((3, 200))
    y = (rng.random(200) < 1 / (1 + np.exp(-(F[0] - F[1])))).astype(int)
    l2 = 1e-4
    model = fit_logistic(F, y, 1, l2=l2, standardize=False)
    K = batch_hdot(y, model.activations(F))
    g = F @ K.T / 200 + 2 * l2 * model.coef
    assert np.abs(g).max() < 1e-6 and np.abs(K.sum(axis=1) / 200).max() < 1e-6
    assert (model.predict(F) == y).mean() > 0.6


def test_logistic_standardization_does_not_change_predictions_much():
    rng = np.random.default_rng(3)
    F = rng.standard_normal((2, 300)) * np.array([[100.0], [0.01]])
    y = (F[0] / 100 + F[1] / 0.01 > 0).astype(int)
    model = fit_logistic(F, y, 1)
    assert (model.predict(F) == y).mean() > 0.95


def test_multiclass_logistic():
    rng = np.random.default_rng(4)
    centers = np.array([[0, 0], [4, 0], [0, 4]]).T
    y = rng.integers(0, 3, 300)
    F = centers[:, y] + 0.5 * rng.standard_normal((2, 300))
    assert (fit_logistic(F, y, 2).predict(F) == y).mean() > 0.95


def test_split_indices():
    tr, te = split_indices(50, 7)
    assert len(te) == 10 and len(tr) == 40
    assert set(tr).isdisjoint(te) and set(tr) | set(te) == set(range(50))
    assert np.array_equal(split_indices(50, 7)[1], te)


def test_replicate_seeds_are_xor():
    assert replicate_seeds(6, 4) == [6, 7, 4, 5]


@pytest.mark.parametrize("solver", ["conv-filt", "conv-feat", "bcd-filt", "bcd-feat"])
def test_fit_model_every_solver(solver):
    d = bundled("tiny")
    prob, st_, rep = fit_model(d.X, d.y, ModelSettings(solver=solver, iters=10, xi=1.0, nu=0.1), seed=3)
    assert prob.mode == ("filter" if solver.endswith("filt") else "feature")
    assert len(rep.records) == 10 and np.isfinite(rep.losses).all()
    assert st_.W.shape == (20, 2)
    with pytest.raises(ArgumentError):
        fit_model(d.X, d.y, ModelSettings(solver="sgd"))


def _small_pareto(workers=1):
    d = bundled("tiny")
    ms = ModelSettings(solver="bcd-filt", iters=5, nu=0.1)
    return run_pareto(d.X, d.y, ms, methods=("lr", "nmf-lr", "bcd-filt"), xis=(0.5, 2.0), seeds=3, seed=1,
                      workers=workers)


def test_pareto_table_shape_and_baselines():
    rows = _small_pareto()
    assert len(rows) == 3 * 2
    assert all(len(r) == len(PARETO_HEADER) for r in rows)
    lr = [r for r in rows if r[0] == "lr"]
    assert all(r[2] == 1.0 and r[3] == 0.0 for r in lr)
    # baselines ignore xi
    nmf = [r for r in rows if r[0] == "nmf-lr"]
    assert nmf[0][2:8] == nmf[1][2:8]
    for r in rows:
        assert 0 <= r[4] <= 1 and 0 <= r[6] <= 1 and r[8] == 1


def test_pareto_independent_of_worker_count():
    assert _small_pareto(1) == _small_pareto(3)


def test_best_row():
    rows = [("a", 1.0, 0.5, 0, 0.7, 0, 0, 0, 0), ("a", 2.0, 0.9, 0, 0.8, 0, 0, 0, 0),
            ("b", 1.0, 0.1, 0, 0.99, 0, 0, 0, 0)]
    assert best_row(rows, "a")[1] == 2.0
    assert best_row(rows, "a", recon_cap=0.6)[1] == 1.0
    assert best_row(rows, "c") is None


def test_curves_rows():
    d = bundled("tiny")
    rows = run_curves(d.X, d.y, ModelSettings(iters=4, nu=0.1), solvers=("bcd-filt", "conv-filt"), xis=(1.0,))
    assert len(rows) == 8
    assert [r[2] for r in rows] == [1, 2, 3, 4] * 2
    assert all(r[-1] == 0.0 for r in rows)


def test_loglog_slope_exact_power_law():
    ns = np.array([100, 400, 1600])
    assert abs(loglog_slope(ns, 3.0 * ns ** -0.5) + 0.5) < 1e-12


def test_consistency_small_grid():
    cs = ConsistencySettings(n_grid=(100, 400), seeds=2)
    rows, slope = run_consistency(cs, seed=0)
    assert [r[0] for r in rows] == [100, 400]
    assert all(len(r) == 7 for r in rows)
    assert np.isfinite(slope)
    assert run_consistency(cs, seed=0) == (rows, slope)
    with pytest.raises(ArgumentError):
        run_consistency(ConsistencySettings(n_grid=(100,)))
    with pytest.raises(ArgumentError):
        run_consistency(ConsistencySettings(error="l1"))
