"""Adjacent-category (partial credit) likelihood for the MFRM and the PCM.

For output n, item i and rater j the log-odds of category k over k-1 is
``theta[n] - delta[i] - rho[j] - tau[j, k]``. The PCM drops ``rho`` and
indexes the thresholds by item instead of by rater. Thresholds are stored
as ``(groups, K-1)`` arrays: column ``h-1`` holds the threshold between
categories ``h-1`` and ``h`` (0-based categories).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .data import RatingDataset


@dataclass(frozen=True, eq=False)
class MfrmParams:
    theta: np.ndarray
    delta: np.ndarray
    rho: np.ndarray
    tau: np.ndarray

    def constraint_residuals(self) -> dict[str, float]:
        return {
            "sum_delta": float(abs(self.delta.sum())),
            "sum_rho": float(abs(self.rho.sum())),
            "max_abs_sum_tau": float(np.abs(self.tau.sum(axis=1)).max(initial=0.0)),
        }


@dataclass(frozen=True, eq=False)
class PcmParams:
    theta: np.ndarray
    delta: np.ndarray
    tau: np.ndarray

    def constraint_residuals(self) -> dict[str, float]:
        return {
            "sum_delta": float(abs(self.delta.sum())),
            "max_abs_sum_tau": float(np.abs(self.tau.sum(axis=1)).max(initial=0.0)),
        }


def cumulative_thresholds(tau: np.ndarray) -> np.ndarray:
    tau = np.atleast_2d(np.asarray(tau, dtype=np.float64))
    return np.ascontiguousarray(
        np.hstack([np.zeros((tau.shape[0], 1)), np.cumsum(tau, axis=1)])
    )


def category_probs(theta: float, delta: float, rho: float, tau_row) -> np.ndarray:
    """Probabilities of the K categories for one output/item/rater.

    ``tau_row`` has length K-1; the result has length K and sums to one.
    """
    tau_row = np.asarray(tau_row, dtype=np.float64).reshape(-1)
    k = tau_row.size + 1
    a = (theta - delta - rho) * np.arange(k) - np.concatenate([[0.0], np.cumsum(tau_row)])
    a -= a.max()
    p = np.exp(a)
    return p / p.sum()


def one_hot(dataset: RatingDataset) -> np.ndarray:
    y = np.zeros((len(dataset), dataset.scale.k_categories))
    y[np.arange(len(dataset)), dataset.category_index] = 1.0
    return y


def _check_dims(dataset: RatingDataset, params) -> None:
    k1 = dataset.scale.k_categories - 1
    problems = []
    if params.theta.shape != (dataset.n_outputs,):
        problems.append(f"theta {params.theta.shape} vs {dataset.n_outputs} outputs")
    if params.delta.shape != (dataset.n_items,):
        problems.append(f"delta {params.delta.shape} vs {dataset.n_items} items")
    if isinstance(params, MfrmParams):
        if params.rho.shape != (dataset.n_raters,):
            problems.append(f"rho {params.rho.shape} vs {dataset.n_raters} raters")
        want = (dataset.n_raters, k1)
    else:
        want = (dataset.n_items, k1)
    if params.tau.shape != want:
        problems.append(f"tau {params.tau.shape} vs {want}")
    if problems:
        raise ValueError("parameter dimensions do not match dataset: " + "; ".join(problems))


def _linear(dataset: RatingDataset, params) -> tuple[np.ndarray, np.ndarray]:
    eta = params.theta[dataset.output_index] - params.delta[dataset.item_index]
    if isinstance(params, MfrmParams):
        eta = eta - params.rho[dataset.rater_index]
        grp = dataset.rater_index
    else:
        grp = dataset.item_index
    return np.ascontiguousarray(eta, dtype=np.float64), np.ascontiguousarray(grp)


def record_probabilities(dataset: RatingDataset, params) -> np.ndarray:
    """Category probabilities for every record, shape (R, K)."""
    _check_dims(dataset, params)
    eta, grp = _linear(dataset, params)
    return _kernels.record_probs(eta, grp, cumulative_thresholds(params.tau))


def log_likelihood(dataset: RatingDataset, params) -> float:
    """Sum of log category probabilities of the observed ratings."""
    _check_dims(dataset, params)
    eta, grp = _linear(dataset, params)
    ll = _kernels.record_loglik(eta, grp, cumulative_thresholds(params.tau), one_hot(dataset))
    return float(ll.sum())


def gradient(dataset: RatingDataset, params):
    """Analytic gradient of :func:`log_likelihood`, same type as ``params``.

    The gradient is unconstrained: no projection onto the sum-to-zero
    surface is applied.
    """
    _check_dims(dataset, params)
    eta, grp = _linear(dataset, params)
    cum = cumulative_thresholds(params.tau)
    y = one_hot(dataset)
    _, resid, _ = _kernels.record_terms(eta, grp, cum, y)
    g_theta = np.bincount(dataset.output_index, resid, dataset.n_outputs)
    g_delta = -np.bincount(dataset.item_index, resid, dataset.n_items)
    _, g_tau, _ = _kernels.tau_terms(eta, grp, cum, y, params.tau.shape[0])
    if isinstance(params, MfrmParams):
        g_rho = -np.bincount(dataset.rater_index, resid, dataset.n_raters)
        return MfrmParams(g_theta, g_delta, g_rho, g_tau)
    return PcmParams(g_theta, g_delta, g_tau)
