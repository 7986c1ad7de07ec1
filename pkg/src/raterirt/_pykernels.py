"""Pure-numpy implementations of the per-record likelihood kernels.

Every function here has an identically named twin in ``_ckernels.pyx``.
Arguments follow one convention:

eta : (R,) float64
    Linear predictor ``theta - delta - rho`` for each record.
grp : (R,) int64
    Threshold-group index of each record (a rater for the MFRM, an item
    for the PCM).
cumtau : (G, K) float64
    Cumulative thresholds, ``cumtau[g, c] = tau[g, 1] + ... + tau[g, c]``
    with ``cumtau[g, 0] = 0``.
y : (R, K) float64
    Target distribution over categories for each record. Rows sum to one;
    plain data is one-hot.
"""

import numpy as np


def _log_kernel(eta, grp, cumtau):
    k = cumtau.shape[1]
    a = eta[:, None] * np.arange(k, dtype=np.float64) - cumtau[grp]
    m = a.max(axis=1, keepdims=True)
    e = np.exp(a - m)
    z = e.sum(axis=1, keepdims=True)
    return a, e / z, (m + np.log(z))[:, 0]


def record_probs(eta, grp, cumtau):
    """Category probabilities, shape (R, K)."""
    return _log_kernel(eta, grp, cumtau)[1]


def record_terms(eta, grp, cumtau, y):
    """Per-record log-likelihood, score residual and score variance.

    Returns ``(ll, resid, var)`` where ``ll = sum_c y_c log P_c``,
    ``resid = E_y[c] - E_P[c]`` and ``var = Var_P[c]``.
    """
    a, p, logz = _log_kernel(eta, grp, cumtau)
    c = np.arange(cumtau.shape[1], dtype=np.float64)
    ll = (y * a).sum(axis=1) - logz
    ep = p @ c
    var = p @ (c * c) - ep * ep
    resid = y @ c - ep
    return ll, resid, np.maximum(var, 0.0)


def record_loglik(eta, grp, cumtau, y):
    a, _, logz = _log_kernel(eta, grp, cumtau)
    return (y * a).sum(axis=1) - logz


def tau_terms(eta, grp, cumtau, y, n_groups):
    """Group-summed log-likelihood, threshold gradient and information.

    Returns ``(ll, grad, info)`` with shapes (G,), (G, K-1), (G, K-1, K-1).
    ``grad[g, h-1]`` is the derivative with respect to ``tau[g, h]`` and
    ``info`` is the negated Hessian (a covariance matrix, so PSD).
    """
    a, p, logz = _log_kernel(eta, grp, cumtau)
    k = cumtau.shape[1]
    ll = np.bincount(grp, weights=(y * a).sum(axis=1) - logz, minlength=n_groups)
    # survival: S[:, h-1] = P(c >= h) for h = 1..K-1
    sp = np.cumsum(p[:, ::-1], axis=1)[:, ::-1][:, 1:]
    sy = np.cumsum(y[:, ::-1], axis=1)[:, ::-1][:, 1:]
    grad = np.zeros((n_groups, k - 1))
    np.add.at(grad, grp, sp - sy)
    idx = np.arange(k - 1)
    joint = sp[:, np.maximum.outer(idx, idx)]
    cov = joint - sp[:, :, None] * sp[:, None, :]
    info = np.zeros((n_groups, k - 1, k - 1))
    np.add.at(info, grp, cov)
    return ll, grad, info
