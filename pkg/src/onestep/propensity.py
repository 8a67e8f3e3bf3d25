"""Logistic models and classical two-step weights.

Two-step weights multiply inverted estimates of the study-selection
probability ``pi(x)`` and the treatment probability ``e(x)``:

* generalization: ``1 / (pi * e)`` for treated and ``1 / (pi * (1 - e))``
  for controls;
* transportation: the same with an extra factor ``(1 - pi)`` (inverse odds).

Each group's weights are then normalized to sum to one (Hajek form).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

PROB_CLIP = 1e-6


class ConvergenceError(RuntimeError):
    """A logistic fit did not converge (typically because of separation)."""

    def __init__(self, message, model=None):
        super().__init__(message)
        self.model = model


@dataclass
class LogisticModel:
    coefficients: np.ndarray  # intercept first
    converged: bool
    final_gradient_norm: float
    iterations: int
    separation: bool = False
    message: str = ""

    def predict(self, X) -> np.ndarray:
        return predict_prob(self, X)


def _design(X, n):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != n:
        raise ValueError("X and y have different numbers of rows")
    return X


def fit_logistic(
    X,
    y,
    max_iter: int = 100,
    gtol: float = 1e-8,
    coef_cap: float = 30.0,
) -> LogisticModel:
    """Maximum-likelihood logistic regression with an intercept.

    Newton-Raphson (IRLS) with step halving, run on internally standardized
    covariates. Convergence means the max-norm of the mean log-likelihood
    gradient, in the original parametrization, is at most ``gtol``. If the
    standardized coefficient vector grows past ``coef_cap`` the data are
    treated as separated and an unconverged model is returned.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    X = _design(X, n)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("response must be 0/1")
    if y.min() == y.max():
        raise ValueError("response has a single class; logistic fit is undefined")
    p = X.shape[1]
    if n < p + 1:
        raise ValueError(f"need at least {p + 1} rows for {p} covariates plus intercept")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    for j in range(p):
        if sd[j] <= 1e-12 * max(1.0, abs(mu[j])):
            raise ValueError(f"covariate column {j} is constant (collinear with the intercept)")
    Xs = np.column_stack([np.ones(n), (X - mu) / sd])
    rank = np.linalg.matrix_rank(Xs)
    if rank < p + 1:
        for j in range(2, p + 2):
            if np.linalg.matrix_rank(Xs[:, :j]) < j:
                raise ValueError(f"design is rank deficient at covariate column {j - 2}")
    Xo = np.column_stack([np.ones(n), X])

    def loglik(b):
        eta = Xs @ b
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)))

    def to_original(b):
        slope = b[1:] / sd
        return np.concatenate([[b[0] - slope @ mu], slope])

    def grad_norm(b):
        pr = expit(Xs @ b)
        return float(np.max(np.abs(Xo.T @ (y - pr)) / n))

    beta = np.zeros(p + 1)
    ll = loglik(beta)
    it = 0
    g = grad_norm(beta)
    while it < max_iter and g > gtol:
        it += 1
        pr = expit(Xs @ beta)
        wts = pr * (1.0 - pr)
        H = Xs.T @ (Xs * wts[:, None])
        score = Xs.T @ (y - pr)
        try:
            step = np.linalg.solve(H, score)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, score, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta + t * step
            ll_new = loglik(cand)
            if ll_new >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t *= 0.5
        beta, ll = cand, ll_new
        g = grad_norm(beta)
        if np.linalg.norm(beta) > coef_cap:
            return LogisticModel(
                to_original(beta), False, g, it, separation=True,
                message="coefficients diverging; data appear (quasi-)separated",
            )
    converged = g <= gtol
    return LogisticModel(
        to_original(beta), converged, g, it,
        message="" if converged else "iteration limit reached",
    )


def predict_prob(model: LogisticModel, X) -> np.ndarray:
    """Fitted probabilities ``expit(b0 + X @ b)``."""
    b = np.asarray(model.coefficients, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None] if b.size == 2 else X[None, :]
    if X.shape[1] != b.size - 1:
        raise ValueError(f"model has {b.size - 1} covariates, X has {X.shape[1]} columns")
    return expit(b[0] + X @ b[1:])


@dataclass
class TwoStepWeights:
    treated_weights: np.ndarray
    control_weights: np.ndarray
    treated_rows: np.ndarray
    control_rows: np.ndarray
    mode: str
    selection_model: LogisticModel | None = None
    treatment_model: LogisticModel | None = None


def _normalize(raw):
    return raw / raw.sum()


def two_step_weights(
    selection,
    treatment,
    selection_covariates=None,
    treatment_covariates=None,
    known_e: float | None = None,
    mode: str = "generalize",
    pi=None,
) -> TwoStepWeights:
    """Inverse-probability (or inverse-odds) weights for a nested cohort.

    Parameters
    ----------
    selection : (n,) 0/1 array
        Study-selection indicator over the whole cohort.
    treatment : (n,) array
        Treatment indicator; only read on selected rows.
    selection_covariates : (n, p) array
        Covariates for the selection model, fitted on all cohort rows.
    treatment_covariates : (n, q) array, optional
        Covariates for the treatment model, fitted on selected rows. Leave
        ``None`` and pass ``known_e`` in a randomized study.
    known_e : float, optional
        Known constant treatment probability.
    mode : {"generalize", "transport"}
    pi : (n,) array, optional
        Known selection probabilities; skips the selection model.
    """
    if mode not in ("generalize", "transport"):
        raise ValueError(f"unknown mode {mode!r}")
    d = np.asarray(selection, dtype=float)
    z = np.asarray(treatment, dtype=float)
    sel = d == 1
    smodel = tmodel = None
    if pi is None:
        if selection_covariates is None:
            raise ValueError("need selection covariates or known selection probabilities")
        smodel = fit_logistic(selection_covariates, d)
        if not smodel.converged:
            raise ConvergenceError(f"selection model: {smodel.message}", smodel)
        pi = predict_prob(smodel, selection_covariates)
    pi = np.clip(np.asarray(pi, dtype=float), PROB_CLIP, 1 - PROB_CLIP)
    if known_e is not None:
        e = np.full(d.size, float(known_e))
    else:
        if treatment_covariates is None:
            raise ValueError("need treatment covariates or a known treatment probability")
        Xt = np.asarray(treatment_covariates, dtype=float)
        if Xt.ndim == 1:
            Xt = Xt[:, None]
        tmodel = fit_logistic(Xt[sel], z[sel])
        if not tmodel.converged:
            raise ConvergenceError(f"treatment model: {tmodel.message}", tmodel)
        e = np.full(d.size, np.nan)
        e[sel] = predict_prob(tmodel, Xt[sel])
    e = np.clip(e, PROB_CLIP, 1 - PROB_CLIP)
    odds = (1.0 - pi) if mode == "transport" else np.ones_like(pi)
    t_rows = np.flatnonzero(sel & (z == 1))
    c_rows = np.flatnonzero(sel & (z == 0))
    raw_t = odds[t_rows] / (pi[t_rows] * e[t_rows])
    raw_c = odds[c_rows] / (pi[c_rows] * (1.0 - e[c_rows]))
    if not (np.isfinite(raw_t).all() and np.isfinite(raw_c).all()):
        raise ValueError("non-finite two-step weights")
    return TwoStepWeights(
        _normalize(raw_t), _normalize(raw_c), t_rows, c_rows, mode, smodel, tmodel
    )
