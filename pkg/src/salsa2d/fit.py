"""Weighted Poisson regression on the log link.

The objective is the weighted log-pseudolikelihood

    l(beta) = sum_i w_i * (y_i * log(lambda_i) - lambda_i),
    lambda_i = exp(x_i . beta)

whose maximizer is found by Fisher scoring (IRLS) with step halving.
With the presence/pseudo-absence encoding (y = 1/w at presences, y = 0 at
quadrature points) this is the downweighted Poisson fit of a point-process
intensity surface.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .design import DesignMatrix
from .errors import AiccUndefinedError, NonConvergenceError, RankDeficiencyError

BIC = "bic"
AICC = "aicc"
LOG_PL = "log_pl"
CRITERIA = (BIC, AICC, LOG_PL)

MAX_ITERATIONS = 100
REL_TOL = 1e-8
GRAD_TOL = 1e-6
MAX_HALVINGS = 10
_PIVOT_RTOL = 1e-10


@dataclass
class FittedModel:
    """A converged (or flagged) weighted Poisson fit with its criteria."""

    coefficients: np.ndarray
    labels: list
    radial: list
    log_pl: float
    n_total: int
    n_params: int
    bic: float
    aicc: float | None
    coef_covariance: np.ndarray
    converged: bool
    iterations: int
    has_covariates: bool = False
    fitted_intensity: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_columns(self):
        return len(self.coefficients)

    def criterion(self, kind):
        """Value to *minimize* under the given criterion kind."""
        if kind == BIC:
            return self.bic
        if kind == AICC:
            if self.aicc is None:
                raise AiccUndefinedError(
                    f"AICc undefined: n_total={self.n_total} <= p+1={self.n_params + 1}"
                )
            return self.aicc
        if kind == LOG_PL:
            return -self.log_pl
        raise ValueError(f"unknown criterion {kind!r}")


def log_pseudolikelihood(x, beta, y, w):
    """Evaluate the weighted Poisson objective at ``beta``.

    Rows with y = 0 contribute exactly -w*lambda (0*log(lambda) is 0 by
    convention, which eta-space evaluation gives for free).
    """
    x = x.matrix if isinstance(x, DesignMatrix) else np.asarray(x, float)
    eta = x @ np.asarray(beta, float)
    with np.errstate(over="ignore"):
        lam = np.exp(eta)
    return float(np.sum(w * (y * eta - lam)))


def bic_value(log_pl, n_params, n_total):
    return -2.0 * log_pl + n_params * np.log(n_total)


def aicc_value(log_pl, n_params, n_total):
    if n_total <= n_params + 1:
        raise AiccUndefinedError(
            f"AICc undefined: n_total={n_total} <= p+1={n_params + 1}"
        )
    p = n_params
    return -2.0 * log_pl + 2.0 * p + 2.0 * p * (p + 1) / (n_total - p - 1)


def bic(model):
    """BIC recomputed from the stored (logPL, p, N)."""
    return bic_value(model.log_pl, model.n_params, model.n_total)


def aicc(model):
    """AICc recomputed from the stored (logPL, p, N)."""
    return aicc_value(model.log_pl, model.n_params, model.n_total)


def _diagnose_rank(xw, labels):
    _, r, piv = scipy.linalg.qr(xw, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = _PIVOT_RTOL * diag[0] if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < xw.shape[1]:
        dependent = sorted(piv[rank:])
        names = [labels[j] for j in dependent]
        raise RankDeficiencyError(
            f"rank-deficient design (rank {rank} of {xw.shape[1]}); "
            f"dependent columns: {', '.join(names)}",
            columns=list(dependent),
        )


def fit_weighted_poisson(design, y, w, beta_start=None, max_iter=MAX_ITERATIONS,
                         rel_tol=REL_TOL, grad_tol=GRAD_TOL):
    """Maximize the weighted Poisson log-pseudolikelihood by IRLS.

    Raises :class:`RankDeficiencyError` naming the dependent columns when
    the design is singular; divergence is reported via the model's
    ``converged`` flag rather than an exception, so searches can treat the
    candidate as infeasible.
    """
    x = design.matrix
    labels = design.labels
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n, p = x.shape
    if y.shape != (n,) or w.shape != (n,):
        raise ValueError("y and w must match the design row count")
    if np.any(y < 0):
        raise ValueError("responses must be non-negative")
    if np.any(w <= 0):
        raise ValueError("weights must be strictly positive")

    if beta_start is not None and len(beta_start) == p:
        beta = np.asarray(beta_start, dtype=np.float64).copy()
    else:
        beta = np.zeros(p)
        mean_rate = np.sum(w * y) / np.sum(w)
        beta[0] = np.log(max(mean_rate, 1e-300))

    eta = x @ beta
    lam = np.exp(np.minimum(eta, 700.0))
    ll = float(np.sum(w * (y * eta - lam)))
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        # Fisher scoring normal equations, formed without the working
        # response so rows with underflowed intensity stay finite
        wk = w * lam
        xtw = x.T * wk
        info = xtw @ x
        rhs = xtw @ eta + x.T @ (w * (y - lam))
        try:
            chol = scipy.linalg.cho_factor(info, check_finite=False)
            beta_new = scipy.linalg.cho_solve(chol, rhs, check_finite=False)
        except (scipy.linalg.LinAlgError, ValueError):
            _diagnose_rank(x * np.sqrt(wk)[:, None], labels)
            # full rank but numerically fragile weights: least-squares step
            beta_new, *_ = np.linalg.lstsq(info, rhs, rcond=None)

        step = beta_new - beta
        scale = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = beta + scale * step
            eta_new = x @ cand
            with np.errstate(over="ignore"):
                lam_new = np.exp(eta_new)
            if np.all(np.isfinite(lam_new)):
                ll_new = float(np.sum(w * (y * eta_new - lam_new)))
                if ll_new >= ll - 1e-12:
                    break
            scale *= 0.5
        else:
            break  # no acceptable step: stop with converged=False

        beta, eta, lam = cand, eta_new, lam_new
        delta, ll = ll_new - ll, ll_new
        grad = x.T @ (w * (y - lam))
        if abs(delta) <= rel_tol * (abs(ll) + 1e-10) and np.max(np.abs(grad)) <= grad_tol:
            converged = True
            break

    wk = w * lam
    info = (x.T * wk) @ x
    try:
        chol = scipy.linalg.cho_factor(info, check_finite=False)
        cov = scipy.linalg.cho_solve(chol, np.eye(p), check_finite=False)
    except (scipy.linalg.LinAlgError, ValueError):
        _diagnose_rank(x * np.sqrt(wk)[:, None], labels)
        cov = np.linalg.pinv(info)
    cov = 0.5 * (cov + cov.T)

    n_params = design.criterion_param_count()
    try:
        aicc_val = aicc_value(ll, n_params, n)
    except AiccUndefinedError:
        aicc_val = None
    return FittedModel(
        coefficients=beta,
        labels=list(labels),
        radial=list(design.radial),
        log_pl=ll,
        n_total=n,
        n_params=n_params,
        bic=bic_value(ll, n_params, n),
        aicc=aicc_val,
        coef_covariance=cov,
        converged=converged,
        iterations=iterations,
        has_covariates=design.has_covariates,
        fitted_intensity=lam,
    )


def predict_intensity(model, new_design):
    """Intensity (per km^2) at new rows built with the model's provenance."""
    if isinstance(new_design, DesignMatrix):
        if new_design.labels != model.labels:
            raise ValueError(
                "design columns do not match the fitted model: "
                f"{new_design.labels} vs {model.labels}"
            )
        x = new_design.matrix
    else:
        x = np.asarray(new_design, float)
        if x.shape[1] != model.n_columns:
            raise ValueError(
                f"expected {model.n_columns} columns, got {x.shape[1]}"
            )
    return np.exp(x @ model.coefficients)


def check_converged(model, context=""):
    if not model.converged:
        raise NonConvergenceError(
            f"IRLS did not converge after {model.iterations} iterations"
            + (f" ({context})" if context else "")
        )
    return model
