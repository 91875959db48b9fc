"""Maximum-likelihood fitting, information criteria and loyalty-alpha calibration."""

from __future__ import annotations

import json
import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import CollinearityError, ConfigurationError, ConvergenceError, SeparationError
from .model import (
    Alternative, ChoiceModel, ModelSpec, OccasionSet, Variable, _check_inputs, _score_hessian,
    as_occasion_set, variant_spec,
)

log = logging.getLogger(__name__)

CHUNK = 8192            # occasions per shard; fixed so sums never depend on thread count
SEPARATION_BOUND = 50.0  # |beta| in scaled units
CERTIFY_BOUND = 5.0      # beyond this, look for a recession direction after convergence
THREADS_ENV = "PORTALCHOICE_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be an integer") from None


class _Evaluator:
    """Log-likelihood, score and Hessian over fixed shards, reduced in shard order."""

    def __init__(self, X, chosen, threads=1):
        self.X = X
        self.chosen = chosen
        self.bounds = [(a, min(a + CHUNK, X.shape[0])) for a in range(0, X.shape[0], CHUNK)]
        self.threads = max(1, int(threads))

    def _map(self, fn):
        if self.threads == 1 or len(self.bounds) == 1:
            return [fn(a, b) for a, b in self.bounds]
        with ThreadPoolExecutor(self.threads) as ex:
            return list(ex.map(lambda ab: fn(*ab), self.bounds))

    def loglik(self, beta) -> float:
        def part(a, b):
            u = self.X[a:b] @ beta
            m = u.max(axis=1, keepdims=True)
            lse = m[:, 0] + np.log(np.exp(u - m).sum(axis=1))
            return (u[np.arange(b - a), self.chosen[a:b]] - lse).tolist()
        terms = []
        for p in self._map(part):
            terms.extend(p)
        return math.fsum(terms)

    def derivatives(self, beta):
        parts = self._map(lambda a, b: _score_hessian(beta, self.X[a:b], self.chosen[a:b]))
        g = np.zeros(self.X.shape[2])
        H = np.zeros((self.X.shape[2],) * 2)
        for gi, Hi in parts:
            g += gi
            H += Hi
        return g, H


def _column_scales(X: np.ndarray) -> np.ndarray:
    """RMS within-occasion deviation of each column (the variation the logit sees)."""
    D = X - X.mean(axis=1, keepdims=True)
    return np.sqrt(np.einsum("njk,njk->k", D, D) / (X.shape[0] * X.shape[1]))


def _dependent_columns(H: np.ndarray, names) -> list[str]:
    w, V = np.linalg.eigh(-H)
    top = max(w.max(), 1e-300)
    null = V[:, w <= 1e-10 * top]
    if null.shape[1] == 0:
        return []
    weight = np.abs(null).max(axis=1)
    return [names[k] for k in np.flatnonzero(weight > 1e-3)]


def _recession_direction(X: np.ndarray, chosen: np.ndarray) -> np.ndarray | None:
    """A direction along which the likelihood never decreases and somewhere
    strictly increases, or None. Found by the LP
    max sum_ij (x_chosen - x_j).d  s.t. (x_chosen - x_j).d >= 0, |d| <= 1."""
    n, J, K = X.shape
    D = X[np.arange(n), chosen][:, None, :] - X
    mask = np.ones((n, J), bool)
    mask[np.arange(n), chosen] = False
    D = D[mask]
    D = D[np.abs(D).max(axis=1) > 0]
    if D.shape[0] == 0:
        return None
    res = optimize.linprog(-D.sum(axis=0), A_ub=-D, b_ub=np.zeros(D.shape[0]), bounds=[(-1, 1)] * K,
                           method="highs")
    if res.status != 0 or -res.fun <= 1e-9 * max(1.0, np.abs(D).sum()):
        return None
    return res.x


def fit_mle(occasions, spec: ModelSpec | None = None, tol: float = 1e-8, max_iter: int = 100,
            beta0=None, threads: int | None = None, alpha: float | None = None,
            fingerprint: str | None = None) -> ChoiceModel:
    """Newton-Raphson maximum likelihood with step halving.

    Columns are internally rescaled to unit within-occasion RMS; the
    convergence test is ``max |gradient| < tol`` in those units, and the
    separation bound applies there too. Reported beta and covariance are in
    the original units.
    """
    occ = as_occasion_set(occasions)
    if spec is not None and spec.names != occ.spec.names:
        occ = occ.select(spec)
    spec = occ.spec
    names = spec.names
    K = len(spec)
    if K == 0:
        raise ConfigurationError("spec has no variables")
    _check_inputs(np.zeros(K), occ.X, occ.household, occ.index)

    scales = _column_scales(occ.X)
    flat = [names[k] for k in range(K) if scales[k] == 0]
    if flat:
        raise CollinearityError(f"columns without variation across alternatives: {flat}", flat)
    Xs = occ.X / scales
    ev = _Evaluator(Xs, occ.chosen, default_threads() if threads is None else threads)

    _, H0 = ev.derivatives(np.zeros(K))
    dep = _dependent_columns(H0, names)
    if dep:
        raise CollinearityError(f"design is rank deficient; dependent columns: {dep}", dep)

    b = np.zeros(K) if beta0 is None else np.asarray(beta0, dtype=float) * scales
    ll = ev.loglik(b)
    trace = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g, H = ev.derivatives(b)
        gnorm = float(np.abs(g).max())
        trace.append({"iter": it - 1, "log_likelihood": ll, "grad_max": gnorm})
        if gnorm < tol:
            converged = True
            break
        try:
            step = np.linalg.solve(-H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(-H, g, rcond=None)[0]
        t = 1.0
        for _ in range(60):
            cand = b + t * step
            ll_c = ev.loglik(cand)
            if ll_c > ll:
                break
            # Near the optimum lnL stops resolving changes; keep going while the
            # new point is still uphill along the step.
            if ll_c >= ll - 1e-13 * abs(ll) and float(ev.derivatives(cand)[0] @ step) >= 0:
                break
            t *= 0.5
        else:
            raise ConvergenceError(f"line search failed at iteration {it} (max |gradient| {gnorm:.3g})",
                                   [r["grad_max"] for r in trace])
        b, ll = cand, ll_c
        big = np.flatnonzero(np.abs(b) > SEPARATION_BOUND)
        if big.size:
            cols = [names[k] for k in big]
            raise SeparationError(f"coefficients diverging (separation): {cols}", cols)
    if not converged:
        raise ConvergenceError(f"no convergence in {max_iter} iterations (max |gradient| {gnorm:.3g})",
                               [r["grad_max"] for r in trace])
    if np.abs(b).max() > CERTIFY_BOUND:
        d = _recession_direction(Xs, occ.chosen)
        if d is not None:
            cols = [names[k] for k in np.flatnonzero(np.abs(d) > 1e-9)]
            raise SeparationError(f"likelihood unbounded along a direction in {cols} (separation)", cols)

    _, H = ev.derivatives(b)
    try:
        cov_s = np.linalg.inv(-H)
    except np.linalg.LinAlgError:
        dep = _dependent_columns(H, names)
        raise CollinearityError(f"singular Hessian at the optimum; dependent columns: {dep}", dep) from None
    cov = cov_s / np.outer(scales, scales)
    cov = 0.5 * (cov + cov.T)
    return ChoiceModel(
        spec=spec, alternatives=occ.alternatives, beta=b / scales, covariance=cov, log_likelihood=ll,
        n_obs=occ.n, alpha=alpha, iterations=it - 1, trace=trace,
        scaling={"column_scales": dict(zip(names, scales.tolist()))}, fingerprint=fingerprint,
    )


def information_criteria(log_likelihood: float, n_params: int, n_obs: int) -> tuple[float, float]:
    if n_obs < 1:
        raise ConfigurationError("n_obs must be at least 1")
    return 2 * n_params - 2 * log_likelihood, n_params * math.log(n_obs) - 2 * log_likelihood


# -------------------------------------------------------------- model files

def model_to_dict(model: ChoiceModel) -> dict:
    se = model.se
    return {
        "spec": model.spec.to_dict(),
        "alternatives": [{"id": a.id, "label": a.label, "is_base": a.is_base} for a in model.alternatives],
        "coefficients": [{"name": n, "beta": float(b), "se": float(s)}
                         for n, b, s in zip(model.spec.names, model.beta, se)],
        "covariance": model.covariance.tolist(),
        "log_likelihood": model.log_likelihood,
        "aic": model.aic,
        "bic": model.bic,
        "n_obs": model.n_obs,
        "n_params": model.n_params,
        "alpha": model.alpha,
        "iterations": model.iterations,
        "scaling": model.scaling,
        "fingerprint": model.fingerprint,
    }


def save_model(model: ChoiceModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=1)
        fh.write("\n")


def load_model(path) -> ChoiceModel:
    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
    missing = {"spec", "alternatives", "coefficients", "covariance", "log_likelihood", "n_obs"} - set(d)
    if missing:
        raise ConfigurationError(f"{path}: not a model file (missing {sorted(missing)})")
    spec = ModelSpec.from_dict(d["spec"])
    beta = np.array([c["beta"] for c in d["coefficients"]], dtype=float)
    if [c["name"] for c in d["coefficients"]] != spec.names:
        raise ConfigurationError(f"{path}: coefficient names do not match the spec")
    return ChoiceModel(
        spec=spec, alternatives=tuple(Alternative(a["id"], a["label"], a["is_base"]) for a in d["alternatives"]),
        beta=beta, covariance=np.array(d["covariance"], dtype=float), log_likelihood=d["log_likelihood"],
        n_obs=d["n_obs"], alpha=d.get("alpha"), iterations=d.get("iterations", 0),
        scaling=d.get("scaling", {}), fingerprint=d.get("fingerprint"),
    )


# ------------------------------------------------------- alpha calibration

@dataclass
class AlphaCalibration:
    alpha: float
    kappa: float
    residual: float
    coefficients: list[float]
    profile_scale: bool = True
    warnings: list[str] = field(default_factory=list)
    model: ChoiceModel | None = None

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "kappa": self.kappa, "residual": self.residual,
                "lag_coefficients": self.coefficients, "profile_scale": self.profile_scale,
                "warnings": self.warnings}


def _geometric(alpha: float, L: int) -> np.ndarray:
    return (1.0 - alpha) * alpha ** np.arange(L)


def _objective(alpha: float, c: np.ndarray, profile_scale: bool) -> tuple[float, float]:
    w = _geometric(alpha, len(c))
    kappa = max(float(c @ w) / float(w @ w), 0.0) if profile_scale else 1.0
    r = c - kappa * w
    return float(r @ r), kappa


def calibrate_alpha_from_coefficients(c, profile_scale: bool = True, lo: float = 1e-4,
                                      hi: float = 1 - 1e-4) -> AlphaCalibration:
    """Least-squares fit of c_l ~ kappa (1 - alpha) alpha^(l-1).

    A grid brackets the minimum, then golden-section search refines it.
    kappa is profiled in closed form (or fixed at 1).
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 1 or len(c) < 2 or not np.all(np.isfinite(c)):
        raise ConfigurationError("need at least two finite lag coefficients")
    notes = []
    if np.any(c <= 0):
        notes.append("non-positive lag coefficient(s)")
    if np.any(np.diff(c) > 0):
        notes.append("lag coefficients are not monotonically decreasing")
    f = lambda a: _objective(a, c, profile_scale)[0]
    grid = np.linspace(lo, hi, 999)
    vals = np.array([f(a) for a in grid])
    k = int(np.argmin(vals))
    if 0 < k < len(grid) - 1:
        res = optimize.minimize_scalar(f, bracket=(grid[k - 1], grid[k], grid[k + 1]), method="golden",
                                       options={"xtol": 1e-12})
        a_hat = float(res.x)
        if not lo <= a_hat <= hi:
            a_hat = float(grid[k])
    else:
        a_hat = float(grid[k])
    if a_hat <= grid[1] or a_hat >= grid[-2]:
        notes.append(f"alpha estimate at the search boundary ({a_hat:.4f})")
    resid, kappa = _objective(a_hat, c, profile_scale)
    for n in notes:
        warnings.warn(f"alpha calibration: {n}", RuntimeWarning, stacklevel=2)
    return AlphaCalibration(a_hat, kappa, resid, c.tolist(), profile_scale, notes)


def lag_spec(spec: ModelSpec, lags: int = 10) -> ModelSpec:
    """``spec`` with loyalty (and its interaction) replaced by portsame lags 1..lags."""
    vs = [v for v in spec.variables if v.tag not in ("portsame_lag", "media_x_loyalty")]
    lag_vars = [Variable("portsame_lag", lag=l) for l in range(1, lags + 1)]
    out = []
    for v in vs:
        out.extend(lag_vars if v.tag == "loyalty" else [v])
    if not any(v.tag == "loyalty" for v in vs):
        out = lag_vars + out
    return ModelSpec(tuple(out))


def calibrate_alpha(occasions: OccasionSet, spec: ModelSpec | None = None, lags: int = 10,
                    profile_scale: bool = True, threads: int | None = None) -> AlphaCalibration:
    """Fit ``spec`` with lag dummies in place of loyalty, then match their
    coefficients to the geometric loyalty weights."""
    occ = as_occasion_set(occasions)
    spec = spec or variant_spec(2, occ.alternatives)
    lspec = lag_spec(spec, lags)
    missing = [n for n in lspec.names if n not in occ.spec.names]
    if missing:
        raise ConfigurationError(f"occasions lack columns {missing}; featurize with portsame lags 1..{lags}")
    model = fit_mle(occ, lspec, threads=threads)
    c = [model.coef(f"portsame_lag_{l}") for l in range(1, lags + 1)]
    cal = calibrate_alpha_from_coefficients(c, profile_scale)
    cal.model = model
    return cal
