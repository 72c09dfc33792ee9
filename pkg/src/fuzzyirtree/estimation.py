"""Marginal maximum-likelihood fitting of response-tree models.

Ratings are expanded into node-wise Bernoulli pseudo-observations; the
Gaussian random effect per rater is integrated out with a Laplace
approximation around the per-rater joint-likelihood mode, and the fixed
effects plus covariance parameters are maximized by L-BFGS-B over the
resulting marginal log-likelihood.
"""
from __future__ import annotations

import json
import warnings as _warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import approx_fprime, minimize
from scipy.special import expit

from .tree import ResponseTree

LOG_2PI = float(np.log(2.0 * np.pi))
INNER_TOL = 1e-8
INNER_MAX_ITER = 100
ALPHA_BOUND = 15.0
SE_REL_STEP = 1e-4

TRAIT_DESIGNS = ("common", "per-node")
ITEM_DESIGNS = ("common", "per-node")
COVARIANCES = ("scalar", "diagonal", "unstructured")


class EstimationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RatingMatrix:
    """I x J matrix of crisp ratings with categories 1..M."""

    values: np.ndarray
    M: int

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.size == 0:
            raise ValueError("ratings must be a non-empty I x J matrix")
        if not np.issubdtype(v.dtype, np.integer):
            if not np.all(v == np.round(v)):
                raise ValueError("ratings must be integers")
            v = v.astype(int)
        if v.min() < 1 or v.max() > self.M:
            raise ValueError(f"ratings must lie in 1..{self.M}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def I(self) -> int:
        return self.values.shape[0]

    @property
    def J(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ModelSpec:
    """What to estimate: tree plus trait/item designs and covariance shape."""

    tree: ResponseTree
    trait_design: str = "common"
    item_design: str = "common"
    covariance: str = "scalar"

    def __post_init__(self):
        if self.trait_design not in TRAIT_DESIGNS:
            raise ValueError(f"trait_design must be one of {TRAIT_DESIGNS}")
        if self.item_design not in ITEM_DESIGNS:
            raise ValueError(f"item_design must be one of {ITEM_DESIGNS}")
        if self.covariance not in COVARIANCES:
            raise ValueError(f"covariance must be one of {COVARIANCES}")
        if self.trait_design == "common" and self.covariance != "scalar":
            raise ValueError("a common trait design forces the scalar covariance")

    @property
    def re_dim(self) -> int:
        """Dimension of the per-rater random effect."""
        return 1 if self.trait_design == "common" else self.tree.N


class PseudoObservation(NamedTuple):
    rater: int
    item: int
    node: int
    z: int


@dataclass(frozen=True)
class PseudoData:
    """Array-of-columns form of the expanded Bernoulli pseudo-observations."""

    rater: np.ndarray
    item: np.ndarray
    node: np.ndarray
    z: np.ndarray
    I: int
    J: int
    N: int

    @classmethod
    def from_ratings(cls, data: RatingMatrix, tree: ResponseTree) -> "PseudoData":
        if data.M > tree.M:
            raise ValueError(
                f"data has {data.M} categories but the tree supports {tree.M}"
            )
        rows = tree.map[data.values - 1]  # (I, J, N)
        mask = ~np.isnan(rows)
        i_idx, j_idx, n_idx = np.nonzero(mask)
        return cls(
            rater=i_idx,
            item=j_idx,
            node=n_idx,
            z=rows[mask],
            I=data.I,
            J=data.J,
            N=tree.N,
        )

    def __len__(self):
        return self.rater.size


def expand_to_pseudo_data(data: RatingMatrix, tree: ResponseTree):
    """One PseudoObservation per (rater, item, on-path node)."""
    pd = PseudoData.from_ratings(data, tree)
    return [
        PseudoObservation(int(i), int(j), int(n), int(z))
        for i, j, n, z in zip(pd.rater, pd.item, pd.node, pd.z)
    ]


def _cov_inverse(sigma):
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as e:
        raise ValueError("covariance must be positive definite") from e
    inv = np.linalg.inv(sigma)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return sigma, inv, logdet


def _records_arrays(records):
    if isinstance(records, PseudoData):
        return records.item, records.node, records.z
    item = np.array([r.item for r in records], dtype=int)
    node = np.array([r.node for r in records], dtype=int)
    z = np.array([r.z for r in records], dtype=float)
    return item, node, z


def joint_loglik(alpha, sigma, eta_i, records, trait_design="common"):
    """Joint log-likelihood of one rater: Bernoulli terms plus Gaussian prior.

    Returns (value, gradient, Hessian), the latter two with respect to the
    rater's random effect. Both are analytic; the Hessian is negative
    definite everywhere.
    """
    eta = np.atleast_1d(np.asarray(eta_i, dtype=float))
    d = eta.size
    sigma, sinv, logdet = _cov_inverse(sigma)
    if sigma.shape != (d, d):
        raise ValueError(f"covariance must be {d}x{d}")
    item, node, z = _records_arrays(records)
    alpha = np.asarray(alpha, dtype=float)
    alpha_rec = alpha[item] if alpha.ndim == 1 else alpha[item, node]
    re_node = node if trait_design == "per-node" else np.zeros(len(node), dtype=int)
    lp = eta[re_node] + alpha_rec if len(z) else np.zeros(0)
    p = expit(lp)
    value = float(np.sum(z * lp - np.logaddexp(0.0, lp)))
    value += -0.5 * d * LOG_2PI - 0.5 * logdet - 0.5 * float(eta @ sinv @ eta)
    grad = np.bincount(re_node, weights=z - p, minlength=d) - sinv @ eta
    w = np.bincount(re_node, weights=p * (1.0 - p), minlength=d)
    hess = -np.diag(w) - sinv
    return value, grad, hess


def _solve_modes(alpha_rec, pseudo, re_node, d, sinv, logdet_sigma, eta0=None):
    """Vectorized per-rater Newton maximization of the joint log-likelihood.

    Returns (eta (I,d), neg_hess (I,d,d), per-rater joint values). Raises
    EstimationError if any rater fails to converge.
    """
    n_raters = pseudo.I
    z, rater = pseudo.z, pseudo.rater
    flat = rater * d + re_node
    size = n_raters * d
    eta = np.zeros((n_raters, d)) if eta0 is None else eta0.copy()
    prior_const = -0.5 * d * LOG_2PI - 0.5 * logdet_sigma

    def per_rater_value(e):
        lp = e[rater, re_node] + alpha_rec
        ll = np.bincount(rater, weights=z * lp - np.logaddexp(0.0, lp), minlength=n_raters)
        quad = np.einsum("id,de,ie->i", e, sinv, e)
        return ll - 0.5 * quad + prior_const

    f_cur = per_rater_value(eta)
    neg_hess = None
    for _ in range(INNER_MAX_ITER):
        lp = eta[rater, re_node] + alpha_rec
        p = expit(lp)
        grad = np.bincount(flat, weights=z - p, minlength=size).reshape(n_raters, d)
        grad -= eta @ sinv
        gmax = np.abs(grad).max(axis=1)
        w = np.bincount(flat, weights=p * (1.0 - p), minlength=size).reshape(n_raters, d)
        neg_hess = np.broadcast_to(sinv, (n_raters, d, d)).copy()
        idx = np.arange(d)
        neg_hess[:, idx, idx] += w
        if gmax.max() < INNER_TOL:
            return eta, neg_hess, f_cur
        step = np.linalg.solve(neg_hess, grad[..., None])[..., 0]
        scale = np.ones(n_raters)
        for _ in range(50):
            cand = eta + scale[:, None] * step
            f_new = per_rater_value(cand)
            worse = f_new < f_cur - 1e-12
            if not worse.any():
                break
            scale[worse] *= 0.5
        eta = eta + scale[:, None] * step
        f_cur = per_rater_value(eta)
    lp = eta[rater, re_node] + alpha_rec
    p = expit(lp)
    grad = np.bincount(flat, weights=z - p, minlength=size).reshape(n_raters, d)
    grad -= eta @ sinv
    bad = int(np.abs(grad).max(axis=1).argmax())
    raise EstimationError(
        f"inner Newton failed to converge for rater {bad} "
        f"(gradient norm {np.abs(grad[bad]).max():.3g})"
    )


def laplace_marginal_loglik(alpha, sigma, pseudo, trait_design="common", _modes=None):
    """Laplace-approximated marginal log-likelihood, summed over raters.

    For each rater: joint value at the mode + (d/2) log(2 pi)
    - 1/2 log det(-Hessian at the mode).
    """
    if not isinstance(pseudo, PseudoData):
        raise TypeError("pseudo must be a PseudoData (see PseudoData.from_ratings)")
    sigma, sinv, logdet = _cov_inverse(sigma)
    d = sigma.shape[0]
    alpha = np.asarray(alpha, dtype=float)
    alpha_rec = (
        alpha[pseudo.item] if alpha.ndim == 1 else alpha[pseudo.item, pseudo.node]
    )
    re_node = (
        pseudo.node if trait_design == "per-node" else np.zeros(len(pseudo), dtype=int)
    )
    eta, neg_hess, values = _solve_modes(alpha_rec, pseudo, re_node, d, sinv, logdet)
    if _modes is not None:
        _modes["eta"] = eta
    if d == 1:
        logdet_h = np.log(neg_hess[:, 0, 0])
    else:
        _, logdet_h = np.linalg.slogdet(neg_hess)
    return float(np.sum(values + 0.5 * d * LOG_2PI - 0.5 * logdet_h))


@dataclass
class FitOptions:
    max_iter: int = 500
    tol: float = 1e-5
    start: np.ndarray | None = None
    compute_se: bool = True


@dataclass
class FitResult:
    alpha_hat: np.ndarray          # (J, 1) common items, (J, N) per-node
    sigma_hat: np.ndarray          # (d, d) random-effect covariance
    eta_hat: np.ndarray            # (I, N) posterior modes, expanded
    log_marginal_lik: float
    se_alpha: np.ndarray | None
    converged: bool
    iterations: int
    model: object
    tree_digest: str
    warnings: list = field(default_factory=list)
    x: np.ndarray | None = None    # packed optimum (alpha params + cov params)


def _n_cov_params(spec: ModelSpec) -> int:
    d = spec.re_dim
    if spec.covariance == "scalar":
        return 1
    if spec.covariance == "diagonal":
        return d
    return d * (d + 1) // 2


def _unpack_cov(theta, spec: ModelSpec) -> np.ndarray:
    d = spec.re_dim
    if spec.covariance == "scalar":
        return np.exp(2.0 * theta[0]) * np.eye(d)
    if spec.covariance == "diagonal":
        return np.diag(np.exp(2.0 * theta))
    low = np.zeros((d, d))
    k = 0
    for i in range(d):
        for j in range(i + 1):
            low[i, j] = np.exp(theta[k]) if i == j else theta[k]
            k += 1
    return low @ low.T


def _pack(alpha_params, cov_params):
    return np.concatenate([np.ravel(alpha_params), np.ravel(cov_params)])


def _alpha_matrix(alpha_params, spec: ModelSpec, n_items: int) -> np.ndarray:
    if spec.item_design == "common":
        return np.asarray(alpha_params).reshape(n_items, 1)
    return np.asarray(alpha_params).reshape(n_items, spec.tree.N)


def _start_values(pseudo: PseudoData, spec: ModelSpec) -> np.ndarray:
    """Empirical-logit starting values for the fixed effects, identity cov."""
    if spec.item_design == "common":
        num = np.bincount(pseudo.item, weights=pseudo.z, minlength=pseudo.J)
        den = np.bincount(pseudo.item, minlength=pseudo.J)
    else:
        flat = pseudo.item * pseudo.N + pseudo.node
        size = pseudo.J * pseudo.N
        num = np.bincount(flat, weights=pseudo.z, minlength=size)
        den = np.bincount(flat, minlength=size)
    p = np.where(den > 0, num / np.maximum(den, 1), 0.5)
    p = np.clip(p, 1e-6, 1 - 1e-6)
    logit = np.clip(np.log(p / (1.0 - p)), -3.0, 3.0)
    return _pack(logit, np.zeros(_n_cov_params(spec)))


def _separation_warnings(pseudo: PseudoData, tree: ResponseTree) -> list:
    out = []
    for n in range(pseudo.N):
        zs = pseudo.z[pseudo.node == n]
        label = tree.node_labels[n]
        if zs.size == 0:
            out.append(f"separation: node {label} has no pseudo-responses")
        elif zs.min() == zs.max():
            out.append(
                f"separation: node {label} has all-{int(zs[0])} pseudo-responses; "
                f"estimates clamped to |linear predictor| <= {ALPHA_BOUND:g}"
            )
    return out


def _fd_step(x):
    return SE_REL_STEP * np.maximum(1.0, np.abs(x))


def fit(data: RatingMatrix, spec: ModelSpec, options: FitOptions | None = None) -> FitResult:
    """Maximize the Laplace marginal likelihood over fixed effects and covariance."""
    options = options or FitOptions()
    tree = spec.tree
    report_valid = data.M <= tree.M
    if not report_valid:
        raise ValueError(f"data has {data.M} categories but tree supports {tree.M}")
    pseudo = PseudoData.from_ratings(data, tree)
    warn = _separation_warnings(pseudo, tree)
    n_alpha = data.J if spec.item_design == "common" else data.J * tree.N
    n_cov = _n_cov_params(spec)
    x0 = options.start if options.start is not None else _start_values(pseudo, spec)
    x0 = np.asarray(x0, dtype=float)
    if x0.size != n_alpha + n_cov:
        raise ValueError(f"start vector must have {n_alpha + n_cov} entries")

    cache = {"eta": None}

    def objective(x):
        alpha = _alpha_matrix(x[:n_alpha], spec, data.J)
        if spec.item_design == "common":
            alpha_arg = alpha[:, 0]
        else:
            alpha_arg = alpha
        sigma = _unpack_cov(x[n_alpha:], spec)
        grab = {}
        val = laplace_marginal_loglik(
            alpha_arg, sigma, pseudo, trait_design=spec.trait_design, _modes=grab
        )
        cache["eta"] = grab["eta"]
        return -val

    bounds = [(-ALPHA_BOUND, ALPHA_BOUND)] * n_alpha
    d = spec.re_dim
    if spec.covariance == "unstructured":
        for i in range(d):
            for j in range(i + 1):
                bounds.append((-8.0, 5.0) if i == j else (-20.0, 20.0))
    else:
        bounds += [(-8.0, 5.0)] * n_cov
    res = minimize(
        objective,
        x0,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": options.max_iter, "ftol": 1e-14, "gtol": options.tol},
    )
    x = res.x
    # projected gradient at the solution decides convergence
    g = approx_fprime(x, objective, _fd_step(x) * 1e-2)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    g_proj = g.copy()
    g_proj[(x <= lo) & (g > 0)] = 0.0
    g_proj[(x >= hi) & (g < 0)] = 0.0
    converged = bool(np.abs(g_proj).max() < options.tol) or bool(res.success)
    if not converged:
        warn = warn + [f"did not converge after {res.nit} iterations"]

    loglik = -objective(x)  # also refreshes the cached posterior modes
    alpha_hat = _alpha_matrix(x[:n_alpha], spec, data.J)
    sigma_hat = _unpack_cov(x[n_alpha:], spec)
    eta = cache["eta"]
    if spec.trait_design == "common":
        eta_full = np.repeat(eta, tree.N, axis=1)
    else:
        eta_full = eta
    result = FitResult(
        alpha_hat=alpha_hat,
        sigma_hat=sigma_hat,
        eta_hat=eta_full,
        log_marginal_lik=loglik,
        se_alpha=None,
        converged=converged,
        iterations=int(res.nit),
        model=spec,
        tree_digest=tree.digest(),
        warnings=warn,
        x=x,
    )
    for w in warn:
        _warnings.warn(w, stacklevel=2)
    if options.compute_se and converged:
        result.se_alpha = standard_errors(result, data)
    return result


def posterior_modes(fitres: FitResult, data: RatingMatrix) -> np.ndarray:
    """Per-rater joint-likelihood maximizers at the fitted parameters, I x N."""
    spec = fitres.model
    pseudo = PseudoData.from_ratings(data, spec.tree)
    sigma, sinv, logdet = _cov_inverse(fitres.sigma_hat)
    d = sigma.shape[0]
    alpha = fitres.alpha_hat
    alpha_rec = (
        alpha[pseudo.item, 0]
        if alpha.shape[1] == 1
        else alpha[pseudo.item, pseudo.node]
    )
    re_node = (
        pseudo.node if spec.trait_design == "per-node" else np.zeros(len(pseudo), dtype=int)
    )
    eta, _, _ = _solve_modes(alpha_rec, pseudo, re_node, d, sinv, logdet)
    if spec.trait_design == "common":
        return np.repeat(eta, spec.tree.N, axis=1)
    return eta


def standard_errors(fitres: FitResult, data: RatingMatrix) -> np.ndarray:
    """Square roots of the inverse observed information, for the easiness part.

    The information is the central finite-difference Hessian of the Laplace
    objective at the optimum (relative step 1e-4).
    """
    spec = fitres.model
    pseudo = PseudoData.from_ratings(data, spec.tree)
    n_alpha = fitres.alpha_hat.size
    x = fitres.x
    if x is None:
        raise ValueError("standard errors need the packed optimum of a fit")

    def nll(v):
        alpha = _alpha_matrix(v[:n_alpha], spec, data.J)
        alpha_arg = alpha[:, 0] if spec.item_design == "common" else alpha
        sigma = _unpack_cov(v[n_alpha:], spec)
        return -laplace_marginal_loglik(
            alpha_arg, sigma, pseudo, trait_design=spec.trait_design
        )

    n = x.size
    h = _fd_step(x)
    hess = np.empty((n, n))
    f0 = nll(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        hess[i, i] = (nll(x + ei) - 2.0 * f0 + nll(x - ei)) / h[i] ** 2
        for j in range(i):
            ej = np.zeros(n)
            ej[j] = h[j]
            hij = (
                nll(x + ei + ej) - nll(x + ei - ej) - nll(x - ei + ej) + nll(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
            hess[i, j] = hess[j, i] = hij
    try:
        cov = np.linalg.inv(hess)
        diag = np.diag(cov)[:n_alpha]
        if np.any(diag < 0):
            raise np.linalg.LinAlgError("negative variance estimate")
        se = np.sqrt(diag)
    except np.linalg.LinAlgError:
        _warnings.warn("observed information is not invertible; SEs set to NaN")
        se = np.full(n_alpha, np.nan)
    return se.reshape(fitres.alpha_hat.shape)


def fit_to_json(fitres: FitResult) -> str:
    """Canonical JSON fit artifact; byte-identical for identical fits."""
    spec = fitres.model
    if isinstance(spec, ModelSpec):
        model = {
            "trait_design": spec.trait_design,
            "item_design": spec.item_design,
            "covariance": spec.covariance,
            "M": spec.tree.M,
            "N": spec.tree.N,
        }
    else:
        model = dict(spec)
    chol = np.linalg.cholesky(fitres.sigma_hat)
    d = chol.shape[0]
    tril = [float(chol[i, j]) for i in range(d) for j in range(i + 1)]
    doc = {
        "alpha": [float(a) for a in fitres.alpha_hat.ravel()],
        "alpha_shape": list(fitres.alpha_hat.shape),
        "sigma_cholesky": tril,
        "eta": [[float(v) for v in row] for row in fitres.eta_hat],
        "loglik": float(fitres.log_marginal_lik),
        "converged": bool(fitres.converged),
        "iterations": int(fitres.iterations),
        "se": None
        if fitres.se_alpha is None
        else [None if np.isnan(s) else float(s) for s in fitres.se_alpha.ravel()],
        "model": model,
        "tree_digest": fitres.tree_digest,
        "warnings": list(fitres.warnings),
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def fit_from_json(text: str) -> FitResult:
    doc = json.loads(text)
    shape = tuple(doc["alpha_shape"])
    tril = doc["sigma_cholesky"]
    d = int((np.sqrt(8 * len(tril) + 1) - 1) / 2)
    low = np.zeros((d, d))
    k = 0
    for i in range(d):
        for j in range(i + 1):
            low[i, j] = tril[k]
            k += 1
    se = doc.get("se")
    return FitResult(
        alpha_hat=np.array(doc["alpha"]).reshape(shape),
        sigma_hat=low @ low.T,
        eta_hat=np.array(doc["eta"], dtype=float),
        log_marginal_lik=float(doc["loglik"]),
        se_alpha=None
        if se is None
        else np.array([np.nan if s is None else s for s in se]).reshape(shape),
        converged=bool(doc["converged"]),
        iterations=int(doc["iterations"]),
        model=doc["model"],
        tree_digest=doc["tree_digest"],
        warnings=list(doc.get("warnings", [])),
        x=None,
    )
