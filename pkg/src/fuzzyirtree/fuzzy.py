"""Conversion of category-probability distributions into triangular fuzzy numbers.

The pipeline per rater-item cell: take the model-implied distribution over
the M categories, compute its mean and variance, map the pair through the
Williams moment link (on the unit interval) to get the support endpoints,
and set the intensification parameter to the sum of squared probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

DEFAULT_GRID_POINTS = 201
DEGENERATE_VARIANCE = 1e-9


@dataclass(frozen=True)
class MultiverseDistribution:
    """Distribution over the M response categories for one rater-item pair."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 2:
            raise ValueError("probs must be a vector of length >= 2")
        if np.any(p < -1e-12) or np.any(p > 1 + 1e-12):
            raise ValueError("probs must lie in [0, 1]")
        if abs(p.sum() - 1.0) > 1e-9:
            raise ValueError(f"probs must sum to 1, got {p.sum()!r}")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def M(self) -> int:
        return self.probs.size


@dataclass(frozen=True)
class Tfn4:
    """Triangular fuzzy number with mode c, support [l, r] and curvature omega.

    omega < 1 intensifies fuzziness, omega = 1 is the ordinary linear
    triangle. The clamped flag marks values produced through a clamp in
    the moment link.
    """

    c: float
    l: float
    r: float
    omega: float
    clamped: bool = False

    def __post_init__(self):
        if not all(np.isfinite([self.c, self.l, self.r, self.omega])):
            raise ValueError("Tfn4 parameters must be finite")
        if not (self.l <= self.c <= self.r):
            raise ValueError(f"need l <= c <= r, got ({self.l}, {self.c}, {self.r})")
        if self.omega <= 0:
            raise ValueError("omega must be positive")

    @property
    def degenerate(self) -> bool:
        return self.l == self.c == self.r

    @property
    def spread(self) -> float:
        return self.r - self.l


def membership(f: Tfn4, y):
    """Membership degree of y (scalar or array) in the fuzzy number f.

    The left branch owns (l, c], the right branch (c, r); endpoints and the
    outside evaluate to 0, the mode to 1. A degenerate number is the crisp
    indicator of its mode.
    """
    yy = np.asarray(y, dtype=float)
    out = np.zeros(yy.shape)
    if f.degenerate:
        out = np.where(yy == f.c, 1.0, 0.0)
        return float(out) if np.isscalar(y) or yy.ndim == 0 else out
    with np.errstate(over="ignore", divide="ignore"):
        left = (yy > f.l) & (yy <= f.c)
        if left.any():
            ratio = (f.c - yy[left]) / (yy[left] - f.l)
            out[left] = 1.0 / (1.0 + ratio**f.omega)
        right = (yy > f.c) & (yy < f.r)
        if right.any():
            ratio = (f.r - yy[right]) / (yy[right] - f.c)
            out[right] = 1.0 / (1.0 + ratio ** (-f.omega))
    return float(out) if np.isscalar(y) or yy.ndim == 0 else out


def multiverse_moments(d: MultiverseDistribution):
    """Mean and variance of the category distribution on the 1..M scale."""
    y = np.arange(1, d.M + 1, dtype=float)
    c = float(d.probs @ y)
    s = float(d.probs @ (y - c) ** 2)
    return c, max(s, 0.0)


class LinkResult(NamedTuple):
    l: float
    r: float
    clamped: bool


def williams_link(c_norm: float, s_norm: float) -> LinkResult:
    """Map a (mean, variance) pair on [0, 1] to triangular endpoints.

    Negative radicands and out-of-order endpoints are clamped and flagged;
    a near-zero variance collapses to the crisp singleton.
    """
    if not 0.0 <= c_norm <= 1.0:
        raise ValueError("c_norm must lie in [0, 1]")
    if s_norm < DEGENERATE_VARIANCE:
        return LinkResult(c_norm, c_norm, False)
    mu = (1.0 + c_norm / s_norm) / (2.0 + 1.0 / s_norm)
    rad = 3.5 * s_norm - 3.0 * (c_norm - mu) ** 2
    clamped = False
    if rad < 0.0:
        rad, clamped = 0.0, True
    h1 = np.sqrt(rad)
    h2 = 0.5 * (h1 + 3.0 * c_norm - 3.0 * mu)
    l = c_norm - h2
    r = c_norm - h2 + h1
    if not 0.0 <= l <= c_norm:
        l, clamped = min(max(l, 0.0), c_norm), True
    if not c_norm <= r <= 1.0:
        r, clamped = min(max(r, c_norm), 1.0), True
    return LinkResult(float(l), float(r), clamped)


def intensification(d: MultiverseDistribution) -> float:
    """Sum of squared category probabilities; 1/M when uniform, 1 when crisp."""
    return float(np.sum(d.probs**2))


def convert(d: MultiverseDistribution, M: int) -> Tfn4:
    """Full conversion of one category distribution into a Tfn4."""
    if M != d.M:
        raise ValueError(f"distribution has {d.M} categories, expected {M}")
    c, s = multiverse_moments(d)
    scale = M - 1.0
    link = williams_link((c - 1.0) / scale, s / scale**2)
    l = 1.0 + scale * link.l
    r = 1.0 + scale * link.r
    return Tfn4(c=c, l=min(l, c), r=max(r, c), omega=intensification(d), clamped=link.clamped)


def convert_table(probs: np.ndarray):
    """Vectorized convert over a (K, M) matrix of distributions.

    Returns arrays (c, l, r, omega, clamped), each of length K.
    """
    p = np.asarray(probs, dtype=float)
    if p.ndim != 2:
        raise ValueError("probs must be a (K, M) matrix")
    m_count = p.shape[1]
    y = np.arange(1, m_count + 1, dtype=float)
    c = p @ y
    s = np.maximum(p @ y**2 - c**2, 0.0)
    scale = m_count - 1.0
    cn = (c - 1.0) / scale
    sn = s / scale**2
    deg = sn < DEGENERATE_VARIANCE
    safe = np.where(deg, 1.0, sn)
    mu = (1.0 + cn / safe) / (2.0 + 1.0 / safe)
    rad = 3.5 * sn - 3.0 * (cn - mu) ** 2
    clamped = (rad < 0.0) & ~deg
    h1 = np.sqrt(np.maximum(rad, 0.0))
    h2 = 0.5 * (h1 + 3.0 * cn - 3.0 * mu)
    ln = cn - h2
    rn = ln + h1
    clamped |= ((ln < 0.0) | (ln > cn) | (rn < cn) | (rn > 1.0)) & ~deg
    ln = np.clip(ln, 0.0, cn)
    rn = np.clip(rn, cn, 1.0)
    ln = np.where(deg, cn, ln)
    rn = np.where(deg, cn, rn)
    omega = np.sum(p**2, axis=1)
    return c, 1.0 + scale * ln, 1.0 + scale * rn, omega, clamped


@dataclass(frozen=True)
class FuzzyRatingMatrix:
    """Per-cell fuzzy numbers for an I x J rating matrix, stored columnwise."""

    c: np.ndarray
    l: np.ndarray
    r: np.ndarray
    omega: np.ndarray
    clamped: np.ndarray
    tree_digest: str
    y: np.ndarray | None = None

    @property
    def shape(self):
        return self.c.shape

    @property
    def spread(self) -> np.ndarray:
        return self.r - self.l

    def entry(self, i: int, j: int):
        """The (crisp rating, Tfn4) pair of one cell; rating is None if absent."""
        f = Tfn4(
            c=float(self.c[i, j]),
            l=float(self.l[i, j]),
            r=float(self.r[i, j]),
            omega=float(self.omega[i, j]),
            clamped=bool(self.clamped[i, j]),
        )
        rating = None if self.y is None else int(self.y[i, j])
        return rating, f


def convert_all(fit, tree, ratings=None) -> FuzzyRatingMatrix:
    """Convert every rater-item cell of a fitted model.

    `fit` needs eta_hat (I x N), alpha_hat (J x N or J x 1) and tree_digest;
    the digest must match `tree` so the conversion uses the same structure
    the model was fit with.
    """
    from .tree import category_probability_table

    if fit.tree_digest != tree.digest():
        raise ValueError("tree digest mismatch: fit was produced with a different tree")
    eta = np.asarray(fit.eta_hat, dtype=float)
    alpha = np.asarray(fit.alpha_hat, dtype=float)
    if alpha.shape[1] == 1:
        alpha = np.repeat(alpha, tree.N, axis=1)
    n_raters, n_items = eta.shape[0], alpha.shape[0]
    probs = category_probability_table(tree, eta[:, None, :], alpha[None, :, :])
    c, l, r, omega, clamped = convert_table(probs.reshape(-1, tree.M))
    shape = (n_raters, n_items)
    y = None
    if ratings is not None:
        y = np.asarray(ratings.values if hasattr(ratings, "values") else ratings)
        if y.shape != shape:
            raise ValueError(f"ratings must be {shape}, got {y.shape}")
    return FuzzyRatingMatrix(
        c=c.reshape(shape),
        l=l.reshape(shape),
        r=r.reshape(shape),
        omega=omega.reshape(shape),
        clamped=clamped.reshape(shape),
        tree_digest=fit.tree_digest,
        y=y,
    )


def kaufmann_index(memberships) -> float:
    """Normalized distance to the nearest crisp set over the sampled points."""
    a = np.asarray(memberships, dtype=float)
    if a.size == 0:
        raise ValueError("kaufmann_index needs a non-empty vector")
    delta = (a >= 0.5).astype(float)
    return float(2.0 * np.mean(np.abs(a - delta)))


def kaufmann_of(f: Tfn4, M: int, points: int = DEFAULT_GRID_POINTS) -> float:
    """Kaufmann index of a Tfn4 sampled on an even grid over [1, M]."""
    grid = np.linspace(1.0, float(M), points)
    return kaufmann_index(membership(f, grid))


def _membership_rows(grid, c, l, r, w):
    """Membership of each row's Tfn4 at each column of `grid` (both 2-D)."""
    a = np.zeros_like(grid)
    deg = (l == c) & (c == r)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        left = (grid > l) & (grid <= c) & ~deg
        ratio = np.where(left, (c - grid) / np.where(left, grid - l, 1.0), 0.0)
        a = np.where(left, 1.0 / (1.0 + ratio**w), a)
        right = (grid > c) & (grid < r) & ~deg
        ratio = np.where(right, (r - grid) / np.where(right, grid - c, 1.0), 1.0)
        a = np.where(right, 1.0 / (1.0 + ratio ** (-w)), a)
    return np.where(deg & (grid == c), 1.0, a)


def kaufmann_table(c, l, r, omega, M: int, points: int = DEFAULT_GRID_POINTS):
    """Vectorized kaufmann_of over arrays of Tfn4 parameters."""
    c = np.asarray(c, float).ravel()
    l = np.asarray(l, float).ravel()
    r = np.asarray(r, float).ravel()
    w = np.asarray(omega, float).ravel()
    grid = np.broadcast_to(np.linspace(1.0, float(M), points), (c.size, points))
    a = _membership_rows(grid, c[:, None], l[:, None], r[:, None], w[:, None])
    delta = (a >= 0.5).astype(float)
    return 2.0 * np.mean(np.abs(a - delta), axis=1)


def kaufmann_support(f: Tfn4, points: int = DEFAULT_GRID_POINTS) -> float:
    """Kaufmann index sampled on an even grid over the support [l, r].

    Unlike kaufmann_of, the evaluation universe is the fuzzy number's own
    support, so the index does not get diluted by the zero memberships
    outside it; a degenerate number scores 0.
    """
    if f.degenerate:
        return 0.0
    grid = np.linspace(f.l, f.r, points)
    return kaufmann_index(membership(f, grid))


def kaufmann_support_table(c, l, r, omega, points: int = DEFAULT_GRID_POINTS):
    """Vectorized kaufmann_support over arrays of Tfn4 parameters."""
    c = np.asarray(c, float).ravel()
    l = np.asarray(l, float).ravel()
    r = np.asarray(r, float).ravel()
    w = np.asarray(omega, float).ravel()
    t = np.linspace(0.0, 1.0, points)
    grid = l[:, None] + (r - l)[:, None] * t
    a = _membership_rows(grid, c[:, None], l[:, None], r[:, None], w[:, None])
    delta = (a >= 0.5).astype(float)
    out = 2.0 * np.mean(np.abs(a - delta), axis=1)
    out[l == r] = 0.0
    return out
