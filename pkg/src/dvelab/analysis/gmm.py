"""1-D Gaussian mixtures by EM, with AIC-based cluster-count selection.

Used to ask "how many value clusters does this scene pool induce?": fit
mixtures with C = 1..C_max components to a flat sample of exact state
values and pick the C minimizing AIC = 2k - 2 ln L with k = 3C - 1 free
parameters (C means, C variances, C-1 free weights).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from ..errors import TooFewSamplesError
from ..rng import stream

_LL_TOL = 1e-8
_MAX_ITERS = 500
_N_RESTARTS = 5


@dataclass
class GmmModel:
    """A fitted 1-D Gaussian mixture."""

    weights: np.ndarray     # (C,), sums to 1
    means: np.ndarray       # (C,)
    variances: np.ndarray   # (C,), floored away from zero
    log_likelihood: float
    iters: int

    @property
    def n_components(self) -> int:
        return self.means.size

    def component_log_pdf(self, x: np.ndarray) -> np.ndarray:
        """(n, C) matrix of log w_c + log N(x | mu_c, var_c)."""
        x = np.asarray(x, dtype=np.float64)[:, None]
        return (np.log(self.weights)
                - 0.5 * np.log(2.0 * np.pi * self.variances)
                - 0.5 * (x - self.means) ** 2 / self.variances)

    def log_pdf(self, x: np.ndarray) -> np.ndarray:
        return logsumexp(self.component_log_pdf(x), axis=1)


def _kmeanspp_centers(x: np.ndarray, c: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, c):
        d2 = np.min((x[:, None] - np.asarray(centers)) ** 2, axis=1)
        total = d2.sum()
        if total <= 0.0:
            centers.append(x[rng.integers(len(x))])
        else:
            centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.asarray(centers)


def _em_once(x: np.ndarray, c: int, rng: np.random.Generator,
             var_floor: float) -> GmmModel:
    n = len(x)
    means = _kmeanspp_centers(x, c, rng)
    variances = np.full(c, max(x.var(), var_floor))
    weights = np.full(c, 1.0 / c)

    prev_ll = -np.inf
    iters = 0
    for iters in range(1, _MAX_ITERS + 1):
        model = GmmModel(weights, means, variances, 0.0, iters)
        joint = model.component_log_pdf(x)                  # (n, C)
        per_point = logsumexp(joint, axis=1)
        ll = float(per_point.sum())
        # EM never decreases the likelihood; a drop flags a numerical bug.
        assert ll >= prev_ll - 1e-9 * max(1.0, abs(prev_ll)), \
            f"EM log-likelihood decreased: {prev_ll} -> {ll}"
        if ll - prev_ll < _LL_TOL and iters > 1:
            prev_ll = ll
            break
        prev_ll = ll
        resp = np.exp(joint - per_point[:, None])           # (n, C)
        mass = resp.sum(axis=0)
        mass = np.maximum(mass, 1e-300)
        weights = mass / n
        means = (resp * x[:, None]).sum(axis=0) / mass
        variances = (resp * (x[:, None] - means) ** 2).sum(axis=0) / mass
        variances = np.maximum(variances, var_floor)
    return GmmModel(weights, means, variances, prev_ll, iters)


def fit_gmm(samples, n_components: int, seed: int = 0) -> GmmModel:
    """Fit a 1-D GMM by EM with k-means++ init and 5 seeded restarts.

    Variances are floored at 1e-6 times the sample variance (with an
    absolute floor for degenerate constant samples), so a component can
    collapse onto a point mass only down to the floor.
    """
    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if n_components < 1:
        raise ValueError("n_components must be >= 1")
    if len(x) < n_components:
        raise TooFewSamplesError(
            f"{len(x)} samples cannot support {n_components} components")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    var_floor = max(1e-6 * float(x.var()), 1e-12)
    best = None
    for restart in range(_N_RESTARTS):
        rng = stream(seed, f"gmm.c{n_components}.restart{restart}")
        model = _em_once(x, n_components, rng, var_floor)
        if best is None or model.log_likelihood > best.log_likelihood:
            best = model
    # Sort components by mean for stable reporting.
    order = np.argsort(best.means)
    return GmmModel(best.weights[order], best.means[order],
                    best.variances[order], best.log_likelihood, best.iters)


def aic(model: GmmModel, n_samples: int | None = None) -> float:
    """Akaike information criterion: 2k - 2 ln L with k = 3C - 1.

    ``n_samples`` is accepted for callers reporting AIC/N curves; the
    criterion itself does not depend on it.
    """
    if n_samples is not None and n_samples < 1:
        raise ValueError("n_samples must be positive")
    k = 3 * model.n_components - 1
    return 2.0 * k - 2.0 * model.log_likelihood


def select_clusters(samples, c_range=(1, 5), seed: int = 0):
    """Fit every C in the inclusive range and pick the AIC-minimizing count.

    Returns (c_star, models, aics); ties break toward the smaller C.
    """
    c_lo, c_hi = int(c_range[0]), int(c_range[-1])
    if c_lo < 1 or c_hi < c_lo:
        raise ValueError("c_range must be an increasing range with c_lo >= 1")
    models = []
    aics = []
    counts = list(range(c_lo, c_hi + 1))
    for c in counts:
        model = fit_gmm(samples, c, seed=seed)
        models.append(model)
        aics.append(aic(model, len(np.asarray(samples).reshape(-1))))
    aics = np.asarray(aics)
    c_star = counts[int(np.argmin(aics))]   # argmin takes the first: smaller C
    return c_star, models, aics
