"""Synthetic data distributions, neighbor datasets, and risk functionals.

Feature vectors are always resampled into a centered ball ||x|| <= x_bound
(default 4 * sqrt(trace(cov)), a >4-sigma event, so moments are essentially
unchanged but every gradient bound that needs bounded features holds
surely).  Gaussian label noise is likewise resampled into +-4 sd so labels
are bounded; the induced second-moment error is below 1e-4 relative and is
ignored by the analytic risk formulas.

A ``NeighborFamily`` carries a base sample S and an independent ghost sample
S~ of the same size; the i-th neighbor dataset replaces the i-th example of S
with the i-th example of S~.  This is the object the stability estimators
couple trajectories over.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import integrate
from scipy.optimize import minimize_scalar
from scipy.stats import norm

from . import _engine
from .errors import DegenerateDataError, InvalidArgument
from .losses import AucSquare, LeastSquares, Loss, QNormHinge

_MAX_RESAMPLE_ROUNDS = 64


@dataclass(frozen=True)
class Dataset:
    """An in-memory sample: features (n, d) and labels (n,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.features.ndim != 2 or self.labels.ndim != 1 \
                or self.features.shape[0] != self.labels.shape[0]:
            raise InvalidArgument("features must be (n, d) and labels (n,)")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def _as_cov(cov, d: int) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim == 0:
        cov = float(cov) * np.eye(d)
    elif cov.ndim == 1:
        cov = np.diag(cov)
    if cov.shape != (d, d):
        raise InvalidArgument(
            f"covariance must be a scalar, ({d}, {d}) or a length-{d} diagonal")
    if not np.all(np.isfinite(cov)):
        raise InvalidArgument("covariance entries must be finite")
    return cov


def _chol_of(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise InvalidArgument("covariance must be symmetric positive definite") from None


def _truncated_gauss_rows(rng: np.random.Generator, n: int, mean: np.ndarray,
                          chol: np.ndarray, bound: float) -> np.ndarray:
    """n rows of N(mean, chol chol^T), resampled until ||row|| <= bound."""
    d = mean.shape[0]
    out = mean + rng.standard_normal((n, d)) @ chol.T
    for _ in range(_MAX_RESAMPLE_ROUNDS):
        bad = np.linalg.norm(out, axis=1) > bound
        k = int(bad.sum())
        if k == 0:
            return out
        out[bad] = mean + rng.standard_normal((k, d)) @ chol.T
    raise DegenerateDataError(
        f"feature truncation at {bound} keeps rejecting samples; bound too tight")


def _truncated_noise(rng: np.random.Generator, n: int, sd: float) -> np.ndarray:
    if sd == 0.0:
        return np.zeros(n)
    out = sd * rng.standard_normal(n)
    for _ in range(_MAX_RESAMPLE_ROUNDS):
        bad = np.abs(out) > 4.0 * sd
        k = int(bad.sum())
        if k == 0:
            return out
        out[bad] = sd * rng.standard_normal(k)
    raise DegenerateDataError("noise truncation keeps rejecting samples")


class Distribution:
    """Base class: a joint law of (x, y) with bounded features.

    Attributes
    ----------
    kind : str
    dim : int
    x_bound : float
        Almost-sure bound on ||x|| (enforced by resampling).
    y_bound : float or None
        Almost-sure bound on |y| where meaningful.
    """

    kind = "abstract"

    def sample(self, n: int, rng: np.random.Generator) -> Dataset:
        raise NotImplementedError


class GaussLinReg(Distribution):
    """x ~ N(0, cov) (norm-truncated), y = <w_star, x> + noise.

    Noise is N(0, noise_sd^2) resampled into +-4 sd.
    """

    kind = "gauss_lin_reg"

    def __init__(self, w_star, cov, noise_sd: float, x_bound: Optional[float] = None):
        self.w_star = np.asarray(w_star, dtype=np.float64)
        if self.w_star.ndim != 1:
            raise InvalidArgument("w_star must be a vector")
        self.dim = self.w_star.shape[0]
        self.cov = _as_cov(cov, self.dim)
        if not noise_sd >= 0.0:
            raise InvalidArgument(f"noise_sd must be nonnegative, got {noise_sd}")
        self.noise_sd = float(noise_sd)
        self._chol = _chol_of(self.cov)
        self.x_bound = float(x_bound) if x_bound is not None \
            else 4.0 * math.sqrt(float(np.trace(self.cov)))
        self.y_bound = self.x_bound * float(np.linalg.norm(self.w_star)) + 4.0 * self.noise_sd

    def sample(self, n, rng):
        X = _truncated_gauss_rows(rng, n, np.zeros(self.dim), self._chol, self.x_bound)
        y = X @ self.w_star + _truncated_noise(rng, n, self.noise_sd)
        return Dataset(features=X, labels=y)


class RealizableLinReg(GaussLinReg):
    """Noise-free linear regression: the population risk vanishes at w_star."""

    kind = "realizable_lin_reg"

    def __init__(self, w_star, cov, x_bound: Optional[float] = None):
        super().__init__(w_star, cov, noise_sd=0.0, x_bound=x_bound)


class MarginClassif(Distribution):
    """x ~ N(0, cov) (norm-truncated), y = sign(<w_star, x>) flipped w.p. flip_prob."""

    kind = "margin_classif"

    def __init__(self, w_star, cov, flip_prob: float, x_bound: Optional[float] = None):
        self.w_star = np.asarray(w_star, dtype=np.float64)
        if self.w_star.ndim != 1 or not np.any(self.w_star):
            raise InvalidArgument("w_star must be a nonzero vector")
        self.dim = self.w_star.shape[0]
        self.cov = _as_cov(cov, self.dim)
        if not 0.0 <= flip_prob < 0.5:
            raise InvalidArgument(f"flip_prob must be in [0, 0.5), got {flip_prob}")
        self.flip_prob = float(flip_prob)
        self._chol = _chol_of(self.cov)
        self.x_bound = float(x_bound) if x_bound is not None \
            else 4.0 * math.sqrt(float(np.trace(self.cov)))
        self.y_bound = 1.0

    def sample(self, n, rng):
        X = _truncated_gauss_rows(rng, n, np.zeros(self.dim), self._chol, self.x_bound)
        margin = X @ self.w_star
        y = np.where(margin >= 0.0, 1.0, -1.0)
        flip = rng.random(n) < self.flip_prob
        y[flip] *= -1.0
        return Dataset(features=X, labels=y)


class ImbalancedGauss(Distribution):
    """Two Gaussian classes: y = +1 w.p. p with x ~ N(mu_plus, cov_plus), else class -1."""

    kind = "imbalanced_gauss"

    def __init__(self, p: float, mu_plus, mu_minus, cov_plus, cov_minus,
                 x_bound: Optional[float] = None):
        if not 0.0 < p < 1.0:
            raise InvalidArgument(f"class probability must be in (0, 1), got {p}")
        self.p = float(p)
        self.mu_plus = np.asarray(mu_plus, dtype=np.float64)
        self.mu_minus = np.asarray(mu_minus, dtype=np.float64)
        if self.mu_plus.shape != self.mu_minus.shape or self.mu_plus.ndim != 1:
            raise InvalidArgument("class means must be 1-d arrays of equal length")
        self.dim = self.mu_plus.shape[0]
        self.cov_plus = _as_cov(cov_plus, self.dim)
        self.cov_minus = _as_cov(cov_minus, self.dim)
        self._chol_plus = _chol_of(self.cov_plus)
        self._chol_minus = _chol_of(self.cov_minus)
        if x_bound is not None:
            self.x_bound = float(x_bound)
        else:
            self.x_bound = max(
                float(np.linalg.norm(self.mu_plus)) + 4.0 * math.sqrt(float(np.trace(self.cov_plus))),
                float(np.linalg.norm(self.mu_minus)) + 4.0 * math.sqrt(float(np.trace(self.cov_minus))),
            )
        self.y_bound = 1.0

    def sample(self, n, rng):
        y = np.where(rng.random(n) < self.p, 1.0, -1.0)
        X = np.empty((n, self.dim))
        pos = y > 0.0
        npos = int(pos.sum())
        # sample the two classes in a fixed order so the draw is reproducible
        X[pos] = _truncated_gauss_rows(rng, npos, self.mu_plus, self._chol_plus, self.x_bound)
        X[~pos] = _truncated_gauss_rows(rng, n - npos, self.mu_minus, self._chol_minus, self.x_bound)
        return Dataset(features=X, labels=y)


def make_distribution(kind: str, **params) -> Distribution:
    """Factory used by the harness config layer."""
    table = {
        "gauss_lin_reg": GaussLinReg,
        "realizable_lin_reg": RealizableLinReg,
        "margin_classif": MarginClassif,
        "imbalanced_gauss": ImbalancedGauss,
    }
    if kind not in table:
        raise InvalidArgument(f"unknown distribution kind {kind!r}")
    return table[kind](**params)


# ---------------------------------------------------------------------------
# sampling ops
# ---------------------------------------------------------------------------

def sample_dataset(dist: Distribution, n: int, seed: int) -> Dataset:
    """Draw n examples with a counter-based generator keyed by (seed, data tag)."""
    if not n >= 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    rng = _engine.philox(_engine.derive_seed(seed, _engine.TAG_DATA))
    return dist.sample(n, rng)


@dataclass(frozen=True)
class NeighborFamily:
    """Base sample plus an independent ghost sample of the same size."""

    base: Dataset
    ghost: Dataset

    def __post_init__(self):
        if self.base.features.shape != self.ghost.features.shape:
            raise InvalidArgument("base and ghost samples must have identical shapes")


def sample_neighbor_family(dist: Distribution, n: int, seed: int) -> NeighborFamily:
    """Draw S and an independent ghost S~ from per-purpose derived seeds."""
    if not n >= 1:
        raise InvalidArgument(f"n must be >= 1, got {n}")
    base = dist.sample(n, _engine.philox(_engine.derive_seed(seed, _engine.TAG_DATA)))
    ghost = dist.sample(n, _engine.philox(_engine.derive_seed(seed, _engine.TAG_GHOST)))
    return NeighborFamily(base=base, ghost=ghost)


def neighbor(family: NeighborFamily, i: int) -> Dataset:
    """The i-th neighbor dataset: S with its i-th example replaced by the ghost's."""
    n = family.base.n
    if not 0 <= i < n:
        raise InvalidArgument(f"neighbor position must be in [0, {n}), got {i}")
    X = family.base.features.copy()
    y = family.base.labels.copy()
    X[i] = family.ghost.features[i]
    y[i] = family.ghost.labels[i]
    return Dataset(features=X, labels=y)


def zero_example_neighbor(ds: Dataset, i: int = 0) -> Dataset:
    """Dataset with example i replaced by the zero example (x = 0, y = 0)."""
    n = ds.n
    if not 0 <= i < n:
        raise InvalidArgument(f"position must be in [0, {n}), got {i}")
    X = ds.features.copy()
    y = ds.labels.copy()
    X[i] = 0.0
    y[i] = 0.0
    return Dataset(features=X, labels=y)


# ---------------------------------------------------------------------------
# risks
# ---------------------------------------------------------------------------

def empirical_risk(loss: Loss, ds: Dataset, w: np.ndarray) -> float:
    """F_S(w) = (1/n) sum_i f(w; z_i)."""
    w = np.asarray(w, dtype=np.float64)
    n = ds.n
    W = np.broadcast_to(w, (n, w.shape[0]))
    return float(loss.batch_value(W, ds.features, ds.labels).mean())


def _hinge_margin_risk(w: np.ndarray, dist: MarginClassif) -> float:
    """Population hinge risk E[(1 - y <w, x>)_+] under the margin-flip model.

    Reduces to 1-d integrals over the bivariate normal (u, v) =
    (<w, x>, <w_star, x>); the sign of v carries the clean label.  Feature
    truncation is ignored (it is a >4-sigma event).
    """
    w = np.asarray(w, dtype=np.float64)
    pf = dist.flip_prob
    cov = dist.cov
    su2 = float(w @ cov @ w)
    sv2 = float(dist.w_star @ cov @ dist.w_star)
    if sv2 <= 0.0:
        raise DegenerateDataError("w_star direction carries no variance")
    if su2 <= 1e-300:
        return 1.0  # u == 0 a.s.: both hinge branches evaluate at margin 0
    su = math.sqrt(su2)
    c = float(w @ cov @ dist.w_star)
    rho = min(1.0, max(-1.0, c / (su * math.sqrt(sv2))))

    def half_expect(sign_u: float) -> float:
        # E[ 1_{v > 0} (1 - sign_u * u)_+ ] via closed form when |rho| = 1
        if abs(rho) >= 1.0 - 1e-12:
            # u = rho * su * zeta with v > 0 <=> zeta > 0
            g = math.copysign(su, rho) * sign_u  # slope of sign_u * u in zeta > 0
            if g > 0.0:
                return (norm.cdf(1.0 / g) - 0.5) - g * (norm.pdf(0.0) - norm.pdf(1.0 / g))
            if g == 0.0:
                return 0.5
            return 0.5 - g * norm.pdf(0.0)  # integrand (1 + |g| zeta), all zeta > 0
        lam = rho / math.sqrt(1.0 - rho * rho)

        def integrand(u):
            return (1.0 - sign_u * u) * norm.pdf(u / su) / su * norm.cdf(lam * u / su)

        if sign_u > 0.0:
            lo, hi = -40.0 * su, min(1.0, 40.0 * su)
        else:
            lo, hi = max(-1.0, -40.0 * su), 40.0 * su
        if lo >= hi:
            return 0.0
        val, _ = integrate.quad(integrand, lo, hi, limit=200)
        return val

    # clean-label and flipped-label contributions; (u,v) -> (-u,-v) symmetry
    # folds everything onto the half-space v > 0
    return 2.0 * (1.0 - pf) * half_expect(1.0) + 2.0 * pf * half_expect(-1.0)


def _hinge_margin_risk_scalar(g: float, pf: float) -> float:
    """Hinge risk of w = (g / s) * unit(w_star) under an isotropic margin model."""
    if g < 0.0:
        raise InvalidArgument("the scalar profile is defined for g >= 0")
    if g == 0.0:
        return 1.0
    clean = 2.0 * norm.cdf(1.0 / g) - 1.0 - 2.0 * g * (norm.pdf(0.0) - norm.pdf(1.0 / g))
    flipped = 1.0 + g * math.sqrt(2.0 / math.pi)
    return (1.0 - pf) * clean + pf * flipped


def population_risk(loss: Loss, dist: Distribution, w: np.ndarray,
                    mc_samples: int = 0, seed: int = 0) -> Tuple[float, float]:
    """F(w) = E[f(w; z)] with a standard error.

    Returns an exact value (stderr 0) for the pairs with closed forms:
    least squares / Gaussian linear regression, the AUC surrogate / two-class
    Gaussian (requires matching moment parameters), and plain hinge (q = 1) /
    margin model (1-d quadrature).  Every other pair needs mc_samples > 0.
    """
    w = np.asarray(w, dtype=np.float64)
    if isinstance(loss, LeastSquares) and isinstance(dist, GaussLinReg):
        diff = w - dist.w_star
        return 0.5 * (float(diff @ dist.cov @ diff) + dist.noise_sd ** 2), 0.0
    if isinstance(loss, AucSquare) and isinstance(dist, ImbalancedGauss):
        if not (math.isclose(loss.p, dist.p)
                and np.allclose(loss.mu_plus, dist.mu_plus)
                and np.allclose(loss.mu_minus, dist.mu_minus)):
            raise InvalidArgument(
                "the AUC surrogate's moment parameters must match the distribution")
        dmu = dist.mu_plus - dist.mu_minus
        M = dist.cov_plus + dist.cov_minus
        val = dist.p * (1.0 - dist.p) * ((1.0 - float(w @ dmu)) ** 2 + float(w @ M @ w))
        return val, 0.0
    if isinstance(loss, QNormHinge) and loss.q == 1.0 and isinstance(dist, MarginClassif):
        return _hinge_margin_risk(w, dist), 0.0
    if mc_samples <= 0:
        raise InvalidArgument(
            f"no closed form for ({loss.kind}, {dist.kind}); pass mc_samples > 0")
    rng = _engine.philox(_engine.derive_seed(seed, _engine.TAG_POP))
    ds = dist.sample(mc_samples, rng)
    W = np.broadcast_to(w, (mc_samples, w.shape[0]))
    vals = loss.batch_value(W, ds.features, ds.labels)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(mc_samples))


def population_risk_minimum(loss: Loss, dist: Distribution) -> Tuple[float, Optional[np.ndarray]]:
    """(min_w F(w), argmin) where a closed form or 1-d reduction exists."""
    if isinstance(loss, LeastSquares) and isinstance(dist, GaussLinReg):
        return 0.5 * dist.noise_sd ** 2, dist.w_star.copy()
    if isinstance(loss, AucSquare) and isinstance(dist, ImbalancedGauss):
        dmu = dist.mu_plus - dist.mu_minus
        M = dist.cov_plus + dist.cov_minus
        w_opt = np.linalg.solve(M + np.outer(dmu, dmu), dmu)
        val = dist.p * (1.0 - dist.p) * ((1.0 - float(w_opt @ dmu)) ** 2
                                         + float(w_opt @ M @ w_opt))
        return val, w_opt
    if isinstance(loss, QNormHinge) and loss.q == 1.0 and isinstance(dist, MarginClassif):
        # isotropic case only: the minimizer lies along w_star, so the search
        # is one-dimensional in the projection scale g = ||w|| * sqrt(var)
        s2 = dist.cov[0, 0]
        if not np.allclose(dist.cov, s2 * np.eye(dist.dim)):
            raise InvalidArgument("hinge risk minimum needs an isotropic covariance")
        pf = dist.flip_prob
        res = minimize_scalar(lambda g: _hinge_margin_risk_scalar(g, pf),
                              bounds=(0.0, 1e3), method="bounded",
                              options={"xatol": 1e-10})
        g_opt = float(res.x)
        w_unit = dist.w_star / float(np.linalg.norm(dist.w_star))
        return float(res.fun), (g_opt / math.sqrt(s2)) * w_unit
    raise InvalidArgument(f"no closed-form risk minimum for ({loss.kind}, {dist.kind})")


# ---------------------------------------------------------------------------
# spectra
# ---------------------------------------------------------------------------

def min_positive_eigenvalue(ds: Dataset, threshold_ratio: float = 1e-10) -> float:
    """Smallest positive eigenvalue of C_S = (1/n) sum_i x_i x_i^T.

    Eigenvalues below threshold_ratio * max eigenvalue count as zero.  If all
    are zero (e.g. an all-zeros dataset) the data is degenerate.
    """
    if not 0.0 <= threshold_ratio < 1.0:
        raise InvalidArgument(f"threshold_ratio must be in [0, 1), got {threshold_ratio}")
    C = ds.features.T @ ds.features / ds.n
    evals = np.linalg.eigvalsh(C)
    lmax = float(evals[-1])
    if lmax <= 0.0:
        raise DegenerateDataError("all features are zero; no positive eigenvalue")
    pos = evals[evals > threshold_ratio * lmax]
    if pos.size == 0:
        raise DegenerateDataError("no eigenvalue above the positivity threshold")
    return float(pos[0])


# ---------------------------------------------------------------------------
# CSV round trip
# ---------------------------------------------------------------------------

def export_dataset_csv(ds: Dataset, path: str) -> None:
    """Write the sample as CSV: header y,x1,...,xd; 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y"] + [f"x{j + 1}" for j in range(ds.dim)])
        for i in range(ds.n):
            writer.writerow([f"{ds.labels[i]:.17g}"]
                            + [f"{v:.17g}" for v in ds.features[i]])


def import_dataset_csv(path: str) -> Dataset:
    """Inverse of export_dataset_csv."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[0] != "y" \
                or header[1:] != [f"x{j + 1}" for j in range(len(header) - 1)]:
            raise InvalidArgument(f"unexpected CSV header {header!r}")
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise InvalidArgument("empty dataset file")
    arr = np.asarray(rows, dtype=np.float64)
    return Dataset(features=arr[:, 1:], labels=arr[:, 0])
