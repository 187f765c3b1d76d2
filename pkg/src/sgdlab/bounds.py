"""Explicit right-hand sides of the stability/generalization inequalities.

Each calculator evaluates one closed-form bound from measured trajectory
statistics (risk paths, step sizes, regularity constants) and returns the
right-hand-side value; ``gate`` then compares a measured quantity against it
one-sidedly at 3 standard errors.  Calculator names follow the laboratory's
experiment contract.

Conventions shared by all calculators:
- the bound is evaluated at the output iterate w_{T+1}, so sums run over
  steps j = 1..T and risk paths are indexed by the pre-update iterate w_j;
- risk paths recorded at a subset of steps are expanded conservatively (an
  unrecorded step gets the max of the bracketing recorded values);
- the parameter p defaults to n/t wherever it appears.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgument, PreconditionViolation
from .losses import RegularityConstants


@dataclass(frozen=True)
class BoundInputs:
    """Measured/derived quantities a bound right-hand side may consume.

    All paths have length T after expansion: risk_path[j-1] estimates
    E[F_S(w_j)], sqrt_risk_path[j-1] estimates E[sqrt(F_S(w_j))] and
    frac_risk_path[j-1] estimates E[F_S(w_j)^(2 alpha / (1 + alpha))].
    Unused fields may be None; each calculator validates what it needs.
    """

    n: int
    T: int
    etas: np.ndarray
    L: Optional[float] = None
    G: Optional[float] = None
    sigma: Optional[float] = None
    alpha: Optional[float] = None
    constants: Optional[RegularityConstants] = None
    risk_path: Optional[np.ndarray] = None
    sqrt_risk_path: Optional[np.ndarray] = None
    frac_risk_path: Optional[np.ndarray] = None
    pop_risk_at_opt: Optional[float] = None
    w_star_norm_sq: Optional[float] = None
    gamma: Optional[float] = None
    p: Optional[float] = None

    def __post_init__(self):
        if not (self.n >= 1 and self.T >= 1):
            raise InvalidArgument("n and T must be >= 1")
        if np.asarray(self.etas).shape != (self.T,):
            raise InvalidArgument(f"etas must have length T = {self.T}")

    @property
    def c1(self) -> float:
        self._need_constants()
        return self.constants.c1

    @property
    def c2(self) -> Optional[float]:
        self._need_constants()
        return self.constants.c2

    @property
    def c3(self) -> Optional[float]:
        self._need_constants()
        return self.constants.c3

    def _need_constants(self):
        if self.constants is None:
            raise InvalidArgument("regularity constants are required for this bound")


@dataclass(frozen=True)
class BoundReport:
    """One measured-vs-bound comparison.

    satisfied <=> measured <= rhs + 3 * stderr of the measurement;
    slack_sigma counts how many stderrs the measurement sits below the bound
    (+inf when the measurement is exact and below).
    """

    name: str
    rhs: float
    measured: float
    satisfied: bool
    slack_sigma: float


def gate(name: str, rhs: float, measured: float, stderr: float) -> BoundReport:
    """One-sided 3-sigma comparison of a measurement against a bound."""
    if stderr < 0.0:
        raise InvalidArgument(f"stderr must be nonnegative, got {stderr}")
    satisfied = measured <= rhs + 3.0 * stderr
    if stderr > 0.0:
        slack = (rhs - measured) / stderr
    else:
        slack = math.inf if measured <= rhs else -math.inf
    return BoundReport(name=name, rhs=float(rhs), measured=float(measured),
                       satisfied=bool(satisfied), slack_sigma=float(slack))


def expand_risk_path(steps: np.ndarray, values: np.ndarray, T: int) -> np.ndarray:
    """Expand a checkpointed path to all steps 1..T, conservatively.

    steps must be sorted, start at 1 and end at T.  A step between two
    checkpoints gets the max of the bracketing recorded values.
    """
    steps = np.asarray(steps, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if steps.shape != values.shape or steps.ndim != 1 or steps.size == 0:
        raise InvalidArgument("steps and values must be equal-length 1-d arrays")
    if steps[0] != 1 or steps[-1] != T or np.any(np.diff(steps) <= 0):
        raise InvalidArgument("steps must be sorted, starting at 1 and ending at T")
    if steps.size == T:
        return values.copy()
    allj = np.arange(1, T + 1)
    right = np.searchsorted(steps, allj, side="left")  # steps[-1] == T keeps this in range
    left = np.clip(right - 1, 0, None)
    exact = steps[right] == allj
    full = np.maximum(values[left], values[right])
    full[exact] = values[right[exact]]
    return full


def default_p(n: int, t: int) -> float:
    """The bookkeeping parameter p = n/t, which keeps (1 + p/n)^t <= e."""
    if not (n >= 1 and t >= 1):
        raise InvalidArgument("n and t must be >= 1")
    return n / t


def default_gamma_smooth(L: float, emp_risk: float, l2_sq: float) -> float:
    """Balance parameter sqrt(2 L emp_risk / l2_sq) for the smooth gap bound.

    Floored at 1 so near-zero stability estimates cannot blow it up.
    """
    if not L > 0.0:
        raise InvalidArgument("L must be positive")
    if l2_sq <= 0.0 or emp_risk <= 0.0:
        return 1.0
    return max(1.0, math.sqrt(2.0 * L * emp_risk / l2_sq))


def default_gamma_holder(c1: float, pop_risk_frac: float, l2_sq: float) -> float:
    """Balance parameter c1 * sqrt(pop_risk_frac / l2_sq), floored at 1."""
    if not c1 > 0.0:
        raise InvalidArgument("c1 must be positive")
    if l2_sq <= 0.0 or pop_risk_frac <= 0.0:
        return 1.0
    return max(1.0, c1 * math.sqrt(pop_risk_frac / l2_sq))


# ---------------------------------------------------------------------------
# stability bounds
# ---------------------------------------------------------------------------

def _growth_weights(p: float, n: int, T: int, final_exponent: int) -> np.ndarray:
    # (1 + p/n)^(T + final_exponent - j) for j = 1..T
    expo = T + final_exponent - np.arange(1, T + 1, dtype=np.float64)
    return (1.0 + p / n) ** expo


def thm2_l1_bound(inp: BoundInputs) -> float:
    """l1 on-average stability of the output iterate, smooth convex case:

        (2 sqrt(2 L) / n) * sum_j eta_j E[sqrt(F_S(w_j))].
    """
    if inp.sqrt_risk_path is None:
        raise InvalidArgument("sqrt_risk_path is required")
    if inp.L is None or not inp.L > 0.0:
        raise InvalidArgument("positive L is required")
    path = np.asarray(inp.sqrt_risk_path, dtype=np.float64)
    if path.shape != (inp.T,):
        raise InvalidArgument("sqrt_risk_path must have length T")
    return float(2.0 * math.sqrt(2.0 * inp.L) / inp.n * np.sum(inp.etas * path))


def thm2_l2_bound(inp: BoundInputs) -> float:
    """Squared l2 on-average stability, smooth convex case:

        (8 (1 + 1/p) L / n) * sum_j (1 + p/n)^(T-j) eta_j^2 E[F_S(w_j)].
    """
    if inp.risk_path is None:
        raise InvalidArgument("risk_path is required")
    if inp.L is None or not inp.L > 0.0:
        raise InvalidArgument("positive L is required")
    p = inp.p if inp.p is not None else default_p(inp.n, inp.T)
    if not p > 0.0:
        raise InvalidArgument(f"p must be positive, got {p}")
    path = np.asarray(inp.risk_path, dtype=np.float64)
    if path.shape != (inp.T,):
        raise InvalidArgument("risk_path must have length T")
    w = _growth_weights(p, inp.n, inp.T, 0)
    return float(8.0 * (1.0 + 1.0 / p) * inp.L / inp.n
                 * np.sum(w * inp.etas ** 2 * path))


def thmD1_nonsmooth_l2_bound(inp: BoundInputs) -> float:
    """Squared l2 on-average stability for convex losses with alpha < 1:

        c3^2 sum_j (1+p/n)^(T+1-j) eta_j^(2/(1-alpha))
        + 4 (1 + 1/p) c1^2 sum_j (1+p/n)^(T-j) (eta_j^2 / n)
              * E[F_S(w_j)^(2 alpha/(1+alpha))].
    """
    if inp.alpha is None or inp.alpha >= 1.0:
        raise InvalidArgument("this bound needs alpha < 1 (use thm2_l2_bound at alpha = 1)")
    if inp.frac_risk_path is None:
        raise InvalidArgument("frac_risk_path is required")
    p = inp.p if inp.p is not None else default_p(inp.n, inp.T)
    if not p > 0.0:
        raise InvalidArgument(f"p must be positive, got {p}")
    c1, c3 = inp.c1, inp.c3
    path = np.asarray(inp.frac_risk_path, dtype=np.float64)
    if path.shape != (inp.T,):
        raise InvalidArgument("frac_risk_path must have length T")
    slack = c3 ** 2 * np.sum(_growth_weights(p, inp.n, inp.T, 1)
                             * inp.etas ** (2.0 / (1.0 - inp.alpha)))
    risk = 4.0 * (1.0 + 1.0 / p) * c1 ** 2 \
        * np.sum(_growth_weights(p, inp.n, inp.T, 0) * inp.etas ** 2 / inp.n * path)
    return float(slack + risk)


def thm6_convex_stability_bound(inp: BoundInputs) -> float:
    """l1 stability when only the empirical objective is convex:

        4 G C_T sum_j eta_j / n + 2 G sqrt(C_T sum_j eta_j^2 / n),
        C_T = prod_j (1 + L^2 eta_j^2).
    """
    if inp.G is None or not inp.G >= 0.0:
        raise InvalidArgument("nonnegative G is required")
    if inp.L is None or not inp.L > 0.0:
        raise InvalidArgument("positive L is required")
    C = float(np.prod(1.0 + inp.L ** 2 * inp.etas ** 2))
    s1 = float(np.sum(inp.etas))
    s2 = float(np.sum(inp.etas ** 2))
    return 4.0 * inp.G * C * s1 / inp.n + 2.0 * inp.G * math.sqrt(C * s2 / inp.n)


def thm8_strongly_convex_stability_bound(inp: BoundInputs, t: int, t0: int) -> float:
    """l1 stability with a strongly convex empirical objective:

        (4 G / sigma) * (1 / sqrt(n (t + t0)) + 1 / n).
    """
    if inp.sigma is None or not inp.sigma > 0.0:
        raise InvalidArgument("positive sigma is required")
    if inp.G is None or not inp.G >= 0.0:
        raise InvalidArgument("nonnegative G is required")
    if not (t >= 1 and t0 >= 0):
        raise InvalidArgument("t must be >= 1 and t0 >= 0")
    return 4.0 * inp.G / inp.sigma * (1.0 / math.sqrt(inp.n * (t + t0)) + 1.0 / inp.n)


def propC1_nonconvex_recurrence(prev_l2_sq: float, eta_t: float, L: float,
                                p: float, n: int, risk_t: float) -> float:
    """One step of the squared-stability recurrence without convexity:

        (1 + p/n)(1 + eta_t L)^2 * prev + 8 (1 + 1/p) L eta_t^2 / n * E[F_S(w_t)].
    """
    if not p > 0.0:
        raise InvalidArgument(f"p must be positive, got {p}")
    if not (L > 0.0 and n >= 1 and eta_t >= 0.0 and prev_l2_sq >= 0.0):
        raise InvalidArgument("invalid recurrence inputs")
    return (1.0 + p / n) * (1.0 + eta_t * L) ** 2 * prev_l2_sq \
        + 8.0 * (1.0 + 1.0 / p) * L * eta_t ** 2 / n * risk_t


# ---------------------------------------------------------------------------
# generalization via stability
# ---------------------------------------------------------------------------

def thm1b_generalization_bound(inp: BoundInputs, l2_sq: float, emp_risk: float) -> float:
    """Gap bound for nonnegative smooth losses:

        (L / gamma) * E[F_S(A(S))] + ((L + gamma) / 2) * l2_sq,

    where l2_sq already carries the Def-5 average over neighbors.
    """
    gamma = inp.gamma
    if gamma is None or not gamma > 0.0:
        raise InvalidArgument("positive gamma is required")
    if inp.L is None or not inp.L > 0.0:
        raise InvalidArgument("positive L is required")
    if l2_sq < 0.0 or emp_risk < 0.0:
        raise InvalidArgument("l2_sq and emp_risk must be nonnegative")
    return inp.L / gamma * emp_risk + 0.5 * (inp.L + gamma) * l2_sq


def thm1c_generalization_bound(inp: BoundInputs, l2_sq: float, pop_risk_frac: float) -> float:
    """Gap bound for nonnegative convex losses with Hölder subgradients:

        c1^2 / (2 gamma) * E[F^(2a/(1+a))(A(S))] + (gamma / 2) * l2_sq.
    """
    gamma = inp.gamma
    if gamma is None or not gamma > 0.0:
        raise InvalidArgument("positive gamma is required")
    if l2_sq < 0.0 or pop_risk_frac < 0.0:
        raise InvalidArgument("l2_sq and pop_risk_frac must be nonnegative")
    return inp.c1 ** 2 / (2.0 * gamma) * pop_risk_frac + 0.5 * gamma * l2_sq


def propD2_erm_bound(c1: float, n: int, sigma: float, pop_risk_frac: float) -> float:
    """Gap bound for the exact minimizer of a sigma-strongly-convex F_S:

        2 c1^2 / (n sigma) * E[F^(2a/(1+a))(A(S))].
    """
    if not sigma > 0.0:
        raise InvalidArgument(f"sigma must be positive, got {sigma}")
    if not (c1 > 0.0 and n >= 1 and pop_risk_frac >= 0.0):
        raise InvalidArgument("invalid inputs")
    return 2.0 * c1 ** 2 / (n * sigma) * pop_risk_frac


# ---------------------------------------------------------------------------
# optimization-error bounds
# ---------------------------------------------------------------------------

def lemmaA2a_opt_bound(inp: BoundInputs) -> float:
    """Averaged-iterate optimization error with bounded gradients:

        (G^2 sum_j eta_j^2 + ||w*||^2) / (2 sum_j eta_j).
    """
    if inp.G is None or not inp.G >= 0.0:
        raise InvalidArgument("nonnegative G is required")
    if inp.w_star_norm_sq is None or inp.w_star_norm_sq < 0.0:
        raise InvalidArgument("w_star_norm_sq is required")
    s1 = float(np.sum(inp.etas))
    if s1 <= 0.0:
        raise InvalidArgument("sum of step sizes must be positive")
    s2 = float(np.sum(inp.etas ** 2))
    return (inp.G ** 2 * s2 + inp.w_star_norm_sq) / (2.0 * s1)


def _require_nonincreasing(etas: np.ndarray) -> None:
    if np.any(np.diff(etas) > 0.0):
        raise PreconditionViolation("step sizes must be nonincreasing")


def lemmaA2c_weighted_opt_bound(inp: BoundInputs) -> float:
    """Bound on sum_j eta_j E[F_S(w_j) - F_S(w*)] for smooth nonneg losses:

        (1/2 + L eta_1) ||w*||^2 + 2 L sum_j eta_j^2 F_S(w*),

    valid for nonincreasing steps with eta_t <= 1/(2L).
    """
    if inp.L is None or not inp.L > 0.0:
        raise InvalidArgument("positive L is required")
    if inp.w_star_norm_sq is None or inp.pop_risk_at_opt is None:
        raise InvalidArgument("w_star_norm_sq and the risk at the minimizer are required")
    _require_nonincreasing(inp.etas)
    if np.any(inp.etas > 1.0 / (2.0 * inp.L) + 1e-15):
        raise PreconditionViolation("steps must satisfy eta_t <= 1/(2L)")
    s2 = float(np.sum(inp.etas ** 2))
    return (0.5 + inp.L * float(inp.etas[0])) * inp.w_star_norm_sq \
        + 2.0 * inp.L * s2 * inp.pop_risk_at_opt


def lemmaA2d_holder_opt_bound(inp: BoundInputs) -> float:
    """Bound on 2 sum_j eta_j E[F_S(w_j) - F_S(w*)], Hölder case alpha < 1:

        ||w*||^2 + c1^2 (sum eta^2)^((1-a)/(1+a))
          * (eta_1 ||w*||^2 + 2 sum eta^2 F_S(w*) + c2 sum eta^((3-a)/(1-a)))^(2a/(1+a)).
    """
    if inp.alpha is None or inp.alpha >= 1.0:
        raise InvalidArgument("this bound needs alpha < 1")
    if inp.w_star_norm_sq is None or inp.pop_risk_at_opt is None:
        raise InvalidArgument("w_star_norm_sq and the risk at the minimizer are required")
    _require_nonincreasing(inp.etas)
    a = inp.alpha
    s2 = float(np.sum(inp.etas ** 2))
    if s2 <= 0.0:
        raise InvalidArgument("sum of squared step sizes must be positive")
    c1, c2 = inp.c1, inp.c2
    bracket = float(inp.etas[0]) * inp.w_star_norm_sq \
        + 2.0 * s2 * inp.pop_risk_at_opt \
        + c2 * float(np.sum(inp.etas ** ((3.0 - a) / (1.0 - a))))
    return inp.w_star_norm_sq \
        + c1 ** 2 * s2 ** ((1.0 - a) / (1.0 + a)) * bracket ** (2.0 * a / (1.0 + a))


# ---------------------------------------------------------------------------
# high-probability / without-replacement extensions
# ---------------------------------------------------------------------------

def _c3_of(alpha: float, L: float) -> float:
    if not 0.0 <= alpha < 1.0:
        raise InvalidArgument(f"alpha must be in [0, 1), got {alpha}")
    if not L > 0.0:
        raise InvalidArgument(f"L must be positive, got {L}")
    return math.sqrt((1.0 - alpha) / (1.0 + alpha)) * (2.0 ** (-alpha) * L) ** (1.0 / (1.0 - alpha))


def propG1_high_prob_bound(c: float, theta: float, alpha: float, L: float, G: float,
                           t: int, n: int, delta: float) -> float:
    """With probability >= 1 - delta, the coupled distance after t constant
    steps eta_j = c * t^(-theta) is at most

        c3 c^(1/(1-a)) t^(1 - theta/(1-a))
        + 2 G c n^-1 (1 + sqrt(3 n t^-1 log(1/delta))) t^(1-theta).
    """
    if not 0.0 < delta < 1.0:
        raise InvalidArgument(f"delta must be in (0, 1), got {delta}")
    if not (c > 0.0 and 0.0 <= theta <= 1.0 and t >= 1 and n >= 1 and G >= 0.0):
        raise InvalidArgument("invalid inputs")
    c3 = _c3_of(alpha, L)
    first = c3 * c ** (1.0 / (1.0 - alpha)) * t ** (1.0 - theta / (1.0 - alpha))
    second = 2.0 * G * c / n * (1.0 + math.sqrt(3.0 * n * math.log(1.0 / delta) / t)) \
        * t ** (1.0 - theta)
    return first + second


def propG2_without_replacement_bound(etas_per_epoch, alpha: float, L: float,
                                     G: float, n: int) -> float:
    """l1 stability of epoch SGD (fresh shuffle per epoch):

        (2 G / n) sum_k sum_t eta^k_t + c3 sum_k sum_t (eta^k_t)^(1/(1-a)).
    """
    if not (G >= 0.0 and n >= 1):
        raise InvalidArgument("invalid inputs")
    c3 = _c3_of(alpha, L)
    total = 0.0
    for epoch in etas_per_epoch:
        epoch = np.asarray(epoch, dtype=np.float64)
        if np.any(epoch < 0.0):
            raise InvalidArgument("step sizes must be nonnegative")
        total += 2.0 * G / n * float(np.sum(epoch)) \
            + c3 * float(np.sum(epoch ** (1.0 / (1.0 - alpha))))
    return total


def chernoff_exceedance_threshold(mu: float, delta_tail: float) -> float:
    """Multiplicative Chernoff threshold: a Binomial-type count with mean mu
    stays below (1 + d~) mu with probability >= 1 - delta_tail, where
    d~ = sqrt(3 log(1/delta_tail) / mu)."""
    if not mu > 0.0:
        raise InvalidArgument(f"mu must be positive, got {mu}")
    if not 0.0 < delta_tail <= 1.0:
        raise InvalidArgument(f"delta_tail must be in (0, 1], got {delta_tail}")
    d = math.sqrt(3.0 * math.log(1.0 / delta_tail) / mu)
    return (1.0 + d) * mu
