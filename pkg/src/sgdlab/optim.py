"""Projected/proximal SGD runners, step-size schedules and domains.

The update is

    w_{t+1} = P( w_t - eta_t * df(w_t; z_{i_t}) ),   w_1 = 0,

with i_t drawn i.i.d. uniform from {1..n} (counter-based generator, so the
index stream is reproducible from a single stored seed), and P either the
identity, the Euclidean projection onto a centered ball, or a proximal step
of an l1/l2 regularizer.  Without-replacement epochs reshuffle the dataset
each epoch (Fisher-Yates) and chain epochs by warm start.

All runners are deterministic given their seed: same seed, same platform,
bitwise-identical trajectories regardless of thread count (the engine never
splits work in a thread-dependent way).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from . import _engine
from .errors import InvalidArgument
from .losses import Loss

# ---------------------------------------------------------------------------
# domains and regularizers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ball:
    """Centered Euclidean ball {w : ||w||_2 <= radius}."""

    radius: float

    def __post_init__(self):
        if not self.radius > 0.0:
            raise InvalidArgument(f"ball radius must be positive, got {self.radius}")


def project(domain: Optional[Ball], w: np.ndarray) -> np.ndarray:
    """Euclidean projection of w onto the domain (None means all of R^d)."""
    w = np.asarray(w, dtype=np.float64)
    if domain is None:
        return w.copy()
    nrm = float(np.linalg.norm(w))
    if nrm <= domain.radius:
        return w.copy()
    return w * (domain.radius / nrm)


@dataclass(frozen=True)
class Regularizer:
    """Penalty lam * ||w||_1 or (lam/2) * ||w||_2^2, applied proximally."""

    kind: str  # "l1" | "l2"
    strength: float

    def __post_init__(self):
        if self.kind not in ("l1", "l2"):
            raise InvalidArgument(f"regularizer kind must be 'l1' or 'l2', got {self.kind!r}")
        if not self.strength >= 0.0:
            raise InvalidArgument(f"regularizer strength must be nonnegative, got {self.strength}")


# ---------------------------------------------------------------------------
# step-size schedules
# ---------------------------------------------------------------------------

class Schedule:
    """Base class.  ``etas(T)`` returns the step sizes (eta_1 .. eta_T).

    Schedules are nonincreasing in t by construction (validated parameters).
    Horizon-tied schedules know their run length and refuse a different one.
    """

    kind: str = "abstract"
    #: offset used by the linearly-weighted iterate average (weight t + t0 - 1)
    t0: int = 1

    def etas(self, T: int) -> np.ndarray:
        raise NotImplementedError

    def _check_T(self, T: int) -> None:
        # T = 0 is legal (an empty schedule): estimators treat a zero-step
        # run as the degenerate w = w_1 = 0 case.
        if not (isinstance(T, (int, np.integer)) and T >= 0):
            raise InvalidArgument(f"step count T must be a nonnegative integer, got {T}")


@dataclass(frozen=True)
class FixedConstant(Schedule):
    """eta_t = eta1 for every step."""

    eta1: float
    kind: str = field(default="fixed_constant", init=False)

    def __post_init__(self):
        if not self.eta1 > 0.0:
            raise InvalidArgument(f"step size must be positive, got {self.eta1}")

    def etas(self, T):
        self._check_T(T)
        return np.full(T, self.eta1, dtype=np.float64)


@dataclass(frozen=True)
class HorizonConstant(Schedule):
    """eta_t = c / sqrt(T) for a run of exactly T steps."""

    c: float
    horizon: int
    kind: str = field(default="horizon_constant", init=False)

    def __post_init__(self):
        if not self.c > 0.0:
            raise InvalidArgument(f"c must be positive, got {self.c}")
        if not self.horizon >= 1:
            raise InvalidArgument(f"horizon must be >= 1, got {self.horizon}")

    def etas(self, T):
        self._check_T(T)
        if T != self.horizon:
            raise InvalidArgument(
                f"schedule was built for horizon {self.horizon}, run has T = {T}")
        return np.full(T, self.c / math.sqrt(self.horizon), dtype=np.float64)


@dataclass(frozen=True)
class HorizonPoly(Schedule):
    """eta_t = c * T^(-theta), constant within a run of exactly T steps."""

    c: float
    theta: float
    horizon: int
    kind: str = field(default="horizon_poly", init=False)

    def __post_init__(self):
        if not self.c > 0.0:
            raise InvalidArgument(f"c must be positive, got {self.c}")
        if not 0.0 <= self.theta <= 1.0:
            raise InvalidArgument(f"theta must be in [0, 1], got {self.theta}")
        if not self.horizon >= 1:
            raise InvalidArgument(f"horizon must be >= 1, got {self.horizon}")

    def etas(self, T):
        self._check_T(T)
        if T != self.horizon:
            raise InvalidArgument(
                f"schedule was built for horizon {self.horizon}, run has T = {T}")
        return np.full(T, self.c * self.horizon ** (-self.theta), dtype=np.float64)


@dataclass(frozen=True)
class PolyDecay(Schedule):
    """eta_t = eta1 * t^(-theta)."""

    eta1: float
    theta: float
    kind: str = field(default="poly_decay", init=False)

    def __post_init__(self):
        if not self.eta1 > 0.0:
            raise InvalidArgument(f"eta1 must be positive, got {self.eta1}")
        if not 0.0 <= self.theta <= 1.0:
            raise InvalidArgument(f"theta must be in [0, 1], got {self.theta}")

    def etas(self, T):
        self._check_T(T)
        t = np.arange(1, T + 1, dtype=np.float64)
        return self.eta1 * t ** (-self.theta)


@dataclass(frozen=True)
class StronglyConvexDecay(Schedule):
    """eta_t = 2 / ((t + t0) * sigma), the strongly-convex prescription."""

    sigma: float
    t0: int
    kind: str = field(default="strongly_convex", init=False)

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise InvalidArgument(f"sigma must be positive, got {self.sigma}")
        if not self.t0 >= 0:
            raise InvalidArgument(f"t0 must be a nonnegative integer, got {self.t0}")

    def etas(self, T):
        self._check_T(T)
        t = np.arange(1, T + 1, dtype=np.float64)
        return 2.0 / ((t + self.t0) * self.sigma)


def t0_for_strong_convexity(L: float, sigma: float) -> int:
    """Smallest safe iteration offset ceil(4 L^2 / sigma^2) for the decay above."""
    if not (L > 0.0 and sigma > 0.0):
        raise InvalidArgument("L and sigma must be positive")
    return int(math.ceil(4.0 * L * L / (sigma * sigma)))


def make_schedule(kind: str, *, c=None, theta=None, eta1=None, sigma=None,
                  t0=None, horizon=None) -> Schedule:
    """Factory used by the harness config layer."""
    if kind == "fixed_constant":
        return FixedConstant(eta1=eta1)
    if kind == "horizon_constant":
        return HorizonConstant(c=c, horizon=horizon)
    if kind == "horizon_poly":
        return HorizonPoly(c=c, theta=theta, horizon=horizon)
    if kind == "poly_decay":
        return PolyDecay(eta1=eta1, theta=theta)
    if kind == "strongly_convex":
        return StronglyConvexDecay(sigma=sigma, t0=t0)
    raise InvalidArgument(f"unknown schedule kind {kind!r}")


# ---------------------------------------------------------------------------
# trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Trajectory:
    """Record of one SGD run.

    ``iterates`` holds w_t for the recorded steps t (``iterate_steps``; always
    includes t = 1 and the output step T + 1).  ``avg_eta`` is the
    step-size-weighted average of w_1..w_T, ``avg_linear`` the
    (t + t0 - 1)-weighted one.  ``per_step_risk[t-1]`` is f(w_t; z_{i_t}),
    the loss at the example the step actually drew, before the update.
    ``index_sequence_seed`` fully determines the index stream.
    """

    iterates: np.ndarray        # (K, d)
    iterate_steps: np.ndarray   # (K,) 1-based step numbers
    final: np.ndarray           # (d,) = w_{T+1}
    avg_eta: np.ndarray         # (d,)
    avg_linear: np.ndarray      # (d,)
    per_step_risk: np.ndarray   # (T,)
    index_sequence_seed: int


def _index_seed(rng_seed: int) -> int:
    return _engine.derive_seed(rng_seed, _engine.TAG_INDEX)


def _run(loss: Loss, features: np.ndarray, labels: np.ndarray, sched: Schedule,
         post, T: int, rng_seed: int, record_every: int) -> Trajectory:
    if not record_every >= 1:
        raise InvalidArgument(f"record_every must be >= 1, got {record_every}")
    n, d = features.shape
    if n < 1:
        raise InvalidArgument("dataset must contain at least one example")
    etas = sched.etas(T)
    seed = _index_seed(rng_seed)
    indices = _engine.index_matrix(seed, n, T, replicates=1)
    out = _engine.run_core(
        loss,
        features[None, :, :], labels[None, :],
        None, None, None,
        etas, post, indices,
        t0=sched.t0,
        record_every=record_every,
        collect_per_step_risk=True,
    )
    return Trajectory(
        iterates=out.iterates[0],
        iterate_steps=out.iterate_steps,
        final=out.finals[0, 0],
        avg_eta=out.avg_eta[0, 0],
        avg_linear=out.avg_lin[0, 0],
        per_step_risk=out.per_step_risk[0],
        index_sequence_seed=int(seed),
    )


def sgd_run(loss: Loss, dataset, sched: Schedule, domain: Optional[Ball],
            T: int, rng_seed: int, record_every: int = 1) -> Trajectory:
    """Projected SGD from w_1 = 0 for T steps on the given dataset.

    ``dataset`` is any object with ``features`` (n, d) and ``labels`` (n,).
    """
    if not T >= 1:
        raise InvalidArgument(f"T must be >= 1, got {T}")
    post = ("ball", domain.radius) if domain is not None else None
    return _run(loss, np.asarray(dataset.features, dtype=np.float64),
                np.asarray(dataset.labels, dtype=np.float64), sched, post, T,
                rng_seed, record_every)


def spgd_run(loss: Loss, reg: Optional[Regularizer], dataset, sched: Schedule,
             T: int, rng_seed: int, record_every: int = 1) -> Trajectory:
    """Stochastic proximal gradient: gradient step, then prox of the penalty.

    With ``reg is None`` this is, bit for bit, the same computation as
    ``sgd_run`` without a domain (identical code path and index stream).
    """
    if not T >= 1:
        raise InvalidArgument(f"T must be >= 1, got {T}")
    if reg is None:
        post = None
    elif reg.kind == "l2":
        post = ("prox_l2", reg.strength)
    else:
        post = ("prox_l1", reg.strength)
    return _run(loss, np.asarray(dataset.features, dtype=np.float64),
                np.asarray(dataset.labels, dtype=np.float64), sched, post, T,
                rng_seed, record_every)


def sgd_without_replacement_run(loss: Loss, dataset, sched: Schedule, epochs: int,
                                rng_seed: int) -> Trajectory:
    """Epoch SGD: a fresh uniform permutation each epoch, warm-started chaining.

    Runs ``epochs`` passes of n steps each (T = epochs * n total).  No
    projection is applied.  Step sizes are indexed by the global step count.
    """
    if not epochs >= 1:
        raise InvalidArgument(f"epochs must be >= 1, got {epochs}")
    features = np.asarray(dataset.features, dtype=np.float64)
    labels = np.asarray(dataset.labels, dtype=np.float64)
    n = features.shape[0]
    if n < 1:
        raise InvalidArgument("dataset must contain at least one example")
    T = epochs * n
    etas = sched.etas(T)
    seed = _index_seed(rng_seed)
    indices = _engine.permutation_matrix(seed, n, epochs, replicates=1)
    out = _engine.run_core(
        loss, features[None, :, :], labels[None, :],
        None, None, None,
        etas, None, indices,
        t0=sched.t0, record_every=n,
        collect_per_step_risk=True,
    )
    return Trajectory(
        iterates=out.iterates[0],
        iterate_steps=out.iterate_steps,
        final=out.finals[0, 0],
        avg_eta=out.avg_eta[0, 0],
        avg_linear=out.avg_lin[0, 0],
        per_step_risk=out.per_step_risk[0],
        index_sequence_seed=int(seed),
    )
