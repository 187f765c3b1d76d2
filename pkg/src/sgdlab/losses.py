"""Per-example losses, their subgradients, and gradient-regularity checkers.

Every loss here is a function ``f(w; z)`` of a parameter vector ``w`` and a
single example ``z = (x, y)``.  The common structural assumption is Hölder
continuity of the subgradient,

    || df(w; z) - df(w'; z) || <= L * ||w - w'||^alpha ,   alpha in [0, 1],

with ``alpha = 1`` the smooth case and ``alpha = 0`` the bounded-subgradient
(Lipschitz loss) case.  ``regularity_constants`` turns ``(alpha, L)`` into the
derived constants c1/c2/c3 used by the stability bounds, and the ``check_*``
functions verify lemma-level inequalities on concrete points to a tolerance.

Batch variants (``batch_value`` / ``batch_grad``) evaluate one example per row
for a whole family of parameter rows at once; the trajectory engine is built
on top of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import InvalidArgument, PreconditionViolation

Example = Tuple[np.ndarray, float]

#: default checker tolerance: absolute plus relative to the dominant term
DEFAULT_TOL = 1e-9


# ---------------------------------------------------------------------------
# loss classes
# ---------------------------------------------------------------------------

class Loss:
    """Base class.  Subclasses define value/gradient and regularity metadata.

    Attributes
    ----------
    kind : str
        Stable machine name, also used in harness config files.
    alpha : float
        Hölder exponent of the subgradient map, in [0, 1].
    convex_per_example : bool
        Whether w -> f(w; z) is convex for every fixed example.
    nonnegative : bool
        Whether f(w; z) >= 0 for all inputs (needed by the self-bounding
        inequality).
    """

    kind: str = "abstract"
    alpha: float = 1.0
    convex_per_example: bool = True
    nonnegative: bool = True

    def batch_value(self, W: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def batch_grad(self, W: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- scalar convenience wrappers -------------------------------------

    def value(self, w: np.ndarray, x: np.ndarray, y: float) -> float:
        w = np.asarray(w, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        return float(self.batch_value(w[None, :], x[None, :], np.asarray([y]))[0])

    def subgradient(self, w: np.ndarray, x: np.ndarray, y: float) -> np.ndarray:
        w = np.asarray(w, dtype=np.float64)
        x = np.asarray(x, dtype=np.float64)
        return self.batch_grad(w[None, :], x[None, :], np.asarray([y]))[0]

    def holder_constant(self, x: np.ndarray, y: float) -> float:
        """Valid Hölder constant of w -> df(w; (x, y)) for this one example."""
        raise NotImplementedError

    def grad_norm_at_zero(self, x: np.ndarray, y: float) -> float:
        """||df(0; z)||, the g0 ingredient of c1 in the alpha = 0 case."""
        return float(np.linalg.norm(self.subgradient(np.zeros_like(np.asarray(x, dtype=np.float64)), x, y)))


class LeastSquares(Loss):
    """Squared error ``f(w; (x, y)) = 0.5 * (<w, x> - y)^2``.

    Smooth (alpha = 1) and convex; per-example smoothness constant ||x||^2.
    """

    kind = "least_squares"
    alpha = 1.0
    convex_per_example = True
    nonnegative = True

    def batch_value(self, W, X, y):
        r = np.einsum("bd,bd->b", W, X) - y
        return 0.5 * r * r

    def batch_grad(self, W, X, y):
        r = np.einsum("bd,bd->b", W, X) - y
        return r[:, None] * X

    def holder_constant(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        return float(x @ x)


class QNormHinge(Loss):
    """Hinge raised to the q-th power: ``f(w; (x, y)) = max(0, 1 - y <w, x>)^q``.

    q in [1, 2]; y in {-1, +1}.  alpha = q - 1.  At q = 1 the loss has a kink
    at margin exactly 1; the subgradient there is taken to be the zero vector
    (a valid element of the subdifferential, and deterministic).
    """

    kind = "q_hinge"
    convex_per_example = True
    nonnegative = True

    def __init__(self, q: float):
        if not 1.0 <= q <= 2.0:
            raise InvalidArgument(f"hinge exponent q must be in [1, 2], got {q}")
        self.q = float(q)
        self.alpha = self.q - 1.0

    def batch_value(self, W, X, y):
        slack = 1.0 - y * np.einsum("bd,bd->b", W, X)
        return np.maximum(slack, 0.0) ** self.q

    def batch_grad(self, W, X, y):
        slack = 1.0 - y * np.einsum("bd,bd->b", W, X)
        active = slack > 0.0  # kink at slack == 0 resolves to the zero vector
        coef = np.where(active, self.q * np.maximum(slack, 0.0) ** (self.q - 1.0), 0.0)
        return (-coef * y)[:, None] * X

    def holder_constant(self, x, y):
        # one-sided clipping of the margin is 1-Lipschitz, so the textbook
        # constant q * ||x||^q is valid (and tight as the margin crosses 1)
        nx = float(np.linalg.norm(x))
        return self.q * nx ** self.q


class QPowerAbsolute(Loss):
    """q-th power of the absolute residual: ``f(w; (x, y)) = |y - <w, x>|^q``.

    q in [1, 2]; alpha = q - 1.  At residual exactly 0 the subgradient is the
    zero vector.  Unlike the hinge, the residual is two-sided, so the sharp
    Hölder constant carries an extra factor 2^(2-q) (equality is approached as
    the residual flips sign, from |sgn(a)|a|^b - sgn(b)|b|^b| <= 2^(1-b)|a-b|^b
    with b = q - 1, tight at a = -b).  At q = 2 this reduces to the exact
    smoothness constant 2 ||x||^2.
    """

    kind = "q_power_abs"
    convex_per_example = True
    nonnegative = True

    def __init__(self, q: float):
        if not 1.0 <= q <= 2.0:
            raise InvalidArgument(f"power exponent q must be in [1, 2], got {q}")
        self.q = float(q)
        self.alpha = self.q - 1.0

    def batch_value(self, W, X, y):
        r = y - np.einsum("bd,bd->b", W, X)
        return np.abs(r) ** self.q

    def batch_grad(self, W, X, y):
        r = y - np.einsum("bd,bd->b", W, X)
        coef = np.where(r != 0.0, self.q * np.sign(r) * np.abs(r) ** (self.q - 1.0), 0.0)
        return (-coef)[:, None] * X

    def holder_constant(self, x, y):
        nx = float(np.linalg.norm(x))
        return 2.0 ** (2.0 - self.q) * self.q * nx ** self.q


class AucSquare(Loss):
    """Single-example surrogate for the pairwise AUC square objective.

    Parameterized by the positive-class probability ``p`` and the conditional
    feature means ``mu_plus = E[X | Y = +1]``, ``mu_minus = E[X | Y = -1]``.
    With kappa(y) = p * 1[y = -1] - (1 - p) * 1[y = +1] and
    D = mu_minus - mu_plus,

        f(w; (x, y)) = (1 - p) * (<w, x - mu_plus>)^2 * 1[y = +1]
                       + p * (<w, x - mu_minus>)^2 * 1[y = -1]
                       + p * (1 - p)
                       + 2 * (1 + <w, D>) * <w, x> * kappa(y)
                       - p * (1 - p) * <w, D>^2 .

    Its expectation over a fresh example equals the population AUC-square
    objective for every w, even though each individual f(.; z) is a
    (possibly indefinite) quadratic -- hence ``convex_per_example = False``
    and the loss may take negative values.
    """

    kind = "auc_square"
    alpha = 1.0
    convex_per_example = False
    nonnegative = False

    def __init__(self, p: float, mu_plus: np.ndarray, mu_minus: np.ndarray):
        if not 0.0 < p < 1.0:
            raise InvalidArgument(f"positive-class probability must be in (0, 1), got {p}")
        self.p = float(p)
        self.mu_plus = np.asarray(mu_plus, dtype=np.float64)
        self.mu_minus = np.asarray(mu_minus, dtype=np.float64)
        if self.mu_plus.shape != self.mu_minus.shape or self.mu_plus.ndim != 1:
            raise InvalidArgument("mu_plus and mu_minus must be 1-d arrays of equal length")
        self.diff = self.mu_minus - self.mu_plus  # D

    def _kappa(self, y: np.ndarray) -> np.ndarray:
        return np.where(y < 0.0, self.p, -(1.0 - self.p))

    def batch_value(self, W, X, y):
        p = self.p
        u = np.einsum("bd,bd->b", W, X)           # <w, x>
        s = W @ self.diff                          # <w, D>
        pos = y > 0.0
        a = np.einsum("bd,bd->b", W, X - self.mu_plus)
        b = np.einsum("bd,bd->b", W, X - self.mu_minus)
        out = p * (1.0 - p) + 2.0 * (1.0 + s) * u * self._kappa(y) - p * (1.0 - p) * s * s
        out = out + np.where(pos, (1.0 - p) * a * a, p * b * b)
        return out

    def batch_grad(self, W, X, y):
        p = self.p
        u = np.einsum("bd,bd->b", W, X)
        s = W @ self.diff
        kap = self._kappa(y)
        pos = (y > 0.0)[:, None]
        a = np.einsum("bd,bd->b", W, X - self.mu_plus)
        b = np.einsum("bd,bd->b", W, X - self.mu_minus)
        grad = 2.0 * kap[:, None] * ((1.0 + s)[:, None] * X + u[:, None] * self.diff[None, :])
        grad = grad - (2.0 * p * (1.0 - p) * s)[:, None] * self.diff[None, :]
        grad = grad + np.where(
            pos,
            (2.0 * (1.0 - p) * a)[:, None] * (X - self.mu_plus),
            (2.0 * p * b)[:, None] * (X - self.mu_minus),
        )
        return grad

    def holder_constant(self, x, y):
        # f(.; z) is an exact quadratic; bound the spectral norm of its
        # (constant) Hessian by the triangle inequality over its four terms
        x = np.asarray(x, dtype=np.float64)
        p = self.p
        nx = float(np.linalg.norm(x))
        nD = float(np.linalg.norm(self.diff))
        kap = p if y < 0.0 else (1.0 - p)
        if y > 0.0:
            quad = 2.0 * (1.0 - p) * float(np.linalg.norm(x - self.mu_plus)) ** 2
        else:
            quad = 2.0 * p * float(np.linalg.norm(x - self.mu_minus)) ** 2
        return quad + 4.0 * kap * nx * nD + 2.0 * p * (1.0 - p) * nD * nD


# module-level wrappers (the engine and the checkers below go through these)

def loss_value(loss: Loss, w: np.ndarray, z: Example) -> float:
    """f(w; z) for a single example z = (x, y)."""
    x, y = z
    return loss.value(w, x, y)


def loss_subgradient(loss: Loss, w: np.ndarray, z: Example) -> np.ndarray:
    """One deterministic element of the subdifferential of f(.; z) at w."""
    x, y = z
    return loss.subgradient(w, x, y)


# ---------------------------------------------------------------------------
# regularity constants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegularityConstants:
    """Constants derived from the Hölder regularity (alpha, L) of a loss.

    c1 controls the self-bounding inequality ||df(w)|| <= c1 * f(w)^(a/(1+a)).
    c2 and c3 control the expansiveness slack of a gradient step; both are
    undefined (None) at alpha = 1 where their defining exponents diverge.
    """

    c1: float
    c2: Optional[float]
    c3: Optional[float]


def regularity_constants(alpha: float, L: float, g0: Optional[float] = None) -> RegularityConstants:
    """Compute (c1, c2, c3) from the Hölder exponent and constant.

    Parameters
    ----------
    alpha : float in [0, 1]
    L : float > 0
        Hölder constant of the subgradient map.
    g0 : float >= 0, required iff alpha == 0
        A bound on ||df(0; z)||; enters c1 only in the alpha = 0 case.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgument(f"alpha must lie in [0, 1], got {alpha}")
    if not L > 0.0:
        raise InvalidArgument(f"L must be positive, got {L}")
    if alpha == 0.0:
        if g0 is None:
            raise InvalidArgument("g0 is required at alpha = 0")
        if g0 < 0.0:
            raise InvalidArgument(f"g0 must be nonnegative, got {g0}")
        c1 = g0 + L
    else:
        c1 = (1.0 + 1.0 / alpha) ** (alpha / (1.0 + alpha)) * L ** (1.0 / (1.0 + alpha))

    if alpha == 1.0:
        c2 = None
        c3 = None
    elif alpha == 0.0:
        c2 = c1 * c1
        c3 = L  # sqrt((1-a)/(1+a)) * (2^-a L)^(1/(1-a)) at a = 0
    else:
        c2 = ((1.0 - alpha) / (1.0 + alpha)) \
            * (2.0 * alpha / (1.0 + alpha)) ** (2.0 * alpha / (1.0 - alpha)) \
            * c1 ** ((2.0 + 2.0 * alpha) / (1.0 - alpha))
        c3 = math.sqrt((1.0 - alpha) / (1.0 + alpha)) \
            * (2.0 ** (-alpha) * L) ** (1.0 / (1.0 - alpha))
    return RegularityConstants(c1=c1, c2=c2, c3=c3)


# ---------------------------------------------------------------------------
# inequality checkers
# ---------------------------------------------------------------------------

def _leq(lhs: float, rhs: float, tol: float) -> bool:
    # absolute tol plus the same tol relative to the dominant term
    return lhs <= rhs + tol * (1.0 + max(abs(lhs), abs(rhs)))


def _per_example_constants(loss: Loss, z: Example) -> RegularityConstants:
    x, y = z
    L = loss.holder_constant(x, y)
    g0 = loss.grad_norm_at_zero(x, y) if loss.alpha == 0.0 else None
    return regularity_constants(loss.alpha, L, g0)


def check_self_bounding(loss: Loss, w: np.ndarray, z: Example, tol: float = DEFAULT_TOL) -> bool:
    """||df(w; z)|| <= c1 * f(w; z)^(alpha/(1+alpha)).  Needs f >= 0."""
    if not loss.nonnegative:
        raise PreconditionViolation(
            f"self-bounding requires a nonnegative loss, not {loss.kind}")
    c = _per_example_constants(loss, z)
    g = float(np.linalg.norm(loss_subgradient(loss, w, z)))
    f = loss_value(loss, w, z)
    f = max(f, 0.0)  # guard tiny negative round-off
    expo = loss.alpha / (1.0 + loss.alpha)
    return _leq(g, c.c1 * f ** expo, tol)


def check_gradient_monotonicity(loss: Loss, w: np.ndarray, w2: np.ndarray,
                                z: Example, tol: float = DEFAULT_TOL) -> bool:
    """<w - w2, df(w) - df(w2)> >= 0 for convex-per-example losses."""
    if not loss.convex_per_example:
        raise PreconditionViolation(
            f"gradient monotonicity requires a convex loss, not {loss.kind}")
    dw = np.asarray(w, dtype=np.float64) - np.asarray(w2, dtype=np.float64)
    dg = loss_subgradient(loss, w, z) - loss_subgradient(loss, w2, z)
    return _leq(0.0, float(dw @ dg), tol)


def check_cocoercivity(loss: Loss, w: np.ndarray, w2: np.ndarray,
                       z: Example, tol: float = DEFAULT_TOL) -> bool:
    """Hölder co-coercivity of a convex loss.

    For alpha > 0:
        <w - w2, df(w) - df(w2)>
            >= (2 L^(-1/alpha) alpha / (1 + alpha)) * ||df(w) - df(w2)||^((1+alpha)/alpha).
    At alpha = 0 the right-hand side degenerates and the inequality reduces to
    plain gradient monotonicity.
    """
    if not loss.convex_per_example:
        raise PreconditionViolation(
            f"co-coercivity requires a convex loss, not {loss.kind}")
    a = loss.alpha
    dw = np.asarray(w, dtype=np.float64) - np.asarray(w2, dtype=np.float64)
    dg = loss_subgradient(loss, w, z) - loss_subgradient(loss, w2, z)
    inner = float(dw @ dg)
    if a == 0.0:
        return _leq(0.0, inner, tol)
    x, y = z
    L = loss.holder_constant(x, y)
    rhs = 2.0 * L ** (-1.0 / a) * a / (1.0 + a) * float(np.linalg.norm(dg)) ** ((1.0 + a) / a)
    return _leq(rhs, inner, tol)


def check_nonexpansive(loss: Loss, w: np.ndarray, w2: np.ndarray, z: Example,
                       eta: float, tol: float = DEFAULT_TOL) -> bool:
    """Gradient step with eta <= 2/L is 1-Lipschitz for convex smooth losses."""
    if not (loss.convex_per_example and loss.alpha == 1.0):
        raise PreconditionViolation(
            f"non-expansiveness requires a convex smooth loss, not {loss.kind}")
    x, y = z
    L = loss.holder_constant(x, y)
    if eta > 2.0 / L:
        raise PreconditionViolation(
            f"step size {eta} exceeds 2/L = {2.0 / L} for this example")
    w = np.asarray(w, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    after = (w - eta * loss_subgradient(loss, w, z)) - (w2 - eta * loss_subgradient(loss, w2, z))
    return _leq(float(np.linalg.norm(after)), float(np.linalg.norm(w - w2)), tol)


def check_expansiveness_slack(loss: Loss, w: np.ndarray, w2: np.ndarray, z: Example,
                              eta: float, tol: float = DEFAULT_TOL) -> bool:
    """Squared expansion of a gradient step for convex alpha < 1 losses.

    ||(w - eta df(w)) - (w2 - eta df(w2))||^2 <= ||w - w2||^2 + c3^2 eta^(2/(1-alpha)).
    """
    if not loss.convex_per_example:
        raise PreconditionViolation(
            f"expansiveness slack requires a convex loss, not {loss.kind}")
    if loss.alpha >= 1.0:
        raise PreconditionViolation("expansiveness slack is stated for alpha < 1")
    if eta < 0.0:
        raise InvalidArgument(f"step size must be nonnegative, got {eta}")
    c = _per_example_constants(loss, z)
    w = np.asarray(w, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    after = (w - eta * loss_subgradient(loss, w, z)) - (w2 - eta * loss_subgradient(loss, w2, z))
    lhs = float(after @ after)
    dw = w - w2
    rhs = float(dw @ dw) + c.c3 ** 2 * eta ** (2.0 / (1.0 - loss.alpha))
    return _leq(lhs, rhs, tol)


def check_smoothness_upper_bound(loss: Loss, w: np.ndarray, w2: np.ndarray,
                                 z: Example, tol: float = DEFAULT_TOL) -> bool:
    """Quadratic upper bound f(w2) <= f(w) + <df(w), w2 - w> + L/2 ||w2 - w||^2.

    Valid for any loss with a Lipschitz gradient (alpha = 1), convex or not.
    """
    if loss.alpha != 1.0:
        raise PreconditionViolation(
            f"the quadratic upper bound requires a smooth loss, not alpha = {loss.alpha}")
    x, y = z
    L = loss.holder_constant(x, y)
    w = np.asarray(w, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    dw = w2 - w
    lhs = loss_value(loss, w2, z)
    rhs = loss_value(loss, w, z) + float(loss_subgradient(loss, w, z) @ dw) + 0.5 * L * float(dw @ dw)
    return _leq(lhs, rhs, tol)


# ---------------------------------------------------------------------------
# analytic gradient bounds on a centered ball
# ---------------------------------------------------------------------------

def gradient_bound_on_ball(loss: Loss, radius: float, x_bound: float,
                           y_bound: Optional[float] = None) -> float:
    """sup ||df(w; z)|| over ||w|| <= radius, ||x|| <= x_bound (and |y| <= y_bound).

    y_bound is required for the regression losses; the hinge takes y in
    {-1, +1} and ignores it, the AUC surrogate uses its own moment parameters.
    """
    if radius < 0.0 or x_bound < 0.0:
        raise InvalidArgument("radius and x_bound must be nonnegative")
    if isinstance(loss, LeastSquares):
        if y_bound is None:
            raise InvalidArgument("y_bound is required for least squares")
        return (radius * x_bound + y_bound) * x_bound
    if isinstance(loss, QNormHinge):
        return loss.q * (1.0 + radius * x_bound) ** (loss.q - 1.0) * x_bound
    if isinstance(loss, QPowerAbsolute):
        if y_bound is None:
            raise InvalidArgument("y_bound is required for the q-power absolute loss")
        return loss.q * (y_bound + radius * x_bound) ** (loss.q - 1.0) * x_bound
    if isinstance(loss, AucSquare):
        # ||df(w)|| <= ||df(0)|| + L(z) * ||w|| with df(0; z) = 2 kappa(y) x;
        # take the worse of the two label branches
        p = loss.p
        nD = float(np.linalg.norm(loss.diff))
        L_pos = 2.0 * (1.0 - p) * (x_bound + float(np.linalg.norm(loss.mu_plus))) ** 2 \
            + 4.0 * (1.0 - p) * x_bound * nD + 2.0 * p * (1.0 - p) * nD * nD
        L_neg = 2.0 * p * (x_bound + float(np.linalg.norm(loss.mu_minus))) ** 2 \
            + 4.0 * p * x_bound * nD + 2.0 * p * (1.0 - p) * nD * nD
        g_pos = 2.0 * (1.0 - p) * x_bound + L_pos * radius
        g_neg = 2.0 * p * x_bound + L_neg * radius
        return max(g_pos, g_neg)
    raise InvalidArgument(f"no gradient bound known for loss kind {loss.kind!r}")


def make_loss(kind: str, **params) -> Loss:
    """Factory used by the harness config layer."""
    if kind == "least_squares":
        return LeastSquares()
    if kind == "q_hinge":
        return QNormHinge(q=params.get("q", 1.0))
    if kind == "q_power_abs":
        return QPowerAbsolute(q=params.get("q", 2.0))
    if kind == "auc_square":
        return AucSquare(p=params["p"], mu_plus=params["mu_plus"], mu_minus=params["mu_minus"])
    raise InvalidArgument(f"unknown loss kind {kind!r}")
