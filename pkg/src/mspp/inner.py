"""Certified proximal-gradient solver for one round's proximal subproblem.

Each round minimizes

    F(w) = R_S(w) + (gamma / 2) * ||w - center||^2

which is gamma-strongly convex, so any subgradient g of F at w certifies
F(w) - min F <= ||g||^2 / (2 gamma). The solver runs proximal gradient descent
with step 1 / (L_local + gamma) until that bound falls below the requested
tolerance.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.special import expit

from .core import (
    CompositeObjective,
    LossKind,
    Minibatch,
    RegKind,
    batch_curvature,
    batch_loss_gradient,
    constrained_prox,
    empirical_risk,
    project_ball,
)

# relative slack for deciding that a point sits on the domain boundary
_BOUNDARY_RTOL = 1e-12


class SolverError(RuntimeError):
    """Base class for inner-solver failures."""


class DivergenceError(SolverError):
    """A non-finite objective or iterate was produced."""

    def __init__(self, message: str, round_index: int | None = None):
        super().__init__(message)
        self.round_index = round_index


class CertificationError(SolverError):
    """The iteration cap was hit before the requested tolerance was certified.

    The best point found and its certificate are kept on the exception.
    """

    def __init__(self, message: str, w: np.ndarray, certificate: "SolveCertificate",
                 round_index: int | None = None):
        super().__init__(message)
        self.w = w
        self.certificate = certificate
        self.round_index = round_index


@dataclass(frozen=True, eq=False)
class ProxSubproblem:
    obj: CompositeObjective
    batch: Minibatch
    center: np.ndarray
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("proximal modulus gamma must be positive")
        center = np.asarray(self.center, dtype=np.float64)
        if center.shape != (self.batch.p,):
            raise ValueError(f"center of shape {center.shape} does not match dimension {self.batch.p}")
        object.__setattr__(self, "center", center)

    def objective(self, w: np.ndarray) -> float:
        d = w - self.center
        return empirical_risk(self.obj, self.batch, w) + 0.5 * self.gamma * float(d @ d)

    def smooth_gradient(self, w: np.ndarray) -> np.ndarray:
        """Gradient of mean loss + proximal term (+ the l2 regularizer, which is smooth)."""
        X, y = self.batch.X, self.batch.y
        pred = X @ w
        if self.obj.loss is LossKind.QUADRATIC:
            coef = pred - y
        else:
            coef = -y * expit(-y * pred)
        g = (X.T @ coef) / self.batch.n + self.gamma * (w - self.center)
        if self.obj.reg.kind is RegKind.L2:
            g += self.obj.reg.mu * w
        return g

    def smooth_curvature(self) -> float:
        """Lipschitz constant of :meth:`smooth_gradient`, excluding gamma."""
        L = batch_curvature(self.obj.loss, self.batch)
        if self.obj.reg.kind is RegKind.L2:
            L += self.obj.reg.mu
        return L

    def prox_step(self, w: np.ndarray, grad: np.ndarray, step: float) -> np.ndarray:
        # l2 is folded into the smooth part, so only l1 is handled by the prox here
        if self.obj.reg.kind is RegKind.L1:
            return constrained_prox(self.obj, w - step * grad, step)
        return project_ball(w - step * grad, self.obj.radius)


class SolveMode(enum.Enum):
    CERTIFIED = "certified"
    HEURISTIC = "heuristic"


@dataclass(frozen=True)
class SolveOptions:
    """How to stop the inner loop.

    ``CERTIFIED`` stops once the certified gap is at most ``epsilon``.
    ``HEURISTIC`` stops when consecutive objective values differ by less
    than ``obj_diff_tol`` or after ``max_iters`` steps.
    """

    mode: SolveMode = SolveMode.CERTIFIED
    epsilon: float = 1e-12
    obj_diff_tol: float = 1e-3
    max_iters: int = 1000
    max_iters_hard: int = 100_000

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if not self.obj_diff_tol > 0 or self.max_iters < 1 or self.max_iters_hard < 1:
            raise ValueError("obj_diff_tol must be positive and iteration caps >= 1")

    @classmethod
    def certified(cls, epsilon: float, max_iters_hard: int = 100_000) -> "SolveOptions":
        return cls(SolveMode.CERTIFIED, epsilon=epsilon, max_iters_hard=max_iters_hard)

    @classmethod
    def heuristic(cls, obj_diff_tol: float = 1e-3, max_iters: int = 1000) -> "SolveOptions":
        return cls(SolveMode.HEURISTIC, obj_diff_tol=obj_diff_tol, max_iters=max_iters)


@dataclass(frozen=True)
class SolveCertificate:
    subopt_bound: float
    iters_used: int
    final_objective: float
    converged: bool = True


def _on_boundary(w: np.ndarray, radius: float | None) -> bool:
    return radius is not None and radius > 0 and math.sqrt(float(w @ w)) >= radius * (1.0 - _BOUNDARY_RTOL)


def _min_norm_from_smooth(prob: ProxSubproblem, w: np.ndarray, smooth: np.ndarray) -> np.ndarray:
    reg = prob.obj.reg
    if reg.kind is RegKind.L1 and reg.mu > 0:
        nonzero = w != 0
        # at w_i = 0 the best subgradient in [-mu, mu] soft-thresholds the smooth part
        g = np.where(nonzero, smooth + reg.mu * np.sign(w),
                     np.sign(smooth) * np.maximum(np.abs(smooth) - reg.mu, 0.0))
    else:
        g = smooth.copy()
        nonzero = None
    if prob.obj.radius is not None and _on_boundary(w, prob.obj.radius):
        # normal cone of the ball at w is {nu * w, nu >= 0}; zero coordinates of w
        # are unaffected, so the optimal nu is a scalar least-squares fit
        wa = w if nonzero is None else np.where(nonzero, w, 0.0)
        denom = float(wa @ wa)
        if denom > 0:
            nu = max(0.0, -float(g @ wa) / denom)
            g += nu * wa
    return g


def min_norm_subgradient(prob: ProxSubproblem, w: np.ndarray) -> np.ndarray:
    """Minimum-norm element of the subdifferential of F (plus the domain normal cone) at ``w``."""
    w = np.asarray(w, dtype=np.float64)
    return _min_norm_from_smooth(prob, w, prob.smooth_gradient(w))


def certify(prob: ProxSubproblem, w: np.ndarray) -> float:
    """Upper bound ||g||^2 / (2 gamma) on F(w) - min F."""
    g = min_norm_subgradient(prob, w)
    return float(g @ g) / (2.0 * prob.gamma)


def prox_gradient_iterates(prob: ProxSubproblem, w_init: np.ndarray | None = None
                           ) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(w_k, smooth_gradient(w_k))`` for k = 0, 1, 2, ... without end.

    ``w_0`` is ``w_init`` (default: the center) projected onto the domain.
    """
    w = prob.center.copy() if w_init is None else np.array(w_init, dtype=np.float64)
    w = project_ball(w, prob.obj.radius)
    step = 1.0 / (prob.smooth_curvature() + prob.gamma)
    while True:
        grad = prob.smooth_gradient(w)
        yield w, grad
        w = prob.prox_step(w, grad, step)


def solve(prob: ProxSubproblem, opts: SolveOptions | None = None,
          w_init: np.ndarray | None = None) -> tuple[np.ndarray, SolveCertificate]:
    """Minimize the proximal subproblem.

    Parameters
    ----------
    prob : ProxSubproblem
        The round's subproblem.
    opts : SolveOptions, optional
        Stopping rule; defaults to certified mode at 1e-12.
    w_init : ndarray, optional
        Warm start; defaults to ``prob.center``.

    Returns
    -------
    w : ndarray
        The approximate minimizer.
    certificate : SolveCertificate
        Certified upper bound on ``F(w) - min F`` and iteration count.

    Raises
    ------
    DivergenceError
        If the objective becomes non-finite.
    CertificationError
        In certified mode, if ``max_iters_hard`` steps do not reach the tolerance.
    """
    opts = opts or SolveOptions()
    gamma = prob.gamma
    prev_obj = None
    for k, (w, smooth) in enumerate(prox_gradient_iterates(prob, w_init)):
        g = _min_norm_from_smooth(prob, w, smooth)
        bound = float(g @ g) / (2.0 * gamma)
        if not np.isfinite(bound):
            raise DivergenceError(f"non-finite gradient after {k} inner iterations")
        if opts.mode is SolveMode.CERTIFIED:
            if bound <= opts.epsilon:
                return w, SolveCertificate(bound, k, prob.objective(w))
            if k >= opts.max_iters_hard:
                cert = SolveCertificate(bound, k, prob.objective(w), converged=False)
                raise CertificationError(
                    f"certified gap {bound:.3e} above tolerance {opts.epsilon:.3e} "
                    f"after {k} inner iterations", w, cert)
        else:
            obj = prob.objective(w)
            if not np.isfinite(obj):
                raise DivergenceError(f"non-finite objective after {k} inner iterations")
            done = prev_obj is not None and abs(prev_obj - obj) < opts.obj_diff_tol
            if done or k >= opts.max_iters:
                return w, SolveCertificate(bound, k, obj)
            prev_obj = obj
    raise AssertionError("unreachable")
