"""Sparse linear-regression simulation with closed-form population quantities.

Features are standard Gaussian, responses y = <w_bar, x> + N(0, sigma^2), the
loss is quadratic and the regularizer mu*||w||_1. Then

    R(w)  = 0.5 ||w - w_bar||^2 + sigma^2 / 2 + mu ||w||_1
    w*    = soft_threshold(w_bar, mu)

Random numbers come from numpy's Philox counter-based bit generator, with
Gaussians drawn by numpy's ziggurat sampler, so seeded traces agree across
platforms up to floating-point reassociation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algorithms import make_rng
from .core import DimensionError, Minibatch, soft_threshold

# excess risks below zero by more than this indicate a wrong optimum
_CLAMP_GUARD = 1e-9


@dataclass(frozen=True, eq=False)
class LassoGroundTruth:
    w_bar: np.ndarray
    sigma: float = 0.1
    mu: float = 1e-3

    def __post_init__(self):
        object.__setattr__(self, "w_bar", np.asarray(self.w_bar, dtype=np.float64))
        if self.sigma < 0 or self.mu < 0:
            raise ValueError("sigma and mu must be nonnegative")

    @property
    def p(self) -> int:
        return self.w_bar.shape[0]

    @property
    def k_bar(self) -> int:
        return int(np.count_nonzero(self.w_bar))


@dataclass(frozen=True)
class PopulationRiskEval:
    value: float
    excess: float


def generate_truth(p: int, k_bar: int, seed, *, sigma: float = 0.1, mu: float = 1e-3,
                   scale: float = 1.0) -> LassoGroundTruth:
    """Draw a ``k_bar``-sparse parameter with N(0, scale^2) nonzeros on a uniform random support."""
    if not 0 <= k_bar <= p:
        raise ValueError(f"sparsity k_bar={k_bar} must lie in [0, p={p}]")
    rng = make_rng(seed)
    w = np.zeros(p)
    support = rng.choice(p, size=k_bar, replace=False)
    values = scale * rng.standard_normal(k_bar)
    # a Gaussian draw of exactly zero would break the support count
    values[values == 0.0] = scale * np.finfo(float).eps
    w[support] = values
    return LassoGroundTruth(w, sigma=sigma, mu=mu)


def sample_lasso(truth: LassoGroundTruth, count: int, seed) -> Minibatch:
    if count < 1:
        raise ValueError("need at least one sample")
    rng = make_rng(seed)
    X = rng.standard_normal((count, truth.p))
    noise = rng.standard_normal(count)
    return Minibatch(X, X @ truth.w_bar + truth.sigma * noise)


def lasso_sampler(truth: LassoGroundTruth):
    """Sampler for :class:`~mspp.algorithms.Stream` drawing from ``truth``."""
    return _LassoSampler(truth)


class _LassoSampler:
    # a class rather than a closure so it pickles for worker processes
    def __init__(self, truth: LassoGroundTruth):
        self.truth = truth

    def __call__(self, rng: np.random.Generator, count: int) -> Minibatch:
        return sample_lasso(self.truth, count, rng)


def _check(truth: LassoGroundTruth, w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (truth.p,):
        raise DimensionError(f"parameter of shape {w.shape} does not match p={truth.p}")
    return w


def population_risk(truth: LassoGroundTruth, w) -> float:
    w = _check(truth, w)
    d = w - truth.w_bar
    return 0.5 * float(d @ d) + 0.5 * truth.sigma ** 2 + truth.mu * float(np.sum(np.abs(w)))


def population_optimum(truth: LassoGroundTruth) -> np.ndarray:
    return soft_threshold(truth.w_bar, truth.mu)


def excess_risk(truth: LassoGroundTruth, w) -> float:
    """R(w) - R(w*), computed without the cancelling constant terms.

    Raises ``ArithmeticError`` if the result is more negative than 1e-9.
    """
    w = _check(truth, w)
    w_star = population_optimum(truth)
    d = w - w_star
    # 0.5||w - w_bar||^2 - 0.5||w* - w_bar||^2 = 0.5||d||^2 + <d, w* - w_bar>
    value = 0.5 * float(d @ d) + float(d @ (w_star - truth.w_bar)) \
        + truth.mu * (float(np.sum(np.abs(w))) - float(np.sum(np.abs(w_star))))
    if value < -_CLAMP_GUARD:
        raise ArithmeticError(f"negative excess risk {value:.3e}: population optimum is wrong")
    return max(value, 0.0)


def evaluate_population(truth: LassoGroundTruth, w) -> PopulationRiskEval:
    return PopulationRiskEval(population_risk(truth, w), excess_risk(truth, w))


def qg_constants(truth: LassoGroundTruth) -> tuple[float, float]:
    """Quadratic-growth modulus and population curvature; both 1 since the Hessian is the identity."""
    return 1.0, 1.0
