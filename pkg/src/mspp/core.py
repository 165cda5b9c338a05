"""Losses, regularizers, composite risks and the regularization/tolerance schedules.

Data are dense: a :class:`Minibatch` stores its features as an ``(n, p)`` array
and its responses as an ``(n,)`` array, and behaves like an ordered sequence of
:class:`Sample` objects.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, Union

import numpy as np
from scipy.special import expit

# Stand-in for a zero inner-solve tolerance; exact zeros are unreachable in float64.
EXACT_TOLERANCE = 1e-12


class DimensionError(ValueError):
    """Raised when vector dimensions do not agree."""


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 1:
            raise DimensionError(f"sample features must be a vector, got shape {x.shape}")
        if not math.isfinite(float(self.y)):
            raise ValueError("sample response must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", float(self.y))

    @property
    def p(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True, eq=False)
class Minibatch:
    """An ordered, non-empty collection of samples sharing one dimension."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        y = np.atleast_1d(np.asarray(self.y, dtype=np.float64))
        if X.shape[0] == 0:
            raise ValueError("a minibatch needs at least one sample")
        if y.shape != (X.shape[0],):
            raise DimensionError(f"{X.shape[0]} feature rows but responses of shape {y.shape}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def from_samples(cls, samples: Iterable[Sample]) -> "Minibatch":
        samples = list(samples)
        if not samples:
            raise ValueError("a minibatch needs at least one sample")
        p = samples[0].p
        if any(s.p != p for s in samples):
            raise DimensionError("all samples of a minibatch must share the same dimension")
        return cls(np.stack([s.x for s in samples]), np.array([s.y for s in samples]))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.X[i], self.y[i])

    def __iter__(self) -> Iterator[Sample]:
        for i in range(self.n):
            yield self[i]

    def split(self, size: int) -> list["Minibatch"]:
        """Consecutive chunks of ``size`` rows; the last chunk keeps any remainder."""
        return [Minibatch(self.X[i:i + size], self.y[i:i + size]) for i in range(0, self.n, size)]


Data = Union[Minibatch, Sequence[Sample]]


def as_minibatch(data: Data) -> Minibatch:
    if isinstance(data, Minibatch):
        return data
    if isinstance(data, Sample):
        return Minibatch(data.x[None, :], np.array([data.y]))
    return Minibatch.from_samples(data)


class LossKind(enum.Enum):
    QUADRATIC = "quadratic"
    LOGISTIC = "logistic"


class RegKind(enum.Enum):
    NONE = "none"
    L1 = "l1"
    L2 = "l2"


@dataclass(frozen=True)
class Regularizer:
    kind: RegKind = RegKind.NONE
    mu: float = 0.0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("regularization modulus must be nonnegative")

    @classmethod
    def none(cls) -> "Regularizer":
        return cls(RegKind.NONE, 0.0)

    @classmethod
    def l1(cls, mu: float) -> "Regularizer":
        return cls(RegKind.L1, float(mu))

    @classmethod
    def l2(cls, mu: float) -> "Regularizer":
        return cls(RegKind.L2, float(mu))


@dataclass(frozen=True)
class CompositeObjective:
    """Loss plus regularizer, with the constants the schedules need.

    ``L`` is the smoothness constant of the loss, ``G`` the Lipschitz constant
    of the regularizer and ``lam`` the quadratic-growth modulus of the
    population risk (when known). ``radius`` restricts the domain to the
    Euclidean ball of that radius; ``None`` means the whole space.
    """

    loss: LossKind
    reg: Regularizer = field(default_factory=Regularizer.none)
    L: float = 1.0
    G: float = 0.0
    lam: float | None = None
    radius: float | None = None

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError("smoothness constant L must be positive")
        if self.G < 0:
            raise ValueError("Lipschitz constant G must be nonnegative")
        if self.lam is not None and not self.lam > 0:
            raise ValueError("quadratic-growth modulus must be positive")
        if self.radius is not None and self.radius < 0:
            raise ValueError("domain radius must be nonnegative")

    @classmethod
    def for_data(cls, loss: LossKind, reg: Regularizer, data: Data, *, L: float | None = None,
                 lam: float | None = None, radius: float | None = None) -> "CompositeObjective":
        """Fill in L from the data and G from the regularizer (L1: mu*sqrt(p))."""
        batch = as_minibatch(data)
        if L is None:
            L = smoothness_bound(loss, batch)
        return cls(loss, reg, L=L, G=reg_lipschitz(reg, batch.p, radius), lam=lam, radius=radius)


def reg_lipschitz(reg: Regularizer, p: int, radius: float | None = None) -> float:
    if reg.kind is RegKind.L1:
        return reg.mu * math.sqrt(p)
    if reg.kind is RegKind.L2 and reg.mu > 0:
        # only Lipschitz on a bounded domain
        return reg.mu * radius if radius is not None else math.inf
    return 0.0


def _check_dims(w: np.ndarray, p: int) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (p,):
        raise DimensionError(f"parameter of shape {w.shape} does not match feature dimension {p}")
    return w


# ---------------------------------------------------------------------------
# losses

def batch_losses(kind: LossKind, w: np.ndarray, batch: Minibatch) -> np.ndarray:
    """Per-sample losses over a minibatch."""
    w = _check_dims(w, batch.p)
    pred = batch.X @ w
    if kind is LossKind.QUADRATIC:
        return 0.5 * (batch.y - pred) ** 2
    return np.logaddexp(0.0, -batch.y * pred)


def batch_loss_gradient(kind: LossKind, w: np.ndarray, batch: Minibatch) -> np.ndarray:
    """Gradient of the mean loss over a minibatch."""
    w = _check_dims(w, batch.p)
    pred = batch.X @ w
    if kind is LossKind.QUADRATIC:
        coef = pred - batch.y
    else:
        coef = -batch.y * expit(-batch.y * pred)
    return batch.X.T @ coef / batch.n


def loss_value(kind: LossKind, w: np.ndarray, z: Sample) -> float:
    """Loss of the linear predictor ``w`` on one sample.

    >>> loss_value(LossKind.QUADRATIC, np.zeros(2), Sample([1.0, 2.0], 2.0))
    2.0
    """
    w = _check_dims(w, z.p)
    m = float(z.x @ w)
    if kind is LossKind.QUADRATIC:
        return 0.5 * (z.y - m) ** 2
    return float(np.logaddexp(0.0, -z.y * m))


def loss_gradient(kind: LossKind, w: np.ndarray, z: Sample) -> np.ndarray:
    w = _check_dims(w, z.p)
    m = float(z.x @ w)
    if kind is LossKind.QUADRATIC:
        return -(z.y - m) * z.x
    return -z.y * float(expit(-z.y * m)) * z.x


def sample_curvature(kind: LossKind, x: np.ndarray) -> float:
    """Per-sample smoothness constant of the loss in ``w``."""
    sq = float(np.dot(x, x))
    return sq if kind is LossKind.QUADRATIC else sq / 4.0


def smoothness_bound(kind: LossKind, data: Data) -> float:
    """Largest per-sample curvature over ``data``: max ||x||^2 (quadratic) or a quarter of it (logistic)."""
    batch = as_minibatch(data)
    sq = float(np.max(np.einsum("ij,ij->i", batch.X, batch.X)))
    L = sq if kind is LossKind.QUADRATIC else sq / 4.0
    # all-zero features give a flat loss; keep the constant positive
    return L if L > 0 else np.finfo(float).tiny


def batch_curvature(kind: LossKind, batch: Minibatch) -> float:
    """Exact curvature bound of the mean loss over ``batch``: lambda_max(X^T X)/n, quartered for logistic."""
    X = batch.X
    gram = X.T @ X if batch.n >= batch.p else X @ X.T
    top = float(np.linalg.eigvalsh(gram)[-1]) / batch.n
    top = max(top, 0.0) * (1.0 + 1e-12)
    return top if kind is LossKind.QUADRATIC else top / 4.0


# ---------------------------------------------------------------------------
# regularizers

def reg_value(reg: Regularizer, w: np.ndarray) -> float:
    w = np.asarray(w, dtype=np.float64)
    if reg.kind is RegKind.L1:
        return reg.mu * float(np.sum(np.abs(w)))
    if reg.kind is RegKind.L2:
        return 0.5 * reg.mu * float(w @ w)
    return 0.0


def soft_threshold(v: np.ndarray, level: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - level, 0.0)


def reg_prox(reg: Regularizer, v: np.ndarray, eta: float) -> np.ndarray:
    """argmin_u  eta * r(u) + 0.5 * ||u - v||^2."""
    if not eta > 0:
        raise ValueError("prox step must be positive")
    v = np.asarray(v, dtype=np.float64)
    if reg.kind is RegKind.L1:
        return soft_threshold(v, eta * reg.mu)
    if reg.kind is RegKind.L2:
        return v / (1.0 + eta * reg.mu)
    return v.copy()


def project_ball(w: np.ndarray, radius: float | None) -> np.ndarray:
    if radius is None:
        return w
    norm = math.sqrt(float(w @ w))
    if norm <= radius:
        return w
    return w * (radius / norm)


def constrained_prox(obj: CompositeObjective, v: np.ndarray, eta: float) -> np.ndarray:
    """Prox of eta*r plus the domain indicator.

    For the l1, l2 and zero regularizers the ball-constrained prox is the
    unconstrained prox followed by radial projection.
    """
    return project_ball(reg_prox(obj.reg, v, eta), obj.radius)


# ---------------------------------------------------------------------------
# risks

def empirical_risk(obj: CompositeObjective, S: Data, w: np.ndarray) -> float:
    """Mean loss over ``S`` plus the regularizer."""
    batch = as_minibatch(S)
    return float(np.mean(batch_losses(obj.loss, w, batch))) + reg_value(obj.reg, w)


# ---------------------------------------------------------------------------
# schedules

@dataclass(frozen=True)
class LinearQG:
    """gamma_t = lam * rho * t / 4."""

    lam: float
    rho: float = 0.5

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not 0 < self.rho <= 0.5:
            raise ValueError("rho must lie in (0, 0.5]")

    def at(self, t: int) -> float:
        return self.lam * self.rho * t / 4.0


@dataclass(frozen=True)
class LinearQGOffset:
    """gamma_t = lam * rho * t / 4 + 16 L / n."""

    lam: float
    rho: float
    L: float
    n: int

    def __post_init__(self):
        if not self.lam > 0 or not self.L > 0 or self.n < 1:
            raise ValueError("lam, L must be positive and n >= 1")
        if not 0 < self.rho <= 0.5:
            raise ValueError("rho must lie in (0, 0.5]")

    def at(self, t: int) -> float:
        return self.lam * self.rho * t / 4.0 + 16.0 * self.L / self.n


@dataclass(frozen=True)
class Constant:
    gamma: float

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    def at(self, t: int) -> float:
        return self.gamma


GammaSchedule = Union[LinearQG, LinearQGOffset, Constant]


@dataclass(frozen=True)
class Exact:
    def at(self, t: int, n: int) -> float:
        return EXACT_TOLERANCE


@dataclass(frozen=True)
class PolyQG:
    """eps_t = eps / (n t^4)."""

    eps: float = 1.0

    def __post_init__(self):
        if not 0 <= self.eps <= 1:
            raise ValueError("eps must lie in [0, 1]")

    def at(self, t: int, n: int) -> float:
        return self.eps / (n * float(t) ** 4)


@dataclass(frozen=True)
class PolyConvex:
    """eps_t = min(eps / (n^2 t^5), 2 G^2 / (9 n^2 gamma))."""

    eps: float
    G: float
    gamma: float

    def __post_init__(self):
        if not 0 <= self.eps <= 1:
            raise ValueError("eps must lie in [0, 1]")
        if self.G < 0 or not self.gamma > 0:
            raise ValueError("G must be nonnegative and gamma positive")

    def at(self, t: int, n: int) -> float:
        n2 = float(n) ** 2
        return min(self.eps / (n2 * float(t) ** 5), 2.0 * self.G ** 2 / (9.0 * n2 * self.gamma))


@dataclass(frozen=True)
class Fixed:
    eps: float

    def __post_init__(self):
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")

    def at(self, t: int, n: int) -> float:
        return self.eps


ToleranceSchedule = Union[Exact, PolyQG, PolyConvex, Fixed]


def gamma_at(sched: GammaSchedule, t: int) -> float:
    if t < 1:
        raise ValueError("round index starts at 1")
    return sched.at(t)


def tolerance_at(sched: ToleranceSchedule, t: int, n: int) -> float:
    if t < 1 or n < 1:
        raise ValueError("round index and minibatch size start at 1")
    return sched.at(t, n)
