"""Outer loops: M-SPP, its two-phase and shuffled variants, and minibatch proximal SGD."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, Union

import numpy as np

from .core import (
    EXACT_TOLERANCE,
    CompositeObjective,
    Constant,
    Exact,
    GammaSchedule,
    LinearQG,
    Minibatch,
    ToleranceSchedule,
    batch_loss_gradient,
    constrained_prox,
    gamma_at,
    tolerance_at,
)
from .inner import (
    CertificationError,
    DivergenceError,
    ProxSubproblem,
    SolveCertificate,
    SolveOptions,
    solve,
)

logger = logging.getLogger(__name__)


class Averaging(enum.Enum):
    TWEIGHTED = "tweighted"
    UNIFORM = "uniform"
    GAMMA_WEIGHTED = "gamma"


# (subproblem, round index, tolerance) -> (w_t, certificate)
InnerSolver = Callable[[ProxSubproblem, int, float], tuple[np.ndarray, SolveCertificate]]
# (round index, running average) -> {metric name: value}
Evaluator = Callable[[int, np.ndarray], dict]


def certified_inner(prob: ProxSubproblem, t: int, eps: float) -> tuple[np.ndarray, SolveCertificate]:
    return solve(prob, SolveOptions.certified(eps))


@dataclass(frozen=True)
class MsppConfig:
    n: int
    T: int
    gamma: GammaSchedule
    tol: ToleranceSchedule = field(default_factory=Exact)
    w0: np.ndarray | None = None
    seed: int = 0
    averaging: Averaging = Averaging.TWEIGHTED
    inner: InnerSolver | None = None

    def __post_init__(self):
        if self.n < 1 or self.T < 1:
            raise ValueError("minibatch size and round count must be at least 1")

    def initial_point(self, p: int) -> np.ndarray:
        if self.w0 is None:
            return np.zeros(p)
        w0 = np.array(self.w0, dtype=np.float64)
        if w0.shape != (p,):
            raise ValueError(f"w0 of shape {w0.shape} does not match dimension {p}")
        return w0


def make_rng(seed: Union[int, Sequence[int], np.random.Generator]) -> np.random.Generator:
    """Seeded Philox (counter-based) generator; Generators pass through."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.Generator(np.random.Philox(seed))


@dataclass(frozen=True)
class Stream:
    """Fresh i.i.d. minibatches drawn by ``sampler(rng, count)``."""

    sampler: Callable[[np.random.Generator, int], Minibatch]
    n: int

    def batches(self, seed) -> Callable[[int], Minibatch]:
        rng = make_rng(seed)
        return lambda t: self.sampler(rng, self.n)


@dataclass(frozen=True)
class FixedBatches:
    batches: tuple[Minibatch, ...]

    def __init__(self, batches: Sequence[Minibatch]):
        batches = tuple(batches)
        if not batches:
            raise ValueError("need at least one minibatch")
        n, p = batches[0].n, batches[0].p
        if any(b.n != n or b.p != p for b in batches):
            raise ValueError("all fixed minibatches must share n and p")
        object.__setattr__(self, "batches", batches)

    @property
    def n(self) -> int:
        return self.batches[0].n

    @property
    def p(self) -> int:
        return self.batches[0].p

    def __len__(self) -> int:
        return len(self.batches)


MinibatchSource = Union[Stream, FixedBatches]


@dataclass(frozen=True)
class TraceEntry:
    t: int
    samples_seen: int
    metrics: dict


@dataclass(frozen=True, eq=False)
class RunResult:
    w_bar: np.ndarray
    trace: list[TraceEntry]
    per_round_certs: list[SolveCertificate]
    weights: np.ndarray
    visit_order: list[int] | None = None
    iterates: list[np.ndarray] | None = None


class Averager:
    """Running weighted average that never stores the iterates."""

    def __init__(self, p: int):
        self.total = np.zeros(p)
        self.weight = 0.0
        self.weights: list[float] = []

    def update(self, weight: float, w: np.ndarray) -> "Averager":
        self.total += weight * w
        self.weight += weight
        self.weights.append(weight)
        return self

    def value(self) -> np.ndarray:
        return self.total / self.weight

    def normalized_weights(self) -> np.ndarray:
        return np.array(self.weights) / self.weight


def averaging_weight(mode: Averaging, t: int, gamma_t: float) -> float:
    if mode is Averaging.TWEIGHTED:
        return float(t)
    if mode is Averaging.UNIFORM:
        return 1.0
    return gamma_t


def weighted_average_update(state: Averager, t: int, w_t: np.ndarray, mode: Averaging = Averaging.TWEIGHTED,
                            gamma_t: float = 1.0) -> Averager:
    return state.update(averaging_weight(mode, t, gamma_t), w_t)


_warned: set = set()


def _check_qg_precondition(cfg: MsppConfig, obj: CompositeObjective) -> None:
    g = cfg.gamma
    if isinstance(g, LinearQG) and cfg.n < 64 * obj.L / (g.lam * g.rho):
        # once per distinct setting; repeated runs (replications, stability sweeps) would flood the log
        key = (cfg.n, obj.L, g.lam, g.rho)
        if key in _warned:
            return
        _warned.add(key)
        logger.warning("minibatch size n=%d is below 64L/(lam*rho)=%.4g; the fast-rate guarantee "
                       "for this schedule does not apply", cfg.n, 64 * obj.L / (g.lam * g.rho))


def _run_rounds(next_batch: Callable[[int], Minibatch], rounds: range, cfg: MsppConfig,
                obj: CompositeObjective, w_start: np.ndarray, *, tol_n: int, samples_before: int = 0,
                evaluate: Evaluator | None = None, eval_every: int = 1, keep_iterates: bool = False,
                averager: Averager | None = None):
    """Shared M-SPP recursion over ``rounds`` (1-based round indices)."""
    inner = cfg.inner or certified_inner
    w = w_start
    avg = averager or Averager(w.shape[0])
    trace, certs, iterates = [], [], []
    samples = samples_before
    last = rounds[-1]
    for t in rounds:
        batch = next_batch(t)
        gamma_t = gamma_at(cfg.gamma, t)
        eps_t = max(tolerance_at(cfg.tol, t, tol_n), EXACT_TOLERANCE)
        prob = ProxSubproblem(obj, batch, w, gamma_t)
        try:
            w, cert = inner(prob, t, eps_t)
        except (CertificationError, DivergenceError) as exc:
            exc.round_index = t
            raise
        samples += batch.n
        certs.append(cert)
        avg.update(averaging_weight(cfg.averaging, t, gamma_t), w)
        if keep_iterates:
            iterates.append(w)
        if evaluate is not None and ((t - rounds[0] + 1) % eval_every == 0 or t == last):
            trace.append(TraceEntry(t, samples, evaluate(t, avg.value())))
    return w, avg, trace, certs, iterates, samples


def mspp(source: MinibatchSource, cfg: MsppConfig, obj: CompositeObjective, *,
         evaluate: Evaluator | None = None, eval_every: int = 1, keep_iterates: bool = False) -> RunResult:
    """Minibatch stochastic proximal point.

    Each round draws a minibatch ``S_t`` and solves
    ``min R_{S_t}(w) + gamma_t/2 ||w - w_{t-1}||^2`` to the round's tolerance.
    ``evaluate`` (if given) is called on the running average every
    ``eval_every`` rounds and on the last round.
    """
    if isinstance(source, FixedBatches):
        if len(source) < cfg.T:
            raise ValueError(f"{len(source)} fixed minibatches for T={cfg.T} rounds")
        next_batch = lambda t: source.batches[t - 1]
        p = source.p
        first = None
    else:
        next_batch = source.batches(cfg.seed)
        first = next_batch(1)
        p = first.p
        pending = [first]
        draw = next_batch
        next_batch = lambda t: pending.pop() if pending else draw(t)
    _check_qg_precondition(cfg, obj)
    w0 = cfg.initial_point(p)
    _, avg, trace, certs, iterates, _ = _run_rounds(
        next_batch, range(1, cfg.T + 1), cfg, obj, w0, tol_n=cfg.n, evaluate=evaluate,
        eval_every=eval_every, keep_iterates=keep_iterates)
    return RunResult(avg.value(), trace, certs, avg.normalized_weights(),
                     iterates=iterates if keep_iterates else None)


def two_phase_subbatch(obj: CompositeObjective, n: int) -> int:
    """Phase-I sub-minibatch size 128 L / lam clamped to [1, n]."""
    lam = obj.lam if obj.lam is not None else 1.0
    return int(min(max(math.ceil(128.0 * obj.L / lam), 1), n))


def mspp_two_phase(source: MinibatchSource, cfg: MsppConfig, obj: CompositeObjective, m: int | None = None, *,
                   evaluate: Evaluator | None = None, eval_every: int = 1,
                   keep_iterates: bool = False) -> RunResult:
    """Two-phase M-SPP.

    Phase I runs M-SPP (t-weighted output, schedule restarted at t=1) over
    size-``m`` chunks of the first minibatch to produce ``w_1``; Phase II runs
    M-SPP over rounds 2..T from ``w_1`` and averages ``w_2..w_T`` with
    weights proportional to ``t``.
    """
    if cfg.T < 2:
        raise ValueError("two-phase M-SPP needs T >= 2")
    if m is None:
        m = two_phase_subbatch(obj, cfg.n)
    if not 1 <= m <= cfg.n:
        raise ValueError(f"phase-I sub-minibatch size m={m} must lie in [1, n={cfg.n}]")
    if isinstance(source, FixedBatches):
        if len(source) < cfg.T:
            raise ValueError(f"{len(source)} fixed minibatches for T={cfg.T} rounds")
        next_batch = lambda t: source.batches[t - 1]
    else:
        next_batch = source.batches(cfg.seed)
    _check_qg_precondition(cfg, obj)

    first = next_batch(1)
    chunks = first.split(m)
    w0 = cfg.initial_point(first.p)
    phase1_cfg = replace(cfg, averaging=Averaging.TWEIGHTED)
    _, avg1, _, certs1, _, _ = _run_rounds(lambda k: chunks[k - 1], range(1, len(chunks) + 1),
                                           phase1_cfg, obj, w0, tol_n=m)
    w1 = avg1.value()
    trace = []
    if evaluate is not None:
        trace.append(TraceEntry(1, first.n, evaluate(1, w1)))
    _, avg, trace2, certs2, iterates, _ = _run_rounds(
        next_batch, range(2, cfg.T + 1), cfg, obj, w1, tol_n=cfg.n, samples_before=first.n,
        evaluate=evaluate, eval_every=eval_every, keep_iterates=keep_iterates)
    return RunResult(avg.value(), trace + trace2, certs1 + certs2, avg.normalized_weights(),
                     iterates=[w1] + iterates if keep_iterates else None)


def mspp_swor(batches: FixedBatches, cfg: MsppConfig, obj: CompositeObjective, *,
              permutation: Sequence[int] | None = None, shuffle: bool = True,
              evaluate: Evaluator | None = None, eval_every: int = 1,
              keep_iterates: bool = False) -> RunResult:
    """M-SPP over a fixed set of T minibatches visited in a uniformly random order.

    The order is a seeded permutation drawn from ``cfg.seed`` unless
    ``permutation`` is given; ``shuffle=False`` forces the identity order.
    """
    T = len(batches)
    if cfg.T != T:
        raise ValueError(f"config asks for T={cfg.T} rounds but {T} minibatches were given")
    if permutation is not None:
        order = [int(i) for i in permutation]
        if sorted(order) != list(range(T)):
            raise ValueError("permutation must be a rearrangement of range(T)")
    elif shuffle:
        order = [int(i) for i in make_rng(cfg.seed).permutation(T)]
    else:
        order = list(range(T))
    _check_qg_precondition(cfg, obj)
    w0 = cfg.initial_point(batches.p)
    _, avg, trace, certs, iterates, _ = _run_rounds(
        lambda t: batches.batches[order[t - 1]], range(1, T + 1), cfg, obj, w0, tol_n=cfg.n,
        evaluate=evaluate, eval_every=eval_every, keep_iterates=keep_iterates)
    return RunResult(avg.value(), trace, certs, avg.normalized_weights(), visit_order=order,
                     iterates=iterates if keep_iterates else None)


@dataclass(frozen=True)
class ConstantStep:
    c: float

    def at(self, t: int) -> float:
        return self.c


@dataclass(frozen=True)
class InvSqrtStep:
    c: float = 1.0

    def at(self, t: int) -> float:
        return self.c / math.sqrt(t)


@dataclass(frozen=True)
class InvTStep:
    c: float
    lam: float

    def at(self, t: int) -> float:
        return self.c / (self.lam * t)


StepRule = Union[ConstantStep, InvSqrtStep, InvTStep]


def msgd(source: MinibatchSource, cfg: MsppConfig, obj: CompositeObjective, step: StepRule, *,
         evaluate: Evaluator | None = None, eval_every: int = 1, keep_iterates: bool = False) -> RunResult:
    """Minibatch proximal SGD baseline: w_t = prox(w_{t-1} - eta_t * grad R^l_{S_t}(w_{t-1}), eta_t)."""
    if isinstance(source, FixedBatches):
        if len(source) < cfg.T:
            raise ValueError(f"{len(source)} fixed minibatches for T={cfg.T} rounds")
        next_batch = lambda t: source.batches[t - 1]
        p = source.p
        pending = []
    else:
        draw = source.batches(cfg.seed)
        first = draw(1)
        p = first.p
        pending = [first]
        next_batch = lambda t: pending.pop() if pending else draw(t)
    w = cfg.initial_point(p)
    avg = Averager(p)
    trace, iterates = [], []
    samples = 0
    for t in range(1, cfg.T + 1):
        batch = next_batch(t)
        eta = step.at(t)
        w = constrained_prox(obj, w - eta * batch_loss_gradient(obj.loss, w, batch), eta)
        if not np.all(np.isfinite(w)):
            raise DivergenceError(f"M-SGD iterate became non-finite at round {t} (step {eta:.3g})", t)
        samples += batch.n
        gamma_t = gamma_at(cfg.gamma, t) if cfg.averaging is Averaging.GAMMA_WEIGHTED else 1.0
        avg.update(averaging_weight(cfg.averaging, t, gamma_t), w)
        if keep_iterates:
            iterates.append(w)
        if evaluate is not None and (t % eval_every == 0 or t == cfg.T):
            trace.append(TraceEntry(t, samples, evaluate(t, avg.value())))
    return RunResult(avg.value(), trace, [], avg.normalized_weights(),
                     iterates=iterates if keep_iterates else None)


def default_step_rule(cfg: MsppConfig, c: float = 1.0) -> StepRule:
    """InvT for quadratic-growth schedules, InvSqrt otherwise."""
    g = cfg.gamma
    if isinstance(g, Constant):
        return InvSqrtStep(c)
    return InvTStep(c, g.lam)
