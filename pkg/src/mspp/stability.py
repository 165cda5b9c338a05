"""Empirical uniform stability of M-SPP and M-SPP-SWoR against the closed-form bounds.

Two datasets are neighbours when they differ in one sample of one minibatch.
The measured quantity is the distance between the averaged outputs on the two
datasets; for the shuffled variant the same permutation drives both runs and
the distance is averaged over permutation draws.

Random probes only explore some neighbours, so the reported maximum is a lower
estimate of the true supremum.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .algorithms import Averager, FixedBatches, MsppConfig, _run_rounds, make_rng
from .core import (
    EXACT_TOLERANCE,
    CompositeObjective,
    LossKind,
    Minibatch,
    Sample,
    as_minibatch,
    gamma_at,
    tolerance_at,
)


class StabilityAlgo(enum.Enum):
    MSPP = "mspp"
    MSPP_SWOR = "mspp-swor"


@dataclass(frozen=True)
class PerturbationSpec:
    """Replace sample ``sample_index`` of minibatch ``batch_index`` (both 1-based)."""

    batch_index: int
    sample_index: int
    replacement: Sample


@dataclass
class StabilityReport:
    empirical_sup: float
    theory_bound: float
    per_perturbation: list = field(default_factory=list)
    rep_distances: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "empirical_sup": self.empirical_sup,
            "theory_bound": self.theory_bound,
            "per_perturbation": [
                {"batch_index": s.batch_index, "sample_index": s.sample_index,
                 "replacement_x": s.replacement.x.tolist(), "replacement_y": s.replacement.y,
                 "distance": d}
                for s, d in self.per_perturbation
            ],
        }


def perturb(batches: FixedBatches, spec: PerturbationSpec) -> FixedBatches:
    T, n, p = len(batches), batches.n, batches.p
    if not 1 <= spec.batch_index <= T:
        raise IndexError(f"batch index {spec.batch_index} outside [1, {T}]")
    if not 1 <= spec.sample_index <= n:
        raise IndexError(f"sample index {spec.sample_index} outside [1, {n}]")
    if spec.replacement.p != p:
        raise ValueError(f"replacement has dimension {spec.replacement.p}, data has {p}")
    old = batches.batches[spec.batch_index - 1]
    X, y = old.X.copy(), old.y.copy()
    X[spec.sample_index - 1] = spec.replacement.x
    y[spec.sample_index - 1] = spec.replacement.y
    out = list(batches.batches)
    out[spec.batch_index - 1] = Minibatch(X, y)
    return FixedBatches(out)


def loss_bound_M(obj: CompositeObjective, radius: float | None, data) -> float:
    """Largest loss any sample in ``data`` can take on the ball of the given radius."""
    if radius is None:
        raise ValueError("loss bound needs a bounded domain (set a radius)")
    batch = as_minibatch(data)
    reach = radius * np.linalg.norm(batch.X, axis=1)
    if obj.loss is LossKind.QUADRATIC:
        return float(np.max(0.5 * (np.abs(batch.y) + reach) ** 2))
    return float(np.max(np.logaddexp(0.0, reach)))


def stability_bound(cfg: MsppConfig, L: float, M: float, variant: str = "a") -> float:
    """Uniform-stability bound on ||w_bar_T - w_bar'_T||.

    Variant ``"a"`` (in-order M-SPP):
        4 sqrt(2LM) / (n min_t gamma_t) + sum_t 2 sqrt(2 eps_t / gamma_t)
    Variant ``"b"`` (shuffled, in expectation over the order):
        sum_t [4 sqrt(2LM) / (n T gamma_t) + 2 sqrt(2 eps_t / gamma_t)]
    """
    gammas = np.array([gamma_at(cfg.gamma, t) for t in range(1, cfg.T + 1)])
    eps = np.array([max(tolerance_at(cfg.tol, t, cfg.n), EXACT_TOLERANCE) for t in range(1, cfg.T + 1)])
    lip = 4.0 * math.sqrt(2.0 * L * M)
    inexact = float(np.sum(2.0 * np.sqrt(2.0 * eps / gammas)))
    if variant == "a":
        return lip / (cfg.n * float(gammas.min())) + inexact
    if variant == "b":
        return float(np.sum(lip / (cfg.n * cfg.T * gammas))) + inexact
    raise ValueError(f"unknown bound variant {variant!r}")


def random_specs(batches: FixedBatches, count: int, seed, replacement_sampler) -> list[PerturbationSpec]:
    """Uniformly placed perturbations whose replacements come from ``replacement_sampler(rng, 1)``."""
    rng = make_rng(seed)
    specs = []
    for _ in range(count):
        b = int(rng.integers(1, len(batches) + 1))
        i = int(rng.integers(1, batches.n + 1))
        specs.append(PerturbationSpec(b, i, replacement_sampler(rng, 1)[0]))
    return specs


def constants_for(obj: CompositeObjective, batches: FixedBatches, specs) -> tuple[float, float]:
    """Smoothness L and loss bound M over the data and every replacement sample."""
    X = np.vstack([b.X for b in batches.batches] + [s.replacement.x[None, :] for s in specs])
    y = np.concatenate([b.y for b in batches.batches] + [[s.replacement.y] for s in specs])
    allb = Minibatch(X, y)
    sq = float(np.max(np.einsum("ij,ij->i", X, X)))
    L = sq if obj.loss is LossKind.QUADRATIC else sq / 4.0
    return max(L, np.finfo(float).tiny), loss_bound_M(obj, obj.radius, allb)


@dataclass
class _Snapshot:
    w: np.ndarray
    total: np.ndarray
    weight: float
    weights: list


def _trajectory(batches: FixedBatches, cfg: MsppConfig, obj: CompositeObjective, order) -> list[_Snapshot]:
    """States after 0, 1, ..., T rounds of M-SPP visiting ``batches`` in ``order``."""
    w = cfg.initial_point(batches.p)
    avg = Averager(batches.p)
    states = [_Snapshot(w, avg.total.copy(), avg.weight, [])]
    for t in range(1, cfg.T + 1):
        w, avg, *_ = _run_rounds(lambda s: batches.batches[order[s - 1]], range(t, t + 1), cfg, obj, w,
                                 tol_n=cfg.n, averager=avg)
        states.append(_Snapshot(w, avg.total.copy(), avg.weight, list(avg.weights)))
    return states


def _resume(batches: FixedBatches, cfg: MsppConfig, obj: CompositeObjective, order, state: _Snapshot,
            start: int) -> np.ndarray:
    """Averaged output of rounds ``start..T`` continued from ``state``."""
    if start > cfg.T:
        return state.total / state.weight
    avg = Averager(batches.p)
    avg.total, avg.weight, avg.weights = state.total.copy(), state.weight, list(state.weights)
    _, avg, *_ = _run_rounds(lambda s: batches.batches[order[s - 1]], range(start, cfg.T + 1), cfg, obj, state.w,
                             tol_n=cfg.n, averager=avg)
    return avg.value()


def measure_stability(algo: StabilityAlgo, batches: FixedBatches, cfg: MsppConfig, obj: CompositeObjective,
                      specs: list[PerturbationSpec], sampling_reps: int = 200) -> StabilityReport:
    """Rerun on each neighbouring dataset and compare averaged outputs.

    For the shuffled variant, rep ``r`` uses the permutation seeded by
    ``(cfg.seed, r)`` on both datasets. ``rep_distances`` keeps the per-rep
    distances for each spec.

    Both runs coincide until the perturbed minibatch is visited, so the
    neighbouring run restarts from the base run's state at that round; this
    reproduces a full rerun bit for bit.
    """
    if cfg.n != batches.n or cfg.T != len(batches):
        raise ValueError(f"config (n={cfg.n}, T={cfg.T}) does not match data "
                         f"(n={batches.n}, T={len(batches)})")
    if algo is StabilityAlgo.MSPP_SWOR and sampling_reps < 1:
        raise ValueError("need at least one permutation draw")
    L, M = constants_for(obj, batches, specs) if specs else (obj.L, 0.0)
    variant = "a" if algo is StabilityAlgo.MSPP else "b"
    bound = stability_bound(cfg, L, M, variant) if specs else 0.0

    if algo is StabilityAlgo.MSPP:
        orders = [list(range(cfg.T))]
    else:
        orders = [[int(i) for i in make_rng([cfg.seed, r]).permutation(cfg.T)] for r in range(sampling_reps)]
    # trajectories are only needed once some spec asks for them
    bases = [_trajectory(batches, cfg, obj, order) for order in orders] if specs else []

    per, reps = [], []
    for spec in specs:
        other = perturb(batches, spec)
        dists = []
        for order, traj in zip(orders, bases):
            k = order.index(spec.batch_index - 1)
            w_other = _resume(other, cfg, obj, order, traj[k], k + 1)
            dists.append(float(np.linalg.norm(traj[-1].total / traj[-1].weight - w_other)))
        reps.append(dists)
        per.append((spec, float(np.mean(dists))))
    sup = max((d for _, d in per), default=0.0)
    return StabilityReport(sup, bound, per, reps)
