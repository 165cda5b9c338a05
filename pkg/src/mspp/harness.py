"""Experiment drivers: Lasso simulation, logistic classification, stability measurement.

Every driver turns an :class:`ExperimentConfig` into a list of :class:`TraceRow`
(one per evaluated round and replication) which :func:`emit_csv` writes out.
Replication ``r`` uses seed ``cfg.seed + r``; all randomness inside a run is
derived from that seed, so reruns give identical rows apart from wallclock_ms.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np

from .algorithms import (
    Averaging,
    ConstantStep,
    FixedBatches,
    InvSqrtStep,
    InvTStep,
    MsppConfig,
    Stream,
    make_rng,
    msgd,
    mspp,
    mspp_swor,
    mspp_two_phase,
)
from .core import (
    CompositeObjective,
    Constant,
    Exact,
    Fixed,
    LinearQG,
    LinearQGOffset,
    LossKind,
    Minibatch,
    PolyConvex,
    PolyQG,
    Regularizer,
    batch_loss_gradient,
    constrained_prox,
    reg_lipschitz,
    sample_curvature,
    smoothness_bound,
)
from .inner import DivergenceError, ProxSubproblem, SolveCertificate, SolveOptions, certify, solve
from .libsvm import parse_libsvm
from .oracle import excess_risk, generate_truth, lasso_sampler, qg_constants, sample_lasso
from .stability import StabilityAlgo, constants_for, measure_stability, random_specs, stability_bound

logger = logging.getLogger(__name__)

CSV_HEADER = ["run_id", "algorithm", "t", "samples_seen", "metric_name", "metric_value", "wallclock_ms"]
ALGORITHMS = ("mspp", "mspp-tp", "mspp-swor", "msgd")


class ConfigError(ValueError):
    """Inconsistent or incomplete experiment configuration (exit code 1)."""


class DataError(RuntimeError):
    """Unreadable or unusable dataset (exit code 2)."""


@dataclass(frozen=True)
class TraceRow:
    run_id: str
    algorithm: str
    t: int
    samples_seen: int
    metric_name: str
    metric_value: float
    wallclock_ms: float


@dataclass
class ExperimentConfig:
    """All knobs of the three experiments; ``None`` means "use the experiment default"."""

    experiment: str = "lasso"
    algorithm: str = "mspp"
    p: int | None = None
    n: int | None = None
    T: int | None = None
    N: int | None = None
    epochs: int = 10
    sigma: float | None = None
    mu: float | None = None
    reg: str | None = None
    k_frac: float = 0.2
    w_scale: float = 1.0
    lam: float | None = None
    L: float | None = None
    rho: float | str = 0.5
    gamma_schedule: str | None = None
    gamma: float | str = "auto"
    tol_schedule: str | None = None
    eps: float = 1.0
    inner: str = "certified"
    averaging: str | None = None
    m: int | None = None
    step_rule: str | None = None
    step_c: float = 1.0
    radius: float | None = None
    perturbations: int = 20
    sampling_reps: int = 200
    data: str | None = None
    eval_every: int | None = None
    metric: str | None = None
    seed: int = 0
    reps: int = 1
    jobs: int = 1
    out: str | None = None
    summary: str | None = None

    @classmethod
    def from_dict(cls, values: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(sorted(unknown))}")
        return cls(**values)

    def validate(self) -> None:
        if self.experiment not in ("lasso", "logistic", "stability"):
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; choose from {', '.join(ALGORITHMS)}")
        if self.experiment == "stability" and self.algorithm not in ("mspp", "mspp-swor"):
            raise ConfigError("stability experiments support mspp and mspp-swor only")
        for name in ("p", "n", "T", "N"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.epochs < 1 or self.reps < 1 or self.jobs < 1:
            raise ConfigError("epochs, reps and jobs must be positive")
        if self.inner not in ("certified", "heuristic", "sgd"):
            raise ConfigError(f"unknown inner solver {self.inner!r}")


# ---------------------------------------------------------------------------
# CSV

def emit_csv(rows: list[TraceRow], path) -> None:
    """Write rows with shortest round-trip float formatting, UTF-8, LF line endings.

    ``path`` may also be an open text stream.
    """
    if hasattr(path, "write"):
        _write_rows(rows, path)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        _write_rows(rows, fh)


def _write_rows(rows, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow([r.run_id, r.algorithm, r.t, r.samples_seen, r.metric_name,
                         repr(float(r.metric_value)), repr(float(r.wallclock_ms))])


def read_csv(path) -> list[TraceRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        return [TraceRow(d["run_id"], d["algorithm"], int(d["t"]), int(d["samples_seen"]), d["metric_name"],
                         float(d["metric_value"]), float(d["wallclock_ms"])) for d in reader]


# ---------------------------------------------------------------------------
# building blocks

def _gamma_schedule(cfg: ExperimentConfig, *, lam: float, rho: float, L: float, n: int, T: int,
                    default: str):
    kind = cfg.gamma_schedule or default
    if kind == "linear-qg":
        return LinearQG(lam, rho)
    if kind == "linear-qg-offset":
        return LinearQGOffset(lam, rho, L, n)
    if kind == "constant":
        if cfg.gamma == "auto":
            return Constant(math.sqrt(T / n) + 16.0 * L / n)
        return Constant(float(cfg.gamma))
    raise ConfigError(f"unknown gamma schedule {kind!r}")


def _tol_schedule(cfg: ExperimentConfig, *, G: float, gamma, default: str):
    kind = cfg.tol_schedule or default
    if kind == "exact":
        return Exact()
    if kind == "poly-qg":
        return PolyQG(cfg.eps)
    if kind == "poly-convex":
        if not isinstance(gamma, Constant):
            raise ConfigError("poly-convex tolerances pair with the constant gamma schedule")
        return PolyConvex(cfg.eps, G if math.isfinite(G) else 0.0, gamma.gamma)
    if kind == "fixed":
        return Fixed(cfg.eps)
    raise ConfigError(f"unknown tolerance schedule {kind!r}")


def _rho(cfg: ExperimentConfig, *, n: int, T: int, lam: float) -> float:
    if cfg.rho == "case2":
        # balances the two terms of the rate when T is small relative to n; capped at 0.5
        return min(0.5, math.sqrt(T / (n * lam)))
    rho = float(cfg.rho)
    if not 0 < rho <= 0.5:
        raise ConfigError("rho must lie in (0, 0.5]")
    return rho


def _averaging(cfg: ExperimentConfig, gamma) -> Averaging:
    if cfg.averaging is not None:
        try:
            return Averaging(cfg.averaging)
        except ValueError:
            raise ConfigError(f"unknown averaging {cfg.averaging!r}") from None
    if cfg.algorithm == "mspp-swor":
        return Averaging.GAMMA_WEIGHTED
    return Averaging.UNIFORM if isinstance(gamma, Constant) else Averaging.TWEIGHTED


def _step_rule(cfg: ExperimentConfig, gamma, lam: float):
    kind = cfg.step_rule or ("invsqrt" if isinstance(gamma, Constant) else "invt")
    if kind == "invsqrt":
        return InvSqrtStep(cfg.step_c)
    if kind == "invt":
        return InvTStep(cfg.step_c, lam)
    if kind == "constant":
        return ConstantStep(cfg.step_c)
    raise ConfigError(f"unknown step rule {kind!r}")


def _regularizer(cfg: ExperimentConfig, default_kind: str, default_mu: float) -> Regularizer:
    kind = cfg.reg or default_kind
    mu = default_mu if cfg.mu is None else cfg.mu
    if kind == "l1":
        return Regularizer.l1(mu)
    if kind == "l2":
        return Regularizer.l2(mu)
    if kind == "none":
        return Regularizer.none()
    raise ConfigError(f"unknown regularizer {kind!r}")


class HeuristicInner:
    """Stop on objective change below 1e-3 or after 1000 steps; reports the bound reached."""

    def __call__(self, prob: ProxSubproblem, t: int, eps: float):
        return solve(prob, SolveOptions.heuristic())


class SGDEpochInner:
    """One shuffled pass of size-10 proximal SGD over the round's minibatch, from the center.

    Step 1/(max per-sample curvature + gamma). No tolerance is enforced; the
    certificate reports the bound actually reached.
    """

    def __init__(self, seed, batch_size: int = 10):
        self.seed = seed
        self.batch_size = batch_size

    def __call__(self, prob: ProxSubproblem, t: int, eps: float):
        batch, obj = prob.batch, prob.obj
        L = max(sample_curvature(obj.loss, x) for x in batch.X)
        step = 1.0 / (L + prob.gamma)
        order = make_rng([*np.atleast_1d(self.seed), t]).permutation(batch.n)
        w = prob.center.copy()
        for start in range(0, batch.n, self.batch_size):
            idx = order[start:start + self.batch_size]
            sub = Minibatch(batch.X[idx], batch.y[idx])
            g = batch_loss_gradient(obj.loss, w, sub) + prob.gamma * (w - prob.center)
            w = constrained_prox(obj, w - step * g, step)
        if not np.all(np.isfinite(w)):
            raise DivergenceError(f"SGD inner solve became non-finite in round {t}", t)
        steps = math.ceil(batch.n / self.batch_size)
        return w, SolveCertificate(certify(prob, w), steps, prob.objective(w), converged=False)


def _inner(cfg: ExperimentConfig, seed):
    if cfg.inner == "heuristic":
        return HeuristicInner()
    if cfg.inner == "sgd":
        return SGDEpochInner(seed)
    return None


def _run_algorithm(cfg: ExperimentConfig, source, mcfg: MsppConfig, obj: CompositeObjective, lam: float,
                   evaluate, eval_every: int):
    algo = cfg.algorithm
    if algo == "mspp":
        return mspp(source, mcfg, obj, evaluate=evaluate, eval_every=eval_every)
    if algo == "mspp-tp":
        return mspp_two_phase(source, mcfg, obj, cfg.m, evaluate=evaluate, eval_every=eval_every)
    if algo == "msgd":
        return msgd(source, mcfg, obj, _step_rule(cfg, mcfg.gamma, lam), evaluate=evaluate,
                    eval_every=eval_every)
    if not isinstance(source, FixedBatches):
        draw = source.batches(mcfg.seed)
        source = FixedBatches([draw(t) for t in range(1, mcfg.T + 1)])
    return mspp_swor(source, dataclasses.replace(mcfg, seed=[*np.atleast_1d(mcfg.seed), 2]), obj,
                     evaluate=evaluate, eval_every=eval_every)


class _Recorder:
    """Evaluation callback that also timestamps each row."""

    def __init__(self, metric, name: str):
        self.metric = metric
        self.name = name
        self.start = time.perf_counter()
        self.stamps: dict[int, float] = {}

    def __call__(self, t: int, w_bar: np.ndarray) -> dict:
        self.stamps[t] = (time.perf_counter() - self.start) * 1e3
        value = self.metric(w_bar)
        if not math.isfinite(value):
            raise DivergenceError(f"{self.name} is {value} at round {t}", t)
        return {self.name: value}


def _rows_from(result, recorder: _Recorder, run_id: str, algorithm: str) -> list[TraceRow]:
    return [TraceRow(run_id, algorithm, e.t, e.samples_seen, recorder.name, float(e.metrics[recorder.name]),
                     recorder.stamps[e.t]) for e in result.trace]


# ---------------------------------------------------------------------------
# Lasso

def lasso_sizes(cfg: ExperimentConfig) -> tuple[int, int, int, int]:
    """Resolve (p, n, T, N), rejecting inconsistent triples."""
    p = cfg.p or 200
    n, T, N = cfg.n, cfg.T, cfg.N
    if n is not None and T is not None:
        if N is not None and n * T != N:
            raise ConfigError(f"inconsistent sizes: n*T = {n}*{T} = {n * T} but N = {N}")
        return p, n, T, n * T
    N = N or 100 * p
    if n is None and T is None:
        T = 50
    if T is not None:
        if N % T:
            raise ConfigError(f"N = {N} is not divisible by T = {T}")
        return p, N // T, T, N
    if N % n:
        raise ConfigError(f"N = {N} is not divisible by n = {n}")
    return p, n, N // n, N


def _lasso_run(cfg: ExperimentConfig, seed: int) -> list[TraceRow]:
    p, n, T, _ = lasso_sizes(cfg)
    sigma = 0.1 if cfg.sigma is None else cfg.sigma
    mu = 1e-3 if cfg.mu is None else cfg.mu
    k_bar = int(round(cfg.k_frac * p))
    truth = generate_truth(p, k_bar, [seed, 0], sigma=sigma, mu=mu, scale=cfg.w_scale)
    lam, _ = qg_constants(truth)
    lam = cfg.lam or lam
    reg = _regularizer(cfg, "l1", mu)
    stream = Stream(lasso_sampler(truth), n)
    # global L from the first round's minibatch (same draw the run will see)
    L = cfg.L or smoothness_bound(LossKind.QUADRATIC, sample_lasso(truth, n, [seed, 1]))
    obj = CompositeObjective(LossKind.QUADRATIC, reg, L=L, G=reg_lipschitz(reg, p, cfg.radius), lam=lam,
                             radius=cfg.radius)
    rho = _rho(cfg, n=n, T=T, lam=lam)
    gamma = _gamma_schedule(cfg, lam=lam, rho=rho, L=L, n=n, T=T, default="linear-qg")
    tol = _tol_schedule(cfg, G=obj.G, gamma=gamma, default="poly-qg")
    mcfg = MsppConfig(n=n, T=T, gamma=gamma, tol=tol, seed=[seed, 1], averaging=_averaging(cfg, gamma),
                      inner=_inner(cfg, [seed, 4]))
    if cfg.metric in (None, "excess_risk"):
        recorder = _Recorder(partial(excess_risk, truth), "excess_risk")
    elif cfg.metric == "log10_excess_risk":
        recorder = _Recorder(lambda w: math.log10(max(excess_risk(truth, w), 1e-300)), "log10_excess_risk")
    else:
        raise ConfigError(f"metric {cfg.metric!r} does not apply to the lasso experiment")
    result = _run_algorithm(cfg, stream, mcfg, obj, lam, recorder, cfg.eval_every or 1)
    run_id = f"lasso-{cfg.algorithm}-seed{seed}"
    return _rows_from(result, recorder, run_id, cfg.algorithm)


def run_lasso_experiment(cfg: ExperimentConfig) -> list[TraceRow]:
    cfg.validate()
    lasso_sizes(cfg)
    return _fan_out(_lasso_run, cfg)


# ---------------------------------------------------------------------------
# logistic regression

def synthetic_separable(p: int, count: int, seed) -> Minibatch:
    """Gaussian features labelled by the sign of a Gaussian hyperplane (sign(0) -> +1)."""
    rng = make_rng(seed)
    w = rng.standard_normal(p)
    X = rng.standard_normal((count, p))
    return Minibatch(X, np.where(X @ w >= 0, 1.0, -1.0))


def test_error(w: np.ndarray, data: Minibatch) -> float:
    """Fraction of samples with sign(<w, x>) != y, counting sign(0) as +1."""
    pred = np.where(data.X @ w >= 0, 1.0, -1.0)
    return float(np.mean(pred != data.y))


def split_half(data: Minibatch, seed) -> tuple[Minibatch, Minibatch]:
    perm = make_rng(seed).permutation(data.n)
    half = data.n // 2
    tr, te = perm[:half], perm[half:]
    if len(te) == 0 or len(tr) == 0:
        raise DataError(f"{data.n} samples cannot be split into non-empty train and test halves")
    return Minibatch(data.X[tr], data.y[tr]), Minibatch(data.X[te], data.y[te])


@dataclass(frozen=True)
class EpochBatches:
    """Successive size-``n`` minibatches of a fixed training set, reshuffled every epoch.

    A remainder smaller than ``n`` is dropped in each epoch.
    """

    data: Minibatch
    n: int

    def batches(self, seed):
        rng = make_rng(seed)
        per_epoch = self.data.n // self.n
        state = {"order": None}

        def draw(t: int) -> Minibatch:
            k = (t - 1) % per_epoch
            if k == 0:
                state["order"] = rng.permutation(self.data.n)
            idx = state["order"][k * self.n:(k + 1) * self.n]
            return Minibatch(self.data.X[idx], self.data.y[idx])

        return draw


def load_logistic_data(cfg: ExperimentConfig, seed: int) -> Minibatch:
    if cfg.data:
        try:
            data, _ = parse_libsvm(cfg.data)
        except OSError as exc:
            raise DataError(f"cannot read {cfg.data}: {exc}") from exc
        except ValueError as exc:
            raise DataError(str(exc)) from exc
        return data
    return synthetic_separable(cfg.p or 50, cfg.N or 20000, [cfg.seed, 5])


def logistic_sizes(cfg: ExperimentConfig, n_train: int) -> tuple[int, int]:
    n = cfg.n or max(n_train // 5, 1)
    if n > n_train:
        raise ConfigError(f"minibatch size n = {n} exceeds the {n_train} training samples")
    T = (n_train // n) * cfg.epochs
    if cfg.T is not None and cfg.T != T:
        raise ConfigError(f"T = {cfg.T} is inconsistent with {cfg.epochs} epochs of "
                          f"{n_train // n} minibatches of size {n}")
    return n, T


def _logistic_run(cfg: ExperimentConfig, seed: int, data: Minibatch) -> list[TraceRow]:
    train, test = split_half(data, [seed, 0])
    n, T = logistic_sizes(cfg, train.n)
    reg = _regularizer(cfg, "none", 0.0)
    L = cfg.L or smoothness_bound(LossKind.LOGISTIC, train)
    lam = cfg.lam or 1.0
    obj = CompositeObjective(LossKind.LOGISTIC, reg, L=L, G=reg_lipschitz(reg, train.p, cfg.radius),
                             lam=cfg.lam, radius=cfg.radius)
    rho = _rho(cfg, n=n, T=T, lam=lam)
    gamma = _gamma_schedule(cfg, lam=lam, rho=rho, L=L, n=n, T=T, default="constant")
    tol = _tol_schedule(cfg, G=obj.G, gamma=gamma,
                        default="poly-convex" if isinstance(gamma, Constant) else "poly-qg")
    mcfg = MsppConfig(n=n, T=T, gamma=gamma, tol=tol, seed=[seed, 1], averaging=_averaging(cfg, gamma),
                      inner=_inner(cfg, [seed, 4]))
    if cfg.metric not in (None, "test_error"):
        raise ConfigError(f"metric {cfg.metric!r} does not apply to the logistic experiment")
    recorder = _Recorder(partial(test_error, data=test), "test_error")
    eval_every = cfg.eval_every or math.ceil(T / 50)
    result = _run_algorithm(cfg, EpochBatches(train, n), mcfg, obj, lam, recorder, eval_every)
    return _rows_from(result, recorder, f"logistic-{cfg.algorithm}-seed{seed}", cfg.algorithm)


def run_logistic_experiment(cfg: ExperimentConfig) -> list[TraceRow]:
    cfg.validate()
    data = load_logistic_data(cfg, cfg.seed)
    if data.n < 2:
        raise DataError("need at least two samples for a train/test split")
    return _fan_out(partial(_logistic_run, data=data), cfg)


# ---------------------------------------------------------------------------
# stability

def _stability_run(cfg: ExperimentConfig, seed: int) -> tuple[list[TraceRow], dict]:
    p = cfg.p or 5
    n = cfg.n or 8
    T = cfg.T or 6
    radius = 1.0 if cfg.radius is None else cfg.radius
    sigma = 0.5 if cfg.sigma is None else cfg.sigma
    truth = generate_truth(p, max(1, int(round(cfg.k_frac * p))), [seed, 0], sigma=sigma, mu=0.0,
                           scale=cfg.w_scale)
    batches = FixedBatches(sample_lasso(truth, n * T, [seed, 1]).split(n))
    specs = random_specs(batches, cfg.perturbations, [seed, 3], lasso_sampler(truth))
    reg = _regularizer(cfg, "l1", 0.01)
    obj = CompositeObjective.for_data(LossKind.QUADRATIC, reg, Minibatch(
        np.vstack([b.X for b in batches.batches]), np.concatenate([b.y for b in batches.batches])),
        L=cfg.L, radius=radius)
    # gamma_t = t/4 by default
    lam = cfg.lam or 2.0
    rho = _rho(cfg, n=n, T=T, lam=lam)
    gamma = _gamma_schedule(cfg, lam=lam, rho=rho, L=obj.L, n=n, T=T, default="linear-qg")
    tol = _tol_schedule(cfg, G=obj.G, gamma=gamma, default="exact")
    mcfg = MsppConfig(n=n, T=T, gamma=gamma, tol=tol, seed=[seed, 2], averaging=_averaging(cfg, gamma))
    algo = StabilityAlgo(cfg.algorithm)
    reps = cfg.sampling_reps if algo is StabilityAlgo.MSPP_SWOR else 1
    start = time.perf_counter()
    report = measure_stability(algo, batches, mcfg, obj, specs, reps)
    elapsed = (time.perf_counter() - start) * 1e3
    L, M = constants_for(obj, batches, specs) if specs else (obj.L, 0.0)
    bound_a = stability_bound(mcfg, L, M, "a") if specs else 0.0
    bound_b = stability_bound(mcfg, L, M, "b") if specs else 0.0

    base = f"stability-{cfg.algorithm}-seed{seed}"
    rows = []
    for k, dists in enumerate(report.rep_distances, start=1):
        for r, d in enumerate(dists, start=1):
            rows.append(TraceRow(f"{base}-k{k:03d}", cfg.algorithm, r, r * n * T, "distance", d, elapsed))
    for t, (name, value) in enumerate([("theory_bound_a", bound_a), ("theory_bound_b", bound_b),
                                       ("empirical_sup", report.empirical_sup)], start=1):
        rows.append(TraceRow(f"{base}-summary", cfg.algorithm, t, t * n * T, name, value, elapsed))
    doc = report.to_dict()
    doc.update(run_id=base, algorithm=cfg.algorithm, theory_bound_a=bound_a, theory_bound_b=bound_b, L=L, M=M,
               sampling_reps=reps)
    return rows, doc


def run_stability_experiment(cfg: ExperimentConfig) -> tuple[list[TraceRow], dict]:
    """Rows per (perturbation, permutation rep) plus bound rows, and the JSON summary document."""
    cfg.validate()
    outputs = _map(_stability_run, cfg)
    rows = sorted((r for rows, _ in outputs for r in rows), key=lambda r: (r.run_id, r.t))
    docs = [doc for _, doc in outputs]
    summary = docs[0] if len(docs) == 1 else {"runs": docs}
    return rows, summary


# ---------------------------------------------------------------------------
# fan-out

def _map(fn, cfg: ExperimentConfig):
    seeds = [cfg.seed + r for r in range(cfg.reps)]
    if cfg.jobs == 1 or len(seeds) == 1:
        return [fn(cfg, s) for s in seeds]
    with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
        return list(pool.map(fn, [cfg] * len(seeds), seeds))


def _fan_out(fn, cfg: ExperimentConfig) -> list[TraceRow]:
    rows = [r for chunk in _map(fn, cfg) for r in chunk]
    return sorted(rows, key=lambda r: (r.run_id, r.t))


def write_summary(doc: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def final_metric(rows: list[TraceRow]) -> dict[str, float]:
    """Last recorded metric value of each run."""
    out = {}
    for r in rows:
        out[r.run_id] = r.metric_value
    return out
