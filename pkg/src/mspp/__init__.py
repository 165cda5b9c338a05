"""Minibatch stochastic proximal point methods with certified inexact inner solves."""

from .algorithms import (
    Averaging,
    FixedBatches,
    MsppConfig,
    RunResult,
    Stream,
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
    Sample,
)
from .inner import ProxSubproblem, SolveOptions, solve

__all__ = [
    "Averaging", "FixedBatches", "MsppConfig", "RunResult", "Stream", "msgd", "mspp", "mspp_swor",
    "mspp_two_phase", "CompositeObjective", "Constant", "Exact", "Fixed", "LinearQG", "LinearQGOffset",
    "LossKind", "Minibatch", "PolyConvex", "PolyQG", "Regularizer", "Sample", "ProxSubproblem",
    "SolveOptions", "solve",
]
