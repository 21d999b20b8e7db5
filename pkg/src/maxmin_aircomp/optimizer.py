"""Power allocation: SCA for the max-min discriminant gain and two benchmarks."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .discriminant import gains_of, pair_element_gains
from .errors import ConfigurationError, DegenerateInstanceError, IngestionError, SolverFailureError
from .model import (
    SystemInstance,
    atomic_write_text,
    class_pairs,
    fmt,
    received_moments,
    validate_instance,
)
from .subproblem import SubproblemSolverConfig, build_subproblem, element_gains, solve_subproblem

log = logging.getLogger(__name__)

INIT_SHRINK = 1e-3
SCHEMES = ("maxmin", "average", "mmse")


@dataclass(frozen=True)
class ScaConfig:
    step_size: float = 0.7
    max_iterations: int = 200
    objective_tolerance: float = 1e-6
    slack_floor: float = 1e-12
    solver: SubproblemSolverConfig = field(default_factory=SubproblemSolverConfig)

    def __post_init__(self):
        if not 0.0 < self.step_size <= 1.0:
            raise ConfigurationError(f"step_size must be in (0, 1], got {self.step_size}")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be positive")
        if not self.objective_tolerance > 0 or not self.slack_floor > 0:
            raise ConfigurationError("objective_tolerance and slack_floor must be positive")


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    T_sub: float
    min_gain: float
    kkt: float
    accepted: bool


@dataclass
class SolveTrace:
    scheme: str
    records: list
    b: np.ndarray
    min_gain: float
    avg_gain: float
    initial_min_gain: float
    termination: str  # converged | max_iterations | solver_failure | closed_form
    message: str = ""

    @property
    def min_gain_history(self):
        """True min gain at the start point followed by every iterate."""
        return np.array([self.initial_min_gain] + [r.min_gain for r in self.records])


def _check_instance(instance):
    issues = validate_instance(instance)
    bad = [i.message for i in issues if i.kind == "invariant"]
    if bad:
        raise ConfigurationError("invalid instance: " + "; ".join(bad))
    for issue in issues:
        if issue.kind == "degenerate_pair":
            raise DegenerateInstanceError(issue.message, issue.pair)


def initialize_feasible(instance: SystemInstance, slack_floor=1e-12):
    """Uniform strictly feasible precoding with slacks just below the true gains.

    Returns ``(b, slacks, T)`` with ``slacks`` shaped (num_pairs, M).
    """
    _check_instance(instance)
    K, M = instance.shape
    bu = instance.budget
    amp = np.minimum(np.sqrt(bu.per_slot), np.sqrt(bu.total / M)) * (1.0 - INIT_SHRINK)
    b = np.repeat(amp[:, None], M, axis=1)
    entries = pair_element_gains(received_moments(instance, b))
    for p, pair in enumerate(class_pairs(instance.num_classes)):
        if np.all(entries[p] < slack_floor):
            raise DegenerateInstanceError(f"classes {pair[0]} and {pair[1]} cannot be separated", pair)
    slacks = np.maximum(slack_floor, entries) * (1.0 - INIT_SHRINK)
    T = float(np.min(slacks.sum(axis=1)))
    return b, slacks, T


def sca_maxmin(instance: SystemInstance, config: ScaConfig = ScaConfig()) -> SolveTrace:
    """Maximize the minimum pairwise discriminant gain by SCA.

    Each iteration linearizes at the current allocation with slacks at the
    true gains, solves the convex restriction and moves a fraction
    ``step_size`` towards its solution. The best iterate by true min gain is
    returned; a solver failure ends the run with that iterate and
    ``termination == "solver_failure"``.
    """
    b, _, _ = initialize_feasible(instance, config.slack_floor)
    alpha = config.step_size
    cur = gains_of(instance, b).min_gain
    best_b, best = b, cur
    initial = cur
    records = []
    termination, message = "max_iterations", ""
    for it in range(1, config.max_iterations + 1):
        model = build_subproblem(instance, b, maxmin=True, eps_t=config.slack_floor)
        try:
            sol = solve_subproblem(model, config.solver)
        except SolverFailureError as exc:
            termination, message = "solver_failure", str(exc)
            log.warning("SCA stopped at iteration %d: %s", it, exc)
            break
        b = b + alpha * (sol.b - b)
        mg = gains_of(instance, b).min_gain
        records.append(IterationRecord(it, sol.T, mg, sol.kkt_residual, mg >= cur))
        # slacks are re-tightened at the new iterate, so its epigraph value is mg
        done = abs(mg - cur) < config.objective_tolerance
        cur = mg
        if mg > best:
            best_b, best = b, mg
        if done:
            termination = "converged"
            break
    table = gains_of(instance, best_b)
    return SolveTrace("maxmin", records, best_b, table.min_gain, table.avg_gain, initial, termination, message)


def _element_objective(instance, b_col, m):
    return float(element_gains(instance, b_col[:, None], np.array([m]))[0].sum())


def optimize_average_baseline(instance: SystemInstance, config: ScaConfig = ScaConfig()) -> SolveTrace:
    """Benchmark: per element, maximize the sum of pairwise gains.

    Every slot gets the per-slot cap ``min(P_k, Ptot_k / M)``, i.e. the total
    budget is split evenly, and slots are optimized separately with the same
    SCA machinery (run in lockstep so the trace has one row per iteration).
    """
    _check_instance(instance)
    K, M = instance.shape
    bu = instance.budget
    amp = np.sqrt(np.minimum(bu.per_slot, bu.total / M)) * (1.0 - INIT_SHRINK)
    b = np.repeat(amp[:, None], M, axis=1)
    alpha = config.step_size
    obj = np.array([_element_objective(instance, b[:, m], m) for m in range(M)])
    best_b, best_obj = b.copy(), obj.copy()
    live = obj > 2.0 * config.slack_floor
    initial = gains_of(instance, b).min_gain
    cur = initial
    records = []
    termination, message = "max_iterations", ""
    for it in range(1, config.max_iterations + 1):
        if not live.any():
            break
        T_sub = obj.copy()
        kkt = 0.0
        try:
            for m in np.flatnonzero(live):
                model = build_subproblem(instance, b[:, [m]], maxmin=False, elements=[m], eps_t=config.slack_floor)
                sol = solve_subproblem(model, config.solver)
                b[:, m] += alpha * (sol.b[:, 0] - b[:, m])
                T_sub[m] = sol.T
                kkt = max(kkt, sol.kkt_residual)
                o = _element_objective(instance, b[:, m], m)
                if abs(o - obj[m]) < config.objective_tolerance:
                    live[m] = False
                obj[m] = o
                if o > best_obj[m]:
                    best_obj[m] = o
                    best_b[:, m] = b[:, m]
        except SolverFailureError as exc:
            termination, message = "solver_failure", str(exc)
            log.warning("average baseline stopped at iteration %d: %s", it, exc)
            break
        mg = gains_of(instance, b).min_gain
        records.append(IterationRecord(it, float(T_sub.sum()), mg, kkt, mg >= cur))
        cur = mg
    if termination != "solver_failure":
        termination = "max_iterations" if live.any() else "converged"
    table = gains_of(instance, best_b)
    return SolveTrace("average", records, best_b, table.min_gain, table.avg_gain, initial, termination, message)


def mmse_allocation(instance: SystemInstance) -> np.ndarray:
    """Channel inversion with a common receive scale set by the weakest device."""
    h = instance.channel.gains
    if np.any(~(h > 0)):
        raise ConfigurationError("channel inversion needs strictly positive gains")
    K, M = instance.shape
    bu = instance.budget
    eta = min(np.min(bu.per_slot * h**2), np.min(bu.total * h**2) / M)
    return np.repeat((np.sqrt(eta) / h)[:, None], M, axis=1)


def solve_scheme(instance: SystemInstance, scheme: str, config: ScaConfig = ScaConfig()) -> SolveTrace:
    if scheme == "maxmin":
        return sca_maxmin(instance, config)
    if scheme == "average":
        return optimize_average_baseline(instance, config)
    if scheme == "mmse":
        b = mmse_allocation(instance)
        table = gains_of(instance, b)
        return SolveTrace("mmse", [], b, table.min_gain, table.avg_gain, table.min_gain, "closed_form")
    raise ConfigurationError(f"unknown scheme {scheme!r}; expected one of {', '.join(SCHEMES)}")


# --- CSV interfaces -------------------------------------------------------

def trace_to_csv(trace: SolveTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter", "T_sub", "min_gain", "kkt", "accepted"])
    for r in trace.records:
        w.writerow([r.iteration, fmt(r.T_sub), fmt(r.min_gain), fmt(r.kkt), int(r.accepted)])
    return buf.getvalue()


def allocation_to_csv(b) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "m", "b"])
    for (k, m), v in np.ndenumerate(np.asarray(b)):
        w.writerow([k, m, fmt(v)])
    return buf.getvalue()


def write_trace(path, trace: SolveTrace):
    atomic_write_text(path, trace_to_csv(trace))


def write_allocation(path, b):
    atomic_write_text(path, allocation_to_csv(b))


def read_allocation(path) -> np.ndarray:
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0] != ["k", "m", "b"]:
        raise IngestionError(f"{path}: header must be k,m,b")
    idx = [(int(r[0]), int(r[1]), float(r[2])) for r in rows[1:]]
    K = 1 + max(i[0] for i in idx)
    M = 1 + max(i[1] for i in idx)
    b = np.zeros((K, M))
    for k, m, v in idx:
        b[k, m] = v
    return b
