"""Proximal Jacobi splitting driver: sweep, dual ascent, stopping rule.

Each iteration updates all seven primal families from the previous iterate
(one *sweep*), then ascends all six multiplier families along their
constraint residuals with step ``gamma * rho``.  The loop stops when the
augmented Lagrangian changes by less than ``eta`` between iterations, or
when the iteration cap is reached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import subproblems as sp
from .model import (DualState, PrimalState, ResidualReport, Scenario,
                    feasibility, objective, weighted_rate_matrix)

__all__ = [
    "AdmmParams",
    "SolveReport",
    "validate_params",
    "augmented_lagrangian",
    "sweep",
    "dual_update",
    "solve",
]


@dataclass(frozen=True)
class AdmmParams:
    """Tuning knobs for the splitting solver.

    ``rho`` weighs the quadratic constraint penalties, ``gamma`` scales the
    dual ascent step, ``tau`` weighs the proximal pull toward the previous
    iterate, and ``eta`` is the stopping threshold on the change of the
    augmented Lagrangian.  ``strict_paper_problem1`` switches the
    power/bandwidth update's boundary fallback from the restricted-edge
    minimizer to the literal all-zero rule.  ``stop_on_residuals``
    additionally requires every equality residual below ``residual_tol``
    before stopping (the Lagrangian can plateau before feasibility).
    """

    rho: float = 1e-3
    gamma: float = 1.0
    tau: float = 0.5
    eta: float = 1e-6
    max_iter: int = 20000
    strict_paper_problem1: bool = False
    stop_on_residuals: bool = False
    residual_tol: float = 1e-6

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not 0.0 < self.gamma < 2.0:
            raise ValueError("gamma must lie in (0, 2)")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    def to_dict(self) -> dict:
        return {
            "rho": self.rho, "gamma": self.gamma, "tau": self.tau,
            "eta": self.eta, "max_iter": self.max_iter,
            "strict_paper_problem1": self.strict_paper_problem1,
            "stop_on_residuals": self.stop_on_residuals,
            "residual_tol": self.residual_tol,
        }


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one solver run.

    ``objective`` is the allocation objective of the returned primal point
    (not the negated Lagrangian); ``residuals`` reports how far that point
    is from exact constraint satisfaction, which for a penalty method is
    zero only in the limit.  ``psi_trace`` holds the augmented-Lagrangian
    value per iteration, starting with the initial point.
    """

    state: PrimalState
    duals: DualState | None
    objective: float
    residuals: ResidualReport
    iterations: int
    psi_trace: np.ndarray
    converged: bool
    theorem1_satisfied: bool
    params: AdmmParams

    def to_json_dict(self) -> dict:
        return {
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "theorem1_satisfied": self.theorem1_satisfied,
            "residuals": self.residuals.as_dict(),
            "params": self.params.to_dict(),
        }


def validate_params(params: AdmmParams, sc: Scenario) -> bool:
    """Check the sufficient (not necessary) convergence-guarantee bound.

    The proximal weight must dominate a term that grows with the variable
    count (9NK + N^2 K blocks, each touched by at most 4K constraints).
    A False result is a warning: practical parameter choices often violate
    the bound yet converge.
    """
    n, k = sc.n_users, sc.n_slots
    blocks = 9.0 * n * k + float(n) * n * k
    threshold = 4.0 * k * params.rho * (blocks / (2.0 - params.gamma) - 1.0)
    return params.tau > threshold


def _residuals_from_buffers(sc: Scenario, x: PrimalState,
                            buffers: sp.WorkBuffers):
    """Residuals of the six equality families, in fixed order."""
    c1 = buffers.deficit + x.u1
    c2 = buffers.deficit - x.u2 + sc.battery_cap[:, None]
    c3 = x.p - x.l - x.s - x.g
    c4 = x.p + x.u3 - sc.power_cap[:, None]
    c5 = x.s + x.u4 - sc.transfer_efficiency * buffers.incoming_sum
    c6 = x.a.sum(axis=0) - 1.0
    return c1, c2, c3, c4, c5, c6


def _equality_residuals(sc: Scenario, x: PrimalState):
    return _residuals_from_buffers(sc, x, sp.rebuild_buffers(x, sc))


def _psi_from_residuals(sc: Scenario, x: PrimalState, y: DualState,
                        rho: float, cs) -> float:
    c1, c2, c3, c4, c5, c6 = cs
    rate = float(weighted_rate_matrix(sc, x.p, x.a).sum())
    value = -(rate - sc.grid_cost * x.g.sum() - sc.coop_cost * x.r.sum())
    value += float((y.y1 * c1).sum() + (y.y2 * c2).sum() + (y.y3 * c3).sum()
                   + (y.y4 * c4).sum() + (y.y5 * c5).sum() + (y.y6 * c6).sum())
    value += 0.5 * rho * float((c1 * c1).sum() + (c2 * c2).sum()
                               + (c3 * c3).sum() + (c4 * c4).sum()
                               + (c5 * c5).sum() + (c6 * c6).sum())
    return value


def augmented_lagrangian(sc: Scenario, x: PrimalState, y: DualState,
                         rho: float) -> float:
    """Value of the penalized Lagrangian at (x, y).

    Returns ``+inf`` whenever any decision or slack entry is negative (the
    sign constraints enter as indicator functions).
    """
    low = min(x.p.min(), x.a.min(), x.l.min(), x.r.min(), x.s.min(),
              x.g.min(), x.d.min(), x.u1.min(), x.u2.min(), x.u3.min(),
              x.u4.min())
    if low < 0.0:
        return math.inf
    return _psi_from_residuals(sc, x, y, rho, _equality_residuals(sc, x))


def sweep(prev: PrimalState, y: DualState, sc: Scenario, params: AdmmParams,
          fixed_bandwidth: np.ndarray | None = None) -> PrimalState:
    """One full primal pass; every family reads the previous iterate."""
    buffers = sp.rebuild_buffers(prev, sc)
    return sp.sweep_families(prev, y, sc, params, buffers,
                             fixed_bandwidth=fixed_bandwidth)


def _dual_from_residuals(y: DualState, step: float, cs) -> DualState:
    c1, c2, c3, c4, c5, c6 = cs
    return DualState(
        y1=y.y1 + step * c1,
        y2=y.y2 + step * c2,
        y3=y.y3 + step * c3,
        y4=y.y4 + step * c4,
        y5=y.y5 + step * c5,
        y6=y.y6 + step * c6,
    )


def dual_update(y: DualState, x_next: PrimalState, sc: Scenario,
                params: AdmmParams) -> DualState:
    """Ascend every multiplier along its residual at the new iterate."""
    return _dual_from_residuals(y, params.gamma * params.rho,
                                _equality_residuals(sc, x_next))


def solve(sc: Scenario, params: AdmmParams,
          init_primal: PrimalState | None = None,
          init_dual: DualState | None = None,
          fixed_bandwidth: np.ndarray | None = None) -> SolveReport:
    """Run the splitting iteration to the stopping rule or iteration cap.

    Starts from the all-zero point unless warm-start states are given.
    When ``fixed_bandwidth`` is set, the bandwidth matrix is frozen at the
    given values and only the energy variables are optimized (its per-slot
    columns should sum to one).

    An exhausted iteration cap is reported via ``converged=False``, not
    raised.
    """
    x = PrimalState.zeros(sc) if init_primal is None else init_primal
    y = DualState.zeros(sc) if init_dual is None else init_dual
    x.validate(sc)
    if fixed_bandwidth is not None:
        fixed_bandwidth = np.array(fixed_bandwidth, dtype=float)
        if fixed_bandwidth.shape != x.a.shape:
            raise ValueError("fixed_bandwidth shape does not match scenario")
        x = replace(x, a=fixed_bandwidth)

    psi = augmented_lagrangian(sc, x, y, params.rho)
    trace = [psi]
    converged = False
    iterations = 0
    step = params.gamma * params.rho
    buffers = sp.rebuild_buffers(x, sc)
    for iterations in range(1, params.max_iter + 1):
        x = sp.sweep_families(x, y, sc, params, buffers,
                              fixed_bandwidth=fixed_bandwidth)
        buffers = sp.rebuild_buffers(x, sc)
        cs = _residuals_from_buffers(sc, x, buffers)
        y = _dual_from_residuals(y, step, cs)
        psi_new = _psi_from_residuals(sc, x, y, params.rho, cs)
        trace.append(psi_new)
        if abs(psi_new - psi) < params.eta:
            if not params.stop_on_residuals:
                converged = True
                break
            worst = max(float(np.abs(c).max()) for c in cs)
            if worst < params.residual_tol:
                converged = True
                break
        psi = psi_new

    return SolveReport(
        state=x,
        duals=y,
        objective=objective(sc, x),
        residuals=feasibility(sc, x),
        iterations=iterations,
        psi_trace=np.asarray(trace),
        converged=converged,
        theorem1_satisfied=validate_params(params, sc),
        params=params,
    )
