"""Comparison schemes built on top of the main solver.

The window scheme re-optimizes a sliding lookahead horizon and commits only
the first slot each time, carrying the battery forward by folding it into
the next window's first-slot harvest.  The equal and greedy schemes freeze
the bandwidth matrix and let the solver handle the energy variables.
"""

from __future__ import annotations

import numpy as np

from .admm import AdmmParams, SolveReport, solve, validate_params
from .model import (PrimalState, Scenario, battery_trajectory, feasibility,
                    objective, repair_allocation)

__all__ = ["solve_window", "solve_equal_bandwidth", "solve_greedy_bandwidth"]


def _sub_scenario(sc: Scenario, start: int, horizon: int,
                  carry: np.ndarray) -> Scenario:
    """Slice slots [start, start+horizon) with the battery folded into the
    first slot's harvest."""
    sl = slice(start, start + horizon)
    harvest = np.array(sc.harvest[:, sl])
    harvest[:, 0] += np.maximum(0.0, carry)
    return Scenario(
        n_users=sc.n_users,
        n_slots=horizon,
        gain=sc.gain[:, sl],
        harvest=harvest,
        battery_cap=sc.battery_cap,
        power_cap=sc.power_cap,
        weight=sc.weight,
        grid_cost=sc.grid_cost,
        coop_cost=sc.coop_cost,
        transfer_efficiency=sc.transfer_efficiency,
    )


def solve_window(sc: Scenario, window: int, params: AdmmParams) -> SolveReport:
    """Limited-lookahead scheme: see the next ``window`` future slots only.

    At each slot the remaining horizon (capped at window+1 slots) is solved
    from scratch with zero duals, the current slot's decisions are
    committed, and the battery advances accordingly.  The report evaluates
    the committed trajectory against the full scenario; its dual state is
    None because no single multiplier set matches a stitched trajectory.
    """
    n, kk = sc.n_users, sc.n_slots
    if not 0 <= window <= kk - 1:
        raise ValueError(f"window must lie in [0, {kk - 1}], got {window}")
    eta = sc.transfer_efficiency
    p = np.zeros((n, kk))
    a = np.zeros((n, kk))
    l = np.zeros((n, kk))
    r = np.zeros((n, n, kk))
    s = np.zeros((n, kk))
    g = np.zeros((n, kk))
    d = np.zeros((n, kk))

    carry = np.zeros(n)
    iterations = 0
    converged = True
    for i in range(kk):
        horizon = min(window + 1, kk - i)
        sub = _sub_scenario(sc, i, horizon, carry)
        try:
            rep = solve(sub, params)
        except Exception as exc:
            raise RuntimeError(f"window starting at slot {i} failed") from exc
        iterations += rep.iterations
        converged = converged and rep.converged
        best = repair_allocation(sub, rep.state)
        p[:, i] = best.p[:, 0]
        a[:, i] = best.a[:, 0]
        l[:, i] = best.l[:, 0]
        r[:, :, i] = best.r[:, :, 0]
        s[:, i] = best.s[:, 0]
        g[:, i] = best.g[:, 0]
        d[:, i] = best.d[:, 0]
        carry = np.maximum(
            0.0,
            carry + sc.harvest[:, i] - l[:, i] - r[:, :, i].sum(axis=1)
            + eta * r[:, :, i].sum(axis=0) - s[:, i] - d[:, i])

    incoming = r.sum(axis=0)
    state = PrimalState(
        p=p, a=a, l=l, r=r, s=s, g=g, d=d,
        u1=np.zeros((n, kk)), u2=np.zeros((n, kk)),
        u3=np.zeros((n, kk)), u4=np.zeros((n, kk)),
    )
    batt = battery_trajectory(sc, state)
    state = PrimalState(
        p=p, a=a, l=l, r=r, s=s, g=g, d=d,
        u1=np.maximum(0.0, batt),
        u2=np.maximum(0.0, sc.battery_cap[:, None] - batt),
        u3=np.maximum(0.0, sc.power_cap[:, None] - p),
        u4=np.maximum(0.0, eta * incoming - s),
    )
    return SolveReport(
        state=state,
        duals=None,
        objective=objective(sc, state),
        residuals=feasibility(sc, state),
        iterations=iterations,
        psi_trace=np.asarray([]),
        converged=converged,
        theorem1_satisfied=validate_params(params, sc),
        params=params,
    )


def _fixed_bandwidth_report(sc: Scenario, params: AdmmParams,
                            bandwidth: np.ndarray) -> SolveReport:
    rep = solve(sc, params, fixed_bandwidth=bandwidth)
    best = repair_allocation(sc, rep.state)
    return SolveReport(
        state=best,
        duals=rep.duals,
        objective=objective(sc, best),
        residuals=feasibility(sc, best),
        iterations=rep.iterations,
        psi_trace=rep.psi_trace,
        converged=rep.converged,
        theorem1_satisfied=rep.theorem1_satisfied,
        params=params,
    )


def solve_equal_bandwidth(sc: Scenario, params: AdmmParams) -> SolveReport:
    """Every link gets bandwidth 1/N in every slot."""
    bandwidth = np.full((sc.n_users, sc.n_slots), 1.0 / sc.n_users)
    return _fixed_bandwidth_report(sc, params, bandwidth)


def solve_greedy_bandwidth(sc: Scenario, params: AdmmParams) -> SolveReport:
    """The strongest link in each slot gets all of the bandwidth.

    Ties go to the lowest node index.
    """
    bandwidth = np.zeros((sc.n_users, sc.n_slots))
    winners = np.argmax(sc.gain, axis=0)
    bandwidth[winners, np.arange(sc.n_slots)] = 1.0
    return _fixed_bandwidth_report(sc, params, bandwidth)
