"""Independent ground-truth generators for testing the solver.

Nothing here shares code with the closed-form updates or the splitting
loop: the one-dimensional prox oracles minimize the penalized Lagrangian
restricted to a single coordinate by golden-section search, the global
oracle combines an exhaustive refined grid over transmit energies with an
LP (HiGHS) for the energy-sourcing cost and a separate bandwidth line
search, and the stationarity check differentiates the ordinary Lagrangian
by central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import replace
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from .model import DualState, PrimalState, Scenario, objective, rate_term

__all__ = [
    "golden_section",
    "numeric_prox",
    "numeric_prox_pa",
    "grid_search",
    "kkt_residual",
    "fit_multipliers",
]

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section(fun: Callable[[float], float], lo: float, hi: float,
                   tol: float = 1e-10, max_iter: int = 300) -> float:
    """Minimize a unimodal function on [lo, hi] to interval width ``tol``."""
    if hi < lo:
        raise ValueError("empty bracket")
    b = lo + _INV_PHI * (hi - lo)
    a = hi - _INV_PHI * (hi - lo)
    fa, fb = fun(a), fun(b)
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        if fa <= fb:
            hi, b, fb = b, a, fa
            a = hi - _INV_PHI * (hi - lo)
            fa = fun(a)
        else:
            lo, a, fa = a, b, fb
            b = lo + _INV_PHI * (hi - lo)
            fb = fun(b)
    return 0.5 * (lo + hi)


def _expand_bracket(fun: Callable[[float], float], hi0: float = 1.0) -> float:
    """Grow [0, hi] until the minimum of a coercive function is interior."""
    hi = hi0
    f_hi = fun(hi)
    for _ in range(200):
        f_next = fun(hi * 2.0)
        if f_next > f_hi:
            return hi * 2.0
        hi *= 2.0
        f_hi = f_next
    raise RuntimeError("could not bracket the minimizer")


_VAR_FIELDS = {"p", "a", "l", "r", "s", "g", "d", "u1", "u2", "u3", "u4"}


def _with_entry(x: PrimalState, name: str, index: tuple, value: float) -> PrimalState:
    arr = np.array(getattr(x, name))
    arr[index] = value
    return replace(x, **{name: arr})


# --- loop-built constraint entries (independent of the solver's tables) ---


def _c_batt(sc: Scenario, x: PrimalState, upper: bool, n: int, v: int) -> float:
    eta = sc.transfer_efficiency
    total = 0.0
    for t in range(v + 1):
        total += x.l[n, t] + x.s[n, t] + x.d[n, t]
        for m in range(sc.n_users):
            total += x.r[n, m, t] - eta * x.r[m, n, t]
    total -= float(sc.harvest[n, :v + 1].sum())
    if upper:
        return total - x.u2[n, v] + sc.battery_cap[n]
    return total + x.u1[n, v]


def _c_balance(sc, x, n, k):
    return x.p[n, k] - x.l[n, k] - x.s[n, k] - x.g[n, k]


def _c_cap(sc, x, n, k):
    return x.p[n, k] + x.u3[n, k] - sc.power_cap[n]


def _c_usage(sc, x, n, k):
    eta = sc.transfer_efficiency
    arrived = sum(x.r[m, n, k] for m in range(sc.n_users) if m != n)
    return x.s[n, k] + x.u4[n, k] - eta * arrived


def _c_band(sc, x, k):
    return float(x.a[:, k].sum()) - 1.0


def _affected_terms(sc: Scenario, y: DualState, name: str, index: tuple):
    """(dual value, constraint evaluator) pairs that involve one coordinate."""
    kk = sc.n_slots
    terms = []

    def batt_pair(node):
        for v in range(index[-1], kk):
            terms.append((y.y1[node, v],
                          lambda sc, x, node=node, v=v: _c_batt(sc, x, False, node, v)))
            terms.append((y.y2[node, v],
                          lambda sc, x, node=node, v=v: _c_batt(sc, x, True, node, v)))

    if name in ("l", "s", "d"):
        batt_pair(index[0])
    if name == "r":
        m, n, _ = index
        batt_pair(m)
        batt_pair(n)
        terms.append((y.y5[n, index[-1]],
                      lambda sc, x: _c_usage(sc, x, n, index[-1])))
    if name in ("l", "s", "g", "p"):
        node = index[0]
        terms.append((y.y3[node, index[-1]],
                      lambda sc, x: _c_balance(sc, x, node, index[-1])))
    if name == "s":
        node = index[0]
        terms.append((y.y5[node, index[-1]],
                      lambda sc, x: _c_usage(sc, x, node, index[-1])))
    if name in ("p", "u3"):
        node = index[0]
        terms.append((y.y4[node, index[-1]],
                      lambda sc, x: _c_cap(sc, x, node, index[-1])))
    if name == "a":
        terms.append((y.y6[index[-1]],
                      lambda sc, x: _c_band(sc, x, index[-1])))
    if name == "u1":
        node, k = index
        terms.append((y.y1[node, k],
                      lambda sc, x: _c_batt(sc, x, False, node, k)))
    if name == "u2":
        node, k = index
        terms.append((y.y2[node, k],
                      lambda sc, x: _c_batt(sc, x, True, node, k)))
    if name == "u4":
        node, k = index
        terms.append((y.y5[node, k],
                      lambda sc, x: _c_usage(sc, x, node, k)))
    return terms


def prox_objective(sc: Scenario, x: PrimalState, y: DualState, rho: float,
                   tau: float, name: str, index: tuple) -> Callable[[float], float]:
    """Single-coordinate restriction of the penalized Lagrangian plus the
    proximal pull toward the coordinate's previous value.

    Only the terms that involve the coordinate are assembled (their values
    are O(1), so golden-section comparisons keep full precision); up to a
    constant offset the function equals the full penalized Lagrangian along
    that coordinate.
    """
    if name not in _VAR_FIELDS:
        raise ValueError(f"unknown variable family {name!r}")
    prev = float(getattr(x, name)[index])
    terms = _affected_terms(sc, y, name, index)

    def fun(t: float) -> float:
        xt = _with_entry(x, name, index, t)
        total = 0.5 * tau * (t - prev) ** 2
        for dual, constraint in terms:
            c = constraint(sc, xt)
            total += dual * c + 0.5 * rho * c * c
        if name == "g":
            total += sc.grid_cost * t
        elif name == "r":
            total += sc.coop_cost * t
        elif name in ("p", "a"):
            node, k = index
            total -= rate_term(xt.p[node, k], xt.a[node, k],
                               sc.gain[node, k], sc.weight[node])
        return total

    return fun


def numeric_prox(sc: Scenario, x: PrimalState, y: DualState, rho: float,
                 tau: float, name: str, index: tuple,
                 tol: float = 1e-10) -> float:
    """Numeric minimizer of one coordinate's proximal subproblem.

    Used as the reference the closed-form updates are tested against.  The
    bracket is grown until the minimum is interior and golden-section
    search localizes it; because every such restriction is exactly
    quadratic in its coordinate on t >= 0, an exact three-point parabola
    fit then pins the vertex to roundoff (golden section alone bottoms out
    near sqrt(eps)).  The fit is cross-checked on a fourth point and falls
    back to the search result if the quadratic model does not hold.
    """
    fun = prox_objective(sc, x, y, rho, tau, name, index)
    hi = _expand_bracket(fun)
    rough = golden_section(fun, 0.0, hi, tol=max(tol, 1e-6))
    h = max(1.0, 0.1 * rough)
    f0, f1, f2, f3 = (fun(rough + i * h) for i in range(4))
    curv = (f2 - 2.0 * f1 + f0) / (h * h)
    if curv <= 0.0:
        return rough
    slope0 = (f1 - f0) / h - 0.5 * curv * h  # derivative at `rough`
    vertex = rough - slope0 / curv
    model3 = f0 + 3.0 * h * slope0 + 4.5 * h * h * curv
    scale = max(1.0, abs(f0), abs(f3))
    if abs(model3 - f3) > 1e-7 * scale:
        return rough
    return max(0.0, vertex)


def numeric_prox_pa(sc: Scenario, x: PrimalState, y: DualState, rho: float,
                    tau: float, n: int, k: int,
                    p_hi: float | None = None, a_hi: float | None = None,
                    grid: int = 121, rounds: int = 14) -> tuple[float, float]:
    """Refined 2-D grid minimizer of the joint power/bandwidth subproblem.

    Evaluates the explicit two-variable objective on a mesh and shrinks
    the box around the incumbent; the objective is strictly convex, so
    refinement converges to the joint minimizer.
    """
    rho_prev_p = float(x.p[n, k])
    rho_prev_a = float(x.a[n, k])
    w = sc.weight[n]
    h = sc.gain[n, k]
    pcap = sc.power_cap[n]
    others = float(x.a[:, k].sum() - x.a[n, k])
    y3 = y.y3[n, k]
    y4 = y.y4[n, k]
    y6 = y.y6[k]
    bal = float(x.l[n, k] + x.s[n, k] + x.g[n, k])
    cap_rest = pcap - float(x.u3[n, k])

    def value(pm, am):
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = pm * h / am
            rate = np.where((am > 0) & (pm * h > 0),
                            am * np.log1p(np.where(am > 0, ratio, 0.0)), 0.0)
        return (-w * rate + (y3 + y4) * pm + y6 * am
                + 0.5 * rho * (pm - bal) ** 2
                + 0.5 * rho * (pm - cap_rest) ** 2
                + 0.5 * rho * (am + others - 1.0) ** 2
                + 0.5 * tau * (pm - rho_prev_p) ** 2
                + 0.5 * tau * (am - rho_prev_a) ** 2)

    p_lo, p_up = 0.0, p_hi if p_hi is not None else max(2.0 * pcap, 10.0)
    a_lo, a_up = 0.0, a_hi if a_hi is not None else max(4.0, 2.0 * abs(1.0 - others))
    best_p = best_a = 0.0
    for _ in range(rounds):
        ps = np.linspace(p_lo, p_up, grid)
        a_vals = np.linspace(a_lo, a_up, grid)
        pm, am = np.meshgrid(ps, a_vals, indexing="ij")
        vals = value(pm, am)
        i, j = np.unravel_index(np.argmin(vals), vals.shape)
        best_p, best_a = float(ps[i]), float(a_vals[j])
        dp = (p_up - p_lo) / (grid - 1)
        da = (a_up - a_lo) / (grid - 1)
        p_lo, p_up = max(0.0, best_p - 1.5 * dp), best_p + 1.5 * dp
        a_lo, a_up = max(0.0, best_a - 1.5 * da), best_a + 1.5 * da
    return best_p, best_a


# ---------------------------------------------------------------------------
# Global optimum at toy scale
# ---------------------------------------------------------------------------


def _sourcing_lp(sc: Scenario):
    """Constraint matrices of the minimum-cost sourcing LP given p.

    Variables are stacked [l, s, g, d, r(off-diagonal)], all per (n, k)
    row-major.  Only the right-hand side depends on p, so the matrices are
    built once per scenario.
    """
    n, kk = sc.n_users, sc.n_slots
    eta = sc.transfer_efficiency
    pairs = [(m, j) for m in range(n) for j in range(n) if m != j]
    n_nk = n * kk
    n_r = len(pairs) * kk
    n_var = 4 * n_nk + n_r

    def off(name):
        return {"l": 0, "s": n_nk, "g": 2 * n_nk, "d": 3 * n_nk}[name]

    def idx(name, node, k):
        return off(name) + node * kk + k

    def idx_r(pair_i, k):
        return 4 * n_nk + pair_i * kk + k

    cost = np.zeros(n_var)
    cost[off("g"):off("g") + n_nk] = sc.grid_cost
    cost[4 * n_nk:] = sc.coop_cost

    a_eq = np.zeros((n_nk, n_var))
    for node in range(n):
        for k in range(kk):
            row = node * kk + k
            a_eq[row, idx("l", node, k)] = 1.0
            a_eq[row, idx("s", node, k)] = 1.0
            a_eq[row, idx("g", node, k)] = 1.0

    rows = []
    rhs_const = []
    # s_n^k <= eta * incoming donations
    for node in range(n):
        for k in range(kk):
            row = np.zeros(n_var)
            row[idx("s", node, k)] = 1.0
            for pi, (m, j) in enumerate(pairs):
                if j == node:
                    row[idx_r(pi, k)] = -eta
            rows.append(row)
            rhs_const.append(0.0)
    # battery level within [0, cap]: level is cumulative
    cum_e = sc.cumulative_harvest
    for node in range(n):
        for k in range(kk):
            drain = np.zeros(n_var)
            for t in range(k + 1):
                drain[idx("l", node, t)] = 1.0
                drain[idx("s", node, t)] = 1.0
                drain[idx("d", node, t)] = 1.0
                for pi, (m, j) in enumerate(pairs):
                    if m == node:
                        drain[idx_r(pi, t)] += 1.0
                    if j == node:
                        drain[idx_r(pi, t)] -= eta
            rows.append(drain)  # drain <= E  (battery >= 0)
            rhs_const.append(cum_e[node, k])
            rows.append(-drain)  # -drain <= cap - E  (battery <= cap)
            rhs_const.append(sc.battery_cap[node] - cum_e[node, k])
    return cost, a_eq, np.array(rows), np.array(rhs_const), pairs


def _slot_bandwidth(sc: Scenario, k: int, p_col: np.ndarray,
                    tol: float = 1e-10):
    """Best bandwidth split and weighted rate for one slot, given energies."""
    if sc.n_users == 1:
        return rate_term(p_col[0], 1.0, sc.gain[0, k], sc.weight[0]), np.array([1.0])

    def slot_rate(a1):
        return -(rate_term(p_col[0], a1, sc.gain[0, k], sc.weight[0])
                 + rate_term(p_col[1], 1.0 - a1, sc.gain[1, k], sc.weight[1]))

    a1 = golden_section(slot_rate, 0.0, 1.0, tol=tol)
    cand = [a1, 0.0, 1.0]
    vals = [slot_rate(v) for v in cand]
    a1 = cand[int(np.argmin(vals))]
    return -slot_rate(a1), np.array([a1, 1.0 - a1])


def _best_bandwidth_rates(sc: Scenario, p: np.ndarray,
                          cache: dict | None = None):
    """Max weighted rate per slot over the bandwidth simplex, given p."""
    n, kk = sc.n_users, sc.n_slots
    total = 0.0
    a_opt = np.zeros((n, kk))
    for k in range(kk):
        key = (k, *np.round(p[:, k], 12)) if cache is not None else None
        hit = cache.get(key) if cache is not None else None
        if hit is None:
            hit = _slot_bandwidth(sc, k, p[:, k])
            if cache is not None:
                cache[key] = hit
        rate_k, a_col = hit
        total += rate_k
        a_opt[:, k] = a_col
    return total, a_opt


def grid_search(sc: Scenario, resolution: float = 1e-2,
                points_per_dim: int = 7) -> tuple[float, PrimalState]:
    """Near-exhaustive global maximization for instances up to 2x2.

    Transmit energies are searched on a per-coordinate grid refined until
    the cell size falls below ``resolution``; for every candidate p the
    bandwidth is optimized exactly per slot (concave line search) and the
    cheapest feasible sourcing of p is found by linear programming.  The
    overall objective restricted this way is concave, so refining around
    the incumbent keeps the optimum inside the shrinking box.

    Returns the best objective and a matching feasible allocation.
    """
    n, kk = sc.n_users, sc.n_slots
    if n > 2 or kk > 2:
        raise ValueError("grid_search is limited to at most 2 users x 2 slots")
    if resolution <= 0:
        raise ValueError("resolution must be positive")

    cost, a_eq, a_ub, b_ub_const, pairs = _sourcing_lp(sc)
    n_nk = n * kk
    lp_cache: dict[tuple, tuple] = {}

    def sourcing(p_flat) -> tuple[float, np.ndarray] | None:
        key = tuple(np.round(p_flat, 12))
        hit = lp_cache.get(key)
        if hit is not None:
            return hit
        res = linprog(cost, A_ub=a_ub, b_ub=b_ub_const, A_eq=a_eq,
                      b_eq=p_flat, bounds=(0, None), method="highs")
        out = (res.fun, res.x) if res.success else None
        lp_cache[key] = out
        return out

    free_sourcing = sc.grid_cost == 0.0 and sc.coop_cost == 0.0
    # largest harvest-sourced energy any sourcing can deliver (battery and
    # usage constraints, donations free); transmit demand beyond it can
    # only be met by the grid, giving a valid cost lower bound
    relax = linprog(np.concatenate([-np.ones(2 * n_nk), np.zeros(cost.size - 2 * n_nk)]),
                    A_ub=a_ub, b_ub=b_ub_const, bounds=(0, None), method="highs")
    usable = -relax.fun if relax.success else float(sc.cumulative_harvest[:, -1].sum())
    rate_cache: dict = {}
    lo = np.zeros(n_nk)
    hi = np.repeat(sc.power_cap, kk)
    best = (-math.inf, None, None)
    while True:
        axes = [np.linspace(lo[i], hi[i], points_per_dim) for i in range(n_nk)]
        mesh = np.stack([m.ravel() for m in np.meshgrid(*axes, indexing="ij")],
                        axis=1)
        rated = []
        for p_flat in mesh:
            rate, a_opt = _best_bandwidth_rates(sc, p_flat.reshape(n, kk),
                                                cache=rate_cache)
            bound = rate - sc.grid_cost * max(0.0, p_flat.sum() - usable)
            rated.append((bound, p_flat, rate, a_opt))
        rated.sort(key=lambda t: -t[0])
        for bound, p_flat, rate, a_opt in rated:
            if bound <= best[0] + 1e-12 and best[1] is not None:
                break
            if free_sourcing:
                value = rate
            else:
                src = sourcing(p_flat)
                if src is None:
                    continue
                value = rate - src[0]
            if value > best[0]:
                best = (value, p_flat.copy(), a_opt)
        cell = (hi - lo) / (points_per_dim - 1)
        if np.all(cell <= resolution) or np.all(cell == 0.0):
            break
        center = best[1]
        lo = np.maximum(0.0, center - 1.5 * cell)
        hi = np.minimum(np.repeat(sc.power_cap, kk), center + 1.5 * cell)

    value, p_flat, a_opt = best
    p = p_flat.reshape(n, kk)
    if free_sourcing:
        src = sourcing(p_flat)
        x_src = src[1] if src is not None else np.zeros(4 * n_nk + len(pairs) * kk)
    else:
        x_src = sourcing(p_flat)[1]
    l = x_src[0:n_nk].reshape(n, kk)
    s = x_src[n_nk:2 * n_nk].reshape(n, kk)
    g = x_src[2 * n_nk:3 * n_nk].reshape(n, kk)
    d = x_src[3 * n_nk:4 * n_nk].reshape(n, kk)
    r = np.zeros((n, n, kk))
    for pi, (m, j) in enumerate(pairs):
        r[m, j, :] = x_src[4 * n_nk + pi * kk:4 * n_nk + (pi + 1) * kk]
    eta = sc.transfer_efficiency
    incoming = r.sum(axis=0)
    delta = sc.harvest - l - r.sum(axis=1) + eta * incoming - s - d
    batt = np.cumsum(delta, axis=1)
    state = PrimalState(
        p=p, a=a_opt, l=l, r=r, s=s, g=g, d=d,
        u1=np.maximum(0.0, batt),
        u2=np.maximum(0.0, sc.battery_cap[:, None] - batt),
        u3=np.maximum(0.0, sc.power_cap[:, None] - p),
        u4=np.maximum(0.0, eta * incoming - s),
    )
    return objective(sc, state), state


# ---------------------------------------------------------------------------
# Stationarity check
# ---------------------------------------------------------------------------


def _lagrangian(sc: Scenario, x: PrimalState, y: DualState) -> float:
    """Ordinary (unpenalized) Lagrangian of the minimization form."""
    eta = sc.transfer_efficiency
    outgoing = x.r.sum(axis=1)
    incoming = x.r.sum(axis=0)
    drain = np.cumsum(x.l + outgoing - eta * incoming + x.s + x.d, axis=1)
    deficit = drain - sc.cumulative_harvest
    c1 = deficit + x.u1
    c2 = deficit - x.u2 + sc.battery_cap[:, None]
    c3 = x.p - x.l - x.s - x.g
    c4 = x.p + x.u3 - sc.power_cap[:, None]
    c5 = x.s + x.u4 - eta * incoming
    c6 = x.a.sum(axis=0) - 1.0
    return float(-objective(sc, x)
                 + (y.y1 * c1).sum() + (y.y2 * c2).sum() + (y.y3 * c3).sum()
                 + (y.y4 * c4).sum() + (y.y5 * c5).sum() + (y.y6 * c6).sum())


def kkt_residual(sc: Scenario, x: PrimalState, y: DualState,
                 step: float = 1e-6, active_tol: float = 1e-7) -> float:
    """Worst projected-stationarity violation at (x, y).

    Differentiates the ordinary Lagrangian by central finite differences
    in every coordinate; coordinates at the nonnegativity boundary use a
    forward difference and only penalize descent directions.  Evaluating
    a zero-bandwidth link that still carries energy is rejected because
    the objective is not differentiable there.
    """
    bad = (x.a <= active_tol) & (x.p * sc.gain > active_tol)
    if np.any(bad):
        raise ValueError("not differentiable: zero bandwidth with positive power")

    worst = 0.0
    f_here = _lagrangian(sc, x, y)
    for name in ("p", "a", "l", "r", "s", "g", "d", "u1", "u2", "u3", "u4"):
        arr = getattr(x, name)
        for index in np.ndindex(arr.shape):
            if name == "r" and index[0] == index[1]:
                continue
            v = arr[index]
            f_plus = _lagrangian(sc, _with_entry(x, name, index, v + step), y)
            if v > step:
                f_minus = _lagrangian(sc, _with_entry(x, name, index, v - step), y)
                resid = abs((f_plus - f_minus) / (2.0 * step))
            else:
                resid = max(0.0, -(f_plus - f_here) / step)
            worst = max(worst, resid)
    return worst


def _constraint_vector(sc: Scenario, x: PrimalState) -> np.ndarray:
    """All equality residuals flattened in the multiplier ordering."""
    eta = sc.transfer_efficiency
    outgoing = x.r.sum(axis=1)
    incoming = x.r.sum(axis=0)
    drain = np.cumsum(x.l + outgoing - eta * incoming + x.s + x.d, axis=1)
    deficit = drain - sc.cumulative_harvest
    c1 = deficit + x.u1
    c2 = deficit - x.u2 + sc.battery_cap[:, None]
    c3 = x.p - x.l - x.s - x.g
    c4 = x.p + x.u3 - sc.power_cap[:, None]
    c5 = x.s + x.u4 - eta * incoming
    c6 = x.a.sum(axis=0) - 1.0
    return np.concatenate([c1.ravel(), c2.ravel(), c3.ravel(),
                           c4.ravel(), c5.ravel(), c6.ravel()])


def fit_multipliers(sc: Scenario, x: PrimalState, step: float = 1e-6,
                    active_tol: float = 1e-7) -> DualState:
    """Least-squares multipliers making the point as stationary as possible.

    Builds the finite-difference gradient of the negated objective over
    the coordinates away from their bounds, then solves for the
    multipliers that cancel it through the (finite-difference) constraint
    Jacobian.  Used to turn an oracle optimum into a full KKT candidate.
    """
    n, kk = sc.n_users, sc.n_slots
    zero_y = DualState.zeros(sc)
    rows = []
    rhs = []
    for name in ("p", "a", "l", "r", "s", "g", "d", "u1", "u2", "u3", "u4"):
        arr = getattr(x, name)
        for index in np.ndindex(arr.shape):
            if name == "r" and index[0] == index[1]:
                continue
            v = arr[index]
            if v <= active_tol:
                continue
            x_plus = _with_entry(x, name, index, v + step)
            x_minus = _with_entry(x, name, index, v - step)
            g0 = (-objective(sc, x_plus) + objective(sc, x_minus)) / (2 * step)
            row = (_constraint_vector(sc, x_plus)
                   - _constraint_vector(sc, x_minus)) / (2 * step)
            rows.append(row)
            rhs.append(-g0)
    if not rows:
        return zero_y
    sol, *_ = np.linalg.lstsq(np.asarray(rows), np.asarray(rhs), rcond=None)
    parts = sol[:5 * n * kk].reshape(5, n, kk)
    return DualState(y1=parts[0], y2=parts[1], y3=parts[2],
                     y4=parts[3], y5=parts[4], y6=sol[5 * n * kk:])
