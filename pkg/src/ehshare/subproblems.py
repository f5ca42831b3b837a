"""Per-variable proximal updates used by the splitting solver.

One solver iteration updates seven variable families; every update below
minimizes the augmented Lagrangian restricted to a single coordinate (or to
one (p, a) pair) plus a proximal pull ``tau/2 * (x - x_prev)**2`` toward the
previous iterate.  All updates read only the *previous* iterate, so the
per-coordinate results are independent of update order and could run in
parallel.

Every family except the joint power/bandwidth pair reduces to a clipped
affine formula.  The power/bandwidth pair couples through the rate term and
is solved by eliminating the bandwidth via its stationarity condition and
root-finding the remaining strictly increasing one-dimensional equation.

Scalar entry points (``update_l`` etc.) compute one coordinate with plain
float arithmetic; the ``*_all`` twins are the vectorized forms the solver
loop actually runs.  Both share the :class:`WorkBuffers` tables rebuilt once
per sweep.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .model import DualState, PrimalState, Scenario

if TYPE_CHECKING:  # pragma: no cover
    from .admm import AdmmParams

__all__ = [
    "WorkBuffers",
    "RootFindingError",
    "rebuild_buffers",
    "update_pa",
    "update_l",
    "update_r",
    "update_s",
    "update_g",
    "update_d",
    "update_u",
    "update_pa_all",
    "update_l_all",
    "update_r_all",
    "update_s_all",
    "update_g_all",
    "update_d_all",
    "update_u_all",
    "update_p_fixed_bandwidth_all",
    "sweep_families",
]

_PA_MAX_ITER = 160
_PA_XTOL = 1e-10


class RootFindingError(RuntimeError):
    """Joint power/bandwidth update failed to localize its root."""

    def __init__(self, n: int, k: int, lo: float, hi: float):
        self.n, self.k, self.bracket = n, k, (lo, hi)
        super().__init__(
            f"power/bandwidth update did not converge at node {n}, slot {k}; "
            f"bracket [{lo!r}, {hi!r}]")


@dataclass(frozen=True)
class WorkBuffers:
    """Cumulative tables shared by the battery-coupled updates.

    ``deficit[n, v]`` is the net battery drain of node n through slot v
    (spending plus outgoing donations minus efficiency-scaled incoming
    donations, minus cumulative harvest); it equals minus the battery
    level.  The per-update residuals that exclude one variable's own
    contribution are obtained by subtracting that entry from ``deficit``.

    ``deficit_suffix[n, k]`` sums ``deficit[n, k:]`` — every battery
    constraint from slot k to the horizon sees a slot-k decision.
    ``u1_suffix``/``u2_suffix`` are the matching suffix sums of the battery
    slack families.
    """

    cum_harvest: np.ndarray
    cum_l: np.ndarray
    cum_s: np.ndarray
    cum_d: np.ndarray
    cum_donations_out: np.ndarray
    cum_donations_in: np.ndarray
    outgoing_sum: np.ndarray
    incoming_sum: np.ndarray
    deficit: np.ndarray
    deficit_suffix: np.ndarray
    u1_suffix: np.ndarray
    u2_suffix: np.ndarray
    eta: float


def _suffix_sum(arr: np.ndarray) -> np.ndarray:
    """Sum from each slot to the end of the horizon, along the last axis."""
    return np.cumsum(arr[..., ::-1], axis=-1)[..., ::-1]


def rebuild_buffers(prev: PrimalState, sc: Scenario) -> WorkBuffers:
    """Recompute all cumulative tables from scratch for one sweep.

    Costs O(N^2 K) for the donation sums and O(N K) for everything else;
    the tables then make each coordinate update O(1).
    """
    eta = sc.transfer_efficiency
    outgoing = prev.r.sum(axis=1)
    incoming = prev.r.sum(axis=0)
    cum_l = np.cumsum(prev.l, axis=1)
    cum_s = np.cumsum(prev.s, axis=1)
    cum_d = np.cumsum(prev.d, axis=1)
    cum_out = np.cumsum(outgoing, axis=1)
    cum_in = np.cumsum(incoming, axis=1)
    cum_e = sc.cumulative_harvest
    deficit = cum_l + cum_out - eta * cum_in + cum_s + cum_d - cum_e
    return WorkBuffers(
        cum_harvest=cum_e,
        cum_l=cum_l,
        cum_s=cum_s,
        cum_d=cum_d,
        cum_donations_out=cum_out,
        cum_donations_in=cum_in,
        outgoing_sum=outgoing,
        incoming_sum=incoming,
        deficit=deficit,
        deficit_suffix=_suffix_sum(deficit),
        u1_suffix=_suffix_sum(prev.u1),
        u2_suffix=_suffix_sum(prev.u2),
        eta=eta,
    )


def _slot_counts(n_slots: int) -> np.ndarray:
    """Number of battery constraints a slot-k decision appears in: K - k."""
    return np.arange(n_slots, 0, -1, dtype=float)


# ---------------------------------------------------------------------------
# Joint power/bandwidth update
# ---------------------------------------------------------------------------
#
# With q(p) the p-derivative of the quadratic part (a strictly increasing
# affine function), the rate-stationarity pair has an interior solution only
# while 0 < q(p) < W*H.  On that interval the bandwidth that balances the
# p-equation is a(p) = p*H*q / (W*H - q), and substituting it into the
# a-equation leaves g(p) below, which is strictly increasing from -inf/g(0+)
# to +inf.  A guarded Newton iteration with a maintained sign bracket
# therefore converges unconditionally.


def _pa_solve_interior(w, h, wh, q0, c2, ga0, rho_tau, x_init=None):
    """Vectorized guarded Newton for the substituted one-variable equation.

    All inputs are flat arrays over coordinates already known to admit an
    interior candidate (wh > 0 and q0 < wh).  Returns (p, a, found) where
    ``found`` is False for coordinates whose boundary value g(0+) is already
    nonnegative (no interior root exists there).  ``x_init`` warm-starts the
    iteration; values outside the bracket fall back to its midpoint.

    The iteration runs in z = ln(q(p)): the left bracket end is a log
    singularity in p where plain Newton creeps geometrically, but in z the
    equation is asymptotically linear there, so roots that pin a link's
    bandwidth near zero resolve in a few steps.
    """
    # where the bracket starts at p = 0 with q(0) > 0, g(0+) is finite and
    # may be nonnegative: those coordinates have no interior solution
    found = np.ones(w.shape, dtype=bool)
    at_zero = q0 > 0.0
    if np.any(at_zero):
        with np.errstate(divide="ignore"):
            g0 = (w[at_zero] * (np.log(q0[at_zero]) - np.log(wh[at_zero]))
                  + w[at_zero] - q0[at_zero] / h[at_zero] + ga0[at_zero])
        found[at_zero] = g0 < 0.0

    log_wh = np.log(wh)
    inv_h = 1.0 / h
    inv_c2 = 1.0 / c2
    gaw = ga0 + w
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        # roots with q below the cap are within ~1e-18*wh/c2 of the
        # singular point, far inside the p tolerance
        z_lo = np.log(np.maximum(q0, wh * 1e-18))
        z_hi = log_wh
        mid = 0.5 * (z_lo + z_hi)
        if x_init is None:
            z = mid
        else:
            q_init = c2 * x_init + q0
            warm = (q_init > np.exp(z_lo)) & (q_init < wh)
            z = np.where(warm, np.log(np.where(warm, q_init, 1.0)), mid)
        tolp = _PA_XTOL * (1.0 + (wh - q0) * inv_c2)

        active = found.copy()
        g_lo = np.full_like(z, -np.inf)
        g_hi = np.full_like(z, np.inf)
        last_pos = np.zeros(z.shape, dtype=np.int8)
        for _ in range(_PA_MAX_ITER):
            q = np.exp(z)
            gap = wh - q
            p = (q - q0) * inv_c2
            a = h * p * q / gap
            t2 = q * inv_h
            g = w * (z - log_wh) + gaw - t2 + rho_tau * a
            da = h * q * ((q * inv_c2) * gap + p * wh) / (gap * gap)
            gp = w - t2 + rho_tau * da
            pos = g > 0.0
            upd_hi = active & pos
            upd_lo = active & ~pos
            # Illinois damping: landing on the same side twice halves the
            # stored opposite-end value so false position keeps moving
            side = np.where(pos, np.int8(1), np.int8(-1))
            same = active & (side == last_pos)
            g_lo = np.where(same & pos, 0.5 * g_lo, g_lo)
            g_hi = np.where(same & ~pos, 0.5 * g_hi, g_hi)
            last_pos = np.where(active, side, last_pos)
            z_hi = np.where(upd_hi, z, z_hi)
            g_hi = np.where(upd_hi, g, g_hi)
            z_lo = np.where(upd_lo, z, z_lo)
            g_lo = np.where(upd_lo, g, g_lo)
            step = g / gp
            zn = z - step
            bad = ~((zn > z_lo) & (zn < z_hi))
            falsi = (z_lo * g_hi - z_hi * g_lo) / (g_hi - g_lo)
            falsi_ok = (falsi > z_lo) & (falsi < z_hi)
            zn = np.where(bad,
                          np.where(falsi_ok, falsi, 0.5 * (z_lo + z_hi)),
                          zn)
            # the p-space step estimate q*|dz|/c2 is only trustworthy for
            # small, in-bracket z-steps (p grows exponentially along z)
            astep = np.abs(step)
            done = active & ((~bad & (astep <= 0.5)
                              & (q * astep * inv_c2 <= tolp))
                             | ((z_hi - z_lo) <= 1e-14))
            z = np.where(active, zn, z)
            active &= ~done
            if not active.any():
                break

        if np.any(active):
            idx = int(np.flatnonzero(active)[0])
            raise RootFindingError(idx, -1, float(z_lo[idx]), float(z_hi[idx]))

        q = np.exp(z)
        p = np.where(found, (q - q0) * inv_c2, 0.0)
        a = np.where(found, h * p * q / (wh - q), 0.0)
    return np.maximum(p, 0.0), np.maximum(a, 0.0), found


def update_pa_all(prev: PrimalState, duals: DualState, sc: Scenario,
                  params: "AdmmParams") -> tuple[np.ndarray, np.ndarray]:
    """Joint update of transmit energy and bandwidth for every (n, k)."""
    rho, tau = params.rho, params.tau
    c2 = 2.0 * rho + tau
    rho_tau = rho + tau
    w = np.broadcast_to(sc.weight[:, None], prev.p.shape)
    h = sc.gain
    wh = w * h
    q0 = (duals.y3 + duals.y4 - rho * (prev.l + prev.s + prev.g)
          - rho * (sc.power_cap[:, None] - prev.u3) - tau * prev.p)
    a_others = prev.a.sum(axis=0)[None, :] - prev.a
    ga0 = duals.y6[None, :] + rho * (a_others - 1.0) - tau * prev.a

    p_new = np.zeros_like(prev.p)
    a_new = np.zeros_like(prev.a)

    cand = (wh > 0.0) & (q0 < wh)
    if np.any(cand):
        try:
            p_c, a_c, found = _pa_solve_interior(
                w[cand], h[cand], wh[cand], q0[cand], c2, ga0[cand], rho_tau,
                x_init=prev.p[cand])
        except RootFindingError as exc:
            nn, kk = np.argwhere(cand)[exc.n]
            raise RootFindingError(int(nn), int(kk), *exc.bracket) from None
        buf_p = np.zeros_like(prev.p)
        buf_a = np.zeros_like(prev.a)
        buf_f = np.zeros(prev.p.shape, dtype=bool)
        buf_p[cand], buf_a[cand], buf_f[cand] = p_c, a_c, found
        interior = cand & buf_f
        p_new[interior] = buf_p[interior]
        a_new[interior] = buf_a[interior]
    else:
        interior = np.zeros(prev.p.shape, dtype=bool)

    boundary = ~interior
    if np.any(boundary):
        if params.strict_paper_problem1:
            pass  # literal fallback: both coordinates stay at zero
        else:
            # restricted minimizers on the p = 0 edge (and, for zero-gain
            # links, the separable quadratic in p as well)
            a_new[boundary] = np.maximum(0.0, -ga0[boundary]) / rho_tau
            zero_rate = boundary & (wh <= 0.0)
            p_new[zero_rate] = np.maximum(0.0, -q0[zero_rate]) / c2
    return p_new, a_new


def update_pa(prev: PrimalState, duals: DualState, sc: Scenario,
              params: "AdmmParams", n: int, k: int) -> tuple[float, float]:
    """Joint power/bandwidth update for one coordinate (0-based indices)."""
    rho, tau = params.rho, params.tau
    c2 = 2.0 * rho + tau
    w = sc.weight[n]
    h = sc.gain[n, k]
    wh = w * h
    q0 = (duals.y3[n, k] + duals.y4[n, k]
          - rho * (prev.l[n, k] + prev.s[n, k] + prev.g[n, k])
          - rho * (sc.power_cap[n] - prev.u3[n, k]) - tau * prev.p[n, k])
    a_others = prev.a[:, k].sum() - prev.a[n, k]
    ga0 = duals.y6[k] + rho * (a_others - 1.0) - tau * prev.a[n, k]

    if wh > 0.0 and q0 < wh:
        try:
            p_arr, a_arr, found = _pa_solve_interior(
                np.array([w]), np.array([h]), np.array([wh]),
                np.array([q0]), c2, np.array([ga0]), rho + tau)
        except RootFindingError as exc:
            raise RootFindingError(n, k, *exc.bracket) from None
        if found[0]:
            return float(p_arr[0]), float(a_arr[0])
    if params.strict_paper_problem1:
        return 0.0, 0.0
    a0 = max(0.0, -ga0) / (rho + tau)
    p0 = max(0.0, -q0) / c2 if wh <= 0.0 else 0.0
    return p0, a0


def update_p_fixed_bandwidth_all(prev: PrimalState, duals: DualState,
                                 sc: Scenario, params: "AdmmParams",
                                 a_fixed: np.ndarray) -> np.ndarray:
    """Transmit-energy update when the bandwidth matrix is held fixed.

    With the bandwidth known, the rate-stationarity condition becomes a
    quadratic in p with exactly one nonnegative root whenever the derivative
    at zero is negative; otherwise the update clips to zero.  Used by the
    fixed-bandwidth comparison schemes.
    """
    rho, tau = params.rho, params.tau
    c2 = 2.0 * rho + tau
    w = np.broadcast_to(sc.weight[:, None], prev.p.shape)
    wh = w * sc.gain
    q0 = (duals.y3 + duals.y4 - rho * (prev.l + prev.s + prev.g)
          - rho * (sc.power_cap[:, None] - prev.u3) - tau * prev.p)

    p_new = np.maximum(0.0, -q0) / c2
    live = (a_fixed > 0.0) & (wh > 0.0) & (q0 < wh)
    if np.any(live):
        ha = sc.gain[live] / a_fixed[live]
        qa = c2 * ha
        qb = c2 + q0[live] * ha
        qc = q0[live] - wh[live]
        disc = qb * qb - 4.0 * qa * qc
        p_new[live] = (-qb + np.sqrt(disc)) / (2.0 * qa)
    return p_new


# ---------------------------------------------------------------------------
# Battery-coupled scalar updates
# ---------------------------------------------------------------------------


def update_l(prev: PrimalState, duals: DualState, sc: Scenario,
             params: "AdmmParams", buffers: WorkBuffers, n: int, k: int) -> float:
    """Local harvested-energy update for one coordinate."""
    rho, tau = params.rho, params.tau
    kk = sc.n_slots
    cnt = kk - k
    l_prev = prev.l[n, k]
    ty = float(duals.y1[n, k:].sum() + duals.y2[n, k:].sum())
    s1 = s2 = 0.0
    for v in range(k, kk):
        beta = buffers.deficit[n, v] - l_prev
        s1 += beta + prev.u1[n, v]
        s2 += beta - prev.u2[n, v] + sc.battery_cap[n]
    bracket = (ty - duals.y3[n, k] + rho * (s1 + s2)
               - rho * (prev.p[n, k] - prev.s[n, k] - prev.g[n, k]))
    denom = rho * (2.0 * cnt + 1.0) + tau
    return max(0.0, tau * l_prev - bracket) / denom


def update_r(prev: PrimalState, duals: DualState, sc: Scenario,
             params: "AdmmParams", buffers: WorkBuffers,
             m: int, n: int, k: int) -> float:
    """Donation update for giver m, receiver n, slot k."""
    if m == n:
        raise ValueError("self-donation r[n, n, k] is identically zero")
    rho, tau = params.rho, params.tau
    eta = buffers.eta
    kk = sc.n_slots
    cnt = kk - k
    rp = prev.r[m, n, k]
    ty = 0.0
    s_out = s_in = 0.0
    for v in range(k, kk):
        nu = buffers.deficit[m, v] - rp
        gam = buffers.deficit[n, v] + eta * rp
        ty += (duals.y1[m, v] + duals.y2[m, v]
               - eta * (duals.y1[n, v] + duals.y2[n, v]))
        s_out += (nu + prev.u1[m, v]) + (nu - prev.u2[m, v] + sc.battery_cap[m])
        s_in += (gam + prev.u1[n, v]) + (gam - prev.u2[n, v] + sc.battery_cap[n])
    usage_rest = prev.s[n, k] + prev.u4[n, k] - eta * (buffers.incoming_sum[n, k] - rp)
    bracket = (sc.coop_cost + ty - eta * duals.y5[n, k]
               + rho * s_out - eta * rho * s_in - eta * rho * usage_rest)
    denom = rho * ((2.0 + 2.0 * eta * eta) * cnt + eta * eta) + tau
    return max(0.0, tau * rp - bracket) / denom


def update_s(prev: PrimalState, duals: DualState, sc: Scenario,
             params: "AdmmParams", buffers: WorkBuffers, n: int, k: int) -> float:
    """Donated-energy-usage update for one coordinate."""
    rho, tau = params.rho, params.tau
    eta = buffers.eta
    kk = sc.n_slots
    cnt = kk - k
    s_prev = prev.s[n, k]
    ty = float(duals.y1[n, k:].sum() + duals.y2[n, k:].sum())
    acc = 0.0
    for v in range(k, kk):
        beta = buffers.deficit[n, v] - s_prev
        acc += 2.0 * beta + prev.u1[n, v] - prev.u2[n, v] + sc.battery_cap[n]
    bracket = (ty + rho * acc - duals.y3[n, k] + duals.y5[n, k]
               - rho * (prev.p[n, k] - prev.l[n, k] - prev.g[n, k])
               + rho * (prev.u4[n, k] - eta * buffers.incoming_sum[n, k]))
    denom = rho * (2.0 * cnt + 2.0) + tau
    return max(0.0, tau * s_prev - bracket) / denom


def update_g(prev: PrimalState, duals: DualState, sc: Scenario,
             params: "AdmmParams", n: int, k: int) -> float:
    """Grid-energy update for one coordinate (no battery coupling)."""
    rho, tau = params.rho, params.tau
    val = (-sc.grid_cost + duals.y3[n, k]
           + rho * (prev.p[n, k] - prev.l[n, k] - prev.s[n, k])
           + tau * prev.g[n, k])
    return max(0.0, val) / (rho + tau)


def update_d(prev: PrimalState, duals: DualState, sc: Scenario,
             params: "AdmmParams", buffers: WorkBuffers, n: int, k: int) -> float:
    """Discharged-energy update for one coordinate."""
    rho, tau = params.rho, params.tau
    kk = sc.n_slots
    cnt = kk - k
    d_prev = prev.d[n, k]
    ty = float(duals.y1[n, k:].sum() + duals.y2[n, k:].sum())
    acc = 0.0
    for v in range(k, kk):
        beta = buffers.deficit[n, v] - d_prev
        acc += 2.0 * beta + prev.u1[n, v] - prev.u2[n, v] + sc.battery_cap[n]
    denom = 2.0 * rho * cnt + tau
    return max(0.0, tau * d_prev - (ty + rho * acc)) / denom


def update_u(prev: PrimalState, duals: DualState, sc: Scenario,
             params: "AdmmParams", buffers: WorkBuffers,
             n: int, k: int) -> tuple[float, float, float, float]:
    """All four slack updates for one coordinate."""
    rho, tau = params.rho, params.tau
    eta = buffers.eta
    deficit = buffers.deficit[n, k]
    rt = rho + tau
    u1 = max(0.0, -duals.y1[n, k] - rho * deficit + tau * prev.u1[n, k]) / rt
    u2 = max(0.0, duals.y2[n, k] + rho * deficit + rho * sc.battery_cap[n]
             + tau * prev.u2[n, k]) / rt
    u3 = max(0.0, -duals.y4[n, k] - rho * (prev.p[n, k] - sc.power_cap[n])
             + tau * prev.u3[n, k]) / rt
    u4 = max(0.0, -duals.y5[n, k]
             - rho * (prev.s[n, k] - eta * buffers.incoming_sum[n, k])
             + tau * prev.u4[n, k]) / rt
    return u1, u2, u3, u4


# ---------------------------------------------------------------------------
# Vectorized family updates
# ---------------------------------------------------------------------------


def _shared_terms(prev: PrimalState, duals: DualState, sc: Scenario,
                  buffers: WorkBuffers):
    """Pieces common to the l, r, s and d updates, computed once per sweep.

    ``ty`` is the suffix sum of the two battery multipliers; ``bsum`` is the
    summed battery-floor and battery-ceiling residual pair before removing
    any single variable's own contribution.
    """
    cnt = _slot_counts(sc.n_slots)
    ty = _suffix_sum(duals.y1 + duals.y2)
    bsum = (2.0 * buffers.deficit_suffix + buffers.u1_suffix
            - buffers.u2_suffix + cnt * sc.battery_cap[:, None])
    return cnt, ty, bsum


def _l_kernel(prev, duals, rho, tau, cnt, ty, bsum):
    pair = bsum - (2.0 * cnt) * prev.l
    bracket = ty - duals.y3 + rho * pair - rho * (prev.p - prev.s - prev.g)
    denom = rho * (2.0 * cnt + 1.0) + tau
    return np.maximum(0.0, tau * prev.l - bracket) / denom


def _r_kernel(prev, duals, sc, rho, tau, eta, cnt, ty, bsum, buffers):
    base = ty + rho * bsum
    receiver = eta * (base + duals.y5
                      + rho * (prev.s + prev.u4 - eta * buffers.incoming_sum))
    denom = rho * ((2.0 + 2.0 * eta * eta) * cnt + eta * eta) + tau
    core = sc.coop_cost + base[:, None, :] - receiver[None, :, :]
    r_new = np.maximum(0.0, prev.r - core / denom)
    np.einsum("nnk->nk", r_new)[...] = 0.0
    return r_new


def _s_kernel(prev, duals, rho, tau, eta, cnt, ty, bsum, buffers):
    pair = bsum - (2.0 * cnt) * prev.s
    bracket = (ty + rho * pair - duals.y3 + duals.y5
               - rho * (prev.p - prev.l - prev.g)
               + rho * (prev.u4 - eta * buffers.incoming_sum))
    denom = rho * (2.0 * cnt + 2.0) + tau
    return np.maximum(0.0, tau * prev.s - bracket) / denom


def _d_kernel(prev, duals, rho, tau, cnt, ty, bsum):
    pair = bsum - (2.0 * cnt) * prev.d
    denom = 2.0 * rho * cnt + tau
    return np.maximum(0.0, tau * prev.d - (ty + rho * pair)) / denom


def update_l_all(prev: PrimalState, duals: DualState, sc: Scenario,
                 params: "AdmmParams", buffers: WorkBuffers) -> np.ndarray:
    cnt, ty, bsum = _shared_terms(prev, duals, sc, buffers)
    return _l_kernel(prev, duals, params.rho, params.tau, cnt, ty, bsum)


def update_r_all(prev: PrimalState, duals: DualState, sc: Scenario,
                 params: "AdmmParams", buffers: WorkBuffers) -> np.ndarray:
    cnt, ty, bsum = _shared_terms(prev, duals, sc, buffers)
    return _r_kernel(prev, duals, sc, params.rho, params.tau, buffers.eta,
                     cnt, ty, bsum, buffers)


def update_s_all(prev: PrimalState, duals: DualState, sc: Scenario,
                 params: "AdmmParams", buffers: WorkBuffers) -> np.ndarray:
    cnt, ty, bsum = _shared_terms(prev, duals, sc, buffers)
    return _s_kernel(prev, duals, params.rho, params.tau, buffers.eta,
                     cnt, ty, bsum, buffers)


def update_g_all(prev: PrimalState, duals: DualState, sc: Scenario,
                 params: "AdmmParams") -> np.ndarray:
    rho, tau = params.rho, params.tau
    val = (-sc.grid_cost + duals.y3 + rho * (prev.p - prev.l - prev.s)
           + tau * prev.g)
    return np.maximum(0.0, val) / (rho + tau)


def update_d_all(prev: PrimalState, duals: DualState, sc: Scenario,
                 params: "AdmmParams", buffers: WorkBuffers) -> np.ndarray:
    cnt, ty, bsum = _shared_terms(prev, duals, sc, buffers)
    return _d_kernel(prev, duals, params.rho, params.tau, cnt, ty, bsum)


def update_u_all(prev: PrimalState, duals: DualState, sc: Scenario,
                 params: "AdmmParams", buffers: WorkBuffers
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    rho, tau = params.rho, params.tau
    eta = buffers.eta
    rt = rho + tau
    bcap = sc.battery_cap[:, None]
    pcap = sc.power_cap[:, None]
    u1 = np.maximum(0.0, -duals.y1 - rho * buffers.deficit + tau * prev.u1) / rt
    u2 = np.maximum(0.0, duals.y2 + rho * buffers.deficit + rho * bcap
                    + tau * prev.u2) / rt
    u3 = np.maximum(0.0, -duals.y4 - rho * (prev.p - pcap) + tau * prev.u3) / rt
    u4 = np.maximum(0.0, -duals.y5 - rho * (prev.s - eta * buffers.incoming_sum)
                    + tau * prev.u4) / rt
    return u1, u2, u3, u4


def sweep_families(prev: PrimalState, duals: DualState, sc: Scenario,
                   params: "AdmmParams", buffers: WorkBuffers,
                   fixed_bandwidth: np.ndarray | None = None) -> PrimalState:
    """All seven family updates from shared tables, as one fused pass."""
    rho, tau = params.rho, params.tau
    eta = buffers.eta
    cnt, ty, bsum = _shared_terms(prev, duals, sc, buffers)
    if fixed_bandwidth is None:
        p_new, a_new = update_pa_all(prev, duals, sc, params)
    else:
        p_new = update_p_fixed_bandwidth_all(prev, duals, sc, params,
                                             fixed_bandwidth)
        a_new = fixed_bandwidth
    u1, u2, u3, u4 = update_u_all(prev, duals, sc, params, buffers)
    return PrimalState(
        p=p_new,
        a=a_new,
        l=_l_kernel(prev, duals, rho, tau, cnt, ty, bsum),
        r=_r_kernel(prev, duals, sc, rho, tau, eta, cnt, ty, bsum, buffers),
        s=_s_kernel(prev, duals, rho, tau, eta, cnt, ty, bsum, buffers),
        g=update_g_all(prev, duals, sc, params),
        d=_d_kernel(prev, duals, rho, tau, cnt, ty, bsum),
        u1=u1, u2=u2, u3=u3, u4=u4,
    )
