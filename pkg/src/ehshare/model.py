"""Problem instance and allocation-state types, plus objective and feasibility.

An instance describes N transmitter-receiver pairs scheduling jointly over K
slots.  Each transmitter spends a mix of locally harvested energy, grid
energy (priced per Joule), and energy donated by other nodes (also priced),
subject to a finite battery and a per-slot transmit-energy cap.  The slots
share one unit of bandwidth, split fractionally among the links.

Throughput is measured in nats: a link carrying energy ``p`` on a bandwidth
fraction ``a`` with channel power gain ``H`` contributes ``a * ln(1 + p*H/a)``,
with the continuous extension ``0`` at ``a = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

__all__ = [
    "Scenario",
    "PrimalState",
    "DualState",
    "ResidualReport",
    "rate_term",
    "weighted_rate_matrix",
    "objective",
    "battery_trajectory",
    "feasibility",
    "repair_allocation",
]

SCENARIO_SCHEMA = "ehshare-scenario-v1"

# a*ln(1+x/a) switches to its asymptotic form once x/a would lose all precision
_LOG_SWITCH = 1e15


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


def _as_matrix(name: str, value, n: int, k: int) -> np.ndarray:
    out = np.array(value, dtype=float)
    if out.shape != (n, k):
        raise ValueError(f"{name} must have shape ({n}, {k}), got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} has non-finite entries")
    return out


def _as_vector(name: str, value, n: int) -> np.ndarray:
    out = np.array(value, dtype=float)
    if out.ndim == 0:
        out = np.full(n, float(out))
    if out.shape != (n,):
        raise ValueError(f"{name} must have shape ({n},), got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} has non-finite entries")
    return out


@dataclass(frozen=True, eq=False)
class Scenario:
    """One scheduling problem: gains, energy arrivals, caps and prices.

    Attributes
    ----------
    n_users, n_slots : int
        Network size N and horizon length K.
    gain : (N, K) array
        Channel power gain of each link in each slot (dimensionless).
    harvest : (N, K) array
        Energy harvested by each node *during* each slot, in Joules.  The
        cumulative amount available through slot k is the prefix sum.
    battery_cap : (N,) array
        Battery capacity per node, Joules.
    power_cap : (N,) array
        Per-slot transmit energy limit per node, Joules.
    weight : (N,) array
        Relative throughput priority of each link.
    grid_cost : float
        Price per Joule taken from the conventional grid.
    coop_cost : float
        Price per Joule donated from one node to another.
    transfer_efficiency : float
        Fraction of a donated Joule that arrives at the receiver; 1 means
        lossless transfer.
    """

    n_users: int
    n_slots: int
    gain: np.ndarray
    harvest: np.ndarray
    battery_cap: np.ndarray
    power_cap: np.ndarray
    weight: np.ndarray
    grid_cost: float
    coop_cost: float
    transfer_efficiency: float = 1.0
    seed: int | None = None

    def __post_init__(self):
        n, k = int(self.n_users), int(self.n_slots)
        if n < 1 or k < 1:
            raise ValueError("n_users and n_slots must be positive")
        object.__setattr__(self, "n_users", n)
        object.__setattr__(self, "n_slots", k)
        gain = _as_matrix("gain", self.gain, n, k)
        harvest = _as_matrix("harvest", self.harvest, n, k)
        bcap = _as_vector("battery_cap", self.battery_cap, n)
        pcap = _as_vector("power_cap", self.power_cap, n)
        weight = _as_vector("weight", self.weight, n)
        for name, arr in (("gain", gain), ("harvest", harvest),
                          ("battery_cap", bcap), ("weight", weight)):
            if np.any(arr < 0):
                raise ValueError(f"{name} must be nonnegative")
        if np.any(pcap <= 0):
            raise ValueError("power_cap must be strictly positive")
        if not (self.grid_cost >= 0 and self.coop_cost >= 0):
            raise ValueError("grid_cost and coop_cost must be nonnegative")
        if not (0.0 < self.transfer_efficiency <= 1.0):
            raise ValueError("transfer_efficiency must lie in (0, 1]")
        object.__setattr__(self, "gain", _freeze(gain))
        object.__setattr__(self, "harvest", _freeze(harvest))
        object.__setattr__(self, "battery_cap", _freeze(bcap))
        object.__setattr__(self, "power_cap", _freeze(pcap))
        object.__setattr__(self, "weight", _freeze(weight))
        object.__setattr__(self, "grid_cost", float(self.grid_cost))
        object.__setattr__(self, "coop_cost", float(self.coop_cost))
        object.__setattr__(self, "transfer_efficiency", float(self.transfer_efficiency))
        object.__setattr__(self, "_cum_harvest", _freeze(np.cumsum(harvest, axis=1)))

    @property
    def cumulative_harvest(self) -> np.ndarray:
        """Total energy harvested through the end of each slot, (N, K)."""
        return self._cum_harvest

    def to_dict(self) -> dict:
        out = {
            "schema": SCENARIO_SCHEMA,
            "n_users": self.n_users,
            "n_slots": self.n_slots,
            "gain": self.gain.tolist(),
            "harvest": self.harvest.tolist(),
            "battery_cap": self.battery_cap.tolist(),
            "power_cap": self.power_cap.tolist(),
            "weight": self.weight.tolist(),
            "grid_cost": self.grid_cost,
            "coop_cost": self.coop_cost,
            "transfer_efficiency": self.transfer_efficiency,
        }
        if self.seed is not None:
            out["seed"] = int(self.seed)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        if not isinstance(data, dict):
            raise ValueError("scenario document must be a JSON object")
        schema = data.get("schema", SCENARIO_SCHEMA)
        if schema != SCENARIO_SCHEMA:
            raise ValueError(f"unsupported schema: {schema!r}")
        required = ["n_users", "n_slots", "gain", "harvest", "battery_cap",
                    "power_cap", "weight", "grid_cost", "coop_cost"]
        for key in required:
            if key not in data:
                raise ValueError(f"scenario document is missing key {key!r}")
        try:
            return cls(
                n_users=int(data["n_users"]),
                n_slots=int(data["n_slots"]),
                gain=data["gain"],
                harvest=data["harvest"],
                battery_cap=data["battery_cap"],
                power_cap=data["power_cap"],
                weight=data["weight"],
                grid_cost=float(data["grid_cost"]),
                coop_cost=float(data["coop_cost"]),
                transfer_efficiency=float(data.get("transfer_efficiency", 1.0)),
                seed=data.get("seed"),
            )
        except ValueError as exc:
            raise ValueError(f"invalid scenario document: {exc}") from exc


@dataclass(frozen=True, eq=False)
class PrimalState:
    """All decision variables of one allocation, plus the slack families.

    Shapes are (N, K) except ``r``, which is (N, N, K) with ``r[m, n, k]``
    the energy node m donates to node n in slot k (zero diagonal).

    Fields: ``p`` transmit energy, ``a`` bandwidth fraction, ``l`` locally
    harvested energy spent, ``r`` donations, ``s`` donated energy consumed
    on arrival, ``g`` grid energy, ``d`` discharged (wasted) energy, and
    ``u1``..``u4`` the nonnegative slacks for the battery floor, battery
    ceiling, power cap and donation-usage inequalities.
    """

    p: np.ndarray
    a: np.ndarray
    l: np.ndarray
    r: np.ndarray
    s: np.ndarray
    g: np.ndarray
    d: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    u3: np.ndarray
    u4: np.ndarray

    def __post_init__(self):
        # asarray keeps solver-produced arrays without copying; freezing
        # them makes the state safe to share across threads
        for f in fields(self):
            arr = np.asarray(getattr(self, f.name), dtype=float)
            object.__setattr__(self, f.name, _freeze(arr))

    @classmethod
    def zeros(cls, sc: Scenario) -> "PrimalState":
        n, k = sc.n_users, sc.n_slots
        nk = np.zeros((n, k))
        return cls(p=nk, a=nk.copy(), l=nk.copy(), r=np.zeros((n, n, k)),
                   s=nk.copy(), g=nk.copy(), d=nk.copy(), u1=nk.copy(),
                   u2=nk.copy(), u3=nk.copy(), u4=nk.copy())

    def validate(self, sc: Scenario | None = None) -> None:
        """Raise ValueError if shapes, signs or the zero diagonal are off."""
        n, k = self.p.shape
        if sc is not None and (n, k) != (sc.n_users, sc.n_slots):
            raise ValueError(
                f"state is ({n}, {k}) but scenario wants ({sc.n_users}, {sc.n_slots})")
        for f in fields(self):
            arr = getattr(self, f.name)
            want = (n, n, k) if f.name == "r" else (n, k)
            if arr.shape != want:
                raise ValueError(f"{f.name} must have shape {want}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{f.name} has non-finite entries")
            if np.any(arr < 0):
                raise ValueError(f"{f.name} has negative entries")
        diag = np.einsum("nnk->nk", self.r)
        if np.any(diag != 0.0):
            raise ValueError("self-donations r[n, n, :] must be zero")


@dataclass(frozen=True, eq=False)
class DualState:
    """Multipliers for the six equality-constraint families.

    ``y1``/``y2`` price the battery floor/ceiling balances, ``y3`` the
    power balance, ``y4`` the power cap, ``y5`` the donation-usage balance
    (all (N, K)); ``y6`` prices the per-slot bandwidth total ((K,)).
    """

    y1: np.ndarray
    y2: np.ndarray
    y3: np.ndarray
    y4: np.ndarray
    y5: np.ndarray
    y6: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            arr = np.asarray(getattr(self, f.name), dtype=float)
            object.__setattr__(self, f.name, _freeze(arr))

    def validate(self) -> None:
        for f in fields(self):
            if not np.all(np.isfinite(getattr(self, f.name))):
                raise ValueError(f"{f.name} has non-finite entries")

    @classmethod
    def zeros(cls, sc: Scenario) -> "DualState":
        n, k = sc.n_users, sc.n_slots
        nk = np.zeros((n, k))
        return cls(y1=nk, y2=nk.copy(), y3=nk.copy(), y4=nk.copy(),
                   y5=nk.copy(), y6=np.zeros(k))


@dataclass(frozen=True)
class ResidualReport:
    """Worst-case violation of each constraint family, all nonnegative."""

    battery_lower: float
    battery_upper: float
    power_balance: float
    power_cap: float
    donation_usage: float
    bandwidth_sum: float
    nonnegativity: float

    def max_violation(self) -> float:
        return max(getattr(self, f.name) for f in fields(self))

    def within(self, tol: float) -> bool:
        """True when every family violates by at most ``tol``."""
        return self.max_violation() <= tol

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def rate_term(p: float, a: float, gain: float, weight: float) -> float:
    """Throughput of one link in one slot, in nats.

    Returns ``weight * a * ln(1 + p*gain/a)`` with the continuous extension
    0 at ``a = 0``.  The large-ratio branch avoids overflow of ``p*gain/a``
    when ``a`` is many orders of magnitude below ``p*gain``.
    """
    if a <= 0.0 or weight == 0.0:
        return 0.0
    ph = p * gain
    if ph <= 0.0:
        return 0.0
    x = ph / a
    if x > _LOG_SWITCH:
        return weight * a * (math.log(ph) - math.log(a))
    return weight * a * math.log1p(x)


def weighted_rate_matrix(sc: Scenario, p: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Per-(node, slot) weighted rates, vectorized twin of :func:`rate_term`."""
    ph = p * sc.gain
    live = (a > 0.0) & (ph > 0.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        ratio = ph / a
        val = np.where(ratio > _LOG_SWITCH,
                       np.log(ph) - np.log(a),
                       np.log1p(np.where(live, ratio, 0.0)))
        out = np.where(live, a * val, 0.0)
    return out * sc.weight[:, None]


def _check_dims(sc: Scenario, x: PrimalState) -> None:
    n, k = sc.n_users, sc.n_slots
    if x.p.shape != (n, k) or x.r.shape != (n, n, k):
        raise ValueError(
            f"state shaped {x.p.shape}/{x.r.shape} does not match scenario ({n}, {k})")


def objective(sc: Scenario, x: PrimalState) -> float:
    """Weighted sum throughput minus grid and cooperation costs.

    Feasibility is not required; the value is exact for whatever state is
    passed in.
    """
    _check_dims(sc, x)
    rate = float(weighted_rate_matrix(sc, x.p, x.a).sum())
    return rate - sc.grid_cost * float(x.g.sum()) - sc.coop_cost * float(x.r.sum())


def battery_trajectory(sc: Scenario, x: PrimalState) -> np.ndarray:
    """Battery level of every node at the end of every slot, (N, K).

    Batteries start empty.  Each slot adds the harvest, subtracts local
    spending, outgoing donations, immediate donated-energy use and
    discharge, and credits incoming donations scaled by the transfer
    efficiency.
    """
    _check_dims(sc, x)
    eta = sc.transfer_efficiency
    outgoing = x.r.sum(axis=1)
    incoming = x.r.sum(axis=0)
    delta = sc.harvest - x.l - outgoing + eta * incoming - x.s - x.d
    return np.cumsum(delta, axis=1)


def repair_allocation(sc: Scenario, x: PrimalState) -> PrimalState:
    """Project an almost-feasible allocation onto the constraint set.

    Penalty-method iterates satisfy the constraints only in the limit;
    this produces a nearby allocation that satisfies them exactly, so
    emitted results are feasible and their objective is a true achievable
    value (hence a lower bound on the optimum):

    * bandwidth columns are renormalized to sum to one;
    * donated-energy use is clamped to what actually arrived;
    * a forward pass removes battery violations slot by slot, cutting
      local spending, then immediate donated use, then discharge, then
      outgoing donations where the battery would go negative (donation
      cuts shrink the receivers' inflow, so the slot is re-checked until
      stable), and discharging where it would overflow;
    * transmit energy is then re-derived: free sources capped, and grid
      energy added exactly while its marginal rate exceeds the grid
      price.
    """
    _check_dims(sc, x)
    n, _ = x.p.shape
    a = np.array(x.a)
    col = a.sum(axis=0)
    ok = col > 0.0
    a[:, ok] /= col[ok]
    a[:, ~ok] = 1.0 / n

    eta = sc.transfer_efficiency
    r = np.array(x.r)
    s = np.minimum(x.s, eta * r.sum(axis=0))
    l = np.array(x.l)
    d = np.array(x.d)

    # free sources must respect the transmit cap on their own
    pcap = sc.power_cap[:, None]
    for arr in (l, s):
        over = np.maximum(0.0, l + s - pcap)
        if not over.any():
            break
        cut = np.minimum(arr, over)
        arr -= cut

    # slot-by-slot battery projection; cutting what a node spends raises
    # its level immediately, while cutting its outgoing donations lowers
    # the receivers' inflow, so each slot is re-checked until stable
    carried = np.zeros(n)
    bcap = sc.battery_cap

    def slot_level(k):
        return (carried + sc.harvest[:, k] - l[:, k] - r[:, :, k].sum(axis=1)
                + eta * r[:, :, k].sum(axis=0) - s[:, k] - d[:, k])

    for k in range(x.p.shape[1]):
        # all cuts are monotone, so the inner loop terminates: once a
        # node's spending and donations reach zero its level is a sum of
        # nonnegative inflows
        for _ in range(8 * n + 8):
            short = np.maximum(0.0, -slot_level(k))
            if short.max() <= 1e-15:
                break
            for arr in (l, s, d):
                cut = np.minimum(arr[:, k], short)
                arr[:, k] -= cut
                short -= cut
            given = r[:, :, k].sum(axis=1)
            donors = (given > 0.0) & (short > 0.0)
            if donors.any():
                scale = np.maximum(0.0, 1.0 - short[donors] / given[donors])
                r[donors, :, k] *= scale[:, None]
            s[:, k] = np.minimum(s[:, k], eta * r[:, :, k].sum(axis=0))
        level = slot_level(k)
        over = np.maximum(0.0, level - bcap)
        d[:, k] += over
        carried = np.minimum(np.maximum(level, 0.0), bcap)
    incoming = r.sum(axis=0)
    outgoing = r.sum(axis=1)

    # grid top-up: raise transmit energy while its marginal rate exceeds
    # the grid price (separable per coordinate once a, l, s are fixed)
    base = l + s
    wa = sc.weight[:, None] * a
    wh_pos = (wa > 0.0) & (sc.gain > 0.0)
    if sc.grid_cost == 0.0:
        p_want = np.where(wh_pos, pcap * np.ones_like(base), base)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            sat = wa / sc.grid_cost - a / sc.gain
        p_want = np.where(wh_pos, sat, base)
    p = np.clip(p_want, base, pcap)
    g = p - base

    delta = sc.harvest - l - outgoing + eta * incoming - s - d
    batt = np.cumsum(delta, axis=1)
    return PrimalState(
        p=p, a=a, l=l, r=r, s=s, g=g, d=d,
        u1=np.maximum(0.0, batt),
        u2=np.maximum(0.0, sc.battery_cap[:, None] - batt),
        u3=np.maximum(0.0, pcap - p),
        u4=np.maximum(0.0, eta * incoming - s),
    )


def feasibility(sc: Scenario, x: PrimalState, tol: float = 0.0) -> ResidualReport:
    """Measure the worst violation of every constraint family.

    ``tol`` is the acceptance threshold the caller intends to apply; the
    returned report's :meth:`ResidualReport.within` answers feasibility at
    that or any other threshold.
    """
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    _check_dims(sc, x)
    eta = sc.transfer_efficiency
    batt = battery_trajectory(sc, x)
    incoming = x.r.sum(axis=0)
    return ResidualReport(
        battery_lower=float(np.maximum(0.0, -batt).max()),
        battery_upper=float(np.maximum(0.0, batt - sc.battery_cap[:, None]).max()),
        power_balance=float(np.abs(x.p - x.l - x.s - x.g).max()),
        power_cap=float(np.maximum(0.0, x.p - sc.power_cap[:, None]).max()),
        donation_usage=float(np.maximum(0.0, x.s - eta * incoming).max()),
        bandwidth_sum=float(np.abs(x.a.sum(axis=0) - 1.0).max()),
        nonnegativity=float(max(0.0, -min(x.p.min(), x.a.min(), x.l.min(),
                                          x.r.min(), x.s.min(), x.g.min(),
                                          x.d.min()))),
    )
