"""Shared builders for scenario, state and dual fixtures."""

import numpy as np
import pytest

from ehshare.model import DualState, PrimalState, Scenario


def make_scenario(n=2, k=2, gain=1.0, harvest=0.0, bcap=20.0, pcap=20.0,
                  weight=1.0, lam=0.1, mu=0.2, eta=1.0):
    gain = np.broadcast_to(np.asarray(gain, dtype=float), (n, k))
    harvest = np.broadcast_to(np.asarray(harvest, dtype=float), (n, k))
    return Scenario(
        n_users=n, n_slots=k, gain=gain.copy(), harvest=harvest.copy(),
        battery_cap=np.broadcast_to(np.asarray(bcap, float), (n,)).copy(),
        power_cap=np.broadcast_to(np.asarray(pcap, float), (n,)).copy(),
        weight=np.broadcast_to(np.asarray(weight, float), (n,)).copy(),
        grid_cost=lam, coop_cost=mu, transfer_efficiency=eta,
    )


def random_scenario(rng, n=2, k=2, eta=1.0, lam=None, mu=None):
    return Scenario(
        n_users=n, n_slots=k,
        gain=rng.exponential(1.0, (n, k)),
        harvest=rng.uniform(0.0, 3.0, (n, k)),
        battery_cap=rng.uniform(1.0, 6.0, n),
        power_cap=rng.uniform(2.0, 8.0, n),
        weight=rng.uniform(0.5, 2.0, n),
        grid_cost=rng.uniform(0.0, 1.0) if lam is None else lam,
        coop_cost=rng.uniform(0.0, 1.0) if mu is None else mu,
        transfer_efficiency=eta,
    )


def random_state(rng, n, k, scale=2.0):
    r = rng.uniform(0.0, scale, (n, n, k))
    np.einsum("nnk->nk", r)[...] = 0.0
    return PrimalState(
        p=rng.uniform(0.0, scale, (n, k)),
        a=rng.uniform(0.0, 1.0, (n, k)),
        l=rng.uniform(0.0, scale, (n, k)),
        r=r,
        s=rng.uniform(0.0, scale, (n, k)),
        g=rng.uniform(0.0, scale, (n, k)),
        d=rng.uniform(0.0, scale, (n, k)),
        u1=rng.uniform(0.0, scale, (n, k)),
        u2=rng.uniform(0.0, scale, (n, k)),
        u3=rng.uniform(0.0, scale, (n, k)),
        u4=rng.uniform(0.0, scale, (n, k)),
    )


def random_duals(rng, n, k, scale=0.5):
    return DualState(
        y1=rng.normal(0.0, scale, (n, k)),
        y2=rng.normal(0.0, scale, (n, k)),
        y3=rng.normal(0.0, scale, (n, k)),
        y4=rng.normal(0.0, scale, (n, k)),
        y5=rng.normal(0.0, scale, (n, k)),
        y6=rng.normal(0.0, scale, k),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
