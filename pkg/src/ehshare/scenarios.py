"""Random scenario generation and JSON persistence.

Harvest arrivals are truncated-Gaussian per slot (the positive part of a
normal draw); channel power gains are unit-mean exponential, matching the
squared magnitude of a circularly-symmetric complex Gaussian amplitude.
Generation is deterministic given (seed, repeat): each repeat draws from
its own independently-seeded stream.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .model import SCENARIO_SCHEMA, Scenario

__all__ = ["GenConfig", "ScenarioFormatError", "generate", "save", "load"]


class ScenarioFormatError(ValueError):
    """A scenario document failed schema validation."""


@dataclass(frozen=True)
class GenConfig:
    """Knobs for random instance generation.

    ``delta`` is the mean per-slot harvest, scalar or one value per node;
    ``harvest_variance`` the variance of the underlying (untruncated)
    Gaussian.  ``gain_model`` is ``"exponential"`` (unit mean) or
    ``"constant"`` with level ``gain_constant``.
    """

    n_users: int = 5
    n_slots: int = 5
    delta: float | tuple = 10.0
    harvest_variance: float = 4.0
    gain_model: str = "exponential"
    gain_constant: float = 1.0
    battery_cap: float | tuple = 20.0
    power_cap: float | tuple = 20.0
    weight: float | tuple = 1.0
    grid_cost: float = 0.1
    coop_cost: float = 0.2
    transfer_efficiency: float = 1.0
    seed: int = 0
    repeats: int = 12

    def __post_init__(self):
        if self.n_users < 1 or self.n_slots < 1:
            raise ValueError("n_users and n_slots must be at least 1")
        if self.harvest_variance < 0:
            raise ValueError("harvest_variance must be nonnegative")
        if self.gain_model not in ("exponential", "constant"):
            raise ValueError(f"unknown gain_model {self.gain_model!r}")


def _per_node(value, n: int) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"per-node value must be scalar or length {n}")
    return arr


def generate(cfg: GenConfig, repeat: int = 0) -> Scenario:
    """Draw one scenario; bit-reproducible given (cfg.seed, repeat)."""
    n, k = cfg.n_users, cfg.n_slots
    rng = np.random.default_rng([int(cfg.seed) & 0xFFFFFFFFFFFFFFFF, int(repeat)])
    delta = _per_node(cfg.delta, n)
    sigma = float(np.sqrt(cfg.harvest_variance))
    harvest = np.maximum(0.0, rng.normal(delta[:, None], sigma, size=(n, k)))
    if cfg.gain_model == "exponential":
        gain = rng.exponential(1.0, size=(n, k))
    else:
        gain = np.full((n, k), float(cfg.gain_constant))
    return Scenario(
        n_users=n,
        n_slots=k,
        gain=gain,
        harvest=harvest,
        battery_cap=_per_node(cfg.battery_cap, n),
        power_cap=_per_node(cfg.power_cap, n),
        weight=_per_node(cfg.weight, n),
        grid_cost=cfg.grid_cost,
        coop_cost=cfg.coop_cost,
        transfer_efficiency=cfg.transfer_efficiency,
        seed=int(cfg.seed),
    )


def save(sc: Scenario, path: str | os.PathLike,
         provenance: dict | None = None) -> None:
    """Write a scenario as JSON; floats keep full round-trip precision."""
    doc = sc.to_dict()
    if provenance is not None:
        doc["provenance"] = provenance
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load(path: str | os.PathLike) -> Scenario:
    """Read a scenario written by :func:`save`.

    Raises :class:`ScenarioFormatError` naming the offending key on any
    schema problem.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioFormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioFormatError("scenario document must be a JSON object")
    schema = doc.get("schema", SCENARIO_SCHEMA)
    if schema != SCENARIO_SCHEMA:
        raise ScenarioFormatError(
            f"schema mismatch: expected {SCENARIO_SCHEMA!r}, found {schema!r}")
    try:
        return Scenario.from_dict(doc)
    except ValueError as exc:
        raise ScenarioFormatError(str(exc)) from exc
