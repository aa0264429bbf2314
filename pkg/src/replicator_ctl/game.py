"""Static game structure: populations, payoff matrices, and output aggregation.

A scenario describes m >= 2 populations of agents sharing one action set of
size n >= 2.  Population k holds a fixed share ``v^k`` of all agents and an
n x n payoff matrix ``A^k``; entry (i, j) is what an agent earns playing
action i against an opponent playing action j.  Matches are drawn from the
whole society, so the opponent's action is distributed like the aggregate
output ``y``, the population-weighted mean of the per-population action
shares.  Everything downstream (vector fields, stability analysis, the
finite-agent simulator) consumes these primitives.

States live on products of probability simplices:

* a population state ``x^k`` is a point of the n-simplex,
* a state combination ``x`` stacks the m rows into an (m, n) array,
* the output ``y = sum_k v^k x^k`` is again a simplex point.

All types are immutable after construction and all operations are pure,
so they can be evaluated concurrently without synchronization.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

__all__ = [
    "CARRIER_THRESHOLD",
    "COORD_TOLERANCE",
    "SUM_TOLERANCE",
    "Scenario",
    "ScenarioError",
    "aggregate_output",
    "average_payoff",
    "carrier",
    "check_simplex",
    "check_state",
    "expected_payoff",
    "local_shift",
    "make_state",
    "scenario_digest",
]

# Strict-positivity threshold for carrier membership; absorbs integration
# round-off so carrier sets cannot flicker from noise.
CARRIER_THRESHOLD = 1e-12

# Simplex membership: row sums within SUM_TOLERANCE of 1, coordinates no
# lower than -COORD_TOLERANCE.
SUM_TOLERANCE = 1e-9
COORD_TOLERANCE = 1e-12

# Population shares must sum to 1 within this absolute tolerance.
SHARE_SUM_TOLERANCE = 1e-12


class ScenarioError(ValueError):
    """Raised when a scenario description violates its invariants."""


@dataclass(frozen=True)
class Scenario:
    """Immutable game description: payoff matrices and population shares.

    Attributes
    ----------
    payoffs : ndarray, shape (m, n, n)
        payoffs[k] is the matrix for population k.
    shares : ndarray, shape (m,)
        Population shares, each in (0, 1), summing to 1.
    """

    payoffs: np.ndarray
    shares: np.ndarray

    def __post_init__(self) -> None:
        payoffs = np.asarray(self.payoffs, dtype=float)
        shares = np.asarray(self.shares, dtype=float)
        if payoffs.ndim != 3 or payoffs.shape[1] != payoffs.shape[2]:
            raise ScenarioError(
                f"payoffs must be (m, n, n), got shape {payoffs.shape}"
            )
        m, n = payoffs.shape[0], payoffs.shape[1]
        if m < 2:
            raise ScenarioError(f"at least 2 populations required, got {m}")
        if n < 2:
            raise ScenarioError(f"at least 2 actions required, got {n}")
        if shares.shape != (m,):
            raise ScenarioError(
                f"expected {m} population shares, got shape {shares.shape}"
            )
        if not np.all(np.isfinite(payoffs)):
            bad = np.argwhere(~np.isfinite(payoffs))[0]
            raise ScenarioError(
                f"non-finite payoff entry at population {bad[0]}, "
                f"row {bad[1]}, column {bad[2]}"
            )
        if np.any(shares <= 0.0) or np.any(shares >= 1.0):
            raise ScenarioError(
                f"population shares must lie strictly in (0, 1), got {shares}"
            )
        if abs(shares.sum() - 1.0) > SHARE_SUM_TOLERANCE:
            raise ScenarioError(
                f"population shares must sum to 1, got {shares.sum()!r}"
            )
        payoffs = payoffs.copy()
        shares = shares.copy()
        payoffs.setflags(write=False)
        shares.setflags(write=False)
        object.__setattr__(self, "payoffs", payoffs)
        object.__setattr__(self, "shares", shares)

    @property
    def n_populations(self) -> int:
        return self.payoffs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.payoffs.shape[1]

    @property
    def payoff_max(self) -> float:
        return float(self.payoffs.max())

    @property
    def payoff_min(self) -> float:
        return float(self.payoffs.min())

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "Scenario":
        """Build a scenario from a parsed description.

        Expected shape: ``{"populations": [{"share": s, "payoff": [[...]]},
        ...]}``, one entry per population.
        """
        if not isinstance(raw, dict) or "populations" not in raw:
            raise ScenarioError('scenario must be an object with a "populations" list')
        pops = raw["populations"]
        if not isinstance(pops, list) or len(pops) == 0:
            raise ScenarioError('"populations" must be a non-empty list')
        shares = []
        payoffs = []
        for idx, pop in enumerate(pops):
            if not isinstance(pop, dict) or "share" not in pop or "payoff" not in pop:
                raise ScenarioError(
                    f'populations[{idx}] must have "share" and "payoff" fields'
                )
            try:
                shares.append(float(pop["share"]))
            except (TypeError, ValueError) as exc:
                raise ScenarioError(f"populations[{idx}].share: {exc}") from exc
            try:
                matrix = np.asarray(pop["payoff"], dtype=float)
            except (TypeError, ValueError) as exc:
                raise ScenarioError(f"populations[{idx}].payoff: {exc}") from exc
            if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
                raise ScenarioError(
                    f"populations[{idx}].payoff must be square, got {matrix.shape}"
                )
            payoffs.append(matrix)
        n = payoffs[0].shape[0]
        for idx, matrix in enumerate(payoffs):
            if matrix.shape != (n, n):
                raise ScenarioError(
                    f"populations[{idx}].payoff is {matrix.shape}, expected ({n}, {n})"
                )
        return cls(payoffs=np.stack(payoffs), shares=np.array(shares))

    @classmethod
    def from_file(cls, path: str) -> "Scenario":
        with open(path, "r", encoding="utf-8") as handle:
            try:
                raw = json.load(handle)
            except json.JSONDecodeError as exc:
                raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}, "
                                    f"column {exc.colno}: {exc.msg}") from exc
        try:
            return cls.from_dict(raw)
        except ScenarioError as exc:
            raise ScenarioError(f"{path}: {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        return {
            "populations": [
                {"share": float(v), "payoff": matrix.tolist()}
                for v, matrix in zip(self.shares, self.payoffs)
            ]
        }


def scenario_digest(scenario: Scenario) -> str:
    """SHA-256 of the canonical JSON form, for output provenance headers."""
    canonical = json.dumps(scenario.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def validate_scenario(raw: dict[str, Any]) -> Scenario:
    """Parse and validate a scenario description; alias for Scenario.from_dict."""
    return Scenario.from_dict(raw)


def check_simplex(z: np.ndarray, *, sum_tol: float = SUM_TOLERANCE,
                  coord_tol: float = COORD_TOLERANCE) -> None:
    """Raise ValueError unless z is a simplex point within tolerance."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValueError(f"expected a 1-d share vector, got shape {z.shape}")
    if np.any(z < -coord_tol):
        raise ValueError(f"negative share {z.min()!r} below -{coord_tol}")
    total = z.sum()
    if abs(total - 1.0) > sum_tol:
        raise ValueError(f"shares sum to {total!r}, expected 1 within {sum_tol}")


def check_state(x: np.ndarray, scenario: Scenario, *,
                sum_tol: float = SUM_TOLERANCE) -> None:
    """Raise ValueError unless x is a valid state combination for scenario."""
    x = np.asarray(x, dtype=float)
    m, n = scenario.n_populations, scenario.n_actions
    if x.shape != (m, n):
        raise ValueError(f"state must have shape ({m}, {n}), got {x.shape}")
    for k in range(m):
        try:
            check_simplex(x[k], sum_tol=sum_tol)
        except ValueError as exc:
            raise ValueError(f"population {k}: {exc}") from exc


def make_state(rows: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    """Stack per-population share rows into an (m, n) state array."""
    return np.array(rows, dtype=float)


def aggregate_output(x: np.ndarray, scenario: Scenario) -> np.ndarray:
    """Population-weighted action shares y_i = sum_k v^k x[k, i].

    This is the only quantity the controller observes; it is a convex
    combination of simplex rows and therefore itself a simplex point.
    """
    return scenario.shares @ np.asarray(x, dtype=float)


def expected_payoff(scenario: Scenario, k: int, i: int, y: np.ndarray) -> float:
    """Expected payoff of action i in population k against output y: e_i^T A^k y."""
    return float(scenario.payoffs[k, i] @ y)


def average_payoff(scenario: Scenario, k: int, xk: np.ndarray, y: np.ndarray) -> float:
    """Mean payoff in population k at mixture xk against output y: xk^T A^k y."""
    return float(xk @ scenario.payoffs[k] @ y)


def local_shift(scenario: Scenario, k: int, j: int, b: float) -> Scenario:
    """Return a copy with constant b added to column j of population k's matrix.

    Payoff differences within a population are unchanged by such a shift
    (both the action payoff and the population average pick up b * y_j), so
    the induced dynamics are identical; this operation exists to test that.
    """
    if not np.isfinite(b):
        raise ValueError(f"shift must be finite, got {b!r}")
    payoffs = scenario.payoffs.copy()
    payoffs[k, :, j] += b
    return Scenario(payoffs=payoffs, shares=scenario.shares)


def carrier(z: np.ndarray, *, threshold: float = CARRIER_THRESHOLD) -> np.ndarray:
    """Indices of strictly positive shares (above the round-off threshold)."""
    return np.flatnonzero(np.asarray(z, dtype=float) > threshold)
