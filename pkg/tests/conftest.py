"""Shared fixtures: the three-population worked example and random generators."""

from __future__ import annotations

import numpy as np
import pytest

from replicator_ctl import ControlPolicy, Scenario, make_state

# the bundled three-population, two-action example used throughout
THREEPOP_PAYOFFS = np.array(
    [[[2.0, 1.0], [3.0, 4.0]],
     [[3.0, 1.0], [2.0, 4.0]],
     [[3.0, 4.0], [1.0, 2.0]]]
)
THREEPOP_SHARES = np.array([0.2, 0.3, 0.5])

# its five reference initial states, as first-action shares per population
FIVE_STARTS = [
    (0.01, 0.01, 0.01),
    (0.01, 0.99, 0.01),
    (0.99, 0.01, 0.01),
    (0.99, 0.99, 0.01),
    (0.5, 0.5, 0.01),
]

# attractors of the uncontrolled dynamics, and which start reaches which
# (frozen from an independent adaptive-integrator reference run at
# rtol=1e-10; only the fourth start lands on the second attractor)
UNCONTROLLED_ATTRACTORS = {
    (0.01, 0.01, 0.01): (0.0, 0.0, 1.0),
    (0.01, 0.99, 0.01): (0.0, 0.0, 1.0),
    (0.99, 0.01, 0.01): (0.0, 0.0, 1.0),
    (0.99, 0.99, 0.01): (0.0, 1.0, 1.0),
    (0.5, 0.5, 0.01): (0.0, 0.0, 1.0),
}


@pytest.fixture(scope="session")
def threepop() -> Scenario:
    return Scenario(payoffs=THREEPOP_PAYOFFS, shares=THREEPOP_SHARES)


@pytest.fixture(scope="session")
def policy_boundary() -> ControlPolicy:
    return ControlPolicy(y_star=np.array([1.0, 0.0]), d=1.2)


@pytest.fixture(scope="session")
def policy_interior() -> ControlPolicy:
    return ControlPolicy(y_star=np.array([0.8, 0.2]), d=1.5)


def z_state(z: tuple[float, ...] | np.ndarray) -> np.ndarray:
    """Two-action state from per-population first-action shares."""
    z = np.asarray(z, dtype=float)
    return make_state(np.stack([z, 1.0 - z], axis=1))


def five_start_states() -> list[np.ndarray]:
    return [z_state(z) for z in FIVE_STARTS]


def random_scenario(rng: np.random.Generator, m: int | None = None,
                    n: int | None = None, payoff_scale: float = 5.0) -> Scenario:
    """A valid random scenario; shares kept away from 0 and 1."""
    m = m or int(rng.integers(2, 5))
    n = n or int(rng.integers(2, 5))
    payoffs = rng.uniform(-payoff_scale, payoff_scale, size=(m, n, n))
    raw = rng.dirichlet(np.ones(m))
    shares = (raw + 0.05) / (1.0 + 0.05 * m)
    return Scenario(payoffs=payoffs, shares=shares)


def random_state(rng: np.random.Generator, scenario: Scenario,
                 interior: float = 0.0) -> np.ndarray:
    """Random state combination; optionally pulled toward the barycenter."""
    x = rng.dirichlet(np.ones(scenario.n_actions),
                      size=scenario.n_populations)
    if interior > 0.0:
        blend = interior * scenario.n_actions
        x = (1.0 - blend) * x + blend / scenario.n_actions
    return x


def random_policy(rng: np.random.Generator, scenario: Scenario,
                  d_range: tuple[float, float] = (0.1, 5.0),
                  boundary_target: bool = False) -> ControlPolicy:
    """Random control policy; boundary_target zeroes one target share."""
    y_star = rng.dirichlet(np.ones(scenario.n_actions))
    if boundary_target:
        drop = int(rng.integers(scenario.n_actions))
        y_star[drop] = 0.0
        y_star /= y_star.sum()
    d = float(rng.uniform(*d_range))
    return ControlPolicy(y_star=y_star, d=d)
