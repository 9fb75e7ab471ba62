import itertools

import numpy as np
import pytest

from nep.game import QuadraticGame
from nep.harness import CONNECTIVITY_BOX, generate_connectivity_game
from nep.network import Topology, erdos_renyi, metropolis_weights

DEFAULT_N = 10
DEFAULT_SEED = 0
DEFAULT_P = 0.3


@pytest.fixture(scope="session")
def default_topology():
    return Topology.doubly_stochastic(metropolis_weights(erdos_renyi(DEFAULT_N, DEFAULT_P, DEFAULT_SEED)))


@pytest.fixture(scope="session")
def default_game():
    return generate_connectivity_game(DEFAULT_N, DEFAULT_SEED)


@pytest.fixture(scope="session")
def default_box_game():
    return generate_connectivity_game(DEFAULT_N, DEFAULT_SEED, box=CONNECTIVITY_BOX)


def enumerate_active_sets(game: QuadraticGame):
    """Brute-force equilibrium of a box-constrained affine game.

    Tries every lower/free/upper assignment and keeps the one whose linear
    solve is feasible and satisfies the sign conditions of the normal cone.
    """
    G, g = game.G, game.g
    lo, up = game.box.lower, game.box.upper
    n = game.n
    found = []
    for states in itertools.product((-1, 0, 1), repeat=n):
        s = np.array(states)
        if np.any((s == -1) & ~np.isfinite(lo)) or np.any((s == 1) & ~np.isfinite(up)):
            continue
        x = np.where(s == -1, lo, np.where(s == 1, up, 0.0))
        free = s == 0
        if free.any():
            fixed = ~free
            rhs = -(g[free] + G[np.ix_(free, fixed)] @ x[fixed])
            x[free] = np.linalg.solve(G[np.ix_(free, free)], rhs)
        F = G @ x + g
        tol = 1e-12
        ok = (
            np.all(x[free] >= lo[free] - tol) and np.all(x[free] <= up[free] + tol)
            and np.all(F[s == -1] >= -tol) and np.all(F[s == 1] <= tol)
        )
        if ok:
            found.append(x)
    assert found, "no active set satisfied the equilibrium conditions"
    return found[0]
