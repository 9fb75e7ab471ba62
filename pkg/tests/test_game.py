import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import enumerate_active_sets
from nep.game import (
    BoxSet,
    CallableGame,
    GameError,
    NotStronglyMonotoneError,
    QuadraticGame,
    consensus_error,
    game_constants,
    is_consensus,
    lift,
    natural_residual,
    selection_matrices,
    solve_ne,
)
from nep.harness import generate_connectivity_game


def cost(game, i, z):
    """J_i evaluated directly from the cost blocks at profile z."""
    sl = game.slices[i]
    xi = z[sl]
    val = xi @ game.block(i, i) @ xi + game.g[sl] @ xi
    for j in range(game.N):
        if j != i:
            val += xi @ game.block(i, j) @ z[game.slices[j]]
    return val


def fd_partial(game, i, z, h=1e-6):
    sl = game.slices[i]
    out = np.zeros(game.dims[i])
    for c in range(game.dims[i]):
        e = np.zeros(game.n)
        e[sl.start + c] = h
        out[c] = (cost(game, i, z + e) - cost(game, i, z - e)) / (2 * h)
    return out


def random_game(rng, dims, coupling=0.3, box=None):
    n = sum(dims)
    A = coupling * rng.standard_normal((n, n))
    off = np.concatenate([[0], np.cumsum(dims)])
    for i, d in enumerate(dims):
        B = rng.standard_normal((d, d))
        A[off[i]:off[i + 1], off[i]:off[i + 1]] = B @ B.T + d * np.eye(d)
    sets = None if box is None else [BoxSet.uniform(d, *box) for d in dims]
    return QuadraticGame(dims, A, rng.standard_normal(n), sets)


class TestBoxSet:
    def test_projection_clamps(self):
        box = BoxSet([0.0, -np.inf], [1.0, 2.0])
        np.testing.assert_array_equal(box.project(np.array([-3.0, 5.0])), [0.0, 2.0])
        np.testing.assert_array_equal(box.project(np.array([0.5, -1e9])), [0.5, -1e9])

    def test_rejects_inverted_bounds(self):
        with pytest.raises(GameError):
            BoxSet([1.0], [0.0])

    def test_unbounded(self):
        assert not BoxSet.unbounded(3).is_bounded
        assert BoxSet.uniform(2, 0.1, 0.5).is_bounded


class TestPseudoGradient:
    def test_single_agent_scalar(self):
        game = QuadraticGame([1], [[1.0]], [0.0])
        assert game.pseudo_gradient(np.array([3.0]))[0] == 6.0

    def test_two_agent_half_coupling(self):
        eye = np.eye(2)
        game = QuadraticGame.from_blocks(
            [2, 2], {(0, 0): eye, (1, 1): eye, (0, 1): 0.5 * eye, (1, 0): 0.5 * eye}
        )
        np.testing.assert_allclose(game.pseudo_gradient(np.ones(4)), 2.5)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        game = random_game(rng, [1, 2, 3])
        x = rng.standard_normal(game.n)
        fd = np.concatenate([fd_partial(game, i, x) for i in range(game.N)])
        np.testing.assert_allclose(game.pseudo_gradient(x), fd, rtol=1e-6, atol=1e-7)

    def test_connectivity_at_consensus_point(self):
        game = generate_connectivity_game(6, 2)
        xbar = np.array([0.3, -1.2])
        x = np.tile(xbar, 6)
        # coupling differences vanish, leaving 2 q_i xbar + r_i; q_i from the diagonal block
        q = np.array([game.block(i, i)[0, 0] - 5 / 6 for i in range(6)])
        expected = np.concatenate([2 * q[i] * xbar + game.g[game.slices[i]] for i in range(6)])
        np.testing.assert_allclose(game.pseudo_gradient(x), expected, rtol=1e-13, atol=1e-13)

    def test_dimension_mismatch(self):
        game = QuadraticGame([1], [[1.0]], [0.0])
        with pytest.raises(GameError):
            game.pseudo_gradient(np.zeros(2))


class TestExtendedPseudoGradient:
    def test_consensus_reduces_exactly(self):
        rng = np.random.default_rng(0)
        game = random_game(rng, [2, 1, 2])
        x = rng.standard_normal(game.n)
        np.testing.assert_allclose(
            game.extended_pseudo_gradient(lift(x, game.N)), game.pseudo_gradient(x), rtol=0, atol=1e-14
        )

    def test_per_agent_finite_differences(self):
        rng = np.random.default_rng(1)
        game = random_game(rng, [2, 3])
        X = rng.standard_normal((game.N, game.n))
        fd = np.concatenate([fd_partial(game, i, X[i]) for i in range(game.N)])
        np.testing.assert_allclose(game.extended_pseudo_gradient(X), fd, rtol=1e-6)

    def test_zero_estimates_zero_linear(self):
        game = generate_connectivity_game(4, 0)
        game0 = QuadraticGame(game.dims, game.cost, np.zeros(game.n))
        np.testing.assert_array_equal(game0.extended_pseudo_gradient(np.zeros((4, game.n))), 0.0)

    def test_flat_input_accepted_and_checked(self):
        game = generate_connectivity_game(3, 0)
        X = np.arange(3 * 6, dtype=float)
        np.testing.assert_array_equal(
            game.extended_pseudo_gradient(X), game.extended_pseudo_gradient(X.reshape(3, 6))
        )
        with pytest.raises(GameError):
            game.extended_pseudo_gradient(np.zeros(5))

    def test_jacobian_matches_map(self):
        rng = np.random.default_rng(2)
        game = random_game(rng, [1, 2, 2])
        X = rng.standard_normal((game.N, game.n))
        lin = game.extended_jacobian() @ X.ravel() + game.g
        np.testing.assert_allclose(game.extended_pseudo_gradient(X), lin, rtol=1e-13, atol=1e-13)


class TestExtendedState:
    def test_selection_identities(self):
        dims = [2, 1, 3]
        R, S = selection_matrices(dims)
        game = QuadraticGame(dims, np.eye(6), np.zeros(6))
        X = np.random.default_rng(0).standard_normal((3, 6))
        xb = X.ravel()
        np.testing.assert_array_equal(R @ xb, game.own_decisions(X))
        np.testing.assert_allclose(R.T @ (R @ xb) + S.T @ (S @ xb), xb, rtol=0, atol=0)

    def test_consensus_membership(self):
        X = lift(np.array([1.0, 2.0]), 4)
        assert is_consensus(X)
        assert consensus_error(X) == 0.0
        X[2, 0] += 1e-3
        assert not is_consensus(X)
        assert consensus_error(X) > 0


class TestGameConstants:
    def test_decoupled_equal_q(self):
        q = 1.7
        game = QuadraticGame([1, 1, 1], q * np.eye(3), np.zeros(3))
        mu, theta0, theta = game_constants(game)
        assert mu == pytest.approx(2 * q, rel=1e-14)
        assert theta0 == pytest.approx(2 * q, rel=1e-14)
        assert theta == pytest.approx(2 * q, rel=1e-14)

    def test_connectivity_two_agents_against_hand_matrix(self):
        # J_i = x_i'x_i + 1/2 |x_i - x_j|^2: grad_i = 2 x_i + (x_i - x_j) = 3 x_i - x_j
        eye = np.eye(2)
        game = QuadraticGame.from_blocks([2, 2], {(0, 0): 1.5 * eye, (1, 1): 1.5 * eye, (0, 1): -eye, (1, 0): -eye})
        G = np.block([[3 * eye, -eye], [-eye, 3 * eye]])
        np.testing.assert_array_equal(game.G, G)
        mu, theta0, _ = game_constants(game)
        ev = np.linalg.eigvalsh(G)
        assert mu == pytest.approx(ev.min()) and mu == pytest.approx(2.0)
        assert theta0 == pytest.approx(ev.max()) and theta0 == pytest.approx(4.0)

    def test_skew_coupling_leaves_mu_to_diagonal(self):
        C = np.array([[0.4, -1.1], [0.7, 0.2]])
        diag = {(0, 0): np.diag([1.0, 2.0]), (1, 1): np.diag([3.0, 1.5])}
        game = QuadraticGame.from_blocks([2, 2], {**diag, (0, 1): C, (1, 0): -C.T})
        decoupled = QuadraticGame.from_blocks([2, 2], diag)
        assert game_constants(game).mu == pytest.approx(game_constants(decoupled).mu, rel=1e-12)
        assert game_constants(game).mu == pytest.approx(2.0)

    def test_not_strongly_monotone(self):
        eye = np.eye(1)
        game = QuadraticGame.from_blocks([1, 1], {(0, 0): eye, (1, 1): eye, (0, 1): 4 * eye, (1, 0): 4 * eye})
        with pytest.raises(NotStronglyMonotoneError):
            game_constants(game)

    def test_rejects_asymmetric_diagonal_block(self):
        with pytest.raises(GameError):
            QuadraticGame([2], [[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0])

    def test_monotonicity_and_lipschitz_on_random_pairs(self):
        rng = np.random.default_rng(11)
        game = generate_connectivity_game(5, 4)
        mu, theta0, theta = game_constants(game)
        for _ in range(100):
            x, y = rng.standard_normal((2, game.n)) * 3
            dF = game.pseudo_gradient(x) - game.pseudo_gradient(y)
            assert (x - y) @ dF >= mu * np.sum((x - y) ** 2) - 1e-9
            assert np.linalg.norm(dF) <= theta0 * np.linalg.norm(x - y) + 1e-9
            X, Y = rng.standard_normal((2, game.N, game.n))
            dE = game.extended_pseudo_gradient(X) - game.extended_pseudo_gradient(Y)
            assert np.linalg.norm(dE) <= theta * np.linalg.norm(X - Y) + 1e-9


class TestSolveNE:
    def test_scalar_stationary_point(self):
        game = QuadraticGame([1], [[1.0]], [2.0])
        assert solve_ne(game)[0] == pytest.approx(-1.0, abs=1e-15)

    def test_unconstrained_connectivity_residual(self):
        game = generate_connectivity_game(10, 0)
        x = solve_ne(game)
        assert np.linalg.norm(game.G @ x + game.g) < 1e-10

    def test_box_clamps_when_minimiser_below(self):
        # diagonal G, unconstrained minimiser at -1 in every coordinate
        game = QuadraticGame([1, 1], np.eye(2), [2.0, 2.0], [BoxSet.uniform(1, 0.1, 0.5)] * 2)
        np.testing.assert_allclose(solve_ne(game), [0.1, 0.1], atol=1e-14)
        np.testing.assert_allclose(enumerate_active_sets(game), [0.1, 0.1])

    def test_box_matches_enumeration(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            game = random_game(rng, [1, 2], coupling=0.4, box=(-0.3, 0.4))
            np.testing.assert_allclose(solve_ne(game, tol=1e-13), enumerate_active_sets(game), atol=1e-10)

    def test_each_agent_best_responds(self):
        game = generate_connectivity_game(10, 0, box=(0.1, 0.5))
        tol = 1e-12
        x = solve_ne(game, tol=tol)
        assert natural_residual(game, x) <= tol
        for i, sl in enumerate(game.slices):
            # agent i's own projected-gradient residual with the others frozen
            grad = game.partial_gradient(i, x)
            assert np.linalg.norm(x[sl] - game.sets[i].project(x[sl] - grad)) <= 10 * tol


class TestCallableGame:
    def test_matches_quadratic(self):
        game = generate_connectivity_game(3, 1)
        grads = [lambda z, i=i: game.partial_gradient(i, z) for i in range(3)]
        cg = CallableGame(game.dims, grads, curvature=[10.0] * 3)
        X = np.random.default_rng(0).standard_normal((3, game.n))
        np.testing.assert_allclose(cg.extended_pseudo_gradient(X), game.extended_pseudo_gradient(X), rtol=1e-13)
        x = X[0]
        np.testing.assert_allclose(cg.pseudo_gradient(x), game.pseudo_gradient(x), rtol=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_consensus_reduction_property(seed):
    rng = np.random.default_rng(seed)
    dims = list(rng.integers(1, 4, size=rng.integers(1, 5)))
    game = random_game(rng, dims)
    x = rng.standard_normal(game.n)
    np.testing.assert_allclose(
        game.extended_pseudo_gradient(lift(x, game.N)), game.pseudo_gradient(x), rtol=0, atol=1e-14 * max(1, np.abs(x).max()) * 50
    )
