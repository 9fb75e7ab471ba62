"""Games with per-agent box sets, pseudo-gradients and Nash-equilibrium oracles.

Extended (estimate) states are stored as ``(N, n)`` arrays: row ``i`` is agent
``i``'s copy of the full strategy profile, and the entries of row ``i`` at the
agent's own slice are its actual decision.  Flattening row-major gives the
stacked vector ``col(x_1, ..., x_N)``.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class GameError(ValueError):
    """Malformed game data or input of the wrong dimension."""


class NotStronglyMonotoneError(GameError):
    """The pseudo-gradient is not strongly monotone (mu <= 0)."""


class OracleError(RuntimeError):
    """The equilibrium oracle did not reach the requested residual."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BoxSet:
    """Axis-aligned box ``{x : lower <= x <= upper}``; bounds may be infinite."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.array(self.lower, dtype=float).ravel()
        upper = np.array(self.upper, dtype=float).ravel()
        if lower.shape != upper.shape:
            raise GameError(f"bound shapes differ: {lower.shape} vs {upper.shape}")
        if np.isnan(lower).any() or np.isnan(upper).any():
            raise GameError("box bounds must not be NaN")
        if (lower > upper).any():
            raise GameError("box requires lower <= upper in every coordinate")
        object.__setattr__(self, "lower", _readonly(lower))
        object.__setattr__(self, "upper", _readonly(upper))

    @classmethod
    def unbounded(cls, dim: int) -> BoxSet:
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @classmethod
    def uniform(cls, dim: int, lower: float, upper: float) -> BoxSet:
        return cls(np.full(dim, float(lower)), np.full(dim, float(upper)))

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def is_bounded(self) -> bool:
        """True if at least one coordinate has a finite bound."""
        return bool(np.isfinite(self.lower).any() or np.isfinite(self.upper).any())

    def project(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))


class _GameBase:
    """Dimension bookkeeping shared by all game types."""

    def __init__(self, dims: Sequence[int], sets: Sequence[BoxSet] | None):
        dims = tuple(int(d) for d in dims)
        if not dims or min(dims) < 1:
            raise GameError("need at least one agent, each with dimension >= 1")
        self.dims = dims
        self.N = len(dims)
        self.n = sum(dims)
        self.offsets = tuple(int(o) for o in np.concatenate([[0], np.cumsum(dims)]))
        self.slices = tuple(slice(self.offsets[i], self.offsets[i + 1]) for i in range(self.N))
        if sets is None:
            sets = [BoxSet.unbounded(d) for d in dims]
        sets = tuple(sets)
        if len(sets) != self.N or any(s.dim != d for s, d in zip(sets, dims)):
            raise GameError("need one BoxSet per agent with matching dimension")
        self.sets = sets
        self.box = BoxSet(
            np.concatenate([s.lower for s in sets]), np.concatenate([s.upper for s in sets])
        )
        mask = np.zeros((self.N, self.n), dtype=bool)
        for i, sl in enumerate(self.slices):
            mask[i, sl] = True
        self.own_mask = _readonly(mask)

    @property
    def is_constrained(self) -> bool:
        return self.box.is_bounded

    def project(self, x: np.ndarray) -> np.ndarray:
        return self.box.project(x)

    def _check_profile(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise GameError(f"expected a profile of length {self.n}, got shape {x.shape}")
        return x

    def as_blocks(self, xb) -> np.ndarray:
        """Return an extended state as an ``(N, n)`` array (accepts flat input)."""
        xb = np.asarray(xb, dtype=float)
        if xb.shape == (self.N * self.n,):
            xb = xb.reshape(self.N, self.n)
        if xb.shape != (self.N, self.n):
            raise GameError(
                f"expected an extended state of length {self.N * self.n}, got shape {xb.shape}"
            )
        return xb

    def own_decisions(self, X) -> np.ndarray:
        """``R x-bold``: stack each agent's own decision out of its block."""
        return self.as_blocks(X)[self.own_mask]

    def partial_gradient(self, i: int, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def extended_pseudo_gradient(self, X) -> np.ndarray:
        """Each agent's partial gradient evaluated at its own estimate row."""
        X = self.as_blocks(X)
        return np.concatenate([self.partial_gradient(i, X[i]) for i in range(self.N)])

    def pseudo_gradient(self, x) -> np.ndarray:
        x = self._check_profile(x)
        return np.concatenate([self.partial_gradient(i, x) for i in range(self.N)])


class QuadraticGame(_GameBase):
    """Game with costs ``J_i = x_i' A_ii x_i + b_i' x_i + sum_{j!=i} x_i' A_ij x_j``.

    Parameters
    ----------
    dims : sequence of int
        Decision dimension ``n_i`` of every agent.
    cost : ndarray, shape (n, n)
        Block matrix whose ``(i, j)`` block is ``A_ij``.  Diagonal blocks must
        be symmetric positive definite.
    linear : ndarray, shape (n,)
        Stacked linear terms ``b_i``.
    sets : sequence of BoxSet, optional
        Feasible set of each agent; unconstrained when omitted.

    Notes
    -----
    The pseudo-gradient is affine, ``F(x) = G x + g`` with ``G`` equal to
    ``cost`` except that the diagonal blocks are doubled, and ``g = linear``.
    """

    def __init__(self, dims, cost, linear, sets: Sequence[BoxSet] | None = None):
        super().__init__(dims, sets)
        cost = np.array(cost, dtype=float)
        linear = np.array(linear, dtype=float).ravel()
        if cost.shape != (self.n, self.n):
            raise GameError(f"cost matrix must be {self.n}x{self.n}, got {cost.shape}")
        if linear.shape != (self.n,):
            raise GameError(f"linear term must have length {self.n}")
        if not (np.isfinite(cost).all() and np.isfinite(linear).all()):
            raise GameError("game coefficients must be finite")
        G = cost.copy()
        for sl in self.slices:
            Aii = cost[sl, sl]
            scale = max(1.0, np.abs(Aii).max())
            if not np.allclose(Aii, Aii.T, rtol=0.0, atol=1e-12 * scale):
                raise GameError("diagonal cost blocks A_ii must be symmetric")
            if np.linalg.eigvalsh(Aii).min() <= 0.0:
                raise GameError("diagonal cost blocks A_ii must be positive definite")
            G[sl, sl] = 2.0 * Aii
        self.cost = _readonly(cost)
        self.G = _readonly(G)
        self.g = _readonly(linear)

    @classmethod
    def from_blocks(
        cls,
        dims: Sequence[int],
        blocks: Mapping[tuple[int, int], np.ndarray],
        linear: Sequence[np.ndarray] | None = None,
        sets: Sequence[BoxSet] | None = None,
    ) -> QuadraticGame:
        """Assemble a game from ``{(i, j): A_ij}``; missing blocks are zero."""
        dims = tuple(int(d) for d in dims)
        offsets = np.concatenate([[0], np.cumsum(dims)])
        n = int(offsets[-1])
        cost = np.zeros((n, n))
        for (i, j), A in blocks.items():
            if not (0 <= i < len(dims) and 0 <= j < len(dims)):
                raise GameError(f"block index ({i}, {j}) out of range")
            A = np.atleast_2d(np.asarray(A, dtype=float))
            if A.shape != (dims[i], dims[j]):
                raise GameError(f"block ({i}, {j}) must be {dims[i]}x{dims[j]}, got {A.shape}")
            cost[offsets[i]:offsets[i + 1], offsets[j]:offsets[j + 1]] = A
        if linear is None:
            b = np.zeros(n)
        else:
            if len(linear) != len(dims):
                raise GameError("need one linear term per agent")
            parts = [np.atleast_1d(np.asarray(v, dtype=float)).ravel() for v in linear]
            if any(p.size != d for p, d in zip(parts, dims)):
                raise GameError("linear term dimensions do not match dims")
            b = np.concatenate(parts)
        return cls(dims, cost, b, sets)

    def block(self, i: int, j: int) -> np.ndarray:
        return self.cost[self.slices[i], self.slices[j]]

    @property
    def has_diagonal_hessians(self) -> bool:
        return all(
            np.count_nonzero(self.cost[sl, sl] - np.diag(np.diag(self.cost[sl, sl]))) == 0
            for sl in self.slices
        )

    def partial_gradient(self, i: int, z: np.ndarray) -> np.ndarray:
        sl = self.slices[i]
        return self.G[sl] @ z + self.g[sl]

    def pseudo_gradient(self, x) -> np.ndarray:
        return self.G @ self._check_profile(x) + self.g

    def extended_pseudo_gradient(self, X) -> np.ndarray:
        X = self.as_blocks(X)
        # row i of X @ G.T is G @ x_i; keep only agent i's own rows
        return (X @ self.G.T)[self.own_mask] + self.g

    def extended_jacobian(self) -> np.ndarray:
        """Constant ``n x Nn`` Jacobian of the extended pseudo-gradient."""
        J = np.zeros((self.n, self.N * self.n))
        for i, sl in enumerate(self.slices):
            J[sl, i * self.n:(i + 1) * self.n] = self.G[sl]
        return J


class CallableGame(_GameBase):
    """Game given by user-supplied partial-gradient callables.

    ``gradients[i](z)`` must return ``grad_{x_i} J_i`` at the full profile
    ``z`` (length ``n``).  ``curvature[i]`` is a Lipschitz constant of
    ``y -> grad_{x_i} J_i(y, z_{-i})``; the proximal solver uses it for its
    step size.  Tuning and acceptance guarantees cover quadratic games only.
    """

    def __init__(
        self,
        dims,
        gradients: Sequence[Callable[[np.ndarray], np.ndarray]],
        curvature: Sequence[float],
        sets: Sequence[BoxSet] | None = None,
    ):
        super().__init__(dims, sets)
        if len(gradients) != self.N or len(curvature) != self.N:
            raise GameError("need one gradient callable and one curvature bound per agent")
        if min(curvature) <= 0:
            raise GameError("curvature bounds must be positive")
        self.gradients = tuple(gradients)
        self.curvature = tuple(float(c) for c in curvature)

    def partial_gradient(self, i: int, z: np.ndarray) -> np.ndarray:
        out = np.asarray(self.gradients[i](z), dtype=float).ravel()
        if out.size != self.dims[i]:
            raise GameError(f"gradient of agent {i} returned {out.size} values, need {self.dims[i]}")
        return out


def lift(x: np.ndarray, N: int) -> np.ndarray:
    """Consensus lift ``1_N kron x`` as an ``(N, n)`` array."""
    return np.tile(np.asarray(x, dtype=float), (N, 1))


def consensus_error(X: np.ndarray) -> float:
    """Euclidean distance of ``X`` from the consensus subspace."""
    return float(np.linalg.norm(X - X.mean(axis=0)))


def is_consensus(X: np.ndarray, tol: float = 0.0) -> bool:
    return bool(np.all(np.abs(X - X[0]) <= tol))


def selection_matrices(dims: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """Dense block-diagonal selectors ``R`` (own decision) and ``S`` (estimates)."""
    N, n = len(dims), sum(dims)
    offsets = np.concatenate([[0], np.cumsum(dims)])
    eye = np.eye(n)
    R = np.zeros((n, N * n))
    S = np.zeros(((N - 1) * n, N * n))
    row = 0
    for i in range(N):
        own = slice(offsets[i], offsets[i + 1])
        R[own, i * n:(i + 1) * n] = eye[own]
        others = np.delete(eye, np.s_[offsets[i]:offsets[i + 1]], axis=0)
        S[row:row + n - dims[i], i * n:(i + 1) * n] = others
        row += n - dims[i]
    return R, S


class GameConstants(NamedTuple):
    mu: float
    theta0: float
    theta: float


def game_constants(game: QuadraticGame) -> GameConstants:
    """Strong monotonicity and Lipschitz constants of the (extended) pseudo-gradient.

    ``mu`` is the smallest eigenvalue of the symmetric part of ``G``,
    ``theta0`` the spectral norm of ``G`` and ``theta`` the spectral norm of
    the extended Jacobian.
    """
    if not isinstance(game, QuadraticGame):
        raise TypeError("game constants are computed spectrally for QuadraticGame only")
    G = game.G
    mu = float(np.linalg.eigvalsh(0.5 * (G + G.T)).min())
    theta0 = float(np.linalg.norm(G, 2))
    if mu <= 1e-12 * max(theta0, 1.0):
        raise NotStronglyMonotoneError(f"game not strongly monotone (mu = {mu:.3e})")
    theta = float(np.linalg.norm(game.extended_jacobian(), 2))
    return GameConstants(mu, theta0, theta)


def natural_residual(game: _GameBase, x: np.ndarray) -> float:
    """``||x - Proj(x - F(x))||``; zero exactly at the Nash equilibrium."""
    x = np.asarray(x, dtype=float)
    return float(np.linalg.norm(x - game.project(x - game.pseudo_gradient(x))))


def _polish(game: QuadraticGame, x: np.ndarray, atol: float) -> np.ndarray:
    """Resolve the affine system exactly on the active set guessed from ``x``."""
    lo, up = game.box.lower, game.box.upper
    at_lo = np.abs(x - lo) <= atol
    at_up = np.abs(x - up) <= atol
    fixed = at_lo | at_up
    free = ~fixed
    z = np.where(at_lo, lo, np.where(at_up, up, x))
    if free.any():
        G, g = game.G, game.g
        rhs = -(g[free] + G[np.ix_(free, fixed)] @ z[fixed])
        z[free] = np.linalg.solve(G[np.ix_(free, free)], rhs)
    return game.project(z)


def solve_ne(game: QuadraticGame, tol: float = 1e-12, max_iters: int = 1_000_000) -> np.ndarray:
    """Nash equilibrium of a strongly monotone quadratic game.

    Unconstrained games are solved by a dense linear solve.  With box sets a
    projected pseudo-gradient iteration with step ``mu / theta0**2`` is run
    until the natural residual falls below ``tol``; the guessed active set
    is periodically resolved exactly to finish off the tail.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    mu, theta0, _ = game_constants(game)
    if not game.is_constrained:
        return np.linalg.solve(game.G, -game.g)
    step = mu / theta0**2
    x = game.project(np.zeros(game.n))
    for k in range(max_iters):
        x = game.project(x - step * game.pseudo_gradient(x))
        if k % 50 == 49:
            res = natural_residual(game, x)
            if res <= tol:
                return x
            polished = _polish(game, x, atol=max(10 * res, 1e-14))
            if natural_residual(game, polished) <= tol:
                return polished
    res = natural_residual(game, x)
    if res <= tol:
        return x
    raise OracleError(f"equilibrium oracle stalled at residual {res:.3e} after {max_iters} iterations")
