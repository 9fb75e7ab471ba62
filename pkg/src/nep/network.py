"""Communication graphs, mixing matrices and Kronecker-lifted operators."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.sparse.csgraph import connected_components


class NetworkError(ValueError):
    """Invalid graph or mixing matrix."""


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``0..N-1``."""

    N: int
    edges: frozenset[tuple[int, int]]

    def __init__(self, N: int, edges: Iterable[Iterable[int]]):
        if N < 1:
            raise NetworkError("graph needs at least one node")
        norm = set()
        for e in edges:
            i, j = (int(v) for v in e)
            if i == j:
                raise NetworkError(f"self-loop ({i}, {i}) is not an edge")
            if not (0 <= i < N and 0 <= j < N):
                raise NetworkError(f"edge ({i}, {j}) out of range for N={N}")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "N", int(N))
        object.__setattr__(self, "edges", frozenset(norm))

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.N, self.N))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        return A

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency().sum(axis=1).astype(int)

    def neighbors(self, i: int) -> list[int]:
        return sorted({j for e in self.edges if i in e for j in e if j != i})

    def is_connected(self) -> bool:
        if self.N == 1:
            return True
        ncomp, _ = connected_components(self.adjacency(), directed=False)
        return ncomp == 1

    def to_dict(self) -> dict:
        return {"N": self.N, "edges": [list(e) for e in sorted(self.edges)]}


def complete_graph(N: int) -> Graph:
    return Graph(N, [(i, j) for i in range(N) for j in range(i + 1, N)])


def path_graph(N: int) -> Graph:
    return Graph(N, [(i, i + 1) for i in range(N - 1)])


def ring_graph(N: int) -> Graph:
    if N < 3:
        return path_graph(N)
    return Graph(N, [(i, (i + 1) % N) for i in range(N)])


def star_graph(N: int) -> Graph:
    return Graph(N, [(0, j) for j in range(1, N)])


def erdos_renyi(N: int, p: float, seed: int, max_tries: int = 10_000) -> Graph:
    """G(N, p) graph, redrawn from the same seeded stream until connected."""
    if not 0.0 < p <= 1.0:
        raise NetworkError("edge probability must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(N, k=1)
    for _ in range(max_tries):
        keep = rng.random(iu[0].size) < p
        g = Graph(N, zip(iu[0][keep], iu[1][keep]))
        if g.is_connected():
            return g
    raise NetworkError(f"no connected G({N}, {p}) graph after {max_tries} draws")


def check_mixing_matrix(W: np.ndarray, graph: Graph | None = None, tol: float = 1e-12) -> None:
    """Raise :class:`NetworkError` unless ``W`` has self-loops, is symmetric and doubly stochastic.

    If ``graph`` is given the off-diagonal sparsity must match its edges.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise NetworkError("mixing matrix must be square")
    N = W.shape[0]
    if (np.diag(W) <= 0).any():
        raise NetworkError("mixing matrix needs positive self-loop weights")
    if np.abs(W - W.T).max() > tol:
        raise NetworkError("mixing matrix must be symmetric")
    ones = np.ones(N)
    if np.abs(W @ ones - ones).max() > tol or np.abs(ones @ W - ones).max() > tol:
        raise NetworkError("mixing matrix must be doubly stochastic")
    if (W < -tol).any():
        raise NetworkError("mixing weights must be nonnegative")
    if graph is not None:
        if graph.N != N:
            raise NetworkError("graph and mixing matrix sizes differ")
        off = ~np.eye(N, dtype=bool)
        if not np.array_equal((W > 0) & off, (graph.adjacency() > 0) & off):
            raise NetworkError("mixing matrix sparsity does not match the graph")


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Validated symmetric doubly stochastic weights with positive diagonal."""

    W: np.ndarray

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        check_mixing_matrix(W)
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @property
    def N(self) -> int:
        return self.W.shape[0]


def metropolis_weights(g: Graph) -> MixingMatrix:
    """Metropolis-Hastings weights ``w_ij = 1 / (1 + max(d_i, d_j))`` on edges."""
    if not g.is_connected():
        raise NetworkError("Metropolis weights need a connected graph")
    d = g.degrees
    W = np.zeros((g.N, g.N))
    for i, j in g.edges:
        W[i, j] = W[j, i] = 1.0 / (1.0 + max(d[i], d[j]))
    W[np.diag_indices(g.N)] = 1.0 - W.sum(axis=1)
    return MixingMatrix(W)


class SpectralGap(NamedTuple):
    lambda2: float
    lambdamax: float


def spectral_gap(W: MixingMatrix | np.ndarray) -> SpectralGap:
    """Second-smallest and largest eigenvalues of ``I - W``."""
    W = W.W if isinstance(W, MixingMatrix) else np.asarray(W, dtype=float)
    N = W.shape[0]
    if N == 1:
        raise NetworkError("spectral gap undefined for a single node")
    ev = np.linalg.eigvalsh(np.eye(N) - W)
    lam2, lmax = float(ev[1]), float(ev[-1])
    if lam2 <= 1e-12:
        raise NetworkError(f"graph effectively disconnected (lambda2 = {lam2:.3e})")
    if lmax > 2.0 + 1e-12:
        raise NetworkError(f"lambda_max(I - W) = {lmax} exceeds 2")
    return SpectralGap(lam2, lmax)


class KronOperator:
    """The linear map ``P kron I_n`` acting on ``(N, n)`` block arrays.

    Only the ``N x N`` factor is stored; spectra are those of ``P``.
    """

    def __init__(self, P: np.ndarray):
        P = np.array(P, dtype=float)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise NetworkError("Kronecker factor must be square")
        if np.abs(P - P.T).max() > 1e-12 * max(1.0, np.abs(P).max()):
            raise NetworkError("Kronecker factor must be symmetric")
        P.setflags(write=False)
        self.P = P
        ev = np.linalg.eigvalsh(P)
        self.lambda_min = float(ev[0])
        self.lambda_max = float(ev[-1])

    @property
    def N(self) -> int:
        return self.P.shape[0]

    @property
    def norm(self) -> float:
        return max(abs(self.lambda_min), abs(self.lambda_max))

    def apply(self, X: np.ndarray) -> np.ndarray:
        return self.P @ X

    def solve(self, X: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.P, X)

    def inner(self, X: np.ndarray, Y: np.ndarray) -> float:
        """Weighted inner product ``<P X, Y>``."""
        return float(np.sum(self.apply(X) * Y))

    def weighted_norm(self, X: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(X, X), 0.0)))

    def dense(self, n: int) -> np.ndarray:
        return np.kron(self.P, np.eye(n))


def preconditioner(W: MixingMatrix) -> KronOperator:
    """``Phi = (I + W) kron I_n``; positive definite for valid mixing matrices."""
    return KronOperator(np.eye(W.N) + W.W)


def degree_matrix(W_raw: np.ndarray) -> np.ndarray:
    """Diagonal of weighted degrees ``D = diag(W 1)``, so ``D - W`` has zero row sums."""
    return np.diag(np.asarray(W_raw, dtype=float).sum(axis=1))


def degree_variant(g: Graph, W_raw: np.ndarray) -> tuple[KronOperator, KronOperator]:
    """Operators ``(D - W) kron I`` and ``(D + W) kron I`` for non-doubly-stochastic weights.

    Self-loop weights count towards the degree, so on bipartite graphs they
    are what keeps ``D + W`` nonsingular.
    """
    W_raw = np.asarray(W_raw, dtype=float)
    if W_raw.shape != (g.N, g.N):
        raise NetworkError("weight matrix size does not match the graph")
    if np.abs(W_raw - W_raw.T).max() > 1e-12 * max(1.0, np.abs(W_raw).max()):
        raise NetworkError("weight matrix must be symmetric")
    if (W_raw < 0).any():
        raise NetworkError("weights must be nonnegative")
    off = ~np.eye(g.N, dtype=bool)
    if not np.array_equal((W_raw > 0) & off, (g.adjacency() > 0) & off):
        raise NetworkError("weight sparsity does not match the graph")
    if not g.is_connected():
        raise NetworkError("degree variant needs a connected graph")
    D = degree_matrix(W_raw)
    lap = KronOperator(D - W_raw)
    phi = KronOperator(D + W_raw)
    if phi.lambda_min <= 1e-12:
        raise NetworkError(
            f"D + W is singular (lambda_min = {phi.lambda_min:.3e}); add self-loop weights"
        )
    return lap, phi


@dataclass(frozen=True, eq=False)
class Topology:
    """Everything the solvers need from the network.

    ``weights`` is the ``N x N`` mixing factor ``W``, ``degrees`` the diagonal
    of ``D`` (all ones in doubly stochastic mode), ``laplacian`` is
    ``(D - W) kron I`` and ``phi`` the preconditioner ``(D + W) kron I``.
    """

    mode: str
    weights: np.ndarray
    degrees: np.ndarray
    laplacian: KronOperator
    phi: KronOperator

    @classmethod
    def doubly_stochastic(cls, W: MixingMatrix | np.ndarray) -> Topology:
        if not isinstance(W, MixingMatrix):
            W = MixingMatrix(W)
        N = W.N
        return cls(
            "doubly_stochastic",
            W.W,
            np.ones(N),
            KronOperator(np.eye(N) - W.W),
            preconditioner(W),
        )

    @classmethod
    def degree_variant(cls, g: Graph, W_raw: np.ndarray) -> Topology:
        lap, phi = degree_variant(g, W_raw)
        W_raw = np.array(W_raw, dtype=float)
        W_raw.setflags(write=False)
        return cls("degree_variant", W_raw, np.diag(degree_matrix(W_raw)).copy(), lap, phi)

    @property
    def N(self) -> int:
        return self.weights.shape[0]

    @property
    def lambda2(self) -> float:
        """Algebraic connectivity of the Laplacian factor."""
        if self.N == 1:
            return 0.0
        return float(np.linalg.eigvalsh(self.laplacian.P)[1])
