"""Preconditioned proximal-point NE seeking and the augmented-gradient baseline.

Both solvers simulate synchronous rounds: every agent reads its neighbours'
blocks from the previous round's snapshot ``X``, then all agents update
at once.  ``X`` is the ``(N, n)`` extended state described in :mod:`nep.game`.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field, fields
from os import PathLike

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .game import QuadraticGame, consensus_error, game_constants, lift, solve_ne
from .network import MixingMatrix, Topology
from .tuning import TuningError, compute_alpha_max

TRACE_COLUMNS = (
    "iter",
    "dist_to_ne",
    "dist_phi",
    "consensus_err",
    "inclusion_residual",
    "wall_time_us",
)

# divergence heuristic: distance above DIVERGENCE_FACTOR x initial for DIVERGENCE_PATIENCE rounds
DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 50


class SolverError(RuntimeError):
    """A run was aborted; ``trace`` holds the rounds completed so far."""

    def __init__(self, message: str, trace: RunTrace | None = None):
        super().__init__(message)
        self.trace = trace


class DivergenceError(SolverError):
    pass


class InnerSolveError(SolverError):
    pass


@dataclass
class SolverConfig:
    alpha: float
    max_iters: int = 10_000
    stop_tol: float = 1e-10
    inner_tol: float = 1e-10
    inner_max_iters: int = 100_000
    mode: str = "doubly_stochastic"
    force_alpha: bool = False
    record_time: bool = True

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.stop_tol < 0 or not self.inner_tol > 0:
            raise ValueError("tolerances must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.mode not in ("doubly_stochastic", "degree_variant"):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class RunTrace:
    """Per-round measurements; row 0 is the initial state.

    ``inclusion_residual`` is, for PPPA, the largest violation of the
    normal-cone membership ``-Phi(x+ - x) - F_a(x+) in N(x+)`` (row 0 is NaN);
    for augmented gradient play it is the natural residual
    ``max|x - Proj(x - F_a(x))|`` of the augmented variational inequality.
    """

    iter: list[int] = field(default_factory=list)
    dist_to_ne: list[float] = field(default_factory=list)
    dist_phi: list[float] = field(default_factory=list)
    consensus_err: list[float] = field(default_factory=list)
    inclusion_residual: list[float] = field(default_factory=list)
    wall_time_us: list[int] = field(default_factory=list)

    def append(self, k, dist, dist_phi, cons, resid, wall_us):
        self.iter.append(int(k))
        self.dist_to_ne.append(float(dist))
        self.dist_phi.append(float(dist_phi))
        self.consensus_err.append(float(cons))
        self.inclusion_residual.append(float(resid))
        self.wall_time_us.append(int(wall_us))

    def __len__(self) -> int:
        return len(self.iter)

    def column(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name), dtype=float)

    def iterations_to(self, tol: float) -> int | None:
        """First round index with ``dist_to_ne <= tol``, or ``None``."""
        hit = np.flatnonzero(self.column("dist_to_ne") <= tol)
        return int(self.iter[hit[0]]) if hit.size else None

    def same_measurements(self, other: RunTrace) -> bool:
        """Bitwise equality of every column except wall time."""
        cols = [f.name for f in fields(self) if f.name != "wall_time_us"]
        return all(
            np.array_equal(self.column(c), other.column(c), equal_nan=True) for c in cols
        )

    def to_csv(self, path: str | PathLike | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for row in zip(*(getattr(self, c) for c in TRACE_COLUMNS)):
            w.writerow([row[0], *(repr(float(v)) for v in row[1:5]), row[5]])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path: str | PathLike) -> RunTrace:
        trace = cls()
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
                raise ValueError(f"unexpected trace columns {reader.fieldnames}")
            for r in reader:
                trace.append(
                    int(r["iter"]),
                    float(r["dist_to_ne"]),
                    float(r["dist_phi"]),
                    float(r["consensus_err"]),
                    float(r["inclusion_residual"]),
                    int(r["wall_time_us"]),
                )
        return trace


@dataclass
class RunResult:
    trace: RunTrace
    state: np.ndarray
    decisions: np.ndarray
    x_star: np.ndarray | None
    converged: bool

    @property
    def iterations(self) -> int:
        return self.trace.iter[-1] if len(self.trace) else 0


def as_topology(network, mode: str = "doubly_stochastic") -> Topology:
    if isinstance(network, Topology):
        if network.mode != mode:
            raise ValueError(f"config mode {mode!r} does not match topology mode {network.mode!r}")
        return network
    if mode != "doubly_stochastic":
        raise ValueError("degree_variant mode needs a Topology built with Topology.degree_variant")
    return Topology.doubly_stochastic(network if isinstance(network, MixingMatrix) else MixingMatrix(network))


def initial_state(game, x0=None) -> np.ndarray:
    """Default start: estimates at zero, own decisions at ``Proj(0)``.

    A supplied ``x0`` has its own-decision entries projected onto the sets.
    """
    if x0 is None:
        X = np.zeros((game.N, game.n))
    else:
        X = game.as_blocks(x0).copy()
    X[game.own_mask] = game.project(X[game.own_mask])
    return X


def augmented_mapping(game, topo: Topology, alpha: float, X: np.ndarray) -> np.ndarray:
    """``F_a(x) = alpha R' F(x) + L x`` as an ``(N, n)`` array."""
    out = topo.laplacian.apply(X)
    out[game.own_mask] += alpha * game.extended_pseudo_gradient(X)
    return out


def normal_cone_violation(game, X: np.ndarray, V: np.ndarray) -> float:
    """Largest coordinate-wise violation of ``V in N_Omega-bold(X)``.

    Estimate coordinates are unconstrained, so their normal component must be
    zero; own coordinates may push outward only at an active bound.
    """
    own = game.own_mask
    viol = np.abs(V)
    x, v = X[own], V[own]
    lo, up = game.box.lower, game.box.upper
    if (x < lo).any() or (x > up).any():
        return float("inf")
    at_lo, at_up = x <= lo, x >= up
    vo = np.where(
        at_lo & at_up,
        0.0,
        np.where(at_lo, np.maximum(v, 0.0), np.where(at_up, np.maximum(-v, 0.0), np.abs(v))),
    )
    viol[own] = vo
    return float(viol.max())


def pppa_consensus_update(X: np.ndarray, W: np.ndarray, own_mask: np.ndarray, degrees=None) -> np.ndarray:
    """Half-averaging of every estimate block with the neighbours' previous-round copies.

    Own-decision entries are returned unchanged.  With ``degrees`` (the
    non-doubly-stochastic variant) the update is ``(d_i x_i + (W x)_i) / (2 d_i)``.
    """
    WX = W @ X
    if degrees is None:
        new = 0.5 * (X + WX)
    else:
        d = np.asarray(degrees, dtype=float)[:, None]
        new = (d * X + WX) / (2.0 * d)
    new[own_mask] = X[own_mask]
    return new


def _is_diagonal(M: np.ndarray) -> bool:
    return np.count_nonzero(M - np.diag(np.diag(M))) == 0


def local_prox_step(
    game,
    i: int,
    X_half: np.ndarray,
    X_old: np.ndarray,
    W: np.ndarray,
    alpha: float,
    degree: float = 1.0,
    inner_tol: float = 1e-10,
    max_iters: int = 100_000,
    method: str = "auto",
) -> np.ndarray:
    """Agent ``i``'s proximal best response.

    Minimises over ``y`` in agent ``i``'s box::

        J_i(y, x_{i,-i}^{k+1}) + d/(2 alpha) ||y - x_i^k||^2
                               + d/(2 alpha) ||y - (sum_j w_ij x_{j,i}^k) / d||^2

    where ``x_{i,-i}^{k+1}`` comes from ``X_half`` and the anchors from
    ``X_old`` (previous round); ``d = 1`` in doubly stochastic mode.

    ``method`` is ``"closed_form"`` (quadratic game whose ``A_ii`` is
    diagonal or whose set is unbounded: one linear solve, then a clamp),
    ``"iterative"`` (projected gradient with step ``1 / (L_i + 2 d / alpha)``)
    or ``"auto"``.
    """
    sl = game.slices[i]
    box = game.sets[i]
    x_old = X_old[i, sl]
    v = W[i] @ X_old[:, sl]
    z = X_half[i].copy()
    quad = isinstance(game, QuadraticGame)
    exact = quad and (not box.is_bounded or _is_diagonal(game.G[sl, sl]))
    if method == "auto":
        method = "closed_form" if exact else "iterative"
    if method == "closed_form":
        if not exact:
            raise ValueError("closed form needs a quadratic game with diagonal A_ii or no constraints")
        z[sl] = 0.0
        rhs = degree * x_old + v - alpha * (game.G[sl] @ z + game.g[sl])
        K = alpha * game.G[sl, sl] + 2.0 * degree * np.eye(len(x_old))
        return box.project(np.linalg.solve(K, rhs))
    if method != "iterative":
        raise ValueError(f"unknown method {method!r}")

    if quad:
        curv = float(np.linalg.eigvalsh(game.G[sl, sl])[-1])
    else:
        curv = game.curvature[i]
    step = 1.0 / (curv + 2.0 * degree / alpha)

    def grad(y):
        z[sl] = y
        return game.partial_gradient(i, z) + (2.0 * degree * y - degree * x_old - v) / alpha

    y = box.project(x_old.copy())
    for _ in range(max_iters):
        gy = grad(y)
        if np.linalg.norm(y - box.project(y - gy)) <= inner_tol:
            return y
        y = box.project(y - step * gy)
    raise InnerSolveError(f"prox subproblem of agent {i} did not reach tolerance {inner_tol:g}")


class _Recorder:
    """Shared trace bookkeeping, stopping and divergence checks."""

    def __init__(self, game, topo, config, X0, x_star):
        self.game, self.phi, self.config = game, topo.phi, config
        self.Xs = None if x_star is None else lift(x_star, game.N)
        self.trace = RunTrace()
        self.t0 = time.perf_counter_ns()
        self.scale0 = None
        self.X0 = X0
        self.strikes = 0

    def _distance(self, X):
        if self.Xs is None:
            return float("nan"), float("nan")
        with np.errstate(over="ignore", invalid="ignore"):
            E = X - self.Xs
            return float(np.linalg.norm(E)), self.phi.weighted_norm(E)

    def record(self, k, X, resid):
        dist, dphi = self._distance(X)
        wall = (time.perf_counter_ns() - self.t0) // 1000 if self.config.record_time else 0
        self.trace.append(k, dist, dphi, consensus_error(X), resid, wall)
        if not np.isfinite(X).all():
            raise DivergenceError(f"non-finite iterate at round {k}", self.trace)
        # divergence yardstick: distance to NE if known, else distance from the start
        size = dist if self.Xs is not None else float(np.linalg.norm(X - self.X0))
        if self.scale0 is None:
            self.scale0 = max(size, 1.0 if self.Xs is None else size)
            return
        if self.scale0 > 0 and size > DIVERGENCE_FACTOR * self.scale0:
            self.strikes += 1
            if self.strikes >= DIVERGENCE_PATIENCE:
                raise DivergenceError(
                    f"distance stayed above {DIVERGENCE_FACTOR:g}x its initial value "
                    f"for {DIVERGENCE_PATIENCE} rounds (round {k}, distance {size:.3e})",
                    self.trace,
                )
        else:
            self.strikes = 0

    def should_stop(self, X_new, X_prev) -> bool:
        tol = self.config.stop_tol
        if tol <= 0:
            return False
        if self.Xs is not None:
            return self.trace.dist_to_ne[-1] <= tol
        return float(np.linalg.norm(X_new - X_prev)) <= tol


def _reference_point(game, x_star):
    if x_star is not None:
        return np.asarray(x_star, dtype=float)
    if isinstance(game, QuadraticGame):
        return solve_ne(game)
    return None


def _check_alpha(game, topo, config):
    if config.force_alpha or game.N < 2 or not isinstance(game, QuadraticGame):
        return
    mu, theta0, theta = game_constants(game)
    amax = compute_alpha_max(mu, theta0, theta, topo.lambda2)
    if config.alpha >= amax:
        raise TuningError(
            f"alpha={config.alpha:.6g} is not below alpha_max={amax:.6g}; pass force_alpha to override"
        )


def pppa_run(game, network, config: SolverConfig, x0=None, x_star=None) -> RunResult:
    """Run the preconditioned proximal-point NE seeking iteration.

    Parameters
    ----------
    game : QuadraticGame or CallableGame
    network : MixingMatrix, ndarray or Topology
        Mixing weights; a :class:`~nep.network.Topology` is required for the
        degree variant.
    config : SolverConfig
    x0 : array, optional
        Initial extended state; see :func:`initial_state`.
    x_star : array, optional
        Known equilibrium.  Computed with :func:`~nep.game.solve_ne` for
        quadratic games when omitted; without it distances are NaN and the
        run stops on iterate displacement.

    Returns
    -------
    RunResult
    """
    topo = as_topology(network, config.mode)
    if topo.N != game.N:
        raise ValueError("network and game have different agent counts")
    _check_alpha(game, topo, config)
    alpha = config.alpha
    X = initial_state(game, x0)
    x_star = _reference_point(game, x_star)
    rec = _Recorder(game, topo, config, X.copy(), x_star)
    rec.record(0, X, float("nan"))

    W, d = topo.weights, topo.degrees
    own = game.own_mask
    degrees = None if topo.mode == "doubly_stochastic" else d
    d_own = np.concatenate([np.full(k, d[i]) for i, k in enumerate(game.dims)])
    # one block-diagonal solve per round; the clamp is exact when it is diagonal
    fast = isinstance(game, QuadraticGame) and (game.has_diagonal_hessians or not game.is_constrained)
    if fast:
        K = np.zeros((game.n, game.n))
        for sl in game.slices:
            K[sl, sl] = alpha * game.G[sl, sl]
        K[np.diag_indices(game.n)] += 2.0 * d_own
        K_factor = cho_factor(K)

    converged = False
    for k in range(1, config.max_iters + 1):
        X_new = pppa_consensus_update(X, W, own, degrees)
        if fast:
            v = (W @ X)[own]
            Z = X_new.copy()
            Z[own] = 0.0
            coupling = (Z @ game.G.T)[own]
            y = cho_solve(K_factor, d_own * X[own] + v - alpha * (coupling + game.g))
            X_new[own] = game.project(y)
        else:
            for i in range(game.N):
                try:
                    X_new[i, game.slices[i]] = local_prox_step(
                        game, i, X_new, X, W, alpha, d[i], config.inner_tol, config.inner_max_iters
                    )
                except InnerSolveError as exc:
                    exc.trace = rec.trace
                    raise
        V = -(topo.phi.apply(X_new - X) + augmented_mapping(game, topo, alpha, X_new))
        rec.record(k, X_new, normal_cone_violation(game, X_new, V))
        X_prev, X = X, X_new
        if rec.should_stop(X, X_prev):
            converged = True
            break
    return _result(game, rec.trace, X, x_star, converged)


def augmented_gradient_run(game, network, gamma: float, config: SolverConfig, x0=None, x_star=None) -> RunResult:
    """Projected augmented gradient play ``x+ = Proj(x - gamma F_a(x))``.

    Only the own-decision coordinates are projected.  ``config.alpha`` is the
    weight of the pseudo-gradient inside ``F_a``; it is not checked against
    the PPPA step bound.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    topo = as_topology(network, config.mode)
    if topo.N != game.N:
        raise ValueError("network and game have different agent counts")
    alpha = config.alpha
    own = game.own_mask
    X = initial_state(game, x0)
    x_star = _reference_point(game, x_star)
    rec = _Recorder(game, topo, config, X.copy(), x_star)

    def vi_residual(X):
        Y = X - augmented_mapping(game, topo, alpha, X)
        Y[own] = game.project(Y[own])
        return float(np.abs(X - Y).max())

    rec.record(0, X, vi_residual(X))
    converged = False
    for k in range(1, config.max_iters + 1):
        X_new = X - gamma * augmented_mapping(game, topo, alpha, X)
        X_new[own] = game.project(X_new[own])
        rec.record(k, X_new, vi_residual(X_new))
        X_prev, X = X, X_new
        if rec.should_stop(X, X_prev):
            converged = True
            break
    return _result(game, rec.trace, X, x_star, converged)


def _result(game, trace, X, x_star, converged) -> RunResult:
    return RunResult(trace, X, X[game.own_mask].copy(), x_star, converged)
