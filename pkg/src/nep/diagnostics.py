"""Executable checks of the monotonicity and contraction properties behind convergence."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .game import QuadraticGame, game_constants, lift, solve_ne
from .network import Topology
from .solvers import RunTrace, augmented_mapping
from .tuning import compute_rho

MARGIN_TOL = -1e-9


@dataclass
class MonotonicityProbe:
    """Samples of ``<x - y, F_a(x) - F_a(y)>`` against ``rho ||x - y||^2``.

    ``lhs``/``rhs`` hold the pairs whose ``y`` is the equilibrium lift (the
    asserted set); ``consensus_lhs``/``consensus_rhs`` use random consensus
    points ``y`` and are reported only.
    """

    samples: int
    seed: int
    rho: float
    lhs: np.ndarray
    rhs: np.ndarray
    consensus_lhs: np.ndarray
    consensus_rhs: np.ndarray
    consensus_identity_err: float
    consensus_identity_lower_ok: bool

    @property
    def margins(self) -> np.ndarray:
        return self.lhs - self.rhs

    @property
    def consensus_margins(self) -> np.ndarray:
        return self.consensus_lhs - self.consensus_rhs

    @property
    def min_margin(self) -> float:
        return float(self.margins.min()) if self.samples else 0.0

    @property
    def passed(self) -> bool:
        return self.min_margin >= MARGIN_TOL

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "seed": self.seed,
            "rho": self.rho,
            "min_margin_ne_lift": self.min_margin,
            "min_margin_consensus": float(self.consensus_margins.min()) if self.samples else 0.0,
            "consensus_identity_err": self.consensus_identity_err,
            "consensus_identity_lower_ok": self.consensus_identity_lower_ok,
            "passed": self.passed,
        }


@dataclass
class PhiProbe:
    """Samples of the preconditioned restricted monotonicity inequality."""

    samples: int
    seed: int
    modulus: float
    lhs: np.ndarray
    rhs: np.ndarray
    active_counts: np.ndarray

    @property
    def margins(self) -> np.ndarray:
        return self.lhs - self.rhs

    @property
    def min_margin(self) -> float:
        return float(self.margins.min()) if self.samples else 0.0

    @property
    def passed(self) -> bool:
        return self.min_margin >= MARGIN_TOL

    def to_dict(self) -> dict:
        return {
            "samples": self.samples,
            "seed": self.seed,
            "modulus": self.modulus,
            "min_margin": self.min_margin,
            "samples_with_active_bounds": int((self.active_counts > 0).sum()),
            "passed": self.passed,
        }


@dataclass
class ContractionReport:
    rate: float
    max_step_ratio: float
    step_violations: list[int] = field(default_factory=list)
    envelope_violations: list[int] = field(default_factory=list)
    skipped: int = 0

    @property
    def passed(self) -> bool:
        return not self.step_violations and not self.envelope_violations

    def to_dict(self) -> dict:
        return {
            "rate": self.rate,
            "max_step_ratio": self.max_step_ratio,
            "step_violations": len(self.step_violations),
            "envelope_violations": len(self.envelope_violations),
            "skipped": self.skipped,
            "passed": self.passed,
        }


def _rho(game: QuadraticGame, topo: Topology, alpha: float) -> float:
    mu, theta0, theta = game_constants(game)
    return compute_rho(alpha, mu, theta0, theta, topo.lambda2, game.N)


def _random_offsets(rng, shape, samples):
    # directions with log-uniform magnitudes in [1e-2, 1e1]
    D = rng.standard_normal((samples, *shape))
    scale = 10.0 ** rng.uniform(-2.0, 1.0, samples)
    norms = np.linalg.norm(D.reshape(samples, -1), axis=1)
    return D * (scale / norms)[:, None, None]


def probe_restricted_monotonicity(
    game: QuadraticGame, topo: Topology, alpha: float, samples: int = 1000, seed: int = 0, x_star=None
) -> MonotonicityProbe:
    """Sample the restricted strong monotonicity inequality of ``F_a``.

    Raises :class:`~nep.tuning.TuningError` when ``alpha`` is not admissible.
    """
    rho = _rho(game, topo, alpha)
    N, n = game.N, game.n
    if x_star is None:
        x_star = solve_ne(game)
    Y = lift(x_star, N)
    Fy = augmented_mapping(game, topo, alpha, Y)
    rng = np.random.default_rng(seed)
    offsets = _random_offsets(rng, (N, n), samples)
    cons_points = x_star + rng.standard_normal((samples, n))
    cons_offsets = _random_offsets(rng, (N, n), samples)

    lhs, rhs = np.empty(samples), np.empty(samples)
    clhs, crhs = np.empty(samples), np.empty(samples)
    for s in range(samples):
        E = offsets[s]
        lhs[s] = np.sum(E * (augmented_mapping(game, topo, alpha, Y + E) - Fy))
        rhs[s] = rho * np.sum(E * E)
        Yc = lift(cons_points[s], N)
        Ec = cons_offsets[s]
        Fc = augmented_mapping(game, topo, alpha, Yc)
        clhs[s] = np.sum(Ec * (augmented_mapping(game, topo, alpha, Yc + Ec) - Fc))
        crhs[s] = rho * np.sum(Ec * Ec)

    # at consensus pairs the graph term vanishes and only alpha <a - b, F(a) - F(b)> remains
    mu = game_constants(game).mu
    id_err, lower_ok = 0.0, True
    for s in range(min(samples, 100)):
        a, b = cons_points[s], x_star + rng.standard_normal(n)
        Xa, Xb = lift(a, N), lift(b, N)
        lhs_c = np.sum((Xa - Xb) * (augmented_mapping(game, topo, alpha, Xa) - augmented_mapping(game, topo, alpha, Xb)))
        ref = alpha * np.dot(a - b, game.pseudo_gradient(a) - game.pseudo_gradient(b))
        id_err = max(id_err, abs(lhs_c - ref) / max(1.0, abs(ref)))
        lower_ok &= bool(lhs_c >= alpha * mu / N * np.sum((Xa - Xb) ** 2) + MARGIN_TOL)

    return MonotonicityProbe(samples, seed, rho, lhs, rhs, clhs, crhs, float(id_err), lower_ok)


def _feasible_sample(game, rng, x_star):
    """Random extended state whose own decisions lie in the box, some at a bound.

    Returns the state and a normal-cone element at it.
    """
    N, n = game.N, game.n
    X = x_star + rng.standard_normal((N, n))
    lo, up = game.box.lower, game.box.upper
    own = X[game.own_mask]
    normal = np.zeros(n)
    for c in range(n):
        finite_lo, finite_up = np.isfinite(lo[c]), np.isfinite(up[c])
        r = rng.random()
        if finite_lo and r < 0.25:
            own[c] = lo[c]
            normal[c] = -abs(rng.standard_normal())
        elif finite_up and r < 0.5:
            own[c] = up[c]
            normal[c] = abs(rng.standard_normal())
        elif finite_lo and finite_up:
            own[c] = rng.uniform(lo[c], up[c])
        else:
            own[c] = np.clip(own[c], lo[c], up[c])
    # clipping onto a bound without a spike is fine: zero is always a normal element
    X[game.own_mask] = own
    Nrm = np.zeros((N, n))
    Nrm[game.own_mask] = normal
    return X, Nrm, int(np.count_nonzero(normal))


def probe_phi_monotonicity(
    game: QuadraticGame, topo: Topology, alpha: float, samples: int = 1000, seed: int = 0, x_star=None
) -> PhiProbe:
    """Sample ``<u - v, x - y>_Phi >= (rho / ||Phi||) ||x - y||_Phi^2`` on the graph of ``Phi^-1 A``.

    ``y`` is the equilibrium lift with ``v = 0``; ``u = Phi^-1 (F_a(x) + n)``
    with ``n`` a normal-cone element at ``x``, nonzero only at bounds that
    the sampler pins active.
    """
    rho = _rho(game, topo, alpha)
    phi = topo.phi
    modulus = rho / phi.norm
    if x_star is None:
        x_star = solve_ne(game)
    Y = lift(x_star, game.N)
    rng = np.random.default_rng(seed)
    lhs, rhs = np.empty(samples), np.empty(samples)
    active = np.zeros(samples, dtype=int)
    for s in range(samples):
        X, Nrm, active[s] = _feasible_sample(game, rng, x_star)
        U = phi.solve(augmented_mapping(game, topo, alpha, X) + Nrm)
        E = X - Y
        lhs[s] = phi.inner(U, E)
        rhs[s] = modulus * phi.inner(E, E)
    return PhiProbe(samples, seed, modulus, lhs, rhs, active)


def probe_contraction(trace: RunTrace, rate: float, atol: float = 1e-9, rtol: float = 1e-7) -> ContractionReport:
    """Check ``dist_phi`` against a per-step contraction ``rate`` and its cumulative envelope.

    Per step: ``d[k+1] <= rate d[k] + atol``.  Envelope:
    ``d[k] <= rate**k d[0] (1 + rtol)``.  Ratios with a zero denominator are
    skipped.
    """
    d = trace.column("dist_phi")
    k = np.asarray(trace.iter, dtype=float)
    rep = ContractionReport(rate=rate, max_step_ratio=0.0)
    for t in range(len(d) - 1):
        if d[t] == 0.0:
            rep.skipped += 1
        else:
            rep.max_step_ratio = max(rep.max_step_ratio, d[t + 1] / d[t])
        if d[t + 1] > rate * d[t] + atol:
            rep.step_violations.append(int(trace.iter[t + 1]))
    if len(d):
        bound = rate ** (k - k[0]) * d[0] * (1.0 + rtol)
        rep.envelope_violations = [int(trace.iter[t]) for t in np.flatnonzero(d > bound)]
    return rep


def euclidean_envelope_violations(trace: RunTrace, rate: float, phi_norm: float, lambda_min_phi: float) -> list[int]:
    """Rounds breaking ``||x^k - x*|| <= sqrt(||Phi|| / lmin(Phi)) rate**k ||x^0 - x*||``."""
    d = trace.column("dist_to_ne")
    k = np.asarray(trace.iter, dtype=float)
    bound = np.sqrt(phi_norm / lambda_min_phi) * rate ** (k - k[0]) * d[0] * (1.0 + 1e-12) + 1e-12
    return [int(trace.iter[t]) for t in np.flatnonzero(d > bound)]
