"""Step-size bound, restricted monotonicity constant and theoretical rates."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .game import QuadraticGame, game_constants
from .network import Topology


class TuningError(ValueError):
    """Invalid tuning input, e.g. a step size outside ``(0, alpha_max)``."""


DEFAULT_ALPHA_FRACTION = 0.99


def compute_alpha_max(mu: float, theta0: float, theta: float, lambda2: float) -> float:
    """Largest step keeping the restricted-monotonicity matrix positive definite.

    ``4 mu lambda2 / ((theta0 + theta)**2 + 4 mu theta)``
    """
    if min(mu, theta0, theta, lambda2) <= 0:
        raise TuningError("mu, theta0, theta and lambda2 must all be positive")
    return 4.0 * mu * lambda2 / ((theta0 + theta) ** 2 + 4.0 * mu * theta)


def monotonicity_matrix(alpha, mu, theta0, theta, lambda2, N) -> np.ndarray:
    """The 2x2 matrix whose smallest eigenvalue is the restricted modulus."""
    off = -(theta0 + theta) / (2.0 * math.sqrt(N))
    return alpha * np.array([[mu / N, off], [off, lambda2 / alpha - theta]])


def _sym2_min_eig(a: float, b: float, d: float) -> float:
    # smaller eigenvalue of [[a, b], [b, d]]
    return 0.5 * (a + d) - math.hypot(0.5 * (a - d), b)


def compute_rho(alpha, mu, theta0, theta, lambda2, N) -> float:
    """Restricted strong monotonicity constant of the augmented mapping.

    Raises
    ------
    TuningError
        If ``alpha`` is not in ``(0, alpha_max)``, or if the resulting
        constant is not positive.
    """
    if alpha <= 0:
        raise TuningError("alpha must be positive")
    amax = compute_alpha_max(mu, theta0, theta, lambda2)
    if alpha >= amax:
        raise TuningError(f"step size violates the bound: alpha={alpha:.6g} >= alpha_max={amax:.6g}")
    M = monotonicity_matrix(alpha, mu, theta0, theta, lambda2, N)
    rho = _sym2_min_eig(M[0, 0], M[0, 1], M[1, 1])
    if not rho > 0:
        raise TuningError(f"internal inconsistency: rho = {rho!r} for alpha < alpha_max")
    return float(rho)


class Rates(NamedTuple):
    ppp: float
    grane: float
    acc_grane: float | None


def theoretical_rates(mu_fa: float, phi_norm: float, theta_fa: float, mu_bar_fa: float) -> Rates:
    """Squared-norm per-iteration contraction factors of PPPA, GRANE and acc-GRANE.

    ``acc_grane`` is ``None`` when the augmented map is not globally strongly
    monotone (``mu_bar_fa <= 0``).
    """
    ppp = (1.0 / (1.0 + mu_fa / phi_norm)) ** 2
    grane = 1.0 - 1.0 / (theta_fa**2 / mu_fa**2)
    acc = 1.0 - 1.0 / (1.0 + theta_fa / mu_bar_fa) if mu_bar_fa > 0 else None
    return Rates(ppp, grane, acc)


def ppp_rate_expanded(mu_fa: float) -> float:
    """PPPA squared rate with ``||Phi|| = 2`` written as ``1 + c**2 - 2c``."""
    c = 1.0 / (1.0 + 2.0 / mu_fa)
    return 1.0 + c**2 - 2.0 * c


def ppp_rate_upper(mu_fa: float) -> float:
    """Upper bound ``1 - 1/(1 + 2/mu_fa)`` on the PPPA squared rate."""
    return 1.0 - 1.0 / (1.0 + 2.0 / mu_fa)


def augmented_jacobian(game: QuadraticGame, topo: Topology, alpha: float) -> np.ndarray:
    """Dense ``Nn x Nn`` Jacobian of ``alpha R' F(x) + L x``."""
    N, n = game.N, game.n
    RtJ = np.zeros((N * n, N * n))
    Jext = game.extended_jacobian()
    for i, sl in enumerate(game.slices):
        RtJ[i * n + sl.start:i * n + sl.stop] = Jext[sl]
    return alpha * RtJ + topo.laplacian.dense(n)


@dataclass
class TuningReport:
    mode: str
    N: int
    n: int
    mu: float
    theta0: float
    theta: float
    lambda2: float
    lambdamax: float
    alpha_max: float
    alpha: float
    rho_alpha: float | None
    phi_norm: float
    lambda_min_phi: float
    theta_fa: float
    mu_bar_fa: float
    rate_ppp: float | None
    rate_grane: float | None
    rate_acc_grane: float | None
    gamma_theory: float | None
    # report-only quantities
    alpha_theta_within_half_gap: bool
    fa_lipschitz_upper: float
    fa_lipschitz_lower: float

    @property
    def alpha_admissible(self) -> bool:
        return 0.0 < self.alpha < self.alpha_max

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha_admissible"] = self.alpha_admissible
        return d

    def format_text(self) -> str:
        rows = [(k, v) for k, v in self.to_dict().items()]
        width = max(len(k) for k, _ in rows)
        lines = []
        for k, v in rows:
            if isinstance(v, float):
                v = f"{v:.10g}"
            elif v is None:
                v = "n/a"
            lines.append(f"{k:<{width}}  {v}")
        return "\n".join(lines)


def tune(game: QuadraticGame, topo: Topology, alpha: float | None = None) -> TuningReport:
    """Compute every tuning constant for ``game`` on ``topo``.

    When ``alpha`` is omitted the step is ``0.99 * alpha_max``.  An explicit
    ``alpha`` outside ``(0, alpha_max)`` is accepted; the restricted modulus
    and the rates that depend on it are then reported as ``None``.
    """
    mu, theta0, theta = game_constants(game)
    N = game.N
    if N < 2:
        raise TuningError("tuning needs at least two agents")
    lam2 = topo.lambda2
    lmax = float(np.linalg.eigvalsh(topo.laplacian.P)[-1])
    amax = compute_alpha_max(mu, theta0, theta, lam2)
    if alpha is None:
        alpha = DEFAULT_ALPHA_FRACTION * amax
    if alpha <= 0:
        raise TuningError("alpha must be positive")
    rho = compute_rho(alpha, mu, theta0, theta, lam2, N) if alpha < amax else None

    Jfa = augmented_jacobian(game, topo, alpha)
    theta_fa = float(np.linalg.norm(Jfa, 2))
    mu_bar = float(np.linalg.eigvalsh(0.5 * (Jfa + Jfa.T)).min())
    phi = topo.phi
    if rho is not None:
        rates = theoretical_rates(rho, phi.norm, theta_fa, mu_bar)
        gamma = rho / theta_fa**2
    else:
        rates, gamma = Rates(None, None, None), None

    return TuningReport(
        mode=topo.mode,
        N=N,
        n=game.n,
        mu=mu,
        theta0=theta0,
        theta=theta,
        lambda2=lam2,
        lambdamax=lmax,
        alpha_max=amax,
        alpha=float(alpha),
        rho_alpha=rho,
        phi_norm=phi.norm,
        lambda_min_phi=phi.lambda_min,
        theta_fa=theta_fa,
        mu_bar_fa=mu_bar,
        rate_ppp=rates.ppp,
        rate_grane=rates.grane,
        rate_acc_grane=rates.acc_grane,
        gamma_theory=gamma,
        alpha_theta_within_half_gap=bool(alpha * theta <= lam2 / 2.0),
        fa_lipschitz_upper=lmax + lam2 / 2.0,
        fa_lipschitz_lower=lmax - lam2 / 2.0,
    )
