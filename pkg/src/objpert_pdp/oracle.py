"""Brute-force reference computations used to check the closed forms.

Nothing here reuses the privacy-loss assembly from ``accounting``: log-odds
are computed from the output densities directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import norm

from .accounting import Direction, GaussianQuery, gaussian_expost_pdp, rank_one_mus
from .errors import NotPositiveDefinite
from .glm import DataPoint, Dataset, ObjectiveSpec, objective_grad, objective_hessian


def logdet_pd(H) -> float:
    try:
        L = np.linalg.cholesky(np.asarray(H, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("matrix is not positive definite") from exc
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def output_log_density(grad_J, H, sigma: float) -> float:
    """Log density of the solver output up to a constant shared by neighbors.

    The output is the point where ``grad J = -b`` with ``b ~ N(0, sigma^2 I)``;
    the change of variables from ``b`` contributes ``log det H``.
    """
    grad_J = np.asarray(grad_J, dtype=float)
    return -float(grad_J @ grad_J) / (2.0 * sigma**2) + logdet_pd(H)


def signed_log_odds(grad_J_D, H_D, grad_J_N, H_N, sigma: float) -> float:
    """``log p_D(o) - log p_N(o)`` from both objectives' derivatives at ``o``."""
    return output_log_density(grad_J_D, H_D, sigma) - output_log_density(grad_J_N, H_N, sigma)


def _canonical(D: Dataset) -> Dataset:
    """Rows in lexicographic order, so equal multisets sum in the same order."""
    if D.n < 2:
        return D
    order = np.lexsort(np.column_stack([D.X, D.y]).T[::-1])
    return Dataset(D.X[order], D.y[order])


def neighbor(D: Dataset, z: DataPoint, direction: Direction) -> Dataset:
    return D.add(z) if direction is Direction.ADD else D.remove(z)


def direct_log_odds(
    theta_hat, spec: ObjectiveSpec, D: Dataset, z: DataPoint, direction: Direction, sigma: float
) -> float:
    """``|log p_D(theta) - log p_{D +- z}(theta)|`` at any point ``theta``."""
    theta = np.asarray(theta_hat, dtype=float)
    N = _canonical(neighbor(D, z, direction))
    D = _canonical(D)
    zero = np.zeros(D.d)
    return abs(
        signed_log_odds(
            objective_grad(spec, D, theta, zero),
            objective_hessian(spec, D, theta),
            objective_grad(spec, N, theta, zero),
            objective_hessian(spec, N, theta),
            sigma,
        )
    )


def det_ratio_check(H, per_point_hessian, direction: Direction) -> tuple[float, float]:
    """Rank-one product form next to the plain determinant ratio."""
    H = np.asarray(H, dtype=float)
    dH = np.asarray(per_point_hessian, dtype=float)
    s = direction.sign
    product = 1.0
    for m in rank_one_mus(H, dH, direction):
        product *= 1.0 + s * m
    direct = np.linalg.det(H + s * dH) / np.linalg.det(H)
    return float(product), float(direct)


def gaussian_log_odds(q_of_d, delta_vec, sigma: float, o) -> float:
    """``|log N(o; Q, s^2) - log N(o; Q + Delta, s^2)|`` summed over coordinates."""
    q = np.atleast_1d(np.asarray(q_of_d, dtype=float))
    o = np.atleast_1d(np.asarray(o, dtype=float))
    shifted = q + np.atleast_1d(np.asarray(delta_vec, dtype=float))
    return abs(float(np.sum(norm.logpdf(o, q, sigma) - norm.logpdf(o, shifted, sigma))))


def coverage_test(
    sampler: Callable[[int], tuple[float, float]], trials: int, rho: float
) -> tuple[float, bool]:
    """Run ``sampler(i)`` for each trial and count ``value > bound``.

    Passes when the violation rate is within three binomial standard
    deviations above ``rho``.
    """
    if trials < 100:
        raise ValueError("need at least 100 trials")
    bad = 0
    for i in range(trials):
        value, bound = sampler(i)
        if value > bound:
            bad += 1
    rate = bad / trials
    return rate, rate <= rho + 3.0 * math.sqrt(rho * (1 - rho) / trials)


@dataclass(frozen=True)
class DemoOutcome:
    o: float
    eps_published: float
    recovered_q: int | None
    candidates: tuple[float, float]
    ambiguous: bool


def privacy_risk_demo(q_of_d: int, sigma: float, rng: np.random.Generator) -> DemoOutcome:
    """Recover a count from its noisy release plus the published ex-post pDP.

    Adding one person moves the count by one, so the published loss is
    ``|1/(2 s^2) - (o - q)/s^2|`` and ``q = o - 0.5 +- s^2 eps``. Only one of the
    two candidates is an integer, almost surely.
    """
    if q_of_d < 0 or int(q_of_d) != q_of_d:
        raise ValueError("the count must be a non-negative integer")
    o = float(q_of_d) + sigma * float(rng.standard_normal())
    eps = gaussian_expost_pdp(GaussianQuery([q_of_d], [1.0], sigma), [o])
    spread = sigma**2 * eps
    cands = (o - 0.5 - spread, o - 0.5 + spread)
    tol = 1e-9 * (1.0 + abs(o) + spread)
    hits = [c for c in cands if abs(c - round(c)) <= tol]
    if len(hits) == 1:
        return DemoOutcome(o, eps, int(round(hits[0])), cands, False)
    ambiguous = len(hits) == 2 and round(hits[0]) != round(hits[1])
    rec = int(round(hits[0])) if len(hits) == 2 and not ambiguous else None
    return DemoOutcome(o, eps, rec, cands, ambiguous)
