"""Randomized verification suites comparing the closed forms against ``oracle``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .accounting import (
    Direction,
    GaussianQuery,
    data_indep_cross_bound,
    data_indep_leverage_bound,
    expost_pdp_from_parts,
    expost_pdp_general,
    expost_pdp_glm,
    gaussian_expost_highprob,
    gaussian_expost_pdp,
)
from .glm import LOGISTIC, SQUARED, DataPoint, Dataset, ObjectiveSpec, objective_grad
from .oracle import coverage_test, det_ratio_check, direct_log_odds, gaussian_log_odds, signed_log_odds
from .solver import model_at, sample_noise, solve

SUITES = ("logodds", "det", "coverage")


@dataclass(frozen=True)
class SuiteResult:
    name: str
    residual: float
    tolerance: float
    passed: bool
    detail: dict


def _unit_rows(rng, n, d):
    X = rng.standard_normal((n, d))
    return X / np.maximum(np.linalg.norm(X, axis=1), 1e-12)[:, None] * rng.uniform(0.2, 1.0, (n, 1))


def random_glm_instance(rng: np.random.Generator):
    """A random GLM dataset, an exact optimum on it and a point to add or remove."""
    kind = LOGISTIC if rng.random() < 0.5 else SQUARED
    n, d = int(rng.integers(2, 51)), int(rng.integers(1, 6))
    X = _unit_rows(rng, n, d)
    y = (rng.random(n) < 0.5).astype(float) if kind == LOGISTIC else rng.random(n)
    D = Dataset(X, y)
    spec = ObjectiveSpec.of(kind, float(rng.uniform(0.5, 3.0)))
    sigma = float(rng.uniform(0.5, 3.0))
    direction = Direction.ADD if rng.random() < 0.5 else Direction.REMOVE
    if direction is Direction.ADD:
        x = _unit_rows(rng, 1, d)[0]
        z = DataPoint(x, float(rng.random() < 0.5) if kind == LOGISTIC else float(rng.random()))
    else:
        z = D.point(int(rng.integers(n)))
    model = model_at(spec, D, rng.standard_normal(d), sigma)
    return model, spec, D, z, direction


def random_general_instance(rng: np.random.Generator):
    """Objective Hessian/gradient plus a rank <= 3 PSD per-point Hessian."""
    d = int(rng.integers(1, 6))
    rank = int(rng.integers(1, min(3, d) + 1))
    V = rng.standard_normal((d, rank)) * 0.7
    hess_z = V @ V.T
    B = rng.standard_normal((d, d))
    H = B @ B.T / d + float(rng.uniform(0.5, 2.0)) * np.eye(d)
    direction = Direction.ADD if rng.random() < 0.5 else Direction.REMOVE
    if direction is Direction.REMOVE:
        H = H + hess_z
    grad_J = rng.standard_normal(d)
    grad_z = rng.standard_normal(d) * 0.5
    return H, grad_J, grad_z, hess_z, float(rng.uniform(0.5, 3.0)), direction


def logodds_suite(seed: int = 0, instances: int = 200) -> SuiteResult:
    rng = np.random.default_rng([seed, 1])
    worst_glm = worst_general = worst_parts = 0.0
    for _ in range(instances):
        model, spec, D, z, direction = random_glm_instance(rng)
        ref = direct_log_odds(model.theta_hat, spec, D, z, direction, model.sigma)
        worst_glm = max(worst_glm, abs(expost_pdp_glm(model, spec, D, z, direction).epsilon - ref))
        worst_general = max(worst_general, abs(expost_pdp_general(model, spec, D, z, direction).epsilon - ref))

        H, gJ, gz, Hz, sigma, direction = random_general_instance(rng)
        s = direction.sign
        ref = abs(signed_log_odds(gJ, H, gJ + s * gz, H + s * Hz, sigma))
        got = expost_pdp_from_parts(H, gJ, gz, Hz, sigma, direction).epsilon
        worst_parts = max(worst_parts, abs(got - ref))
    worst = max(worst_glm, worst_general, worst_parts)
    tol = 1e-6
    detail = {"glm": worst_glm, "general_glm": worst_general, "general_rank3": worst_parts}
    return SuiteResult("logodds", worst, tol, worst <= tol, detail)


def det_suite(seed: int = 0, instances: int = 100) -> SuiteResult:
    rng = np.random.default_rng([seed, 2])
    worst = 0.0
    for _ in range(instances):
        H, _, _, Hz, _, direction = random_general_instance(rng)
        d = H.shape[0]
        if d < 6 and rng.random() < 0.3:
            # grow to d = 6 with an independent block
            k = 6 - d
            H = np.block([[H, np.zeros((d, k))], [np.zeros((k, d)), np.eye(k) * 2.0]])
            Hz = np.block([[Hz, np.zeros((d, k))], [np.zeros((k, d)), np.zeros((k, k))]])
        product, direct = det_ratio_check(H, Hz, direction)
        worst = max(worst, abs(product - direct) / abs(direct))
    tol = 1e-8
    return SuiteResult("det", worst, tol, worst <= tol, {"instances": instances})


def gaussian_coverage(seed: int = 0, draws: int = 100_000, rho: float = 0.05):
    """Violation rate of the high-probability bound over fresh outputs, checked
    against the density-level log-odds."""
    rng = np.random.default_rng([seed, 3])
    q = rng.standard_normal(3)
    dv = rng.standard_normal(3)
    sigma = 1.3
    query = GaussianQuery(q, dv, sigma)
    bound = gaussian_expost_highprob(query, rho)
    outs = q + sigma * rng.standard_normal((draws, 3))
    worst_gap = 0.0
    for o in outs[:50]:
        worst_gap = max(worst_gap, abs(gaussian_expost_pdp(query, o) - gaussian_log_odds(q, dv, sigma, o)))
    s2 = sigma**2
    losses = np.abs(float(dv @ dv) / (2 * s2) - (outs - q) @ dv / s2)
    rate, ok = coverage_test(lambda i: (losses[i], bound), draws, rho)
    return rate, ok, worst_gap


def leverage_dominance(seed: int = 0, models: int = 1000) -> tuple[int, int]:
    """Count models where the leverage term exceeds its data-free bound."""
    rng = np.random.default_rng([seed, 4])
    bad = 0
    for _ in range(models):
        model, spec, D, z, direction = random_glm_instance(rng)
        # keep the bound's domain: per-point curvature below lambda
        lam = max(spec.lam, 1.01 * float(spec.loss.d2f(float(z.x @ model.theta_hat), z.y)) * float(z.x @ z.x))
        spec = ObjectiveSpec(spec.loss, lam)
        model = model_at(spec, D, model.theta_hat, model.sigma)
        loss = expost_pdp_glm(model, spec, D, z, direction)
        bound = data_indep_leverage_bound(spec.loss, spec.lam, z, model.theta_hat)
        if abs(loss.term_leverage) > bound * (1 + 1e-12) + 1e-15:
            bad += 1
    return bad, models


def cross_term_coverage(seed: int = 0, trials: int = 2000, rho: float = 0.05):
    """Full re-solves on a fixed logistic dataset; the cross term against its bound."""
    rng = np.random.default_rng([seed, 5])
    n, d = 50, 5
    X = _unit_rows(rng, n, d)
    D = Dataset(X, (rng.random(n) < 0.5).astype(float))
    spec = ObjectiveSpec.of(LOGISTIC, 1.0)
    z = D.point(0)
    sigma = 2.0

    def one(i):
        b = sample_noise(d, sigma, np.random.default_rng([seed, 5, i]))
        model = solve(spec, D, b, sigma=sigma)
        grad_J = objective_grad(spec, D, model.theta_hat, np.zeros(d))
        t = float(z.x @ model.theta_hat)
        grad_z = float(spec.loss.df(t, z.y)) * z.x
        return abs(float(grad_J @ grad_z)), data_indep_cross_bound(spec.loss, sigma, z, model.theta_hat, rho)

    return coverage_test(one, trials, rho)


def coverage_suite(seed: int = 0) -> SuiteResult:
    rho = 0.05
    g_rate, g_ok, gap = gaussian_coverage(seed, rho=rho)
    c_rate, c_ok = cross_term_coverage(seed, rho=rho)
    bad, total = leverage_dominance(seed, 200)
    ok = g_ok and c_ok and bad == 0 and gap <= 1e-9
    detail = {"gaussian_rate": g_rate, "cross_rate": c_rate, "leverage_violations": bad, "density_gap": gap}
    return SuiteResult("coverage", max(g_rate, c_rate), rho, ok, detail)


def run(name: str, seed: int = 0) -> SuiteResult:
    if name == "logodds":
        return logodds_suite(seed)
    if name == "det":
        return det_suite(seed)
    if name == "coverage":
        return coverage_suite(seed)
    raise ValueError(f"unknown suite {name!r}")
