"""Closed-form privacy losses.

Ex-post per-instance losses of objective perturbation, the Gaussian
mechanism's per-instance losses, and data-independent bounds.

Sign convention: every signed quantity here is ``log p_D(o) - log p_{D'}(o)``
where ``D' = D + z`` for ``Direction.ADD`` and ``D - z`` for
``Direction.REMOVE``. The reported epsilon is its absolute value.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, solve_triangular
from scipy.stats import norm

from .errors import (
    BoundDomain,
    DimensionMismatch,
    InfinitePrivacyLoss,
    LogDomain,
    NonPsdHessian,
    NotAMember,
    NotPositiveDefinite,
)
from .glm import DataPoint, Dataset, GlmLoss, ObjectiveSpec, objective_hessian
from .solver import DpTarget, PerturbedModel


class Direction(enum.Enum):
    ADD = "add"
    REMOVE = "remove"

    @property
    def sign(self) -> int:
        return 1 if self is Direction.ADD else -1

    @classmethod
    def parse(cls, text: str) -> "Direction":
        return cls(text.lower())


@dataclass(frozen=True)
class ExPostPdpLoss:
    epsilon: float
    term_leverage: float
    term_gradsq: float
    term_cross: float
    direction: Direction
    mus: tuple[float, ...] = ()

    @property
    def signed(self) -> float:
        return self.term_leverage + self.term_gradsq + self.term_cross


@dataclass(frozen=True)
class GaussianQuery:
    q_of_d: np.ndarray
    sensitivity_vec: np.ndarray
    sigma: float

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q_of_d, dtype=float))
        dv = np.atleast_1d(np.asarray(self.sensitivity_vec, dtype=float))
        if q.shape != dv.shape:
            raise DimensionMismatch(f"Q(D) has shape {q.shape}, sensitivity {dv.shape}")
        object.__setattr__(self, "q_of_d", q)
        object.__setattr__(self, "sensitivity_vec", dv)

    @property
    def delta_norm(self) -> float:
        return float(np.linalg.norm(self.sensitivity_vec))


def _cholesky(H: np.ndarray) -> np.ndarray:
    try:
        return cholesky(H, lower=True)
    except LinAlgError as exc:
        raise NotPositiveDefinite("matrix is not positive definite") from exc


def leverage_score(H, x) -> float:
    """``x^T H^{-1} x`` through a Cholesky solve."""
    H = np.asarray(H, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1)
    if H.shape != (x.shape[0], x.shape[0]):
        raise DimensionMismatch(f"H is {H.shape} but x has dimension {x.shape[0]}")
    v = solve_triangular(_cholesky(H), x, lower=True)
    return float(v @ v)


def _require_member(D: Dataset, z: DataPoint, direction: Direction) -> None:
    if direction is Direction.REMOVE and not D.contains(z):
        raise NotAMember("removal requested for a point that is not in D")


def _gradient_terms(grad_J, grad_z, sigma: float, sign: int) -> tuple[float, float]:
    gz2 = float(grad_z @ grad_z)
    if sigma == 0:
        if gz2 == 0:
            return 0.0, 0.0
        raise InfinitePrivacyLoss("sigma is zero but the point has a nonzero gradient")
    return gz2 / (2.0 * sigma**2), sign * float(grad_J @ grad_z) / sigma**2


def _finish(lev: float, gradsq: float, cross: float, direction: Direction, mus) -> ExPostPdpLoss:
    return ExPostPdpLoss(
        epsilon=abs(lev + gradsq + cross),
        term_leverage=lev,
        term_gradsq=gradsq,
        term_cross=cross,
        direction=direction,
        mus=tuple(float(m) for m in mus),
    )


def expost_pdp_glm(
    model: PerturbedModel,
    spec: ObjectiveSpec,
    D: Dataset,
    z: DataPoint,
    direction: Direction,
) -> ExPostPdpLoss:
    """Ex-post pDP of a GLM solver output for one individual.

    The data gradient at the output is taken as ``-b``, which is exact at a
    solver optimum.
    """
    _require_member(D, z, direction)
    theta = model.theta_hat
    t = float(z.x @ theta)
    curv = float(spec.loss.d2f(t, z.y))
    mu = leverage_score(objective_hessian(spec, D, theta), z.x)
    s = direction.sign
    a = curv * mu
    if 1.0 + s * a <= 0:
        raise LogDomain(f"1 {'+' if s > 0 else '-'} f''mu = {1.0 + s * a:.3e} is not positive")
    lev = -math.log1p(s * a)
    grad_z = float(spec.loss.df(t, z.y)) * z.x
    gradsq, cross = _gradient_terms(-model.b, grad_z, model.sigma, s)
    return _finish(lev, gradsq, cross, direction, (a,))


def expost_pdp_members(model: PerturbedModel, spec: ObjectiveSpec, D: Dataset) -> np.ndarray:
    """Ex-post pDP for removing each member of ``D``, vectorized over rows.

    Same value as ``expost_pdp_glm(..., Direction.REMOVE).epsilon`` per row.
    """
    theta = model.theta_hat
    t = D.X @ theta
    curv = spec.loss.d2f(t, D.y)
    fp = spec.loss.df(t, D.y)
    V = solve_triangular(_cholesky(objective_hessian(spec, D, theta)), D.X.T, lower=True)
    a = curv * np.sum(V * V, axis=0)
    if np.any(a >= 1):
        raise LogDomain("a member has f''mu >= 1")
    sq = np.sum(D.X * D.X, axis=1)
    if model.sigma == 0:
        if np.any(fp * fp * sq > 0):
            raise InfinitePrivacyLoss("sigma is zero but some member has a nonzero gradient")
        return np.abs(-np.log1p(-a))
    s2 = model.sigma**2
    # removal flips the cross-term sign; grad J = -b
    signed = -np.log1p(-a) + fp * fp * sq / (2 * s2) + fp * (D.X @ model.b) / s2
    return np.abs(signed)


def rank_one_mus(H, hess_z, direction: Direction) -> list[float]:
    """The sequence ``mu_j`` for peeling ``hess_z`` into ``H`` one eigenvector at a time.

    With ``hess_z = sum_k l_k u_k u_k^T`` and ``s = +1`` (add) or ``-1``
    (remove), ``mu_j = l_j u_j^T (H + s sum_{k<j} l_k u_k u_k^T)^{-1} u_j``,
    so that ``prod_j (1 + s mu_j) = det(H + s hess_z) / det(H)``. For removal
    ``H - sum_{k<j}`` equals ``(H - hess_z) + sum_{k>=j}``, the ordering used
    when the point's own terms are stripped from ``H`` first.
    """
    H = np.asarray(H, dtype=float)
    hess_z = np.asarray(hess_z, dtype=float)
    if hess_z.shape != H.shape:
        raise DimensionMismatch(f"per-point Hessian {hess_z.shape} vs H {H.shape}")
    hess_z = 0.5 * (hess_z + hess_z.T)
    w, U = np.linalg.eigh(hess_z)
    if w.size and w[0] < -1e-10:
        raise NonPsdHessian(f"per-point Hessian has eigenvalue {w[0]:.3e}")
    s = direction.sign
    M = H.copy()
    mus = []
    for lam_k, u in zip(w[::-1], U[:, ::-1].T):
        if lam_k <= 0:
            continue
        mus.append(lam_k * leverage_score(M, u))
        M = M + s * lam_k * np.outer(u, u)
    return mus


def expost_pdp_from_parts(
    H_D,
    grad_J,
    grad_z,
    hess_z,
    sigma: float,
    direction: Direction,
) -> ExPostPdpLoss:
    """Ex-post pDP from the objective Hessian/gradient on D and the point's derivatives."""
    s = direction.sign
    try:
        mus = rank_one_mus(H_D, hess_z, direction)
    except NotPositiveDefinite as exc:
        raise LogDomain("removal leaves a non positive definite Hessian") from exc
    lev = 0.0
    for m in mus:
        if 1.0 + s * m <= 0:
            raise LogDomain(f"leverage factor 1 - mu = {1.0 - m:.3e} is not positive")
        lev -= math.log1p(s * m)
    grad_z = np.asarray(grad_z, dtype=float).reshape(-1)
    gradsq, cross = _gradient_terms(np.asarray(grad_J, dtype=float), grad_z, sigma, s)
    return _finish(lev, gradsq, cross, direction, mus)


def expost_pdp_general(
    model: PerturbedModel,
    spec: ObjectiveSpec,
    D: Dataset,
    z: DataPoint,
    direction: Direction,
    hess_z=None,
    grad_z=None,
) -> ExPostPdpLoss:
    """Ex-post pDP through the eigen-decomposed per-point Hessian.

    ``hess_z`` and ``grad_z`` default to the GLM values at the model output.
    """
    _require_member(D, z, direction)
    theta = model.theta_hat
    t = float(z.x @ theta)
    if hess_z is None:
        hess_z = float(spec.loss.d2f(t, z.y)) * np.outer(z.x, z.x)
    if grad_z is None:
        grad_z = float(spec.loss.df(t, z.y)) * z.x
    H_D = objective_hessian(spec, D, theta)
    return expost_pdp_from_parts(H_D, -model.b, grad_z, hess_z, model.sigma, direction)


# Gaussian mechanism


def gaussian_expost_pdp(query: GaussianQuery, o) -> float:
    o = np.atleast_1d(np.asarray(o, dtype=float))
    if o.shape != query.q_of_d.shape:
        raise DimensionMismatch(f"output {o.shape} vs query {query.q_of_d.shape}")
    dv = query.sensitivity_vec
    dd = float(dv @ dv)
    if query.sigma == 0:
        if dd == 0:
            return 0.0
        raise InfinitePrivacyLoss("noiseless release of a query that depends on z")
    s2 = query.sigma**2
    return abs(dd / (2 * s2) - float(dv @ (o - query.q_of_d)) / s2)


def _gaussian_bound(delta_norm: float, sigma: float, quantile: float) -> float:
    if delta_norm == 0:
        return 0.0
    if sigma == 0:
        raise InfinitePrivacyLoss("noiseless release of a query that depends on z")
    return delta_norm**2 / (2 * sigma**2) + delta_norm * quantile / sigma


def gaussian_pdp_bound(query: GaussianQuery, delta: float, form: str = "exact") -> float:
    """pDP at tail mass ``delta``: ``|D|^2/(2 s^2) + |D| q/s``.

    ``q`` is ``Phi^{-1}(1-delta)``, or ``sqrt(2 log(1/delta))`` with ``form="loose"``.
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if form == "exact":
        q = float(norm.isf(delta))
    elif form == "loose":
        q = math.sqrt(2 * math.log(1 / delta))
    else:
        raise ValueError(f"unknown quantile form {form!r}")
    return _gaussian_bound(query.delta_norm, query.sigma, q)


def two_sided_quantile(rho: float, form: str = "exact") -> float:
    """``Phi^{-1}(1 - rho/2)``, or its ``sqrt(2 log(2/rho))`` upper bound."""
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    if form == "exact":
        return float(norm.isf(rho / 2))
    if form == "loose":
        return math.sqrt(2 * math.log(2 / rho))
    raise ValueError(f"unknown quantile form {form!r}")


def gaussian_expost_highprob(query: GaussianQuery, rho: float, form: str = "exact") -> float:
    """Bound on the ex-post loss that holds with probability at least 1 - rho."""
    return _gaussian_bound(query.delta_norm, query.sigma, two_sided_quantile(rho, form))


# Data-independent bounds


def data_indep_leverage_bound(
    loss: GlmLoss,
    lam: float,
    z: DataPoint | None = None,
    theta_hat=None,
    general_eigs=None,
) -> float:
    """Upper bound on the leverage term that uses only lambda and the point."""
    if general_eigs is not None:
        eigs = [float(e) for e in general_eigs]
    else:
        t = float(z.x @ np.asarray(theta_hat, dtype=float))
        eigs = [float(loss.d2f(t, z.y)) * float(z.x @ z.x)]
    total = 0.0
    for e in eigs:
        if e / lam >= 1:
            raise BoundDomain(f"per-point curvature {e:.3e} is not below lambda = {lam:.3e}")
        total -= math.log1p(-e / lam)
    return total


def data_indep_cross_bound(
    loss: GlmLoss,
    sigma: float,
    z: DataPoint,
    theta_hat,
    rho: float,
    form: str = "glm",
) -> float:
    """High-probability bound on ``|grad J . grad l(z)|`` over the noise draw."""
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    t = float(z.x @ np.asarray(theta_hat, dtype=float))
    fp = float(loss.df(t, z.y))
    if form == "glm":
        return abs(fp) * sigma * float(np.linalg.norm(z.x)) * math.sqrt(2 * math.log(2 / rho))
    if form == "general_l1":
        return sigma * math.sqrt(2 * math.log(2 * z.d / rho)) * abs(fp) * float(np.sum(np.abs(z.x)))
    raise ValueError(f"unknown form {form!r}")


def data_indep_pdp_bound(
    loss: GlmLoss,
    lam: float,
    sigma: float,
    z: DataPoint,
    theta_hat,
    rho: float,
) -> float:
    """All three terms bounded without touching the dataset."""
    t = float(z.x @ np.asarray(theta_hat, dtype=float))
    gz = float(loss.df(t, z.y)) * z.x
    lev = data_indep_leverage_bound(loss, lam, z, theta_hat)
    cross = data_indep_cross_bound(loss, sigma, z, theta_hat, rho)
    return lev + float(gz @ gz) / (2 * sigma**2) + cross / sigma**2


def tailbound_to_dp(epsilon: float, delta: float) -> DpTarget:
    """Package a loss bound that holds with probability 1 - delta as (epsilon, delta).

    A privacy loss bounded by epsilon except on a delta-mass event gives
    (epsilon, delta) pDP in both directions for the pair it was computed on.
    """
    return DpTarget(float(epsilon), float(delta))
