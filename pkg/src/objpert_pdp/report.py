"""The publishable privacy report and its evaluation for a single individual.

A report holds only the model output, public parameters and noisy released
statistics. Evaluating it for a point ``z`` never touches the training data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .accounting import two_sided_quantile
from .errors import LambdaTooSmall, LogDomain
from .glm import DataPoint, Dataset, GlmLoss, ObjectiveSpec, objective_hessian
from .release import (
    TauValue,
    gp_pdp,
    pdp_of_hessian_release,
    pdp_of_lambda_min,
    release_gradient,
    release_hessian,
    release_lambda_min,
    resolve_tau,
)
from .solver import DpTarget, PerturbedModel, calibrate_gaussian_analytic

DATA_INDEP = "data_indep"
DATA_DEP = "data_dep"
ADAPTIVE = "adaptive"
MODES = (DATA_INDEP, DATA_DEP, ADAPTIVE)

MU_DATA_INDEP = "data_indep"
MU_STANDARD = "standard"
MU_REGULARIZED = "regularized"

POINTWISE = "pointwise"
DATASET = "dataset"
DOMAIN = "domain"


@dataclass(frozen=True)
class PrivacyReport:
    mode: str
    loss_kind: str
    theta_hat: np.ndarray
    sigma: float
    lam: float
    rho: float
    delta_release: float
    sigma2: float | None = None
    sigma3: float | None = None
    sigma4: float | None = None
    tau: TauValue | None = None
    h_hat: np.ndarray | None = None
    j_p: np.ndarray | None = None
    lambda_min_hat: float | None = None
    lambda_min_lower: float | None = None
    mu_bar_spec: str = MU_DATA_INDEP
    pad_scope: str = POINTWISE
    pad_size: int = 1

    @property
    def loss(self) -> GlmLoss:
        return GlmLoss(self.loss_kind)

    @property
    def d(self) -> int:
        return self.theta_hat.shape[0]

    @property
    def tau_sigma3(self) -> float:
        return self.tau.value * self.sigma3

    @cached_property
    def _factor(self):
        """Cholesky factor of the matrix whose inverse the active estimator uses."""
        if self.mu_bar_spec == MU_DATA_INDEP:
            return None
        M = self.h_hat
        if self.mu_bar_spec == MU_REGULARIZED:
            M = M + self.tau_sigma3 * np.eye(self.d)
        try:
            return cho_factor(M)
        except LinAlgError:
            return None

    def mu_bar(self, x: np.ndarray) -> float:
        """Upper bound on the leverage score of ``x``."""
        sq = float(x @ x)
        if self.mu_bar_spec == MU_DATA_INDEP:
            return sq / self.lam
        floor = self.lam if self.mode == DATA_DEP else self.lambda_min_lower
        fac = self._factor
        if fac is None:
            # released matrix is not positive definite; only the eigenvalue floor is usable
            return sq / floor
        quad = float(x @ cho_solve(fac, x))
        if self.mode == DATA_DEP:
            return 1.5 * quad
        lc = self.lambda_min_lower
        if self.mu_bar_spec == MU_STANDARD:
            scale = (lc + self.tau_sigma3) / lc
        else:
            scale = (lc + 2 * self.tau_sigma3) / lc
        return min(scale * quad, sq / lc)

    def pad_factor(self, grad_z: np.ndarray) -> float:
        """Per-unit-noise confidence pad for ``|noise . grad_z|``."""
        if self.pad_scope == POINTWISE:
            return float(np.linalg.norm(grad_z)) * two_sided_quantile(self.rho)
        if self.pad_scope == DATASET:
            return float(np.linalg.norm(grad_z)) * math.sqrt(2 * math.log(self.pad_size / self.rho))
        return float(np.sum(np.abs(grad_z))) * math.sqrt(2 * math.log(2 * self.pad_size / self.rho))

    def to_dict(self) -> dict:
        def vec(a):
            return None if a is None else [float(v) for v in np.ravel(a)]

        return {
            "mode": self.mode,
            "loss_kind": self.loss_kind,
            "theta_hat": vec(self.theta_hat),
            "sigma": self.sigma,
            "sigma2": self.sigma2,
            "sigma3": self.sigma3,
            "sigma4": self.sigma4,
            "lambda": self.lam,
            "rho": self.rho,
            "delta_release": self.delta_release,
            "tau": None if self.tau is None else self.tau.to_dict(),
            "h_hat": vec(self.h_hat),
            "j_p": vec(self.j_p),
            "lambda_min_hat": self.lambda_min_hat,
            "lambda_min_lower": self.lambda_min_lower,
            "mu_bar_spec": self.mu_bar_spec,
            "pad": {"scope": self.pad_scope, "size": self.pad_size},
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "PrivacyReport":
        theta = np.asarray(rec["theta_hat"], dtype=float)
        d = theta.shape[0]
        h_hat = rec.get("h_hat")
        j_p = rec.get("j_p")
        pad = rec.get("pad", {"scope": POINTWISE, "size": 1})
        return cls(
            mode=rec["mode"],
            loss_kind=rec["loss_kind"],
            theta_hat=theta,
            sigma=float(rec["sigma"]),
            lam=float(rec["lambda"]),
            rho=float(rec["rho"]),
            delta_release=float(rec.get("delta_release", rec["rho"])),
            sigma2=rec.get("sigma2"),
            sigma3=rec.get("sigma3"),
            sigma4=rec.get("sigma4"),
            tau=None if rec.get("tau") is None else TauValue.from_dict(rec["tau"]),
            h_hat=None if h_hat is None else np.asarray(h_hat, dtype=float).reshape(d, d),
            j_p=None if j_p is None else np.asarray(j_p, dtype=float),
            lambda_min_hat=rec.get("lambda_min_hat"),
            lambda_min_lower=rec.get("lambda_min_lower"),
            mu_bar_spec=rec.get("mu_bar_spec", MU_DATA_INDEP),
            pad_scope=pad["scope"],
            pad_size=int(pad["size"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PrivacyReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ReportEvaluation:
    eps1_bar: float
    eps2: float
    eps3: float
    eps4: float
    term1: float
    term2: float
    term3: float
    mu_bar: float = field(default=0.0, compare=False)


def build_report(
    model: PerturbedModel,
    spec: ObjectiveSpec,
    D: Dataset,
    mode: str,
    rho: float,
    rng: np.random.Generator | None = None,
    sigma2: float | None = None,
    sigma3: float | None = None,
    sigma4: float | None = None,
    tau: TauValue | str = "auto",
    tau_file: str | Path | None = None,
    delta_release: float | None = None,
) -> PrivacyReport:
    """Release what the chosen mode needs and freeze it into a report.

    Random draws happen in the order Hessian, gradient, smallest eigenvalue.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    base = PrivacyReport(
        mode=mode,
        loss_kind=spec.loss.kind,
        theta_hat=np.array(model.theta_hat, dtype=float),
        sigma=model.sigma,
        lam=spec.lam,
        rho=rho,
        delta_release=rho if delta_release is None else delta_release,
    )
    if mode == DATA_INDEP:
        return base

    for name, val in (("sigma2", sigma2), ("sigma3", sigma3)):
        if val is None or val < 0:
            raise ValueError(f"{name} must be given and non-negative in {mode} mode")
    if mode == ADAPTIVE and (sigma4 is None or sigma4 < 0):
        raise ValueError("sigma4 must be given and non-negative in adaptive mode")
    if rng is None:
        raise ValueError(f"{mode} mode draws noise and needs an rng")
    if not isinstance(tau, TauValue):
        tau = resolve_tau(D.d, rho, tau, tau_file)
    if mode == DATA_DEP and spec.lam < 2 * sigma3 * tau.value:
        raise LambdaTooSmall(
            f"lambda = {spec.lam:.4g} is below 2 sigma3 tau = {2 * sigma3 * tau.value:.4g}"
        )

    H = objective_hessian(spec, D, model.theta_hat)
    rel_h = release_hessian(H, sigma3, rho, rng, tau)
    rel_g = release_gradient(model, spec, D, sigma2, rng)
    out = replace(
        base,
        sigma2=float(sigma2),
        sigma3=float(sigma3),
        tau=tau,
        h_hat=rel_h.h_hat,
        j_p=rel_g.j_p,
        mu_bar_spec=MU_STANDARD,
    )
    if mode == DATA_DEP:
        return out
    rel_l = release_lambda_min(H, sigma4, rng, rho, spec.lam)
    branch = MU_STANDARD if rel_l.lower_conf >= 2 * tau.value * sigma3 else MU_REGULARIZED
    return replace(
        out,
        sigma4=float(sigma4),
        lambda_min_hat=rel_l.value,
        lambda_min_lower=rel_l.lower_conf,
        mu_bar_spec=branch,
    )


def evaluate_report(report: PrivacyReport, z: DataPoint) -> ReportEvaluation:
    loss = report.loss
    x = z.x
    t = float(x @ report.theta_hat)
    fp = float(loss.df(t, z.y))
    fpp = float(loss.d2f(t, z.y))
    grad_z = fp * x
    gnorm = float(np.linalg.norm(grad_z))

    mu_bar = report.mu_bar(x)
    a = fpp * mu_bar
    if a >= 1:
        raise LogDomain(f"f'' * mu_bar = {a:.4g} >= 1; the leverage bound is undefined")
    term1 = abs(-math.log1p(-a))
    term2 = gnorm**2 / (2 * report.sigma**2)

    pad = report.pad_factor(grad_z)
    g_bar = report.sigma * pad
    if report.mode != DATA_INDEP:
        g_hat = float(report.j_p @ grad_z)
        g_bar = min(abs(g_hat) + report.sigma2 * pad, g_bar)
    term3 = g_bar / report.sigma**2

    eps2 = eps3 = eps4 = 0.0
    if report.mode != DATA_INDEP:
        delta = report.delta_release
        eps2 = gp_pdp(gnorm, report.sigma2, delta, "pdp")
        eps3 = pdp_of_hessian_release(fpp * float(x @ x), report.sigma3, delta)
        if report.mode == ADAPTIVE:
            eps4 = pdp_of_lambda_min(fpp * float(x @ x), report.sigma4, delta)
    return ReportEvaluation(term1 + term2 + term3, eps2, eps3, eps4, term1, term2, term3, mu_bar)


def uniform_report_pad(report: PrivacyReport, scope: str, size: int) -> PrivacyReport:
    """Widen the cross-term pad so it holds for all ``size`` users (or all of a ``size``-dim domain) at once."""
    if scope not in (DATASET, DOMAIN):
        raise ValueError(f"scope must be {DATASET!r} or {DOMAIN!r}")
    if size < 1:
        raise ValueError("size must be at least 1")
    return replace(report, pad_scope=scope, pad_size=int(size))


def report_total_dp(
    report: PrivacyReport, xi: float, beta: float, delta: float
) -> DpTarget:
    """Worst-case (epsilon, delta) of building the report, all releases composed.

    Each release is a Gaussian mechanism, so the composition is a single
    Gaussian mechanism whose squared sensitivity-to-noise ratio is the sum.
    """
    ratio2 = 0.0
    if report.mode != DATA_INDEP:
        ratio2 += xi**2 / report.sigma2**2 + beta**2 / (2 * report.sigma3**2)
    if report.mode == ADAPTIVE:
        ratio2 += beta**2 / report.sigma4**2
    return DpTarget(total_gaussian_epsilon(ratio2, delta), delta)


def total_gaussian_epsilon(ratio2: float, delta: float) -> float:
    """``r^2/2 + r sqrt(2 log(1/delta))`` for a composed sensitivity-to-noise ratio ``r``."""
    return ratio2 / 2 + math.sqrt(ratio2) * math.sqrt(2 * math.log(1 / delta))


def release_noise_for_budget(
    loss: GlmLoss, eps2: float, eps3: float, delta: float, eps4: float | None = None
) -> dict:
    """Noise scales giving each release its own worst-case (eps_k, delta) budget.

    Sensitivities: gradient ``xi``, GOE Hessian ``beta / sqrt(2)``, smallest eigenvalue ``beta``.
    """
    out = {
        "sigma2": calibrate_gaussian_analytic(loss.xi, DpTarget(eps2, delta)),
        "sigma3": calibrate_gaussian_analytic(loss.beta / math.sqrt(2), DpTarget(eps3, delta)),
    }
    if eps4 is not None:
        out["sigma4"] = calibrate_gaussian_analytic(loss.beta, DpTarget(eps4, delta))
    return out
