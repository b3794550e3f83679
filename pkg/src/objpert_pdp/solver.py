"""Objective perturbation: noise sampling, the Newton solver and calibration."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from scipy.special import log_ndtr, ndtr

from .errors import NonConvergence, NotPositiveDefinite, UnboundedGradient
from .glm import (
    Dataset,
    GlmLoss,
    ObjectiveSpec,
    objective_grad,
    objective_hessian,
    objective_value,
)

MAX_NEWTON_ITERS = 200
ARMIJO_C = 1e-4
ARMIJO_SHRINK = 0.5
POLISH_STEPS = 2


@dataclass(frozen=True)
class DpTarget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class PerturbedModel:
    theta_hat: np.ndarray
    b: np.ndarray
    sigma: float
    lam: float
    loss_kind: str
    grad_residual: float = 0.0
    iterations: int = 0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.theta_hat.shape[0]

    @property
    def spec(self) -> ObjectiveSpec:
        return ObjectiveSpec.of(self.loss_kind, self.lam)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["theta_hat"] = [float(v) for v in self.theta_hat]
        out["b"] = [float(v) for v in self.b]
        out["lambda"] = out.pop("lam")
        return out

    @classmethod
    def from_dict(cls, rec: dict) -> "PerturbedModel":
        return cls(
            theta_hat=np.asarray(rec["theta_hat"], dtype=float),
            b=np.asarray(rec["b"], dtype=float),
            sigma=float(rec["sigma"]),
            lam=float(rec["lambda"]),
            loss_kind=rec["loss_kind"],
            grad_residual=float(rec.get("grad_residual", 0.0)),
            iterations=int(rec.get("iterations", 0)),
            seed=rec.get("seed"),
            meta=dict(rec.get("meta", {})),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PerturbedModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def sample_noise(d: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return sigma * rng.standard_normal(d)


def _newton_step(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    try:
        return -cho_solve(cho_factor(H), g)
    except LinAlgError as exc:
        raise NotPositiveDefinite("objective Hessian is not positive definite") from exc


def solve(
    spec: ObjectiveSpec,
    D: Dataset,
    b,
    sigma: float = 0.0,
    theta0=None,
    seed: int | None = None,
) -> PerturbedModel:
    """Minimize ``J(theta; D) + b . theta`` by damped Newton iterations."""
    b = np.asarray(b, dtype=float).reshape(-1)
    theta = np.zeros(D.d) if theta0 is None else np.array(theta0, dtype=float)
    tol = 1e-9 * max(1, D.n)

    value = objective_value(spec, D, theta, b)
    g = objective_grad(spec, D, theta, b)
    it = 0
    while np.max(np.abs(g), initial=0.0) > tol:
        if it >= MAX_NEWTON_ITERS:
            raise NonConvergence(
                f"gradient residual {np.max(np.abs(g)):.3e} after {it} Newton iterations"
            )
        it += 1
        step = _newton_step(objective_hessian(spec, D, theta), g)
        slope = float(g @ step)
        # Near the optimum the decrease drops under rounding noise, so allow for it.
        slack = 1e-13 * (1.0 + abs(value))
        alpha = 1.0
        while True:
            cand = theta + alpha * step
            cand_value = objective_value(spec, D, cand, b)
            if cand_value <= value + ARMIJO_C * alpha * slope + slack:
                break
            alpha *= ARMIJO_SHRINK
            if alpha < 1e-12:
                raise NonConvergence("line search failed to find a decrease")
        theta, value = cand, cand_value
        g = objective_grad(spec, D, theta, b)

    # Full steps are safe inside the tolerance region; two more reach rounding level.
    for _ in range(POLISH_STEPS):
        gnorm = np.max(np.abs(g), initial=0.0)
        if gnorm == 0:
            break
        cand = theta + _newton_step(objective_hessian(spec, D, theta), g)
        g_cand = objective_grad(spec, D, cand, b)
        if np.max(np.abs(g_cand), initial=0.0) >= gnorm:
            break
        theta, g = cand, g_cand
        it += 1

    return PerturbedModel(
        theta_hat=theta,
        b=b,
        sigma=float(sigma),
        lam=spec.lam,
        loss_kind=spec.loss.kind,
        grad_residual=float(np.max(np.abs(g), initial=0.0)),
        iterations=it,
        seed=seed,
    )


def noise_for_output(spec: ObjectiveSpec, D: Dataset, theta) -> np.ndarray:
    """The unique ``b`` that makes ``theta`` the minimizer on ``D``."""
    return -objective_grad(spec, D, theta, np.zeros(D.d))


def model_at(spec: ObjectiveSpec, D: Dataset, theta, sigma: float) -> PerturbedModel:
    """Wrap ``theta`` as an exact solver output on ``D``."""
    theta = np.array(theta, dtype=float)
    return PerturbedModel(
        theta_hat=theta,
        b=noise_for_output(spec, D, theta),
        sigma=float(sigma),
        lam=spec.lam,
        loss_kind=spec.loss.kind,
    )


class ObjPertCalibration(NamedTuple):
    sigma: float
    lam_required: float
    formula_value: float
    reading: str


def calibrate_objpert(
    loss: GlmLoss, target: DpTarget, formula_is_variance: bool = True
) -> ObjPertCalibration:
    """Noise scale and minimum ridge for an (epsilon, delta)-DP release.

    The closed form ``xi^2 (8 log(2/delta) + 4 eps) / eps^2`` is read as a
    variance by default; ``formula_is_variance=False`` uses it as the
    standard deviation instead.
    """
    if not math.isfinite(loss.xi):
        raise UnboundedGradient(
            f"{loss.kind} loss has no finite gradient bound; worst-case DP is unattainable"
        )
    eps, delta = target.epsilon, target.delta
    if eps <= 0:
        raise ValueError("epsilon must be positive for calibration")
    value = loss.xi**2 * (8.0 * math.log(2.0 / delta) + 4.0 * eps) / eps**2
    if formula_is_variance:
        sigma, reading = math.sqrt(value), "variance"
    else:
        sigma, reading = value, "std"
    return ObjPertCalibration(sigma, 2.0 * loss.beta / eps, value, reading)


def analytic_gaussian_delta(sigma: float, sensitivity: float, epsilon: float) -> float:
    """Smallest delta the Gaussian mechanism meets at this epsilon."""
    a = sensitivity / (2.0 * sigma)
    c = epsilon * sigma / sensitivity
    return float(ndtr(a - c) - math.exp(epsilon + log_ndtr(-a - c)))


def calibrate_gaussian_analytic(sensitivity: float, target: DpTarget) -> float:
    """Minimal Gaussian noise scale meeting ``target`` exactly, by bisection."""
    if not sensitivity > 0:
        raise ValueError("sensitivity must be positive")
    eps, delta = target.epsilon, target.delta

    def excess(s: float) -> float:
        return analytic_gaussian_delta(s, sensitivity, eps) - delta

    lo = hi = sensitivity
    while excess(hi) > 0:
        hi *= 2.0
    while excess(lo) <= 0 and lo > 1e-300:
        lo *= 0.5
    f_lo, f_hi = excess(lo), excess(hi)
    # well under the 1e-9 relative width needed for scale checks
    while hi - lo > 1e-13 * hi:
        mid = 0.5 * (lo + hi)
        f_mid = excess(mid)
        assert f_lo + 1e-15 >= f_mid >= f_hi - 1e-15, "delta(sigma) is not monotone"
        if f_mid > 0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    return hi
