"""Synthetic data, training pipeline and the experiment sweeps behind the CLI."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .accounting import data_indep_pdp_bound, expost_pdp_members
from .errors import LambdaTooSmall, MonteCarloTailTooDeep
from .glm import LOGISTIC, SQUARED, Dataset, GlmLoss, ObjectiveSpec, sigmoid
from .release import TauValue, resolve_tau
from .report import (
    DATA_DEP,
    DATA_INDEP,
    build_report,
    evaluate_report,
    release_noise_for_budget,
)
from .solver import DpTarget, PerturbedModel, calibrate_objpert, sample_noise, solve

INFLATIONS = (1.0, 2.0, 5.0, 10.0, 20.0)
BUDGET_SPLITS = ((0.2, 0.7, 0.1), (0.4, 0.5, 0.1), (0.5, 0.25, 0.25), (0.8, 0.1, 0.1))


@dataclass(frozen=True)
class ExperimentConfig:
    loss_kind: str = LOGISTIC
    n: int = 1000
    d: int = 20
    eps: tuple[float, float, float] = (1.0, 1.0, 1.0)
    delta: float = 1e-6
    rho: float = 1e-6
    inflation: float = 1.0
    seed: int = 0
    reps: int = 1
    n_test: int = 2000
    tau_source: str = "auto"
    tau_file: str | None = None
    values: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.n < 1 or self.d < 1:
            raise ValueError("n and d must be positive")
        if any(not e > 0 for e in self.eps):
            raise ValueError("privacy budgets must be positive")
        if not (0 < self.delta < 1 and 0 < self.rho < 1):
            raise ValueError("delta and rho must lie in (0, 1)")
        if not self.inflation > 0:
            raise ValueError("lambda inflation must be positive")


def generate(kind: str, n: int, d: int, rng: np.random.Generator, theta_star=None):
    """Synthetic rows with unit-norm features; returns ``(dataset, theta_star)``.

    ``logistic``: label 1 iff sigmoid(x . theta) > 0.5. ``linear``: x . theta
    affinely rescaled into [0, 1].
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be positive")
    X = rng.standard_normal((n, d))
    if theta_star is None:
        theta_star = rng.standard_normal(d)
    norms = np.linalg.norm(X, axis=1)
    norms[norms == 0] = 1.0
    X = X / norms[:, None]
    t = X @ theta_star
    if kind == "logistic":
        y = (sigmoid(t) > 0.5).astype(float)
    elif kind == "linear":
        span = float(np.max(t) - np.min(t))
        y = (t - np.min(t)) / span if span > 0 else np.zeros(n)
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    return Dataset(X, y), theta_star


def loss_for(kind: str) -> str:
    return SQUARED if kind == "linear" else kind


def train(
    D: Dataset,
    loss_kind: str,
    eps: float,
    delta: float,
    inflation: float,
    rng: np.random.Generator,
    seed: int | None = None,
    lam_floor: float = 0.0,
    sigma: float | None = None,
    lam: float | None = None,
) -> tuple[PerturbedModel, ObjectiveSpec]:
    """Calibrate, draw ``b`` and solve.

    ``lam = max(inflation * lam_required, lam_floor)`` unless given. At
    ``eps = inf`` there is no noise and the base lambda is the one for eps = 1.
    """
    loss = GlmLoss(loss_kind)
    meta = {"eps": eps, "delta": delta, "inflation": inflation}
    if sigma is None:
        if math.isinf(eps):
            sigma, lam_req = 0.0, 2 * loss.beta
        else:
            cal = calibrate_objpert(loss, DpTarget(eps, delta))
            sigma, lam_req = cal.sigma, cal.lam_required
            meta.update(sigma_formula_value=cal.formula_value, formula_reading=cal.reading)
        meta["lambda_required"] = lam_req
        if lam is None:
            lam = max(inflation * lam_req, lam_floor)
    elif lam is None:
        raise ValueError("an explicit sigma needs an explicit lambda")
    spec = ObjectiveSpec(loss, float(lam))
    b = sample_noise(D.d, sigma, rng)
    model = solve(spec, D, b, sigma=sigma, seed=seed)
    return replace(model, meta=meta), spec


def zero_one_loss(theta, D: Dataset) -> float:
    pred = (D.X @ theta > 0).astype(float)
    return float(np.mean(pred != D.y))


def report_noise(cfg: ExperimentConfig, eps2: float, eps3: float) -> dict:
    return release_noise_for_budget(GlmLoss(cfg.loss_kind), eps2, eps3, cfg.rho)


def report_lambda_floor(sigma3: float, tau: TauValue) -> float:
    return 2 * sigma3 * tau.value


def lambda_sweep(cfg: ExperimentConfig, inflations=INFLATIONS) -> list[dict]:
    """Holdout 0-1 loss against lambda inflation, averaged over repetitions.

    Repetitions share data and noise direction across inflations.
    """
    rows = []
    losses = {c: [] for c in inflations}
    lams = {}
    for rep in range(cfg.reps):
        data_rng = np.random.default_rng([cfg.seed, rep, 0])
        D_all, _ = generate("logistic", cfg.n + cfg.n_test, cfg.d, data_rng)
        D = Dataset(D_all.X[: cfg.n], D_all.y[: cfg.n])
        test = Dataset(D_all.X[cfg.n :], D_all.y[cfg.n :])
        for c in inflations:
            rng = np.random.default_rng([cfg.seed, rep, 1])
            model, spec = train(D, LOGISTIC, cfg.eps[0], cfg.delta, c, rng)
            lams[c] = spec.lam
            losses[c].append(zero_one_loss(model.theta_hat, test))
    for c in inflations:
        vals = np.array(losses[c])
        rows.append(
            {
                "inflation": c,
                "lambda": lams[c],
                "zero_one_loss": float(vals.mean()),
                "zero_one_std": float(vals.std()),
                "reps": cfg.reps,
            }
        )
    return rows


def _tau(cfg: ExperimentConfig, d: int) -> TauValue:
    return resolve_tau(d, cfg.rho, cfg.tau_source, cfg.tau_file)


def pdp_hist(cfg: ExperimentConfig) -> tuple[list[dict], dict]:
    """Per-member true ex-post pDP and the report bounds in both modes."""
    data_rng = np.random.default_rng([cfg.seed, 0])
    D, _ = generate(_gen_kind(cfg), cfg.n, cfg.d, data_rng)
    eps1, eps2, eps3 = cfg.eps
    summary: dict = {"worst_case_eps": eps1, "n": cfg.n, "d": cfg.d}
    noise = report_noise(cfg, eps2, eps3)
    floor = 0.0
    tau = None
    try:
        tau = _tau(cfg, D.d)
        floor = report_lambda_floor(noise["sigma3"], tau)
    except MonteCarloTailTooDeep as exc:
        summary["data_dep_skipped"] = str(exc)
    model, spec = train(
        D, cfg.loss_kind, eps1, cfg.delta, cfg.inflation, np.random.default_rng([cfg.seed, 1]), lam_floor=floor
    )
    summary["lambda"] = spec.lam
    true_eps = expost_pdp_members(model, spec, D)
    indep = build_report(model, spec, D, DATA_INDEP, cfg.rho)
    dep = None
    if tau is not None:
        try:
            dep = build_report(
                model, spec, D, DATA_DEP, cfg.rho, np.random.default_rng([cfg.seed, 2]),
                sigma2=noise["sigma2"], sigma3=noise["sigma3"], tau=tau,
            )
        except LambdaTooSmall as exc:
            summary["data_dep_skipped"] = str(exc)
    rows = []
    for i in range(D.n):
        z = D.point(i)
        ev = evaluate_report(indep, z)
        row = {"idx": i, "eps1_true": float(true_eps[i]), "eps1_bar_indep": ev.eps1_bar}
        if dep is not None:
            evd = evaluate_report(dep, z)
            row.update(eps1_bar_dep=evd.eps1_bar, eps2=evd.eps2, eps3=evd.eps3)
        rows.append(row)
    summary["max_eps1_true"] = float(np.max(true_eps))
    summary["median_eps1_true"] = float(np.median(true_eps))
    summary["max_eps1_bar_indep"] = max(r["eps1_bar_indep"] for r in rows)
    if dep is not None:
        summary["max_eps1_bar_dep"] = max(r["eps1_bar_dep"] for r in rows)
    return rows, summary


def _gen_kind(cfg: ExperimentConfig) -> str:
    return "linear" if cfg.loss_kind == SQUARED else "logistic"


def budget_sweep(cfg: ExperimentConfig, splits=BUDGET_SPLITS) -> list[dict]:
    """Data-independent report with the whole budget on the model against
    data-dependent reports that split the same total budget.

    Tightness is measured by the ratio of the released bound to the true loss.
    """
    data_rng = np.random.default_rng([cfg.seed, 0])
    D, _ = generate("logistic", cfg.n, cfg.d, data_rng)
    tau = _tau(cfg, D.d)
    rows = []
    configs = [("data_indep", (sum(splits[0]), 0.0, 0.0))] + [("data_dep", s) for s in splits]
    for mode, (e1, e2, e3) in configs:
        rng = np.random.default_rng([cfg.seed, 1])
        floor, noise = 0.0, {}
        if mode == "data_dep":
            noise = report_noise(cfg, e2, e3)
            floor = report_lambda_floor(noise["sigma3"], tau)
        model, spec = train(D, LOGISTIC, e1, cfg.delta, cfg.inflation, rng, lam_floor=floor)
        true_eps = expost_pdp_members(model, spec, D)
        report = build_report(
            model, spec, D, mode, cfg.rho, np.random.default_rng([cfg.seed, 2]),
            sigma2=noise.get("sigma2"), sigma3=noise.get("sigma3"), tau=tau,
        )
        evs = [evaluate_report(report, D.point(i)) for i in range(D.n)]
        bars = np.array([e.eps1_bar for e in evs])
        totals = np.array([e.eps1_bar + e.eps2 + e.eps3 for e in evs])
        ratio = bars / np.maximum(true_eps, 1e-300)
        rows.append(
            {
                "mode": mode,
                "eps1": e1,
                "eps2": e2,
                "eps3": e3,
                "lambda": spec.lam,
                "median_ratio": float(np.median(ratio)),
                "q90_ratio": float(np.quantile(ratio, 0.9)),
                "median_eps1_bar": float(np.median(bars)),
                "median_total": float(np.median(totals)),
                "median_eps1_true": float(np.median(true_eps)),
            }
        )
    return rows


def _vary(cfg: ExperimentConfig, key: str, values) -> list[dict]:
    rows = []
    for v in values:
        n, d = (v, cfg.d) if key == "n" else (cfg.n, v)
        D, _ = generate(_gen_kind(cfg), n, d, np.random.default_rng([cfg.seed, v, 0]))
        model, spec = train(
            D, cfg.loss_kind, cfg.eps[0], cfg.delta, cfg.inflation, np.random.default_rng([cfg.seed, v, 1])
        )
        true_eps = expost_pdp_members(model, spec, D)
        bounds = [
            data_indep_pdp_bound(spec.loss, spec.lam, model.sigma, D.point(i), model.theta_hat, cfg.rho)
            for i in range(D.n)
        ]
        rows.append(
            {
                key: v,
                "max_eps1_true": float(np.max(true_eps)),
                "max_data_indep_bound": float(np.max(bounds)),
                "worst_case_eps": cfg.eps[0],
            }
        )
    return rows


def vary_n(cfg: ExperimentConfig, values=(100, 300, 1000, 3000)) -> list[dict]:
    return _vary(cfg, "n", cfg.values or values)


def vary_d(cfg: ExperimentConfig, values=(2, 5, 10, 20, 50)) -> list[dict]:
    return _vary(cfg, "d", cfg.values or values)
