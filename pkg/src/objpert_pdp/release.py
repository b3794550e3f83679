"""Noisy releases of Hessian, smallest eigenvalue and gradient, and GOE quantiles.

GOE(d, s) here is ``(Z + Z^T) / sqrt(2)`` with ``Z`` i.i.d. N(0, s^2), so the
diagonal has variance ``2 s^2`` and the off-diagonal ``s^2``.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.stats import binom, norm

from .errors import DimensionMismatch, InfinitePrivacyLoss, MonteCarloTailTooDeep
from .glm import DataPoint, Dataset, GlmLoss, ObjectiveSpec, objective_grad
from .solver import PerturbedModel

MC_SAMPLES = 200_000
MC_SEED = 20_240_611
MC_CONFIDENCE = 0.99
_MC_CHUNK = 25_000
ASYMPTOTIC_C = 1.0
ASYMPTOTIC_SMALL_C = 1.0

# GOE normalizations a tau table entry may be stated in. "half_variance" is
# (A + A^T)/2 with A i.i.d. N(0, 1): off-diagonal variance 1/2, which is
# 1/sqrt(2) times the unit GOE used for the releases.
_NORMALIZATION_SCALE = {"unit": 1.0, "half_variance": math.sqrt(2.0)}


@dataclass(frozen=True)
class GoeMatrix:
    d: int
    sigma: float
    entries: np.ndarray


@dataclass(frozen=True)
class TauValue:
    value: float
    method: str
    certified: bool = True
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "method": self.method,
            "certified": self.certified,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, rec: dict) -> "TauValue":
        return cls(
            float(rec["value"]),
            rec["method"],
            bool(rec.get("certified", True)),
            dict(rec.get("provenance", {})),
        )


@dataclass(frozen=True)
class ReleasedHessian:
    h_hat: np.ndarray
    sigma3: float
    tau: TauValue
    rho: float


@dataclass(frozen=True)
class ReleasedLambdaMin:
    value: float
    sigma4: float
    lower_conf: float


@dataclass(frozen=True)
class ReleasedGradient:
    j_p: np.ndarray
    sigma2: float

    def g_p(self, loss: GlmLoss, z: DataPoint, theta) -> float:
        """Noisy estimate of ``grad J . grad l(z)``."""
        fp = float(loss.df(float(z.x @ theta), z.y))
        return fp * float(self.j_p @ z.x)


def sample_goe(d: int, sigma: float, rng: np.random.Generator) -> GoeMatrix:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    Z = sigma * rng.standard_normal((d, d))
    upper = np.triu(Z + Z.T) / math.sqrt(2.0)
    G = upper + np.triu(upper, 1).T
    return GoeMatrix(d, float(sigma), G)


def sample_goe_batch(count: int, d: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """``count`` independent GOE draws stacked along axis 0."""
    Z = sigma * rng.standard_normal((count, d, d))
    return (Z + np.swapaxes(Z, 1, 2)) / math.sqrt(2.0)


def _gaussian_loose(sens: float, sigma: float, tail: float) -> float:
    """``sens^2/(2 s^2) + sens sqrt(2 log(1/tail)) / s``."""
    if sens == 0:
        return 0.0
    if sigma == 0:
        raise InfinitePrivacyLoss("noiseless release of a statistic that depends on z")
    return sens**2 / (2 * sigma**2) + sens * math.sqrt(2 * math.log(1 / tail)) / sigma


def release_hessian(
    H, sigma3: float, rho: float, rng: np.random.Generator, tau: TauValue | None = None
) -> ReleasedHessian:
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise DimensionMismatch(f"H must be square, got {H.shape}")
    if tau is None:
        tau = goe_quantile(H.shape[0], rho)
    G = sample_goe(H.shape[0], sigma3, rng).entries
    return ReleasedHessian(0.5 * (H + H.T) + G, float(sigma3), tau, float(rho))


def pdp_of_hessian_release(hx_frobenius: float, sigma3: float, delta: float) -> float:
    """pDP of the GOE Hessian release; the per-point sensitivity is ``||H_x||_F / sqrt(2)``."""
    return _gaussian_loose(hx_frobenius / math.sqrt(2.0), sigma3, delta)


def release_lambda_min(
    H, sigma4: float, rng: np.random.Generator, rho: float, lam: float
) -> ReleasedLambdaMin:
    """Noisy smallest eigenvalue with a (1 - rho/2) lower confidence bound floored at ``lam``."""
    lmin = float(np.linalg.eigvalsh(np.asarray(H, dtype=float))[0])
    value = lmin + sigma4 * float(rng.standard_normal())
    lower = max(lam, value - sigma4 * float(norm.isf(rho / 2)))
    return ReleasedLambdaMin(value, float(sigma4), lower)


def pdp_of_lambda_min(f2norm: float, sigma4: float, delta: float) -> float:
    return _gaussian_loose(f2norm, sigma4, delta)


def release_gradient(
    model: PerturbedModel, spec: ObjectiveSpec, D: Dataset, sigma2: float, rng: np.random.Generator
) -> ReleasedGradient:
    grad_J = objective_grad(spec, D, model.theta_hat, np.zeros(D.d))
    e = sigma2 * rng.standard_normal(D.d)
    return ReleasedGradient(grad_J + e, float(sigma2))


def gp_pdp(gradnorm: float, sigma2: float, delta_or_rho: float, mode: str = "pdp") -> float:
    """pDP of the gradient release. ``expost`` mode uses the two-sided ``2/rho`` tail."""
    if mode == "pdp":
        tail = delta_or_rho
    elif mode == "expost":
        tail = delta_or_rho / 2
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return _gaussian_loose(gradnorm, sigma2, tail)


# Largest eigenvalue of the unit GOE


def _top_eigs_tridiagonal(diag: np.ndarray, off: np.ndarray, iters: int = 46) -> np.ndarray:
    """Largest eigenvalue of many symmetric tridiagonal matrices by Sturm bisection.

    ``diag`` is (d, N) and ``off`` is (d - 1, N); columns are matrices.
    ``lambda_max < x`` exactly when every pivot of the LDL^T of ``T - x I`` is negative.
    """
    d = diag.shape[0]
    absoff = np.abs(off)
    radius = np.zeros_like(diag)
    radius[:-1] += absoff
    radius[1:] += absoff
    hi = np.max(diag + radius, axis=0)
    lo = np.max(diag, axis=0)
    off2 = off**2
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            q = diag[0] - mid
            all_neg = q < 0
            for i in range(1, d):
                # an exact zero pivot gives an infinite quotient, which is the right limit
                q = diag[i] - mid - off2[i - 1] / q
                all_neg &= q < 0
            hi = np.where(all_neg, mid, hi)
            lo = np.where(all_neg, lo, mid)
    return 0.5 * (lo + hi)


def sample_goe_top_eigs(count: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Largest eigenvalues of ``count`` unit GOE(d) draws.

    Uses the tridiagonal model with the same spectrum: diagonal N(0, 2) and
    off-diagonal chi with d-1, ..., 1 degrees of freedom.
    """
    diag = math.sqrt(2.0) * rng.standard_normal((d, count))
    if d == 1:
        return diag[0]
    dof = np.arange(d - 1, 0, -1, dtype=float)[:, None]
    off = np.sqrt(rng.chisquare(np.broadcast_to(dof, (d - 1, count))))
    return _top_eigs_tridiagonal(diag, off)


def sample_goe_top_eigs_dense(count: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """Reference sampler: full eigen-decomposition of explicit GOE matrices."""
    return np.linalg.eigvalsh(sample_goe_batch(count, d, 1.0, rng))[:, -1]


@lru_cache(maxsize=64)
def _mc_top_eigs(d: int, n_samples: int, seed: int) -> np.ndarray:
    # Fixed chunking with one spawned stream per chunk keeps the result
    # independent of how many threads run them.
    sizes = [min(_MC_CHUNK, n_samples - s) for s in range(0, n_samples, _MC_CHUNK)]
    streams = np.random.SeedSequence([seed, d]).spawn(len(sizes))

    def run(i: int) -> np.ndarray:
        return sample_goe_top_eigs(sizes[i], d, np.random.default_rng(streams[i]))

    workers = max(1, min(len(sizes), os.cpu_count() or 1, 8))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        chunks = list(pool.map(run, range(len(sizes))))
    out = np.sort(np.concatenate(chunks))
    out.setflags(write=False)
    return out


def goe_quantile(
    d: int,
    rho: float,
    method: str = "monte_carlo",
    n_samples: int = MC_SAMPLES,
    seed: int = MC_SEED,
    tau: float | None = None,
) -> TauValue:
    """A value ``tau`` with ``P(lambda_1(GOE(d)) > tau) <= rho / 2``.

    ``monte_carlo`` returns a 99% upper confidence bound on the
    (1 - rho/2)-quantile, read off as an order statistic.
    """
    if not 0 < rho < 1:
        raise ValueError("rho must lie in (0, 1)")
    if method == "external":
        if tau is None or not tau > 0:
            raise ValueError("external method needs a positive tau")
        return TauValue(float(tau), "external", True, {"d": d, "rho": rho})
    if method == "asymptotic":
        t = (math.log(ASYMPTOTIC_C / rho) / (ASYMPTOTIC_SMALL_C * d)) ** (2.0 / 3.0)
        value = math.sqrt(2.0) * (2.0 + t) * math.sqrt(d)
        return TauValue(
            value,
            "asymptotic",
            False,
            {"note": "heuristic, not a certified bound", "C": ASYMPTOTIC_C, "c": ASYMPTOTIC_SMALL_C},
        )
    if method != "monte_carlo":
        raise ValueError(f"unknown method {method!r}")
    if rho / 2 < 10 / n_samples:
        raise MonteCarloTailTooDeep(
            f"tail rho/2 = {rho / 2:.3g} is below 10/N = {10 / n_samples:.3g}; "
            "supply an external tau (tau table) or more samples"
        )
    tops = _mc_top_eigs(d, n_samples, seed)
    p = 1 - rho / 2
    k = min(int(binom.ppf(MC_CONFIDENCE, n_samples, p)), n_samples - 1)
    return TauValue(
        float(tops[k]),
        "monte_carlo",
        True,
        {
            "samples": n_samples,
            "seed": seed,
            "order_statistic": k,
            "empirical_quantile": float(np.quantile(tops, p)),
            "confidence": MC_CONFIDENCE,
        },
    )


# Tau tables


def _default_table_text() -> str:
    return resources.files("objpert_pdp").joinpath("data/tau_table.json").read_text()


def load_tau_table(path: str | Path | None = None) -> list[dict]:
    text = _default_table_text() if path is None else Path(path).read_text()
    entries = json.loads(text)
    if isinstance(entries, dict):
        entries = [entries]
    for e in entries:
        for key in ("d", "rho", "tau"):
            if key not in e:
                raise ValueError(f"tau table entry missing {key!r}: {e}")
    return entries


def lookup_tau(d: int, rho: float, path: str | Path | None = None) -> TauValue | None:
    """Tau for the unit GOE from a table entry with this ``d`` and a tail at least as deep.

    Entries stated for another GOE normalization are rescaled.
    """
    best = None
    for e in load_tau_table(path):
        if int(e["d"]) != d or float(e["rho"]) > rho:
            continue
        if best is None or float(e["rho"]) > float(best["rho"]):
            best = e
    if best is None:
        return None
    norm_name = best.get("normalization", "unit")
    value = float(best["tau"]) * _NORMALIZATION_SCALE[norm_name]
    return TauValue(
        value,
        "external",
        True,
        {
            "table_tau": float(best["tau"]),
            "table_rho": float(best["rho"]),
            "normalization": norm_name,
            "source": best.get("provenance", ""),
        },
    )


def resolve_tau(d: int, rho: float, source: str = "auto", tau_file: str | Path | None = None) -> TauValue:
    """Pick tau by ``source``: auto, table, monte_carlo or asymptotic.

    ``auto`` tries the table, then Monte Carlo, and refuses rather than fall
    back to the uncertified asymptotic form.
    """
    if source in ("auto", "table"):
        hit = lookup_tau(d, rho, tau_file)
        if hit is not None:
            return hit
        if source == "table":
            raise MonteCarloTailTooDeep(f"no tau table entry for d={d} at rho<={rho}")
        return goe_quantile(d, rho, "monte_carlo")
    return goe_quantile(d, rho, source)
