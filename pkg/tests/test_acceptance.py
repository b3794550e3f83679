"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

Run directly (``python tests/test_acceptance.py``) or under pytest, where the
lines are collected into the terminal summary.
"""

import math
import sys
import time

import numpy as np

from objpert_pdp.accounting import Direction, expost_pdp_glm
from objpert_pdp.experiments import ExperimentConfig, generate, lambda_sweep, pdp_hist, train
from objpert_pdp.glm import GlmLoss
from objpert_pdp.oracle import privacy_risk_demo
from objpert_pdp.release import goe_quantile, sample_goe, sample_goe_batch
from objpert_pdp.report import DATA_DEP, build_report, evaluate_report, release_noise_for_budget
from objpert_pdp.solver import DpTarget, calibrate_objpert
from objpert_pdp import suites

RESULTS: dict[int, tuple[bool, str]] = {}


def record(num: int, ok: bool, detail: str) -> None:
    prev = RESULTS.get(num)
    if prev is not None:
        ok, detail = prev[0] and ok, f"{prev[1]}; {detail}"
    RESULTS[num] = (ok, detail)


def binomial_floor(rho, trials):
    return 1 - 3 * rho - 3 * math.sqrt(rho * (1 - rho) / trials)


def test_criterion_1_oracle_equivalence():
    t = time.perf_counter()
    res = suites.logodds_suite(seed=0, instances=200)
    secs = time.perf_counter() - t
    ok = res.passed and secs < 10
    d = res.detail
    record(1, ok, f"max |glm-oracle|={d['glm']:.1e}, |general-oracle|={max(d['general_glm'], d['general_rank3']):.1e}, {secs:.1f}s")
    assert ok


def test_criterion_2_determinant_identity():
    res = suites.det_suite(seed=0, instances=100)
    record(2, res.passed, f"max relative residual {res.residual:.1e} over 100 instances")
    assert res.passed


def test_criterion_3_gaussian_coverage():
    rate, ok, gap = suites.gaussian_coverage(seed=0, draws=100_000, rho=0.05)
    record(3, ok, f"violation rate {rate:.4f} at rho=0.05 over 1e5 draws")
    assert ok


def test_criterion_4_data_independent_dominance():
    t = time.perf_counter()
    bad, total = suites.leverage_dominance(seed=0, models=1000)
    rate, cov_ok = suites.cross_term_coverage(seed=0, trials=2000, rho=0.05)
    secs = time.perf_counter() - t
    ok = bad == 0 and cov_ok and secs < 300
    record(4, ok, f"leverage violations {bad}/{total}, cross-term violation rate {rate:.4f} over 2000 re-solves, {secs:.1f}s")
    assert ok


def test_criterion_5_report_sandwich():
    rho, runs = 0.05, 2000
    D, _ = generate("logistic", 200, 10, np.random.default_rng(5))
    noise = release_noise_for_budget(GlmLoss("logistic"), 1.0, 1.0, rho)
    tau = goe_quantile(10, rho)
    floor = 2 * noise["sigma3"] * tau.value
    z = D.point(0)
    lower = upper = 0
    for r in range(runs):
        model, spec = train(D, "logistic", 1.0, 1e-6, 1.0, np.random.default_rng([r, 1]), lam_floor=floor)
        rep = build_report(
            model, spec, D, DATA_DEP, rho, np.random.default_rng([r, 2]),
            sigma2=noise["sigma2"], sigma3=noise["sigma3"], tau=tau,
        )
        e1 = expost_pdp_glm(model, spec, D, z, Direction.REMOVE).epsilon
        bar = evaluate_report(rep, z).eps1_bar
        fp = abs(float(spec.loss.df(z.x @ model.theta_hat, z.y)))
        pad = fp * np.linalg.norm(z.x) * math.sqrt(2 * math.log(2 / rho)) / noise["sigma2"]
        lower += e1 <= bar
        upper += bar <= 12 * e1 + pad
    need = binomial_floor(rho, runs)
    ok = lower / runs >= need and upper / runs >= need
    record(5, ok, f"lower side {lower / runs:.4f}, upper side {upper / runs:.4f}, need >= {need:.4f}")
    assert ok


def test_criterion_6_goe_release():
    G = sample_goe_batch(100_000, 4, 1.0, np.random.default_rng(0))
    iu = np.triu_indices(4, 1)
    ratio = G[:, np.arange(4), np.arange(4)].var() / G[:, iu[0], iu[1]].var()
    rng = np.random.default_rng(1)
    B = rng.standard_normal((6, 6))
    H = B @ B.T + 2 * np.eye(6)
    lmin = np.linalg.eigvalsh(H)[0]
    violations = draws = 0
    while draws < 20:
        E = sample_goe(6, 0.4, rng).entries
        if np.linalg.norm(E, 2) > lmin / 2:
            continue
        draws += 1
        Hh = H + E
        for x in rng.standard_normal((100, 6)):
            est, true = x @ np.linalg.solve(Hh, x), x @ np.linalg.solve(H, x)
            violations += not (0.5 * est <= true <= 1.5 * est)
    ok = abs(ratio - 2.0) <= 0.1 and violations == 0
    record(6, ok, f"variance ratio {ratio:.3f}, sandwich violations {violations}/2000")
    assert ok


def test_criterion_7_quantile_below_tabulated_value():
    # expected to fail: see the decisions ledger on GOE normalization
    q50 = goe_quantile(50, 0.01)
    ok = q50.value < 12
    record(7, ok, f"MC quantile(d=50, rho=0.01) = {q50.value:.2f} vs 12 "
                  f"(empirical {q50.provenance['empirical_quantile']:.2f})")
    assert ok


def test_criterion_7_sqrt_d_scaling():
    ratio = goe_quantile(200, 0.01).value / goe_quantile(50, 0.01).value
    ok = abs(ratio - 2) <= 0.3
    record(7, ok, f"quantile(200)/quantile(50) = {ratio:.3f}")
    assert ok


def test_criterion_8_calibration_and_lambda_sweep():
    lam = calibrate_objpert(GlmLoss("logistic"), DpTarget(1.0, 1e-6)).lam_required
    rows = lambda_sweep(ExperimentConfig(n=500, d=20, eps=(1.0, 1.0, 1.0), reps=20, n_test=2000))
    losses = [r["zero_one_loss"] for r in rows]
    spread = max(losses) - min(losses)
    ok = lam == 0.5 and spread <= 0.05
    record(8, ok, f"lambda_req={lam}, 0-1 loss spread {spread:.4f} over inflation 1..20")
    assert ok


def test_criterion_9_pdp_below_dp():
    _, summary = pdp_hist(ExperimentConfig(n=1000, d=20, eps=(1.0, 1.0, 1.0)))
    ok = summary["max_eps1_true"] < summary["worst_case_eps"]
    record(9, ok, f"max true eps1 {summary['max_eps1_true']:.4f} < {summary['worst_case_eps']}")
    assert ok


def test_criterion_10_counting_demo():
    rng = np.random.default_rng(10)
    hits = 0
    for _ in range(100):
        q = int(rng.integers(0, 10_000))
        hits += privacy_risk_demo(q, float(rng.uniform(0.5, 20)), rng).recovered_q == q
    record(10, hits == 100, f"recovered {hits}/100")
    assert hits == 100


def summary_lines() -> list[str]:
    return [
        f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}" for n, (ok, detail) in sorted(RESULTS.items())
    ]


if __name__ == "__main__":
    failed = 0
    for name, fn in list(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                failed += 1
    print("\n".join(summary_lines()))
    sys.exit(1 if failed else 0)
